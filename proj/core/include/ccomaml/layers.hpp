#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ccomaml/autodiff.hpp"
#include "ccomaml/ops.hpp"

namespace ccomaml {

enum class LayerKind { Conv2d, Linear, Relu, AdaptiveAvgPool, MaxPool, MultiHeadAttention, LayerNorm, Flatten };

std::string to_string(LayerKind kind);

/// Declarative description of one layer in a stack.
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::size_t in_channels = 0;   // conv2d in / linear in / attention width
  std::size_t out_channels = 0;  // conv2d out / linear out / pool height
  std::size_t kernel = 0;        // conv2d kernel, pool width
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t heads = 0;

  static LayerSpec conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1,
                          std::size_t padding = 0);
  static LayerSpec linear(std::size_t in, std::size_t out);
  static LayerSpec relu();
  static LayerSpec adaptive_avg_pool(std::size_t out_h, std::size_t out_w);
  static LayerSpec max_pool(std::size_t kernel);
  static LayerSpec attention(std::size_t width, std::size_t heads);
  static LayerSpec layer_norm(std::size_t width);
  static LayerSpec flatten();

  /// Throws ShapeError when the sizes are inconsistent for the kind.
  void validate() const;
  bool operator==(const LayerSpec&) const = default;
};

enum class InitScheme { HeNormal, XavierUniform, Zeros, Identity };

struct InitPolicy {
  InitScheme conv = InitScheme::HeNormal;
  InitScheme linear = InitScheme::XavierUniform;
  InitScheme attention = InitScheme::XavierUniform;
  double gain = 1.0;
  double bias = 0.0;
  std::uint64_t seed = 0;
};

/// Deterministic weight filler. Draws are taken in call order.
class Initializer {
 public:
  explicit Initializer(const InitPolicy& policy) : policy_(policy), rng_(policy.seed) {}

  Tensor weight(InitScheme scheme, Shape shape, std::size_t fan_in, std::size_t fan_out);
  Tensor conv_weight(std::size_t out, std::size_t in, std::size_t kernel);
  Tensor linear_weight(std::size_t out, std::size_t in);
  Tensor attention_weight(std::size_t width);
  Tensor bias(std::size_t n) const;

 private:
  InitPolicy policy_;
  std::mt19937_64 rng_;
};

// Functional layers. Parameters are passed explicitly so the same
// architecture can be evaluated at θ or at adapted parameters φ′.

/// x: N×C×H×W, weight: Cout×C×k×k, bias: Cout (optional).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding);
/// Reference quadruple-loop convolution on raw values (no graph).
Tensor conv2d_direct(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
                     std::size_t padding);
/// x: N×in, weight: out×in, bias: out.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// Normalizes over the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

struct AttentionParams {
  Tensor wq, wk, wv, wo;  // width×width, applied as x·Wᵀ
  Tensor bq, bk, bv, bo;  // width
};

struct AttentionOutput {
  Tensor output;   // B×Lq×D
  Tensor weights;  // (B·heads)×Lq×Lk, rows sum to 1
};

/// Scaled dot-product attention per head over B independent sequences.
/// queries: B×Lq×D, keys/values: B×Lk×D.
AttentionOutput multi_head_attention(const Tensor& queries, const Tensor& keys, const Tensor& values,
                                     const AttentionParams& params, std::size_t heads);

/// Adds wq..bo under `prefix` to `params`.
void add_attention_params(ParameterSet& params, const std::string& prefix, std::size_t width, Initializer& init,
                          InitScheme scheme);
AttentionParams attention_params(const ParameterSet& params, const std::string& prefix);

/// Mean softmax cross-entropy; labels index the last axis of logits (N×M).
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace ccomaml
