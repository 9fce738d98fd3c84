#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "ccomaml/autodiff.hpp"
#include "ccomaml/layers.hpp"

namespace ccomaml {

struct FeatureShape {
  std::size_t channels = 0, height = 0, width = 0;
  std::size_t numel() const { return channels * height * width; }
  bool operator==(const FeatureShape&) const = default;
};

struct BackboneSpec {
  std::string name = "conv4";  // "conv4" | "mini-fusion"
  std::size_t image_size = 32;
  std::size_t in_channels = 3;
  std::size_t n_way = 5;
  std::size_t width = 32;        // conv channels
  std::size_t patch_size = 8;    // mini-fusion only
  std::size_t embed = 32;        // mini-fusion token width
  std::size_t heads = 2;         // mini-fusion self-attention heads
  std::size_t fusion_heads = 2;  // mini-fusion cross-attention heads
};

/// Base learner f_θ: a feature body and a linear classification head.
/// Parameter names are prefixed "body." or "head."; the partition is exact.
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual std::string_view name() const = 0;
  virtual ParameterSet init(const InitPolicy& policy) const = 0;
  /// images: N×C×H×W → N×C'×h×w.
  virtual Tensor features(const Tensor& images, const ParameterSet& params) const = 0;
  virtual FeatureShape feature_shape() const = 0;
  virtual std::vector<LayerSpec> body_layers() const = 0;

  const BackboneSpec& spec() const { return spec_; }
  std::size_t n_way() const { return spec_.n_way; }

  /// Flatten + linear. The head width follows the parameters, not the spec.
  Tensor head(const Tensor& features, const ParameterSet& params) const;
  Tensor logits(const Tensor& images, const ParameterSet& params) const;

  static bool is_head_param(std::string_view name);
  static std::vector<std::string> head_names(const ParameterSet& params);
  static std::vector<std::string> body_names(const ParameterSet& params);

 protected:
  explicit Backbone(BackboneSpec spec) : spec_(std::move(spec)) {}
  void add_head(ParameterSet& params, Initializer& init) const;

  BackboneSpec spec_;
};

/// Four conv3×3(pad 1)-ReLU-maxpool2 blocks.
class Conv4Backbone final : public Backbone {
 public:
  explicit Conv4Backbone(BackboneSpec spec);
  std::string_view name() const override { return "conv4"; }
  ParameterSet init(const InitPolicy& policy) const override;
  Tensor features(const Tensor& images, const ParameterSet& params) const override;
  FeatureShape feature_shape() const override;
  std::vector<LayerSpec> body_layers() const override;
};

/// Dual-branch CNN + transformer extractor fused by cross-attention, with the
/// transformer tokens as queries and the CNN tokens as keys/values.
class FusionBackbone final : public Backbone {
 public:
  explicit FusionBackbone(BackboneSpec spec);
  std::string_view name() const override { return "mini-fusion"; }
  ParameterSet init(const InitPolicy& policy) const override;
  Tensor features(const Tensor& images, const ParameterSet& params) const override;
  FeatureShape feature_shape() const override;
  std::vector<LayerSpec> body_layers() const override;

  /// CNN-branch tokens after projection to the common width: N×T×D.
  Tensor cnn_tokens(const Tensor& images, const ParameterSet& params) const;
  /// Transformer-branch tokens after its attention block: N×T×D.
  Tensor vit_tokens(const Tensor& images, const ParameterSet& params) const;

 private:
  std::size_t grid() const { return spec_.image_size / spec_.patch_size; }
};

std::unique_ptr<Backbone> build_backbone(const BackboneSpec& spec);

enum class CoLearnerStrategy { S1, S2, S3, S4 };

std::string to_string(CoLearnerStrategy s);
CoLearnerStrategy parse_strategy(std::string_view text);
bool strategy_has_pool(CoLearnerStrategy s);
bool strategy_has_conv(CoLearnerStrategy s);

struct CoLearnerSpec {
  CoLearnerStrategy strategy = CoLearnerStrategy::S4;
  std::size_t conv_layers = 2;
  std::size_t fc_layers = 2;
  std::size_t hidden = 64;
  std::size_t conv_channels = 64;
};

/// Auxiliary head ψ mapping a feature map to N_way logits. Only used in the
/// outer loop; never on the inference path.
class CoLearner {
 public:
  CoLearner(const CoLearnerSpec& spec, FeatureShape feature, std::size_t n_way);

  const CoLearnerSpec& spec() const { return spec_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  ParameterSet init(const InitPolicy& policy) const;
  Tensor forward(const Tensor& features, const ParameterSet& psi) const;

 private:
  CoLearnerSpec spec_;
  FeatureShape feature_;
  std::size_t n_way_;
  std::vector<LayerSpec> layers_;
};

/// Validates strategy/depth combinations and builds the co-learner.
CoLearner build_colearner(const CoLearnerSpec& spec, FeatureShape feature, std::size_t n_way);

}  // namespace ccomaml
