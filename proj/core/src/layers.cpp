#include "ccomaml/layers.hpp"

#include <cmath>
#include <string>

#include "ccomaml/errors.hpp"

namespace ccomaml {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2d: return "conv";
    case LayerKind::Linear: return "fc";
    case LayerKind::Relu: return "relu";
    case LayerKind::AdaptiveAvgPool: return "aap";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::MultiHeadAttention: return "mha";
    case LayerKind::LayerNorm: return "layernorm";
    case LayerKind::Flatten: return "flatten";
  }
  return "?";
}

LayerSpec LayerSpec::conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                            std::size_t padding) {
  LayerSpec s;
  s.kind = LayerKind::Conv2d;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  s.validate();
  return s;
}

LayerSpec LayerSpec::linear(std::size_t in, std::size_t out) {
  LayerSpec s;
  s.kind = LayerKind::Linear;
  s.in_channels = in;
  s.out_channels = out;
  s.validate();
  return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::adaptive_avg_pool(std::size_t out_h, std::size_t out_w) {
  LayerSpec s;
  s.kind = LayerKind::AdaptiveAvgPool;
  s.out_channels = out_h;
  s.kernel = out_w;
  s.validate();
  return s;
}

LayerSpec LayerSpec::max_pool(std::size_t kernel) {
  LayerSpec s;
  s.kind = LayerKind::MaxPool;
  s.kernel = kernel;
  s.stride = kernel;
  s.validate();
  return s;
}

LayerSpec LayerSpec::attention(std::size_t width, std::size_t heads) {
  LayerSpec s;
  s.kind = LayerKind::MultiHeadAttention;
  s.in_channels = width;
  s.out_channels = width;
  s.heads = heads;
  s.validate();
  return s;
}

LayerSpec LayerSpec::layer_norm(std::size_t width) {
  LayerSpec s;
  s.kind = LayerKind::LayerNorm;
  s.in_channels = width;
  s.out_channels = width;
  s.validate();
  return s;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::Flatten;
  return s;
}

void LayerSpec::validate() const {
  switch (kind) {
    case LayerKind::Conv2d:
      if (in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0) {
        throw ShapeError("conv2d spec: channels, kernel and stride must be positive");
      }
      break;
    case LayerKind::Linear:
      if (in_channels == 0 || out_channels == 0) throw ShapeError("linear spec: widths must be positive");
      break;
    case LayerKind::AdaptiveAvgPool:
      if (out_channels == 0 || kernel == 0) throw ShapeError("adaptive_avg_pool spec: zero output extent");
      break;
    case LayerKind::MaxPool:
      if (kernel == 0) throw ShapeError("max_pool spec: zero kernel");
      break;
    case LayerKind::MultiHeadAttention:
      if (heads == 0 || in_channels == 0 || in_channels % heads != 0) {
        throw ShapeError("attention spec: width " + std::to_string(in_channels) + " not divisible by " +
                         std::to_string(heads) + " heads");
      }
      break;
    case LayerKind::LayerNorm:
      if (in_channels == 0) throw ShapeError("layer_norm spec: zero width");
      break;
    case LayerKind::Relu:
    case LayerKind::Flatten:
      break;
  }
}

// ---------------------------------------------------------------------------

Tensor Initializer::weight(InitScheme scheme, Shape shape, std::size_t fan_in, std::size_t fan_out) {
  const std::size_t n = shape_numel(shape);
  std::vector<double> w(n, 0.0);
  switch (scheme) {
    case InitScheme::HeNormal: {
      std::normal_distribution<double> dist(0.0, policy_.gain * std::sqrt(2.0 / static_cast<double>(fan_in)));
      for (auto& v : w) v = dist(rng_);
      break;
    }
    case InitScheme::XavierUniform: {
      const double a = policy_.gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-a, a);
      for (auto& v : w) v = dist(rng_);
      break;
    }
    case InitScheme::Zeros:
      break;
    case InitScheme::Identity: {
      if (shape.size() != 2 || shape[0] != shape[1]) throw ShapeError("identity init needs a square matrix");
      for (std::size_t i = 0; i < shape[0]; ++i) w[i * shape[0] + i] = 1.0;
      break;
    }
  }
  return Tensor(std::move(shape), std::move(w));
}

Tensor Initializer::conv_weight(std::size_t out, std::size_t in, std::size_t kernel) {
  return weight(policy_.conv, {out, in, kernel, kernel}, in * kernel * kernel, out * kernel * kernel);
}

Tensor Initializer::linear_weight(std::size_t out, std::size_t in) {
  return weight(policy_.linear, {out, in}, in, out);
}

Tensor Initializer::attention_weight(std::size_t width) {
  return weight(policy_.attention, {width, width}, width, width);
}

Tensor Initializer::bias(std::size_t n) const { return Tensor::full({n}, policy_.bias); }

// ---------------------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding) {
  auto y = conv2d_nobias(x, weight, stride, padding);
  if (!bias.defined()) return y;
  const std::size_t cout = weight.size(0);
  if (bias.shape() != Shape{cout}) throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()));
  return add(y, reshape(bias, {1, cout, 1, 1}));
}

Tensor conv2d_direct(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
                     std::size_t padding) {
  const std::size_t n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  const std::size_t cout = weight.size(0), kh = weight.size(2), kw = weight.size(3);
  const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
  const std::size_t ow = (w + 2 * padding - kw) / stride + 1;
  auto xd = x.data();
  auto wd = weight.data();
  std::vector<double> out(n * cout * oh * ow, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = bias.defined() ? bias.data()[o] : 0.0;
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const auto yy = static_cast<std::ptrdiff_t>(i * stride + u) - static_cast<std::ptrdiff_t>(padding);
                const auto xx = static_cast<std::ptrdiff_t>(j * stride + v) - static_cast<std::ptrdiff_t>(padding);
                if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(h) || xx >= static_cast<std::ptrdiff_t>(w))
                  continue;
                acc += xd[((b * c + ch) * h + static_cast<std::size_t>(yy)) * w + static_cast<std::size_t>(xx)] *
                       wd[((o * c + ch) * kh + u) * kw + v];
              }
          out[((b * cout + o) * oh + i) * ow + j] = acc;
        }
  return Tensor({n, cout, oh, ow}, std::move(out));
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.dim() != 2 || weight.dim() != 2 || x.size(1) != weight.size(1)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(weight.shape()));
  }
  auto y = matmul(x, weight, false, true);
  return bias.defined() ? add(y, bias) : y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t axis = x.dim() - 1;
  auto mu = mean(x, axis, true);
  auto centered = sub(x, mu);
  auto var = mean(square(centered), axis, true);
  auto normed = div(centered, pow(add_scalar(var, eps), 0.5));
  return add(mul(normed, gain), bias);
}

void add_attention_params(ParameterSet& params, const std::string& prefix, std::size_t width, Initializer& init,
                          InitScheme scheme) {
  for (const char* w : {"wq", "wk", "wv", "wo"}) {
    params.add(prefix + w, init.weight(scheme, {width, width}, width, width));
  }
  for (const char* b : {"bq", "bk", "bv", "bo"}) params.add(prefix + b, init.bias(width));
}

AttentionParams attention_params(const ParameterSet& params, const std::string& prefix) {
  return AttentionParams{params.at(prefix + "wq"), params.at(prefix + "wk"), params.at(prefix + "wv"),
                         params.at(prefix + "wo"), params.at(prefix + "bq"), params.at(prefix + "bk"),
                         params.at(prefix + "bv"), params.at(prefix + "bo")};
}

namespace {

// B×L×D → (B·H)×L×dh after the input projection.
Tensor split_heads(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t heads) {
  const std::size_t batch = x.size(0), len = x.size(1), width = x.size(2);
  const std::size_t dh = width / heads;
  auto proj = linear(reshape(x, {batch * len, width}), w, b);
  auto split = permute(reshape(proj, {batch, len, heads, dh}), {0, 2, 1, 3});
  return reshape(split, {batch * heads, len, dh});
}

}  // namespace

AttentionOutput multi_head_attention(const Tensor& queries, const Tensor& keys, const Tensor& values,
                                     const AttentionParams& p, std::size_t heads) {
  if (queries.dim() != 3 || keys.dim() != 3 || values.dim() != 3) {
    throw ShapeError("attention: expected B×L×D inputs, got " + shape_str(queries.shape()));
  }
  const std::size_t batch = queries.size(0), lq = queries.size(1), width = queries.size(2);
  if (heads == 0 || width % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(width) + " not divisible by " + std::to_string(heads) +
                     " heads");
  }
  if (keys.size(0) != batch || values.size(0) != batch || keys.size(2) != width || values.size(2) != width ||
      keys.size(1) != values.size(1)) {
    throw ShapeError("attention: keys " + shape_str(keys.shape()) + " / values " + shape_str(values.shape()) +
                     " do not conform to queries " + shape_str(queries.shape()));
  }
  const std::size_t dh = width / heads;
  auto q = split_heads(queries, p.wq, p.bq, heads);
  auto k = split_heads(keys, p.wk, p.bk, heads);
  auto v = split_heads(values, p.wv, p.bv, heads);
  auto scores = mul_scalar(matmul(q, k, false, true), 1.0 / std::sqrt(static_cast<double>(dh)));
  auto weights = softmax(scores);
  auto mixed = matmul(weights, v);  // (B·H)×Lq×dh
  auto merged = reshape(permute(reshape(mixed, {batch, heads, lq, dh}), {0, 2, 1, 3}), {batch * lq, width});
  auto out = linear(merged, p.wo, p.bo);
  return {reshape(out, {batch, lq, width}), weights};
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.dim() != 2) throw ShapeError("cross_entropy: expected N×M logits, got " + shape_str(logits.shape()));
  const std::size_t n = logits.size(0), m = logits.size(1);
  if (labels.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                     " rows");
  }
  std::vector<std::int64_t> index(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= m) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " +
                              std::to_string(m) + ")");
    }
    index[i] = static_cast<std::int64_t>(i * m + static_cast<std::size_t>(labels[i]));
  }
  auto picked = gather(logits, {n}, std::move(index));
  return mean(sub(logsumexp(logits), picked));
}

}  // namespace ccomaml
