#include "ccomaml/backbones.hpp"

#include <stdexcept>
#include <string>

#include "ccomaml/errors.hpp"

namespace ccomaml {

namespace {

constexpr std::size_t kConv4Blocks = 4;
constexpr std::size_t kFusionCnnBlocks = 2;

std::string idx(const char* prefix, std::size_t i, const char* suffix) {
  return std::string(prefix) + std::to_string(i) + suffix;
}

}  // namespace

// ---------------------------------------------------------------------------
// Backbone

Tensor Backbone::head(const Tensor& features, const ParameterSet& params) const {
  return linear(flatten(features), params.at("head.weight"), params.at("head.bias"));
}

Tensor Backbone::logits(const Tensor& images, const ParameterSet& params) const {
  return head(features(images, params), params);
}

bool Backbone::is_head_param(std::string_view name) { return name.starts_with("head."); }

std::vector<std::string> Backbone::head_names(const ParameterSet& params) {
  std::vector<std::string> out;
  for (const auto& e : params) {
    if (is_head_param(e.name)) out.push_back(e.name);
  }
  return out;
}

std::vector<std::string> Backbone::body_names(const ParameterSet& params) {
  std::vector<std::string> out;
  for (const auto& e : params) {
    if (!is_head_param(e.name)) out.push_back(e.name);
  }
  return out;
}

void Backbone::add_head(ParameterSet& params, Initializer& init) const {
  const auto f = feature_shape().numel();
  params.add("head.weight", init.linear_weight(spec_.n_way, f));
  params.add("head.bias", init.bias(spec_.n_way));
}

// ---------------------------------------------------------------------------
// conv4

Conv4Backbone::Conv4Backbone(BackboneSpec spec) : Backbone(std::move(spec)) {
  if (spec_.image_size < 16) {
    throw ShapeError("conv4: image size " + std::to_string(spec_.image_size) + " is below the minimum of 16");
  }
  if (spec_.width == 0 || spec_.in_channels == 0 || spec_.n_way < 2) {
    throw ShapeError("conv4: width, input channels and n_way must be positive (n_way >= 2)");
  }
}

std::vector<LayerSpec> Conv4Backbone::body_layers() const {
  std::vector<LayerSpec> layers;
  for (std::size_t b = 0; b < kConv4Blocks; ++b) {
    layers.push_back(LayerSpec::conv2d(b == 0 ? spec_.in_channels : spec_.width, spec_.width, 3, 1, 1));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::max_pool(2));
  }
  return layers;
}

ParameterSet Conv4Backbone::init(const InitPolicy& policy) const {
  Initializer init(policy);
  ParameterSet params;
  for (std::size_t b = 0; b < kConv4Blocks; ++b) {
    const std::size_t in = b == 0 ? spec_.in_channels : spec_.width;
    params.add(idx("body.conv", b, ".weight"), init.conv_weight(spec_.width, in, 3));
    params.add(idx("body.conv", b, ".bias"), init.bias(spec_.width));
  }
  add_head(params, init);
  return params;
}

Tensor Conv4Backbone::features(const Tensor& images, const ParameterSet& params) const {
  Tensor x = images;
  for (std::size_t b = 0; b < kConv4Blocks; ++b) {
    x = conv2d(x, params.at(idx("body.conv", b, ".weight")), params.at(idx("body.conv", b, ".bias")), 1, 1);
    x = max_pool2d(relu(x), 2);
  }
  return x;
}

FeatureShape Conv4Backbone::feature_shape() const {
  std::size_t s = spec_.image_size;
  for (std::size_t b = 0; b < kConv4Blocks; ++b) s /= 2;
  return {spec_.width, s, s};
}

// ---------------------------------------------------------------------------
// mini-fusion

FusionBackbone::FusionBackbone(BackboneSpec spec) : Backbone(std::move(spec)) {
  if (spec_.patch_size == 0 || spec_.image_size % spec_.patch_size != 0) {
    throw ShapeError("mini-fusion: patch size " + std::to_string(spec_.patch_size) + " does not divide image size " +
                     std::to_string(spec_.image_size));
  }
  if (spec_.patch_size < 4) throw ShapeError("mini-fusion: patch size must be at least 4");
  if (spec_.embed == 0 || spec_.heads == 0 || spec_.fusion_heads == 0 || spec_.embed % spec_.heads != 0 ||
      spec_.embed % spec_.fusion_heads != 0) {
    throw ShapeError("mini-fusion: embedding width must be divisible by the head counts");
  }
  if (spec_.n_way < 2) throw ShapeError("mini-fusion: n_way must be at least 2");
}

std::vector<LayerSpec> FusionBackbone::body_layers() const {
  std::vector<LayerSpec> layers;
  for (std::size_t b = 0; b < kFusionCnnBlocks; ++b) {
    layers.push_back(LayerSpec::conv2d(b == 0 ? spec_.in_channels : spec_.width, spec_.width, 3, 1, 1));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::max_pool(2));
  }
  layers.push_back(LayerSpec::adaptive_avg_pool(grid(), grid()));
  layers.push_back(LayerSpec::linear(spec_.width, spec_.embed));
  layers.push_back(LayerSpec::linear(spec_.in_channels * spec_.patch_size * spec_.patch_size, spec_.embed));
  layers.push_back(LayerSpec::layer_norm(spec_.embed));
  layers.push_back(LayerSpec::attention(spec_.embed, spec_.heads));
  layers.push_back(LayerSpec::attention(spec_.embed, spec_.fusion_heads));
  return layers;
}

ParameterSet FusionBackbone::init(const InitPolicy& policy) const {
  Initializer init(policy);
  ParameterSet params;
  for (std::size_t b = 0; b < kFusionCnnBlocks; ++b) {
    const std::size_t in = b == 0 ? spec_.in_channels : spec_.width;
    params.add(idx("body.cnn.conv", b, ".weight"), init.conv_weight(spec_.width, in, 3));
    params.add(idx("body.cnn.conv", b, ".bias"), init.bias(spec_.width));
  }
  params.add("body.cnn.proj.weight", init.linear_weight(spec_.embed, spec_.width));
  params.add("body.cnn.proj.bias", init.bias(spec_.embed));

  const std::size_t patch_dim = spec_.in_channels * spec_.patch_size * spec_.patch_size;
  const std::size_t tokens = grid() * grid();
  params.add("body.vit.patch.weight", init.linear_weight(spec_.embed, patch_dim));
  params.add("body.vit.patch.bias", init.bias(spec_.embed));
  params.add("body.vit.pos", init.weight(InitScheme::XavierUniform, {tokens, spec_.embed}, tokens, spec_.embed));
  params.add("body.vit.ln.gain", Tensor::full({spec_.embed}, 1.0));
  params.add("body.vit.ln.bias", Tensor::zeros({spec_.embed}));
  add_attention_params(params, "body.vit.attn.", spec_.embed, init, policy.attention);
  add_attention_params(params, "body.fusion.", spec_.embed, init, policy.attention);
  add_head(params, init);
  return params;
}

Tensor FusionBackbone::cnn_tokens(const Tensor& images, const ParameterSet& params) const {
  Tensor x = images;
  for (std::size_t b = 0; b < kFusionCnnBlocks; ++b) {
    x = conv2d(x, params.at(idx("body.cnn.conv", b, ".weight")), params.at(idx("body.cnn.conv", b, ".bias")), 1, 1);
    x = max_pool2d(relu(x), 2);
  }
  const std::size_t n = x.size(0), g = grid();
  x = adaptive_avg_pool2d(x, g, g);  // N×C×g×g
  auto tokens = reshape(permute(reshape(x, {n, spec_.width, g * g}), {0, 2, 1}), {n * g * g, spec_.width});
  auto proj = linear(tokens, params.at("body.cnn.proj.weight"), params.at("body.cnn.proj.bias"));
  return reshape(proj, {n, g * g, spec_.embed});
}

Tensor FusionBackbone::vit_tokens(const Tensor& images, const ParameterSet& params) const {
  const std::size_t n = images.size(0), g = grid(), t = g * g;
  auto patches = im2col(images, spec_.patch_size, spec_.patch_size, spec_.patch_size, 0);  // (N·T)×(C·p·p)
  auto emb = linear(patches, params.at("body.vit.patch.weight"), params.at("body.vit.patch.bias"));
  auto tokens = add(reshape(emb, {n, t, spec_.embed}), params.at("body.vit.pos"));
  auto normed = layer_norm(tokens, params.at("body.vit.ln.gain"), params.at("body.vit.ln.bias"));
  auto attn = multi_head_attention(normed, normed, normed, attention_params(params, "body.vit.attn."), spec_.heads);
  return add(tokens, attn.output);
}

Tensor FusionBackbone::features(const Tensor& images, const ParameterSet& params) const {
  if (images.dim() != 4 || images.size(2) != spec_.image_size || images.size(3) != spec_.image_size) {
    throw ShapeError("mini-fusion: expected N×C×" + std::to_string(spec_.image_size) + "×" +
                     std::to_string(spec_.image_size) + " images, got " + shape_str(images.shape()));
  }
  const std::size_t n = images.size(0), g = grid();
  auto cnn = cnn_tokens(images, params);
  auto vit = vit_tokens(images, params);
  auto fused = multi_head_attention(vit, cnn, cnn, attention_params(params, "body.fusion."), spec_.fusion_heads);
  return reshape(permute(fused.output, {0, 2, 1}), {n, spec_.embed, g, g});
}

FeatureShape FusionBackbone::feature_shape() const { return {spec_.embed, grid(), grid()}; }

std::unique_ptr<Backbone> build_backbone(const BackboneSpec& spec) {
  if (spec.name == "conv4") return std::make_unique<Conv4Backbone>(spec);
  if (spec.name == "mini-fusion") return std::make_unique<FusionBackbone>(spec);
  throw ConfigError("unknown backbone '" + spec.name + "' (expected conv4 or mini-fusion)");
}

// ---------------------------------------------------------------------------
// Co-learner

std::string to_string(CoLearnerStrategy s) {
  switch (s) {
    case CoLearnerStrategy::S1: return "S1";
    case CoLearnerStrategy::S2: return "S2";
    case CoLearnerStrategy::S3: return "S3";
    case CoLearnerStrategy::S4: return "S4";
  }
  return "?";
}

CoLearnerStrategy parse_strategy(std::string_view text) {
  if (text == "S1") return CoLearnerStrategy::S1;
  if (text == "S2") return CoLearnerStrategy::S2;
  if (text == "S3") return CoLearnerStrategy::S3;
  if (text == "S4") return CoLearnerStrategy::S4;
  throw ConfigError("unknown co-learner strategy '" + std::string(text) + "' (expected S1..S4)");
}

bool strategy_has_pool(CoLearnerStrategy s) { return s == CoLearnerStrategy::S2 || s == CoLearnerStrategy::S4; }
bool strategy_has_conv(CoLearnerStrategy s) { return s == CoLearnerStrategy::S3 || s == CoLearnerStrategy::S4; }

CoLearner::CoLearner(const CoLearnerSpec& spec, FeatureShape feature, std::size_t n_way)
    : spec_(spec), feature_(feature), n_way_(n_way) {
  std::size_t channels = feature.channels;
  for (std::size_t i = 0; i < spec.conv_layers; ++i) {
    layers_.push_back(LayerSpec::conv2d(channels, spec.conv_channels, 3, 1, 1));
    layers_.push_back(LayerSpec::relu());
    channels = spec.conv_channels;
  }
  std::size_t flat = channels * feature.height * feature.width;
  if (strategy_has_pool(spec.strategy)) {
    layers_.push_back(LayerSpec::adaptive_avg_pool(1, 1));
    flat = channels;
  }
  for (std::size_t i = 0; i + 1 < spec.fc_layers; ++i) {
    layers_.push_back(LayerSpec::linear(flat, spec.hidden));
    flat = spec.hidden;
  }
  layers_.push_back(LayerSpec::linear(flat, n_way));
}

ParameterSet CoLearner::init(const InitPolicy& policy) const {
  Initializer init(policy);
  ParameterSet psi;
  std::size_t conv = 0, fc = 0;
  for (const auto& layer : layers_) {
    if (layer.kind == LayerKind::Conv2d) {
      psi.add(idx("colearner.conv", conv, ".weight"), init.conv_weight(layer.out_channels, layer.in_channels, 3));
      psi.add(idx("colearner.conv", conv, ".bias"), init.bias(layer.out_channels));
      ++conv;
    } else if (layer.kind == LayerKind::Linear) {
      psi.add(idx("colearner.fc", fc, ".weight"), init.linear_weight(layer.out_channels, layer.in_channels));
      psi.add(idx("colearner.fc", fc, ".bias"), init.bias(layer.out_channels));
      ++fc;
    }
  }
  return psi;
}

Tensor CoLearner::forward(const Tensor& features, const ParameterSet& psi) const {
  if (features.dim() != 4 || features.size(1) != feature_.channels) {
    throw ShapeError("co-learner: expected N×" + std::to_string(feature_.channels) + "×h×w features, got " +
                     shape_str(features.shape()));
  }
  Tensor x = features;
  std::size_t conv = 0, fc = 0;
  bool flat = false;
  for (const auto& layer : layers_) {
    switch (layer.kind) {
      case LayerKind::Conv2d:
        x = conv2d(x, psi.at(idx("colearner.conv", conv, ".weight")), psi.at(idx("colearner.conv", conv, ".bias")),
                   layer.stride, layer.padding);
        ++conv;
        break;
      case LayerKind::Relu:
        x = relu(x);
        break;
      case LayerKind::AdaptiveAvgPool:
        x = adaptive_avg_pool2d(x, layer.out_channels, layer.kernel);
        break;
      case LayerKind::Linear:
        if (!flat) {
          x = flatten(x);
          flat = true;
        }
        x = linear(x, psi.at(idx("colearner.fc", fc, ".weight")), psi.at(idx("colearner.fc", fc, ".bias")));
        ++fc;
        break;
      default:
        throw std::logic_error("co-learner: unexpected layer " + to_string(layer.kind));
    }
  }
  return x;
}

CoLearner build_colearner(const CoLearnerSpec& spec, FeatureShape feature, std::size_t n_way) {
  if (spec.fc_layers < 1) throw ConfigError("co-learner: fc_layers must be at least 1");
  if (!strategy_has_conv(spec.strategy) && spec.conv_layers > 0) {
    throw ConfigError("co-learner: strategy " + to_string(spec.strategy) + " takes no conv layers, got " +
                      std::to_string(spec.conv_layers));
  }
  if (strategy_has_conv(spec.strategy) && spec.conv_layers == 0) {
    throw ConfigError("co-learner: strategy " + to_string(spec.strategy) + " needs at least one conv layer");
  }
  if (spec.hidden == 0 || spec.conv_channels == 0) throw ConfigError("co-learner: widths must be positive");
  if (n_way < 2) throw ConfigError("co-learner: n_way must be at least 2");
  return CoLearner(spec, feature, n_way);
}

}  // namespace ccomaml
