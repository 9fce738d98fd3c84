#include "ccomaml/meta_engine.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <thread>

#include "ccomaml/errors.hpp"
#include "ccomaml/metrics.hpp"
#include "ccomaml/ops.hpp"

namespace ccomaml {

std::string to_string(MethodId m) {
  switch (m) {
    case MethodId::CCoMAML: return "CCoMAML";
    case MethodId::CML: return "CML";
    case MethodId::MAML: return "MAML";
    case MethodId::FOMAML: return "FOMAML";
    case MethodId::Reptile: return "Reptile";
    case MethodId::ANIL: return "ANIL";
    case MethodId::BOIL: return "BOIL";
    case MethodId::ProtoNet: return "ProtoNet";
  }
  return "?";
}

const std::vector<MethodId>& all_methods() {
  static const std::vector<MethodId> methods{MethodId::CCoMAML, MethodId::CML,  MethodId::MAML, MethodId::FOMAML,
                                             MethodId::Reptile, MethodId::ANIL, MethodId::BOIL, MethodId::ProtoNet};
  return methods;
}

MethodId parse_method(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (auto m : all_methods()) {
    auto name = to_string(m);
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (name == lower) return m;
  }
  throw ConfigError("unknown method '" + std::string(text) +
                    "' (expected CCoMAML, CML, MAML, FOMAML, Reptile, ANIL, BOIL or ProtoNet)");
}

std::string to_string(CoSourceGradient g) {
  switch (g) {
    case CoSourceGradient::Keep: return "keep";
    case CoSourceGradient::Detach: return "detach";
    case CoSourceGradient::Follow: break;
  }
  return "follow";
}

CoSourceGradient parse_co_source_gradient(std::string_view text) {
  if (text == "follow") return CoSourceGradient::Follow;
  if (text == "keep") return CoSourceGradient::Keep;
  if (text == "detach") return CoSourceGradient::Detach;
  throw ConfigError("unknown co_source_gradient '" + std::string(text) + "' (expected follow, keep or detach)");
}

AdaptMask adaptation_mask(MethodId m) {
  if (m == MethodId::ANIL) return AdaptMask::HeadOnly;
  if (m == MethodId::BOIL) return AdaptMask::BodyOnly;
  return AdaptMask::All;
}

bool uses_colearner(MethodId m) { return m == MethodId::CCoMAML || m == MethodId::CML; }

void MetaConfig::validate() const {
  // α = 0 is accepted: it is the degenerate inner loop used to compare the
  // first- and second-order paths.
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be a finite value >= 0");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ConfigError("beta must be a finite value > 0");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (meta_batch < 1) throw ConfigError("meta_batch must be at least 1");
  if (!(reptile_epsilon >= 0.0 && reptile_epsilon <= 1.0)) throw ConfigError("reptile_epsilon must lie in [0, 1]");
  if (method == MethodId::Reptile && reptile_inner_steps < 1) throw ConfigError("Reptile needs reptile_inner_steps >= 1");
  if (threads < 1) throw ConfigError("threads must be at least 1");
}

// ---------------------------------------------------------------------------
// Inner loop

namespace {

bool movable(AdaptMask mask, const std::string& name) {
  switch (mask) {
    case AdaptMask::All: return true;
    case AdaptMask::HeadOnly: return Backbone::is_head_param(name);
    case AdaptMask::BodyOnly: return !Backbone::is_head_param(name);
  }
  return true;
}

std::vector<int> argmax_labels(const Tensor& logits) {
  auto idx = argmax_rows(logits);
  return {idx.begin(), idx.end()};
}

}  // namespace

ParameterSet adapt(const ParameterSet& theta, const std::function<Tensor(const ParameterSet&)>& loss,
                   const InnerLoopOptions& options) {
  if (options.steps == 0) return theta;
  std::vector<std::string> names;
  for (const auto& e : theta)
    if (movable(options.mask, e.name)) names.push_back(e.name);
  if (names.empty()) return theta;

  if (options.create_graph) {
    GradOptions keep;
    keep.create_graph = true;
    keep.retain_graph = 1;
    ParameterSet phi = theta;
    for (std::size_t s = 0; s < options.steps; ++s) {
      std::vector<Tensor> wrt;
      for (const auto& n : names) wrt.push_back(phi.at(n));
      auto g = grad(loss(phi), wrt, keep);
      for (std::size_t k = 0; k < names.size(); ++k) phi.set(names[k], wrt[k] - g[k] * options.alpha);
    }
    return phi;
  }

  ParameterSet work;
  for (const auto& e : theta) {
    Tensor v = e.value.detach();
    if (movable(options.mask, e.name)) v.requires_grad_();
    work.add(e.name, v);
  }
  for (std::size_t s = 0; s < options.steps; ++s) {
    std::vector<Tensor> wrt;
    for (const auto& n : names) wrt.push_back(work.at(n));
    auto g = grad(loss(work), wrt);
    NoGradGuard no_grad;
    for (std::size_t k = 0; k < names.size(); ++k) {
      Tensor next = wrt[k] - g[k] * options.alpha;
      work.set(names[k], Tensor(next.shape(), std::vector<double>(next.data().begin(), next.data().end())).requires_grad_());
    }
  }
  ParameterSet phi;
  for (const auto& e : theta) {
    if (!movable(options.mask, e.name)) {
      phi.add(e.name, e.value);
      continue;
    }
    auto w = work.at(e.name).data();
    auto t = e.value.data();
    std::vector<double> delta(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) delta[i] = w[i] - t[i];
    phi.add(e.name, e.value + Tensor(e.value.shape(), std::move(delta)));
  }
  return phi;
}

ParameterSet inner_adapt(const ParameterSet& theta, const Tensor& images, std::span<const int> labels,
                         const Backbone& backbone, const InnerLoopOptions& options) {
  if (!images.defined() || labels.empty()) throw DataError("inner_adapt: empty support set");
  return adapt(
      theta, [&](const ParameterSet& p) { return cross_entropy(backbone.logits(images, p), labels); }, options);
}

Tensor co_learner_loss(const ParameterSet& psi, const ParameterSet& feature_source, const Tensor& query_images,
                       std::span<const int> query_labels, const Backbone& backbone, const CoLearner& colearner) {
  return cross_entropy(colearner.forward(backbone.features(query_images, feature_source), psi), query_labels);
}

// ---------------------------------------------------------------------------
// Outer loop

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

namespace {

ParameterSet fresh_leaves(const ParameterSet& p) { return p.detached(true); }

Tensor l2_term(const ParameterSet& params) {
  Tensor s;
  for (const auto& e : params) s = s.defined() ? s + sum_squares(e.value) : sum_squares(e.value);
  return s.defined() ? s : Tensor::scalar(0.0);
}

void accumulate(std::vector<double>& into, const Tensor& g) {
  auto d = g.data();
  for (std::size_t i = 0; i < d.size(); ++i) into[i] += d[i];
}

struct UnitResult {
  std::vector<Tensor> theta_grads, psi_grads;  // empty when the unit has no gradient
  double meta = 0.0;
  double co = 0.0;
  bool has_co = false;
  ParameterSet adapted;
};

}  // namespace

MetaGradient meta_gradient(const ParameterSet& theta, const ParameterSet& psi, std::span<const Episode> batch,
                           const Backbone& backbone, const CoLearner* colearner, const MetaConfig& config,
                           const ParameterSet* first_source) {
  if (batch.empty()) throw std::invalid_argument("meta_gradient: empty meta-batch");
  const bool with_co = uses_colearner(config.method);
  if (with_co && !colearner) throw std::invalid_argument("meta_gradient: method needs a co-learner");
  const double gamma = config.effective_gamma();
  const bool second = config.effective_second_order();
  const bool keep_source = config.keeps_co_source_gradient();
  const std::size_t b = batch.size();
  const double inv_b = 1.0 / static_cast<double>(b);
  const InnerLoopOptions inner{config.alpha, config.inner_steps, adaptation_mask(config.method), second};

  // Co-learner loss of task `i` on features taken at `source`. With γ = 0 it
  // is only reported, so it never enters the graph.
  auto co_term = [&](std::size_t i, const ParameterSet& source, const ParameterSet& ps, Tensor& objective) {
    const auto& ep = batch[i];
    if (gamma == 0.0) {
      NoGradGuard no_grad;
      return co_learner_loss(ps, source, ep.query_images, ep.query_labels, backbone, *colearner).item();
    }
    const ParameterSet src = keep_source ? source : source.detached();
    Tensor lc = co_learner_loss(ps, src, ep.query_images, ep.query_labels, backbone, *colearner);
    Tensor scaled = lc * (gamma * inv_b);
    objective = objective.defined() ? objective + scaled : scaled;
    return lc.item();
  };

  auto gradients = [&](const Tensor& objective, const ParameterSet& th, const ParameterSet& ps, UnitResult& r) {
    if (!objective.defined() || !objective.requires_grad()) return;
    auto wrt = th.tensors();
    const std::size_t nt = wrt.size();
    if (with_co && gamma != 0.0)
      for (const auto& e : ps) wrt.push_back(e.value);
    auto g = grad(objective, wrt);
    r.theta_grads.assign(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(nt));
    r.psi_grads.assign(g.begin() + static_cast<std::ptrdiff_t>(nt), g.end());
  };

  // unit 0: co-learner loss of task 0; unit i+1: meta loss of task i plus the
  // co-learner loss of task i+1, whose features come from φᵢ′
  std::vector<UnitResult> units(b + 1);
  parallel_for(b + 1, config.threads, [&](std::size_t u) {
    UnitResult& r = units[u];
    const ParameterSet th = fresh_leaves(theta);
    const ParameterSet ps = with_co ? fresh_leaves(psi) : ParameterSet{};
    Tensor objective;
    if (u == 0) {
      if (!with_co) return;
      r.co = co_term(0, first_source ? *first_source : th, ps, objective);
      r.has_co = true;
    } else {
      const std::size_t i = u - 1;
      const auto& ep = batch[i];
      ParameterSet phi = inner_adapt(th, ep.support_images, ep.support_labels, backbone, inner);
      Tensor lm = cross_entropy(backbone.logits(ep.query_images, phi), ep.query_labels);
      r.meta = lm.item();
      objective = lm * inv_b;
      if (with_co && i + 1 < b) {
        r.co = co_term(i + 1, phi, ps, objective);
        r.has_co = true;
      }
      if (i + 1 == b) r.adapted = phi.detached();
    }
    gradients(objective, th, ps, r);
  });

  MetaGradient out;
  std::vector<std::vector<double>> tg, pg;
  for (const auto& e : theta) tg.emplace_back(e.value.numel(), 0.0);
  for (const auto& e : psi) pg.emplace_back(e.value.numel(), 0.0);
  double meta_sum = 0.0, co_sum = 0.0;
  for (const auto& r : units) {
    for (std::size_t k = 0; k < r.theta_grads.size(); ++k) accumulate(tg[k], r.theta_grads[k]);
    for (std::size_t k = 0; k < r.psi_grads.size(); ++k) accumulate(pg[k], r.psi_grads[k]);
  }
  for (std::size_t u = 1; u <= b; ++u) meta_sum += units[u].meta;
  for (const auto& r : units)
    if (r.has_co) co_sum += r.co;

  // r_l2 = wd·(‖θ‖² + ‖ψ‖²)
  const ParameterSet ps_l2 = with_co ? psi : ParameterSet{};
  double r_l2 = 0.0;
  {
    NoGradGuard no_grad;
    r_l2 = config.weight_decay * (l2_term(theta).item() + l2_term(ps_l2).item());
  }
  std::size_t k = 0;
  for (const auto& e : theta) {
    auto d = e.value.data();
    for (std::size_t i = 0; i < d.size(); ++i) tg[k][i] += 2.0 * config.weight_decay * d[i];
    out.theta_grad.add(e.name, Tensor(e.value.shape(), std::move(tg[k++])));
  }
  k = 0;
  for (const auto& e : psi) {
    auto d = e.value.data();
    if (with_co)
      for (std::size_t i = 0; i < d.size(); ++i) pg[k][i] += 2.0 * config.weight_decay * d[i];
    out.psi_grad.add(e.name, Tensor(e.value.shape(), std::move(pg[k++])));
  }

  out.losses.l_meta = meta_sum * inv_b;
  out.losses.l_co = with_co ? co_sum * inv_b : 0.0;
  out.losses.r_l2 = r_l2;
  out.losses.l_total = out.losses.l_meta + gamma * out.losses.l_co + out.losses.r_l2;
  out.last_adapted = std::move(units[b].adapted);
  return out;
}

namespace {

void check_finite(const LossBreakdown& l, const char* where) {
  if (!std::isfinite(l.l_total) || !std::isfinite(l.l_meta) || !std::isfinite(l.l_co)) {
    throw NumericalError(std::string(where) + ": non-finite loss (l_meta=" + std::to_string(l.l_meta) +
                         ", l_co=" + std::to_string(l.l_co) + ")");
  }
}

}  // namespace

LossBreakdown meta_step(MetaState& state, std::span<const Episode> batch, const Backbone& backbone,
                        const CoLearner* colearner, const MetaConfig& config, double lr_multiplier) {
  const ParameterSet* source =
      config.carry_feature_source && !state.feature_source.empty() ? &state.feature_source : nullptr;
  auto mg = meta_gradient(state.theta, state.psi, batch, backbone, colearner, config, source);
  check_finite(mg.losses, "meta_step");
  const double lr = config.beta * lr_multiplier;
  state.theta = adam_step(state.theta, mg.theta_grad, state.adam_theta, lr);
  if (uses_colearner(config.method) && !state.psi.empty()) {
    state.psi = adam_step(state.psi, mg.psi_grad, state.adam_psi, lr);
  }
  if (config.carry_feature_source) state.feature_source = std::move(mg.last_adapted);
  ++state.steps;
  return mg.losses;
}

// ---------------------------------------------------------------------------
// Reptile

ParameterSet reptile_update(const ParameterSet& theta, std::span<const ParameterSet> adapted, double epsilon) {
  if (adapted.empty()) throw std::invalid_argument("reptile_update: no adapted parameters");
  ParameterSet out;
  for (const auto& e : theta) {
    auto t = e.value.data();
    std::vector<double> mean_delta(t.size(), 0.0);
    for (const auto& phi : adapted) {
      auto p = phi.at(e.name).data();
      for (std::size_t i = 0; i < t.size(); ++i) mean_delta[i] += p[i] - t[i];
    }
    const double scale = epsilon / static_cast<double>(adapted.size());
    std::vector<double> next(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) next[i] = t[i] + scale * mean_delta[i];
    out.add(e.name, Tensor(e.value.shape(), std::move(next)));
  }
  return out;
}

LossBreakdown reptile_step(MetaState& state, std::span<const Episode> batch, const Backbone& backbone,
                           const MetaConfig& config, double lr_multiplier) {
  if (batch.empty()) throw std::invalid_argument("reptile_step: empty meta-batch");
  const InnerLoopOptions inner{config.alpha, config.reptile_inner_steps, AdaptMask::All, false};
  std::vector<ParameterSet> adapted(batch.size());
  std::vector<double> losses(batch.size());
  parallel_for(batch.size(), config.threads, [&](std::size_t i) {
    const auto& ep = batch[i];
    adapted[i] = inner_adapt(state.theta.detached(), ep.support_images, ep.support_labels, backbone, inner).detached();
    NoGradGuard no_grad;
    losses[i] = cross_entropy(backbone.logits(ep.support_images, adapted[i]), ep.support_labels).item();
  });
  LossBreakdown l;
  for (double v : losses) l.l_meta += v;
  l.l_meta /= static_cast<double>(batch.size());
  l.l_total = l.l_meta;
  check_finite(l, "reptile_step");
  state.theta = reptile_update(state.theta, adapted, config.reptile_epsilon * lr_multiplier);
  ++state.steps;
  return l;
}

// ---------------------------------------------------------------------------
// Prototypical networks

ProtoResult prototype_logits(const Tensor& support_embed, std::span<const int> support_labels,
                             const Tensor& query_embed, std::span<const int> query_labels, std::size_t n_way) {
  const std::size_t ns = support_embed.size(0);
  if (support_labels.size() != ns) throw ShapeError("prototype_logits: support label count mismatch");
  std::vector<double> counts(n_way, 0.0);
  for (int y : support_labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= n_way) throw std::out_of_range("prototype_logits: support label");
    counts[static_cast<std::size_t>(y)] += 1.0;
  }
  // averaging matrix: prototypes = A·S
  std::vector<double> a(n_way * ns, 0.0);
  for (std::size_t i = 0; i < ns; ++i) {
    const auto y = static_cast<std::size_t>(support_labels[i]);
    a[y * ns + i] = 1.0 / counts[y];
  }
  for (std::size_t k = 0; k < n_way; ++k)
    if (counts[k] == 0.0) throw DataError("prototype_logits: class " + std::to_string(k) + " has no support items");
  Tensor protos = matmul(Tensor({n_way, ns}, std::move(a)), support_embed);
  Tensor q2 = sum(square(query_embed), 1, true);
  Tensor c2 = reshape(sum(square(protos), 1), {1, n_way});
  Tensor dist = q2 + c2 - matmul(query_embed, protos, false, true) * 2.0;
  ProtoResult r;
  r.logits = -dist;
  r.predictions = argmax_labels(r.logits);
  if (!query_labels.empty()) r.loss = cross_entropy(r.logits, query_labels);
  return r;
}

ProtoResult protonet_episode(const ParameterSet& theta, const Episode& episode, const Backbone& backbone) {
  Tensor s = flatten(backbone.features(episode.support_images, theta));
  Tensor q = flatten(backbone.features(episode.query_images, theta));
  return prototype_logits(s, episode.support_labels, q, episode.query_labels, episode.class_map.size());
}

LossBreakdown protonet_step(MetaState& state, std::span<const Episode> batch, const Backbone& backbone,
                            const MetaConfig& config, double lr_multiplier) {
  if (batch.empty()) throw std::invalid_argument("protonet_step: empty meta-batch");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<std::vector<Tensor>> grads(batch.size());
  std::vector<double> losses(batch.size());
  parallel_for(batch.size(), config.threads, [&](std::size_t i) {
    const ParameterSet th = fresh_leaves(state.theta);
    auto r = protonet_episode(th, batch[i], backbone);
    losses[i] = r.loss.item();
    grads[i] = grad(r.loss * inv_b, th.tensors());
  });
  LossBreakdown l;
  for (double v : losses) l.l_meta += v;
  l.l_meta *= inv_b;
  {
    NoGradGuard no_grad;
    l.r_l2 = config.weight_decay * l2_term(state.theta).item();
  }
  l.l_total = l.l_meta + l.r_l2;
  check_finite(l, "protonet_step");
  ParameterSet g;
  std::size_t k = 0;
  for (const auto& e : state.theta) {
    std::vector<double> acc(e.value.numel(), 0.0);
    for (const auto& gi : grads) accumulate(acc, gi[k]);
    auto d = e.value.data();
    for (std::size_t i = 0; i < d.size(); ++i) acc[i] += 2.0 * config.weight_decay * d[i];
    g.add(e.name, Tensor(e.value.shape(), std::move(acc)));
    ++k;
  }
  state.theta = adam_step(state.theta, g, state.adam_theta, config.beta * lr_multiplier);
  ++state.steps;
  return l;
}

LossBreakdown train_step(MetaState& state, std::span<const Episode> batch, const Backbone& backbone,
                         const CoLearner* colearner, const MetaConfig& config, double lr_multiplier) {
  switch (config.method) {
    case MethodId::Reptile: return reptile_step(state, batch, backbone, config, lr_multiplier);
    case MethodId::ProtoNet: return protonet_step(state, batch, backbone, config, lr_multiplier);
    default: return meta_step(state, batch, backbone, colearner, config, lr_multiplier);
  }
}

// ---------------------------------------------------------------------------
// Evaluation

ParameterSet fit_head(const ParameterSet& theta, std::size_t n_way) {
  if (!theta.contains("head.weight")) return theta;
  const Tensor& w = theta.at("head.weight");
  const Tensor& bias = theta.at("head.bias");
  const std::size_t rows = w.size(0), cols = w.size(1);
  if (rows == n_way) return theta;
  std::vector<double> mean_row(cols, 0.0);
  double mean_bias = 0.0;
  auto wd = w.data();
  auto bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) mean_row[c] += wd[r * cols + c] / static_cast<double>(rows);
    mean_bias += bd[r] / static_cast<double>(rows);
  }
  std::vector<double> nw(n_way * cols);
  for (std::size_t r = 0; r < n_way; ++r) std::copy(mean_row.begin(), mean_row.end(), nw.begin() + static_cast<std::ptrdiff_t>(r * cols));
  ParameterSet out;
  for (const auto& e : theta) {
    if (e.name == "head.weight") out.add(e.name, Tensor({n_way, cols}, nw));
    else if (e.name == "head.bias") out.add(e.name, Tensor::full({n_way}, mean_bias));
    else out.add(e.name, e.value);
  }
  return out;
}

EpisodeRecord evaluate_episode(const ParameterSet& theta, const Episode& episode, const Backbone& backbone,
                               const MetaConfig& config) {
  const std::size_t n_way = episode.class_map.size();
  if (episode.support_labels.empty()) throw ConfigError("evaluate: episodes need K >= 1 support items per class");
  EpisodeRecord rec;
  rec.truth = episode.query_labels;
  if (config.method == MethodId::ProtoNet) {
    NoGradGuard no_grad;
    auto r = protonet_episode(theta, episode, backbone);
    rec.predicted = r.predictions;
    rec.loss = r.loss.item();
  } else {
    const ParameterSet start = fit_head(theta, n_way).detached();
    const InnerLoopOptions inner{config.alpha, config.eval_inner_steps, adaptation_mask(config.method), false};
    const ParameterSet phi = inner_adapt(start, episode.support_images, episode.support_labels, backbone, inner);
    NoGradGuard no_grad;
    Tensor logits = backbone.logits(episode.query_images, phi);
    rec.predicted = argmax_labels(logits);
    rec.loss = cross_entropy(logits, episode.query_labels).item();
  }
  auto cm = ConfusionMatrix::from_predictions(n_way, rec.truth, rec.predicted);
  rec.accuracy = accuracy(cm);
  rec.macro_f1 = macro_f1(cm);
  return rec;
}

std::vector<EpisodeRecord> evaluate(const ParameterSet& theta, std::span<const Episode> episodes,
                                    const Backbone& backbone, const MetaConfig& config) {
  std::vector<EpisodeRecord> out(episodes.size());
  parallel_for(episodes.size(), config.threads,
               [&](std::size_t i) { out[i] = evaluate_episode(theta, episodes[i], backbone, config); });
  return out;
}

}  // namespace ccomaml
