#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ccomaml/autodiff.hpp"
#include "ccomaml/backbones.hpp"
#include "ccomaml/episodes.hpp"
#include "ccomaml/optim.hpp"

namespace ccomaml {

enum class MethodId { CCoMAML, CML, MAML, FOMAML, Reptile, ANIL, BOIL, ProtoNet };

std::string to_string(MethodId m);
MethodId parse_method(std::string_view text);
const std::vector<MethodId>& all_methods();

/// Which parameters the inner loop may move.
enum class AdaptMask { All, HeadOnly, BodyOnly };
AdaptMask adaptation_mask(MethodId m);
bool uses_colearner(MethodId m);

/// Whether the co-learner loss differentiates into θ through its feature
/// source φᵢ₋₁′. Follow keeps it in second-order mode only.
enum class CoSourceGradient { Follow, Keep, Detach };

std::string to_string(CoSourceGradient g);
CoSourceGradient parse_co_source_gradient(std::string_view text);

struct MetaConfig {
  double alpha = 0.1;          // inner-loop step
  double beta = 1e-3;          // outer-loop Adam step
  double gamma = 0.2;          // co-learner intensity
  double weight_decay = 1e-5;  // coefficient of the L2 term in the total loss
  std::size_t inner_steps = 5;
  std::size_t eval_inner_steps = 10;
  std::size_t meta_batch = 4;
  bool second_order = true;
  /// Seed the first task's co-learner features with the previous batch's last
  /// adapted parameters instead of θ.
  bool carry_feature_source = false;
  CoSourceGradient co_source_gradient = CoSourceGradient::Follow;
  double reptile_epsilon = 0.5;
  std::size_t reptile_inner_steps = 10;
  MethodId method = MethodId::CCoMAML;
  /// Worker cap for per-task work; results do not depend on it.
  std::size_t threads = 1;

  void validate() const;
  /// gamma as seen by the update rule (0 for methods without a co-learner).
  double effective_gamma() const { return uses_colearner(method) ? gamma : 0.0; }
  /// FOMAML is first-order whatever the flag says.
  bool effective_second_order() const { return method != MethodId::FOMAML && second_order; }
  bool keeps_co_source_gradient() const {
    return co_source_gradient == CoSourceGradient::Follow ? effective_second_order()
                                                          : co_source_gradient == CoSourceGradient::Keep;
  }
};

struct LossBreakdown {
  double l_meta = 0.0;
  double l_co = 0.0;
  double r_l2 = 0.0;
  double l_total = 0.0;
};

struct InnerLoopOptions {
  double alpha = 0.1;
  std::size_t steps = 1;
  AdaptMask mask = AdaptMask::All;
  /// Keep φ′ differentiable in θ through the inner gradients.
  bool create_graph = false;
};

/// Plain gradient descent on `loss`. Masked parameters are carried over as
/// the very same tensors. Without create_graph φ′ = θ + Δ with Δ constant, so
/// ∂φ′/∂θ = I (the first-order treatment).
ParameterSet adapt(const ParameterSet& theta, const std::function<Tensor(const ParameterSet&)>& loss,
                   const InnerLoopOptions& options);

ParameterSet inner_adapt(const ParameterSet& theta, const Tensor& images, std::span<const int> labels,
                         const Backbone& backbone, const InnerLoopOptions& options);

/// Cross-entropy of the co-learner on query images whose features come from
/// `feature_source`.
Tensor co_learner_loss(const ParameterSet& psi, const ParameterSet& feature_source, const Tensor& query_images,
                       std::span<const int> query_labels, const Backbone& backbone, const CoLearner& colearner);

struct MetaGradient {
  ParameterSet theta_grad, psi_grad;
  LossBreakdown losses;
  /// φ′ of the last task, detached; the next batch's feature source when carried.
  ParameterSet last_adapted;
};

/// Gradient of l_total = mean_i L_meta_i + γ·mean_i L_co_i + wd(‖θ‖² + ‖ψ‖²)
/// over a meta-batch. Task i's co-learner loss reads features through φ′ of
/// task i−1 (θ, or `first_source`, for i = 0). Per-task work runs on up to
/// config.threads workers and is reduced in task order.
MetaGradient meta_gradient(const ParameterSet& theta, const ParameterSet& psi, std::span<const Episode> batch,
                           const Backbone& backbone, const CoLearner* colearner, const MetaConfig& config,
                           const ParameterSet* first_source = nullptr);

/// Mutable training state for one learner.
struct MetaState {
  ParameterSet theta, psi;
  AdamState adam_theta, adam_psi;
  ParameterSet feature_source;  // carried φ′ (empty unless carry_feature_source)
  std::uint64_t steps = 0;
};

/// One outer update for any method. `lr_multiplier` scales β (and Reptile's ε).
LossBreakdown train_step(MetaState& state, std::span<const Episode> batch, const Backbone& backbone,
                         const CoLearner* colearner, const MetaConfig& config, double lr_multiplier = 1.0);

/// MAML-family update: Adam on θ and ψ with the meta-gradient.
LossBreakdown meta_step(MetaState& state, std::span<const Episode> batch, const Backbone& backbone,
                        const CoLearner* colearner, const MetaConfig& config, double lr_multiplier = 1.0);

/// θ + ε·(mean φ′ − θ).
ParameterSet reptile_update(const ParameterSet& theta, std::span<const ParameterSet> adapted, double epsilon);
/// Support-only adaptation followed by interpolation; l_meta is the mean
/// post-adaptation support loss.
LossBreakdown reptile_step(MetaState& state, std::span<const Episode> batch, const Backbone& backbone,
                           const MetaConfig& config, double lr_multiplier = 1.0);

struct ProtoResult {
  Tensor loss;
  Tensor logits;  // −‖q − c_k‖²
  std::vector<int> predictions;
};

/// Prototypes are mean flattened support features per local label.
ProtoResult prototype_logits(const Tensor& support_embed, std::span<const int> support_labels,
                             const Tensor& query_embed, std::span<const int> query_labels, std::size_t n_way);
ProtoResult protonet_episode(const ParameterSet& theta, const Episode& episode, const Backbone& backbone);
LossBreakdown protonet_step(MetaState& state, std::span<const Episode> batch, const Backbone& backbone,
                            const MetaConfig& config, double lr_multiplier = 1.0);

/// Replaces an n-row head with `n_way` copies of its mean row so a learner
/// trained at one way can be evaluated at another; identity when n matches.
ParameterSet fit_head(const ParameterSet& theta, std::size_t n_way);

struct EpisodeRecord {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double loss = 0.0;  // query cross-entropy at the adapted parameters
  std::vector<int> truth, predicted;
};

/// Adapts on the support half (first order, eval_inner_steps) and scores the
/// query half. Never touches a co-learner.
EpisodeRecord evaluate_episode(const ParameterSet& theta, const Episode& episode, const Backbone& backbone,
                               const MetaConfig& config);
std::vector<EpisodeRecord> evaluate(const ParameterSet& theta, std::span<const Episode> episodes,
                                    const Backbone& backbone, const MetaConfig& config);

/// Runs fn(0..n-1) on up to `threads` workers; rethrows the lowest-index failure.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace ccomaml
