#pragma once

#include <cstddef>
#include <limits>

#include "ccomaml/autodiff.hpp"

namespace ccomaml {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::size_t step = 0;
  ParameterSet m, v;  // first/second moments, lazily shaped like the parameters
};

/// Bias-corrected Adam. A non-zero weight_decay is added to the gradient as
/// coupled L2; the meta engine passes 0 and carries decay in its loss instead.
ParameterSet adam_step(const ParameterSet& params, const ParameterSet& grads, AdamState& state, double lr,
                       double weight_decay = 0.0, const AdamConfig& config = {});
ParameterSet sgd_step(const ParameterSet& params, const ParameterSet& grads, double lr, double weight_decay = 0.0);

/// Multiplies the learning rate by `factor` after `patience` consecutive
/// epochs without strict improvement of the validation loss.
struct PlateauScheduler {
  std::size_t patience = 10;
  double factor = 0.1;
  double best = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs = 0;
  double multiplier = 1.0;

  double step(double validation_loss);
};

struct EarlyStopping {
  std::size_t patience = 20;
  double best = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs = 0;

  /// False once `patience` consecutive epochs failed to improve.
  bool step(double validation_loss);
};

}  // namespace ccomaml
