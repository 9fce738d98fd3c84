#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ccomaml::cli {

struct GradcheckOptions {
  std::size_t trials = 100;         // randomized trials per op (first order)
  std::size_t hvp_trials = 10;      // Hessian-vector trials per op
  std::uint64_t seed = 1;
  double tolerance = 1e-4;
  double bilevel_tolerance = 1e-3;
};

struct OpCheckResult {
  std::string op;
  std::size_t trials = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct BilevelCheckResult {
  std::string model;
  double rel_error = 0.0;
  /// ‖g_second − g_first‖ / ‖g_second‖.
  double first_order_gap = 0.0;
  bool passed = false;
};

/// Central finite differences against reverse mode for every primitive, plus
/// Hessian-vector products against differences of gradients.
std::vector<OpCheckResult> check_primitives(const GradcheckOptions& options);
/// Exact meta-gradient vs differences of the full meta-objective on a
/// 2-parameter linear model and a 2-layer perceptron (2-way 5-shot, 1 step).
std::vector<BilevelCheckResult> check_bilevel(const GradcheckOptions& options);

/// ‖a − b‖₂ / max(‖a‖₂, ‖b‖₂), 0 when both vanish.
double relative_error(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace ccomaml::cli
