#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ccomaml {

/// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);
  static ConfusionMatrix from_predictions(std::size_t classes, std::span<const int> truth,
                                          std::span<const int> predicted);

  void add(int truth, int predicted);
  std::size_t classes() const { return n_; }
  std::size_t count(std::size_t truth, std::size_t predicted) const { return counts_[truth * n_ + predicted]; }
  std::size_t total() const { return total_; }

  // one-vs-rest reading for class c
  std::size_t tp(std::size_t c) const;
  std::size_t fp(std::size_t c) const;
  std::size_t fn(std::size_t c) const;
  std::size_t tn(std::size_t c) const;

 private:
  std::size_t n_;
  std::size_t total_ = 0;
  std::vector<std::size_t> counts_;
};

double accuracy(const ConfusionMatrix& cm);
/// 2TP/(2TP+FP+FN) per class; a class with no support and no predictions scores 0.
std::vector<double> per_class_f1(const ConfusionMatrix& cm);
double macro_f1(const ConfusionMatrix& cm);

struct StatSummary {
  double mean = 0.0;
  double stddev = 0.0;      // sample (n-1) standard deviation
  double half_width = 0.0;  // 95% Student-t
  std::size_t n = 0;
  bool defined = false;     // false when n < 2
};

StatSummary ci95(std::span<const double> samples);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;  // two-sided
  std::size_t df = 0;
  /// Zero-variance differences: t is ±inf (p = 0) or 0 (p = 1) when all differences vanish.
  bool degenerate = false;
};

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

/// "**" for p < 0.001, "*" for p < 0.05, "" otherwise.
std::string significance_marker(double p);

/// I_x(a, b) by continued fraction.
double regularized_incomplete_beta(double a, double b, double x);
double student_t_cdf(double t, double df);
/// Inverse of student_t_cdf for p in (0, 1).
double student_t_quantile(double p, double df);

}  // namespace ccomaml
