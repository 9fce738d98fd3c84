#include "ccomaml/metrics.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace ccomaml {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : n_(classes), counts_(classes * classes, 0) {
  if (classes < 2) throw std::invalid_argument("confusion matrix needs at least 2 classes");
}

ConfusionMatrix ConfusionMatrix::from_predictions(std::size_t classes, std::span<const int> truth,
                                                  std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw std::invalid_argument("confusion matrix: length mismatch");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
  return cm;
}

void ConfusionMatrix::add(int truth, int predicted) {
  if (truth < 0 || predicted < 0 || static_cast<std::size_t>(truth) >= n_ || static_cast<std::size_t>(predicted) >= n_) {
    throw std::out_of_range("confusion matrix: label outside [0, " + std::to_string(n_) + ")");
  }
  ++counts_[static_cast<std::size_t>(truth) * n_ + static_cast<std::size_t>(predicted)];
  ++total_;
}

std::size_t ConfusionMatrix::tp(std::size_t c) const { return count(c, c); }

std::size_t ConfusionMatrix::fp(std::size_t c) const {
  std::size_t s = 0;
  for (std::size_t r = 0; r < n_; ++r)
    if (r != c) s += count(r, c);
  return s;
}

std::size_t ConfusionMatrix::fn(std::size_t c) const {
  std::size_t s = 0;
  for (std::size_t k = 0; k < n_; ++k)
    if (k != c) s += count(c, k);
  return s;
}

std::size_t ConfusionMatrix::tn(std::size_t c) const { return total_ - tp(c) - fp(c) - fn(c); }

double accuracy(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw std::invalid_argument("accuracy: empty confusion matrix");
  std::size_t diag = 0;
  for (std::size_t c = 0; c < cm.classes(); ++c) diag += cm.tp(c);
  return static_cast<double>(diag) / static_cast<double>(cm.total());
}

std::vector<double> per_class_f1(const ConfusionMatrix& cm) {
  std::vector<double> f1(cm.classes());
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    const auto tp2 = 2 * cm.tp(c);
    const auto denom = tp2 + cm.fp(c) + cm.fn(c);
    f1[c] = denom == 0 ? 0.0 : static_cast<double>(tp2) / static_cast<double>(denom);
  }
  return f1;
}

double macro_f1(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw std::invalid_argument("macro_f1: empty confusion matrix");
  auto f1 = per_class_f1(cm);
  return std::accumulate(f1.begin(), f1.end(), 0.0) / static_cast<double>(f1.size());
}

namespace {

// shifted by the first sample so a constant sequence has exactly zero spread
double mean_of(std::span<const double> xs) {
  double shifted = 0.0;
  for (double x : xs) shifted += x - xs.front();
  return xs.front() + shifted / static_cast<double>(xs.size());
}

double sample_stddev(std::span<const double> xs, double mean) {
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

// Modified Lentz evaluation of the incomplete beta continued fraction.
double beta_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < eps) return h;
  }
  return h;
}

}  // namespace

StatSummary ci95(std::span<const double> samples) {
  StatSummary s;
  s.n = samples.size();
  if (samples.empty()) return s;
  s.mean = mean_of(samples);
  if (s.n < 2) return s;
  s.defined = true;
  s.stddev = sample_stddev(samples, s.mean);
  const double df = static_cast<double>(s.n - 1);
  s.half_width = student_t_quantile(0.975, df) * s.stddev / std::sqrt(static_cast<double>(s.n));
  return s;
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_t_test: samples differ in length");
  if (a.size() < 2) throw std::invalid_argument("paired_t_test: need at least 2 pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  TTestResult r;
  r.df = d.size() - 1;
  const double md = mean_of(d);
  const double sd = sample_stddev(d, md);
  if (sd == 0.0) {
    r.degenerate = true;
    if (md == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = md > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      r.p = 0.0;
    }
    return r;
  }
  r.t = md / (sd / std::sqrt(static_cast<double>(d.size())));
  const double df = static_cast<double>(r.df);
  r.p = regularized_incomplete_beta(0.5 * df, 0.5, df / (df + r.t * r.t));
  return r;
}

std::string significance_marker(double p) {
  if (p < 0.001) return "**";
  if (p < 0.05) return "*";
  return "";
}

double regularized_incomplete_beta(double a, double b, double x) {
  if (a <= 0.0 || b <= 0.0) throw std::invalid_argument("incomplete beta: a and b must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  // the fraction converges fast on the side of the mean
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_fraction(a, b, x) / a;
  return 1.0 - front * beta_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
  if (df <= 0.0) throw std::invalid_argument("student_t_cdf: df must be positive");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double tail = 0.5 * regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
  return t > 0 ? 1.0 - tail : tail;
}

double student_t_quantile(double p, double df) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("student_t_quantile: p must lie in (0, 1)");
  if (p == 0.5) return 0.0;
  if (p < 0.5) return -student_t_quantile(1.0 - p, df);
  double lo = 0.0, hi = 1.0;
  while (student_t_cdf(hi, df) < p) {
    lo = hi;
    hi *= 2.0;
  }
  for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (student_t_cdf(mid, df) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace ccomaml
