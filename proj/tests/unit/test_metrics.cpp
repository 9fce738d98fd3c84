#include <doctest.h>

#include <cmath>
#include <random>

#include "ccomaml/metrics.hpp"

using namespace ccomaml;

TEST_CASE("confusion matrix one-vs-rest reading") {
  std::vector<int> truth{0, 0, 1, 1, 2}, pred{0, 1, 1, 1, 0};
  auto cm = ConfusionMatrix::from_predictions(3, truth, pred);
  CHECK(cm.total() == 5);
  CHECK(cm.count(0, 1) == 1);
  CHECK(cm.tp(1) == 2);
  CHECK(cm.fp(1) == 1);
  CHECK(cm.fn(0) == 1);
  CHECK(cm.fp(0) == 1);
  CHECK(cm.tn(2) == 4);
  CHECK_THROWS(ConfusionMatrix(1));
  CHECK_THROWS(cm.add(3, 0));
}

TEST_CASE("accuracy and macro-F1 on hand-computed cases") {
  auto perfect = ConfusionMatrix::from_predictions(3, std::vector<int>{0, 1, 2}, std::vector<int>{0, 1, 2});
  CHECK(accuracy(perfect) == 1.0);
  CHECK(macro_f1(perfect) == 1.0);

  auto half = ConfusionMatrix::from_predictions(2, std::vector<int>{0, 0, 1, 1}, std::vector<int>{0, 1, 0, 1});
  CHECK(accuracy(half) == 0.5);

  auto cm = ConfusionMatrix::from_predictions(2, std::vector<int>{0, 0, 1, 1}, std::vector<int>{0, 1, 1, 1});
  auto f1 = per_class_f1(cm);
  CHECK(f1[0] == doctest::Approx(2.0 / 3.0));
  CHECK(f1[1] == doctest::Approx(0.8));
  CHECK(macro_f1(cm) == doctest::Approx(0.733333333333).epsilon(1e-10));

  // class 2 never appears nor is predicted: counts as 0
  auto absent = ConfusionMatrix::from_predictions(3, std::vector<int>{0, 1}, std::vector<int>{0, 1});
  CHECK(macro_f1(absent) == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS(accuracy(ConfusionMatrix(2)));
}

TEST_CASE("metrics are invariant under class relabeling") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> l(0, 3);
  std::vector<int> truth(40), pred(40);
  for (int i = 0; i < 40; ++i) {
    truth[i] = l(rng);
    pred[i] = l(rng);
  }
  const std::vector<int> perm{2, 0, 3, 1};
  std::vector<int> t2(40), p2(40);
  for (int i = 0; i < 40; ++i) {
    t2[i] = perm[truth[i]];
    p2[i] = perm[pred[i]];
  }
  auto a = ConfusionMatrix::from_predictions(4, truth, pred);
  auto b = ConfusionMatrix::from_predictions(4, t2, p2);
  CHECK(accuracy(a) == accuracy(b));
  CHECK(macro_f1(a) == doctest::Approx(macro_f1(b)).epsilon(1e-15));
}

TEST_CASE("ci95 against the t table") {
  std::vector<double> xs{1, 2, 3};
  auto s = ci95(xs);
  CHECK(s.mean == 2.0);
  CHECK(s.stddev == doctest::Approx(1.0));
  CHECK(s.half_width == doctest::Approx(4.302653 / std::sqrt(3.0)).epsilon(1e-6));
  CHECK(s.defined);

  std::vector<double> same(10, 0.4);
  CHECK(ci95(same).half_width == 0.0);
  CHECK_FALSE(ci95(std::vector<double>{0.5}).defined);

  // same spread, doubled sample: width shrinks by about 1/√2
  std::vector<double> fifty, hundred;
  for (int i = 0; i < 50; ++i) fifty.push_back(i % 2);
  for (int i = 0; i < 100; ++i) hundred.push_back(i % 2);
  const double ratio = ci95(hundred).half_width / ci95(fifty).half_width;
  CHECK(ratio == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(0.02));
}

TEST_CASE("t distribution helpers against tabulated values") {
  CHECK(student_t_quantile(0.975, 1) == doctest::Approx(12.706205).epsilon(1e-6));
  CHECK(student_t_quantile(0.975, 4) == doctest::Approx(2.776445).epsilon(1e-6));
  CHECK(student_t_quantile(0.975, 30) == doctest::Approx(2.042272).epsilon(1e-6));
  CHECK(student_t_quantile(0.5, 7) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(student_t_cdf(0.0, 5) == doctest::Approx(0.5));
  CHECK(student_t_cdf(1.0, 1) == doctest::Approx(0.75));  // Cauchy
  CHECK(regularized_incomplete_beta(1, 1, 0.3) == doctest::Approx(0.3));
  CHECK(regularized_incomplete_beta(2, 3, 0.4) == doctest::Approx(0.5248));
  CHECK(regularized_incomplete_beta(2, 3, 0.0) == 0.0);
  CHECK(regularized_incomplete_beta(2, 3, 1.0) == 1.0);
}

TEST_CASE("paired t-test") {
  std::vector<double> a{1, 2, 3, 4}, b{1, 2, 3, 4};
  auto same = paired_t_test(a, b);
  CHECK(same.t == 0.0);
  CHECK(same.p == 1.0);

  std::vector<double> base(5, 0.0), shifted{1.2, 0.8, 1.1, 0.9, 1.0};
  auto r = paired_t_test(shifted, base);
  CHECK(r.t == doctest::Approx(14.1421).epsilon(1e-5));
  CHECK(r.p == doctest::Approx(1.45e-4).epsilon(0.01));
  CHECK(r.df == 4);
  auto flipped = paired_t_test(base, shifted);
  CHECK(flipped.t == doctest::Approx(-r.t));
  CHECK(flipped.p == doctest::Approx(r.p).epsilon(1e-14));

  std::vector<double> ones(5, 1.0);
  auto degenerate = paired_t_test(ones, base);
  CHECK(degenerate.degenerate);
  CHECK(std::isinf(degenerate.t));
  CHECK(degenerate.p == 0.0);
  CHECK_THROWS(paired_t_test(std::vector<double>{1}, std::vector<double>{2}));

  CHECK(significance_marker(0.0005) == "**");
  CHECK(significance_marker(0.01) == "*");
  CHECK(significance_marker(0.2) == "");
}
