#include <doctest.h>

#include <cmath>

#include "ccomaml/errors.hpp"
#include "ccomaml/layers.hpp"

using namespace ccomaml;

TEST_CASE("cross-entropy against a hand computation") {
  Tensor logits({2, 3}, {1.0, 2.0, 3.0, 0.0, 0.0, 0.0});
  std::vector<int> labels{2, 0};
  const double row0 = -(3.0 - std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  const double row1 = std::log(3.0);
  CHECK(cross_entropy(logits, labels).item() == doctest::Approx((row0 + row1) / 2).epsilon(1e-14));
  std::vector<int> bad{3, 0};
  CHECK_THROWS(cross_entropy(logits, bad));
}

TEST_CASE("linear layer is x·Wᵀ + b") {
  Tensor x({1, 2}, {1, 2});
  Tensor w({3, 2}, {1, 0, 0, 1, 1, 1});
  Tensor b({3}, {0.5, 0.5, 0.5});
  auto y = linear(x, w, b);
  CHECK(y.shape() == Shape{1, 3});
  CHECK(y.at(0) == 1.5);
  CHECK(y.at(1) == 2.5);
  CHECK(y.at(2) == 3.5);
}

TEST_CASE("layer norm standardizes the last axis") {
  Tensor x({2, 4}, {1, 2, 3, 4, -3, 0, 3, 9});
  auto y = layer_norm(x, Tensor::full({4}, 1.0), Tensor::zeros({4}));
  for (int r = 0; r < 2; ++r) {
    double m = 0, v = 0;
    for (int c = 0; c < 4; ++c) m += y.at(r * 4 + c) / 4;
    for (int c = 0; c < 4; ++c) v += (y.at(r * 4 + c) - m) * (y.at(r * 4 + c) - m) / 4;
    CHECK(m == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("attention weights form distributions and identity projections act as plain attention") {
  InitPolicy policy;
  policy.attention = InitScheme::Identity;
  Initializer init(policy);
  ParameterSet p;
  add_attention_params(p, "att", 4, init, InitScheme::Identity);
  auto params = attention_params(p, "att");
  Tensor q({1, 2, 4}, {1, 0, 0, 0, 0, 1, 0, 0});
  Tensor kv({1, 3, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0});
  auto out = multi_head_attention(q, kv, kv, params, 1);
  CHECK(out.output.shape() == Shape{1, 2, 4});
  REQUIRE(out.weights.shape() == Shape{1, 2, 3});
  for (int r = 0; r < 2; ++r) {
    double total = 0;
    for (int c = 0; c < 3; ++c) total += out.weights.at(r * 3 + c);
    CHECK(total == doctest::Approx(1.0));
  }
  // query 0 matches key 0 best
  CHECK(out.weights.at(0) > out.weights.at(1));
  const double s = 1.0 / std::sqrt(4.0);
  const double w0 = std::exp(s) / (std::exp(s) + 2.0);
  CHECK(out.weights.at(0) == doctest::Approx(w0));
}

TEST_CASE("initializer is deterministic per seed") {
  InitPolicy p;
  p.seed = 4;
  Initializer a(p), b(p);
  auto wa = a.conv_weight(4, 3, 3);
  auto wb = b.conv_weight(4, 3, 3);
  CHECK(std::equal(wa.data().begin(), wa.data().end(), wb.data().begin()));
  p.seed = 5;
  Initializer c(p);
  auto wc = c.conv_weight(4, 3, 3);
  CHECK_FALSE(std::equal(wa.data().begin(), wa.data().end(), wc.data().begin()));
  // He normal: variance 2 / fan_in
  Initializer big(p);
  auto w = big.weight(InitScheme::HeNormal, {200, 100}, 100, 200);
  double var = 0;
  for (double v : w.data()) var += v * v / static_cast<double>(w.numel());
  CHECK(var == doctest::Approx(0.02).epsilon(0.05));
}

TEST_CASE("layer specs reject inconsistent sizes") {
  CHECK_NOTHROW(LayerSpec::conv2d(3, 8, 3, 1, 1).validate());
  CHECK_THROWS_AS(LayerSpec::conv2d(0, 8, 3).validate(), ShapeError);
  CHECK_THROWS_AS(LayerSpec::attention(6, 4).validate(), ShapeError);
}
