#include <doctest.h>

#include <cmath>

#include "ccomaml/optim.hpp"

using namespace ccomaml;

namespace {

ParameterSet one(double v) {
  ParameterSet p;
  p.add("x", Tensor({1}, {v}));
  return p;
}

}  // namespace

TEST_CASE("Adam's first step has magnitude lr whatever the gradient scale") {
  for (double g : {1e-3, 1.0, 250.0}) {
    AdamState st;
    auto next = adam_step(one(1.0), one(g), st, 0.01);
    CHECK(next.at("x").at(0) == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
    CHECK(st.step == 1);
  }
}

TEST_CASE("Adam matches a scalar hand recursion") {
  AdamState st;
  double x = 0.5, m = 0, v = 0;
  auto p = one(x);
  for (int t = 1; t <= 5; ++t) {
    const double g = 2 * x;  // d/dx x²
    p = adam_step(p, one(g), st, 0.1);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    x -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(p.at("x").at(0) == doctest::Approx(x).epsilon(1e-12));
  }
}

TEST_CASE("Adam state copies do not alias") {
  AdamState st;
  auto p = adam_step(one(1.0), one(1.0), st, 0.1);
  AdamState copy = st;
  adam_step(p, one(3.0), st, 0.1);
  CHECK(copy.m.at("x").at(0) == doctest::Approx(0.1));
}

TEST_CASE("SGD with coupled decay") {
  auto p = sgd_step(one(2.0), one(1.0), 0.5, 0.1);
  CHECK(p.at("x").at(0) == doctest::Approx(2.0 - 0.5 * (1.0 + 0.1 * 2.0)));
}

TEST_CASE("plateau scheduler cuts after patience non-improving epochs") {
  PlateauScheduler s;
  s.patience = 3;
  s.factor = 0.1;
  CHECK(s.step(1.0) == 1.0);
  CHECK(s.step(1.0) == 1.0);  // equal is not an improvement
  CHECK(s.step(1.5) == 1.0);
  CHECK(s.step(1.2) == doctest::Approx(0.1));
  CHECK(s.step(0.5) == doctest::Approx(0.1));
  for (int i = 0; i < 3; ++i) s.step(0.6);
  CHECK(s.multiplier == doctest::Approx(0.01));
}

TEST_CASE("early stopping on a flat validation curve halts by epoch 21") {
  EarlyStopping e;
  int epoch = 0;
  while (e.step(0.7)) ++epoch;
  ++epoch;
  CHECK(epoch <= 21);
  CHECK(epoch == 21);

  EarlyStopping improving;
  for (int i = 0; i < 100; ++i) CHECK(improving.step(1.0 / (i + 1)));
}
