#include <doctest.h>

#include <cmath>
#include <random>

#include "ccomaml/errors.hpp"
#include "ccomaml/layers.hpp"
#include "ccomaml/ops.hpp"

using namespace ccomaml;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed) {
  Tensor t(std::move(s));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  for (auto& v : t.mutable_data()) v = n(rng);
  return t;
}

}  // namespace

TEST_CASE("broadcasting follows trailing-axis rules") {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b({3}, {10, 20, 30});
  auto c = add(a, b);
  CHECK(c.shape() == Shape{2, 3});
  CHECK(c.at(5) == 36);
  CHECK(broadcast_shapes({4, 1, 3}, {2, 1}, "t") == Shape{4, 2, 3});
  CHECK_THROWS_AS(add(a, Tensor({2}, {1, 2})), ShapeError);
}

TEST_CASE("matmul against a hand product, with transposes") {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b({3, 2}, {7, 8, 9, 10, 11, 12});
  auto c = matmul(a, b);
  CHECK(c.data()[0] == 58);
  CHECK(c.data()[1] == 64);
  CHECK(c.data()[2] == 139);
  CHECK(c.data()[3] == 154);
  auto ct = matmul(transpose(b), transpose(a), false, false);
  auto ct2 = matmul(b, a, true, true);
  for (std::size_t i = 0; i < 4; ++i) CHECK(ct.at(i) == ct2.at(i));
}

TEST_CASE("softmax rows sum to one and logsumexp is stable") {
  Tensor x({2, 3}, {1000, 1001, 1002, -5, 0, 5});
  auto s = softmax(x);
  for (int r = 0; r < 2; ++r) CHECK(s.at(r * 3) + s.at(r * 3 + 1) + s.at(r * 3 + 2) == doctest::Approx(1.0));
  auto l = logsumexp(x);
  CHECK(std::isfinite(l.at(0)));
  CHECK(l.at(0) == doctest::Approx(1002 + std::log(1 + std::exp(-1) + std::exp(-2))));
  auto ls = log_softmax(x);
  CHECK(std::exp(ls.at(2)) == doctest::Approx(s.at(2)));
}

TEST_CASE("reductions over an axis") {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  auto s0 = sum(x, 0);
  CHECK(s0.shape() == Shape{3});
  CHECK(s0.at(2) == 9);
  auto m1 = mean(x, 1, true);
  CHECK(m1.shape() == Shape{2, 1});
  CHECK(m1.at(1) == 5);
  CHECK(sum_squares(x).item() == 91);
  CHECK(sum_to(x, {1, 3}).at(0) == 5);
}

TEST_CASE("fused convolution equals the direct quadruple loop") {
  for (std::size_t stride : {1u, 2u}) {
    for (std::size_t pad : {0u, 1u}) {
      auto x = random_tensor({2, 3, 7, 6}, 1 + stride + pad);
      auto w = random_tensor({4, 3, 3, 3}, 5);
      auto b = random_tensor({4}, 6);
      auto fast = conv2d(x, w, b, stride, pad);
      auto slow = conv2d_direct(x, w, b, stride, pad);
      REQUIRE(fast.shape() == slow.shape());
      for (std::size_t i = 0; i < fast.numel(); ++i) CHECK(fast.at(i) == doctest::Approx(slow.at(i)).epsilon(1e-12));
    }
  }
}

TEST_CASE("convolution companions are the adjoints of the forward op") {
  // ⟨g, conv(x, w)⟩ = ⟨input_grad(g, w), x⟩ = ⟨weight_grad(x, g), w⟩
  auto x = random_tensor({2, 2, 5, 5}, 7);
  auto w = random_tensor({3, 2, 3, 3}, 8);
  auto y = conv2d_nobias(x, w, 2, 1);
  auto g = random_tensor(y.shape(), 9);
  auto dot = [](const Tensor& a, const Tensor& b) { return sum(mul(a, b)).item(); };
  const double lhs = dot(g, y);
  CHECK(dot(conv2d_input_grad(g, w, x.shape(), 2, 1), x) == doctest::Approx(lhs).epsilon(1e-12));
  CHECK(dot(conv2d_weight_grad(x, g, w.shape(), 2, 1), w) == doctest::Approx(lhs).epsilon(1e-12));
}

TEST_CASE("im2col lays out patches row by row") {
  Tensor x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  auto cols = im2col(x, 2, 2, 1, 0);
  // (C·kh·kw) × (N·oh·ow) or the transpose; either way the first patch is 1 2 4 5
  REQUIRE(cols.numel() == 16);
  std::vector<double> v(cols.data().begin(), cols.data().end());
  const bool rows = v[0] == 1 && v[1] == 2 && v[2] == 4 && v[3] == 5;
  const bool columns = v[0] == 1 && v[4] == 2 && v[8] == 4 && v[12] == 5;
  CHECK((rows || columns));
}

TEST_CASE("pooling") {
  Tensor x({1, 1, 2, 4}, {1, 5, 2, 0, 3, 4, 8, 7});
  auto m = max_pool2d(x, 2);
  CHECK(m.shape() == Shape{1, 1, 1, 2});
  CHECK(m.at(0) == 5);
  CHECK(m.at(1) == 8);
  auto a = avg_pool2d(x, 2, 2);
  CHECK(a.at(0) == doctest::Approx(13.0 / 4));
  auto g = adaptive_avg_pool2d(x, 1, 1);
  CHECK(g.item() == doctest::Approx(30.0 / 8));
}

TEST_CASE("shape plumbing") {
  auto x = random_tensor({2, 3, 4}, 3);
  auto p = permute(x, {2, 0, 1});
  CHECK(p.shape() == Shape{4, 2, 3});
  CHECK(p.at(1 * 6 + 1 * 3 + 2) == x.at(1 * 12 + 2 * 4 + 1));
  CHECK(flatten(x).shape() == Shape{2, 12});
  auto s = slice(x, 1, 1, 2);
  CHECK(s.shape() == Shape{2, 2, 4});
  CHECK(s.at(0) == x.at(4));
  std::vector<Tensor> parts{x, s};
  CHECK(concat(parts, 1).shape() == Shape{2, 5, 4});
  auto gsel = gather(Tensor({3}, {7, 8, 9}), {4}, {2, 0, -1, 2});
  CHECK(gsel.at(0) == 9);
  CHECK(gsel.at(2) == 0);
  CHECK(argmax_rows(Tensor({2, 3}, {1, 3, 2, 9, 0, 1})) == std::vector<std::size_t>{1, 0});
  CHECK_THROWS_AS(reshape(x, {5, 5}), ShapeError);
}
