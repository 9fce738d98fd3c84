#include "ccomaml/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "ccomaml/errors.hpp"

namespace ccomaml {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

Tensor constant(Shape shape, std::vector<double> data) { return Tensor(std::move(shape), std::move(data)); }

// Reduces a broadcast gradient back to the operand's shape.
Tensor reduce_grad(const Tensor& g, const Shape& shape) {
  if (g.shape() == shape) return g;
  return sum_to(g, shape);
}

template <class F>
std::vector<double> broadcast_binary(const Tensor& a, const Tensor& b, const Shape& out_shape, F&& f) {
  const auto da = a.data();
  const auto db = b.data();
  std::vector<double> out(shape_numel(out_shape));
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(da[i], db[i]);
  } else if (db.size() == 1) {
    const double s = db[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(da[i], s);
  } else if (da.size() == 1) {
    const double s = da[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(s, db[i]);
  } else if (a.shape() == out_shape && !b.shape().empty() && b.shape().back() == out_shape.back() &&
             db.size() == out_shape.back()) {
    // row-vector operand, e.g. bias over the last axis
    const std::size_t n = db.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(da[i], db[i % n]);
  } else {
    auto ea = make_broadcast_map(a.shape(), out_shape);
    auto eb = make_broadcast_map(b.shape(), out_shape);
    std::vector<double> xa(out.size()), xb(out.size());
    ea->apply(da, xa);
    eb->apply(db, xb);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xa[i], xb[i]);
  }
  return out;
}

template <class F>
std::vector<double> unary(const Tensor& x, F&& f) {
  auto d = x.data();
  std::vector<double> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = f(d[i]);
  return out;
}

std::size_t last_axis(const Tensor& x, const char* op) {
  if (x.dim() == 0) throw ShapeError(std::string(op) + ": scalar input has no last axis");
  return x.shape().back();
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not broadcast-compatible");
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear maps

Tensor apply_map(const Tensor& x, const LinearMapPtr& map, bool adjoint) {
  const Shape& in = adjoint ? map->out_shape() : map->in_shape();
  const Shape& out = adjoint ? map->in_shape() : map->out_shape();
  if (x.shape() != in) {
    throw ShapeError(std::string(map->name()) + ": expected input " + shape_str(in) + ", got " +
                     shape_str(x.shape()));
  }
  std::vector<double> result(shape_numel(out), 0.0);
  if (adjoint) {
    map->apply_adjoint(x.data(), result);
  } else {
    map->apply(x.data(), result);
  }
  return Tensor::make_result(map->name().data(), out, std::move(result), {x},
                             [map, adjoint](const Tensor& g, std::span<const Tensor>) {
                               return std::vector<Tensor>{apply_map(g, map, !adjoint)};
                             });
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  auto shape = broadcast_shapes(a.shape(), b.shape(), "add");
  auto out = broadcast_binary(a, b, shape, [](double x, double y) { return x + y; });
  return Tensor::make_result("add", shape, std::move(out), {a, b},
                             [](const Tensor& g, std::span<const Tensor> in) {
                               return std::vector<Tensor>{
                                   in[0].requires_grad() ? reduce_grad(g, in[0].shape()) : Tensor(),
                                   in[1].requires_grad() ? reduce_grad(g, in[1].shape()) : Tensor()};
                             });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  auto shape = broadcast_shapes(a.shape(), b.shape(), "sub");
  auto out = broadcast_binary(a, b, shape, [](double x, double y) { return x - y; });
  return Tensor::make_result("sub", shape, std::move(out), {a, b},
                             [](const Tensor& g, std::span<const Tensor> in) {
                               return std::vector<Tensor>{reduce_grad(g, in[0].shape()),
                                                          reduce_grad(neg(g), in[1].shape())};
                             });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  auto shape = broadcast_shapes(a.shape(), b.shape(), "mul");
  auto out = broadcast_binary(a, b, shape, [](double x, double y) { return x * y; });
  return Tensor::make_result("mul", shape, std::move(out), {a, b},
                             [](const Tensor& g, std::span<const Tensor> in) {
                               std::vector<Tensor> r(2);
                               if (in[0].requires_grad()) r[0] = reduce_grad(mul(g, in[1]), in[0].shape());
                               if (in[1].requires_grad()) r[1] = reduce_grad(mul(g, in[0]), in[1].shape());
                               return r;
                             });
}

Tensor div(const Tensor& a, const Tensor& b) {
  auto shape = broadcast_shapes(a.shape(), b.shape(), "div");
  auto out = broadcast_binary(a, b, shape, [](double x, double y) { return x / y; });
  return Tensor::make_result("div", shape, std::move(out), {a, b},
                             [](const Tensor& g, std::span<const Tensor> in) {
                               std::vector<Tensor> r(2);
                               if (in[0].requires_grad()) r[0] = reduce_grad(div(g, in[1]), in[0].shape());
                               if (in[1].requires_grad()) {
                                 // d(a/b)/db = -a / b^2
                                 r[1] = reduce_grad(neg(div(mul(g, in[0]), square(in[1]))), in[1].shape());
                               }
                               return r;
                             });
}

Tensor neg(const Tensor& x) {
  return Tensor::make_result("neg", x.shape(), unary(x, [](double v) { return -v; }), {x},
                             [](const Tensor& g, std::span<const Tensor>) { return std::vector<Tensor>{neg(g)}; });
}

Tensor add_scalar(const Tensor& x, double c) {
  return Tensor::make_result("add_scalar", x.shape(), unary(x, [c](double v) { return v + c; }), {x},
                             [](const Tensor& g, std::span<const Tensor>) { return std::vector<Tensor>{g}; });
}

Tensor mul_scalar(const Tensor& x, double c) {
  return Tensor::make_result("mul_scalar", x.shape(), unary(x, [c](double v) { return v * c; }), {x},
                             [c](const Tensor& g, std::span<const Tensor>) {
                               return std::vector<Tensor>{mul_scalar(g, c)};
                             });
}

Tensor exp(const Tensor& x) {
  auto out = unary(x, [](double v) { return std::exp(v); });
  auto saved = constant(x.shape(), out);
  return Tensor::make_result("exp", x.shape(), std::move(out), {x},
                             [saved](const Tensor& g, std::span<const Tensor> in) {
                               // Rebuild exp(x) on the graph only when a differentiable gradient is wanted.
                               const Tensor e = grad_enabled() ? exp(in[0]) : saved;
                               return std::vector<Tensor>{mul(g, e)};
                             });
}

Tensor log(const Tensor& x) {
  return Tensor::make_result("log", x.shape(), unary(x, [](double v) { return std::log(v); }), {x},
                             [](const Tensor& g, std::span<const Tensor> in) {
                               return std::vector<Tensor>{div(g, in[0])};
                             });
}

Tensor pow(const Tensor& x, double p) {
  return Tensor::make_result("pow", x.shape(), unary(x, [p](double v) { return std::pow(v, p); }), {x},
                             [p](const Tensor& g, std::span<const Tensor> in) {
                               if (p == 0.0) return std::vector<Tensor>{Tensor::zeros(in[0].shape())};
                               return std::vector<Tensor>{mul(g, mul_scalar(pow(in[0], p - 1.0), p))};
                             });
}

Tensor square(const Tensor& x) {
  return Tensor::make_result("square", x.shape(), unary(x, [](double v) { return v * v; }), {x},
                             [](const Tensor& g, std::span<const Tensor> in) {
                               return std::vector<Tensor>{mul(g, mul_scalar(in[0], 2.0))};
                             });
}

Tensor relu(const Tensor& x) {
  auto mask = constant(x.shape(), unary(x, [](double v) { return v > 0.0 ? 1.0 : 0.0; }));
  return Tensor::make_result("relu", x.shape(), unary(x, [](double v) { return v > 0.0 ? v : 0.0; }), {x},
                             [mask](const Tensor& g, std::span<const Tensor>) {
                               return std::vector<Tensor>{mul(g, mask)};
                             });
}

Tensor greater(const Tensor& a, const Tensor& b) {
  auto shape = broadcast_shapes(a.shape(), b.shape(), "greater");
  return constant(shape, broadcast_binary(a, b, shape, [](double x, double y) { return x > y ? 1.0 : 0.0; }));
}

// ---------------------------------------------------------------------------
// Matrix product

Tensor matmul(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  const bool batched = sa.size() == 3;
  if (!((sa.size() == 2 && sb.size() == 2) || (sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0]))) {
    throw ShapeError("matmul: unsupported operand shapes " + shape_str(sa) + " and " + shape_str(sb));
  }
  const std::size_t off = batched ? 1 : 0;
  const std::size_t batch = batched ? sa[0] : 1;
  const std::size_t ar = sa[off], ac = sa[off + 1], br = sb[off], bc = sb[off + 1];
  const std::size_t m = ta ? ac : ar, k = ta ? ar : ac;
  const std::size_t kb = tb ? bc : br, n = tb ? br : bc;
  if (k != kb) {
    throw ShapeError("matmul: inner dimensions differ for " + shape_str(sa) + (ta ? "^T" : "") + " and " +
                     shape_str(sb) + (tb ? "^T" : ""));
  }
  std::vector<double> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    ConstMap A(a.data().data() + i * ar * ac, ar, ac);
    ConstMap B(b.data().data() + i * br * bc, br, bc);
    MutMap C(out.data() + i * m * n, m, n);
    if (!ta && !tb) {
      C.noalias() = A * B;
    } else if (ta && !tb) {
      C.noalias() = A.transpose() * B;
    } else if (!ta && tb) {
      C.noalias() = A * B.transpose();
    } else {
      C.noalias() = A.transpose() * B.transpose();
    }
  }
  Shape shape = batched ? Shape{batch, m, n} : Shape{m, n};
  return Tensor::make_result("matmul", shape, std::move(out), {a, b},
                             [ta, tb](const Tensor& g, std::span<const Tensor> in) {
                               const Tensor& A = in[0];
                               const Tensor& B = in[1];
                               std::vector<Tensor> r(2);
                               if (A.requires_grad()) r[0] = ta ? matmul(B, g, tb, true) : matmul(g, B, false, !tb);
                               if (B.requires_grad()) r[1] = tb ? matmul(g, A, true, ta) : matmul(A, g, !ta, false);
                               return r;
                             });
}

// ---------------------------------------------------------------------------
// Reductions and structure

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  return apply_map(x, make_broadcast_map(x.shape(), shape), false);
}

Tensor sum_to(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  return apply_map(x, make_broadcast_map(shape, x.shape()), true);
}

Tensor sum(const Tensor& x) { return sum_to(x, Shape{}); }

Tensor mean(const Tensor& x) { return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum(const Tensor& x, std::size_t axis, bool keepdim) {
  if (axis >= x.dim()) throw ShapeError("sum: axis out of range for " + shape_str(x.shape()));
  Shape kept = x.shape();
  kept[axis] = 1;
  auto r = sum_to(x, kept);
  if (keepdim) return r;
  Shape squeezed = x.shape();
  squeezed.erase(squeezed.begin() + static_cast<std::ptrdiff_t>(axis));
  return reshape(r, squeezed);
}

Tensor mean(const Tensor& x, std::size_t axis, bool keepdim) {
  const double n = static_cast<double>(x.size(axis));
  return mul_scalar(sum(x, axis, keepdim), 1.0 / n);
}

Tensor sum_squares(const Tensor& x) { return sum(square(x)); }

Tensor reshape(const Tensor& x, Shape shape) {
  if (x.shape() == shape) return x;
  return apply_map(x, make_reshape_map(x.shape(), std::move(shape)), false);
}

Tensor flatten(const Tensor& x) {
  if (x.dim() < 1) throw ShapeError("flatten: scalar input");
  const std::size_t n = x.size(0);
  return reshape(x, Shape{n, x.numel() / n});
}

Tensor permute(const Tensor& x, std::vector<std::size_t> axes) {
  bool identity = true;
  for (std::size_t i = 0; i < axes.size(); ++i) identity = identity && axes[i] == i;
  if (identity && axes.size() == x.dim()) return x;
  return apply_map(x, make_permute_map(x.shape(), std::move(axes)), false);
}

Tensor transpose(const Tensor& x) {
  if (x.dim() != 2) throw ShapeError("transpose: expected 2-D input, got " + shape_str(x.shape()));
  return permute(x, {1, 0});
}

std::vector<std::size_t> argmax_rows(const Tensor& x) {
  const std::size_t m = last_axis(x, "argmax");
  const std::size_t rows = x.numel() / m;
  auto d = x.data();
  std::vector<std::size_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = d.data() + r * m;
    out[r] = static_cast<std::size_t>(std::max_element(row, row + m) - row);
  }
  return out;
}

Tensor max_last(const Tensor& x) {
  const std::size_t m = last_axis(x, "max");
  auto arg = argmax_rows(x);
  std::vector<std::int64_t> index(arg.size());
  for (std::size_t r = 0; r < arg.size(); ++r) index[r] = static_cast<std::int64_t>(r * m + arg[r]);
  Shape out(x.shape().begin(), x.shape().end() - 1);
  return gather(x, out, std::move(index));
}

Tensor logsumexp(const Tensor& x) {
  const std::size_t m = last_axis(x, "logsumexp");
  const std::size_t rows = x.numel() / m;
  auto d = x.data();
  std::vector<double> out(rows);
  std::vector<double> soft(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = d.data() + r * m;
    const double mx = *std::max_element(row, row + m);
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      soft[r * m + j] = std::exp(row[j] - mx);
      s += soft[r * m + j];
    }
    for (std::size_t j = 0; j < m; ++j) soft[r * m + j] /= s;
    out[r] = mx + std::log(s);
  }
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  auto saved = constant(x.shape(), std::move(soft));
  return Tensor::make_result("logsumexp", shape, std::move(out), {x},
                             [saved](const Tensor& g, std::span<const Tensor> in) {
                               Shape keep = in[0].shape();
                               keep.back() = 1;
                               const Tensor p = grad_enabled() ? softmax(in[0]) : saved;
                               return std::vector<Tensor>{mul(reshape(g, keep), p)};
                             });
}

Tensor log_softmax(const Tensor& x) {
  Shape keep = x.shape();
  keep.back() = 1;
  return sub(x, reshape(logsumexp(x), keep));
}

Tensor softmax(const Tensor& x) { return exp(log_softmax(x)); }

// ---------------------------------------------------------------------------
// Spatial

Tensor im2col(const Tensor& x, std::size_t kernel_h, std::size_t kernel_w, std::size_t stride, std::size_t padding) {
  if (x.dim() != 4) throw ShapeError("im2col: expected N×C×H×W input, got " + shape_str(x.shape()));
  ConvGeometry g;
  g.batch = x.size(0);
  g.channels = x.size(1);
  g.height = x.size(2);
  g.width = x.size(3);
  g.kernel_h = kernel_h;
  g.kernel_w = kernel_w;
  g.stride = stride;
  g.padding = padding;
  return apply_map(x, make_im2col_map(g), false);
}

// ---------------------------------------------------------------------------
// Convolution kernels: one im2col + GEMM per image, output already NCHW.

namespace {

struct ConvDims {
  std::size_t n, c, h, w, cout, kh, kw, stride, pad, oh, ow;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t cells() const { return oh * ow; }
};

ConvDims conv_dims(const Shape& x, const Shape& weight, std::size_t stride, std::size_t padding) {
  if (x.size() != 4 || weight.size() != 4) {
    throw ShapeError("conv2d: expected 4-D input and weight, got " + shape_str(x) + " and " + shape_str(weight));
  }
  if (weight[1] != x[1]) {
    throw ShapeError("conv2d: input channels " + std::to_string(x[1]) + " do not match weight " + shape_str(weight));
  }
  if (stride == 0) throw ShapeError("conv2d: zero stride");
  if (x[2] + 2 * padding < weight[2] || x[3] + 2 * padding < weight[3]) {
    throw ShapeError("conv2d: kernel " + shape_str(weight) + " larger than padded input " + shape_str(x));
  }
  ConvDims d{x[0], x[1], x[2], x[3], weight[0], weight[2], weight[3], stride, padding, 0, 0};
  d.oh = (d.h + 2 * padding - d.kh) / stride + 1;
  d.ow = (d.w + 2 * padding - d.kw) / stride + 1;
  return d;
}

// output columns x0 whose input column x0·stride + j − pad lies inside [0, w)
std::pair<std::size_t, std::size_t> valid_span(std::size_t j, std::size_t pad, std::size_t stride, std::size_t w,
                                               std::size_t ow) {
  const std::size_t lo = j >= pad ? 0 : (pad - j + stride - 1) / stride;
  const std::size_t hi = w + pad > j ? std::min(ow, (w + pad - j + stride - 1) / stride) : 0;
  return {std::min(lo, hi), hi};
}

// rows (c, i, j), columns output cells of image `img`
void image_cols(const ConvDims& d, const double* x, std::size_t img, double* cols) {
  for (std::size_t c = 0; c < d.c; ++c) {
    const double* plane = x + (img * d.c + c) * d.h * d.w;
    for (std::size_t i = 0; i < d.kh; ++i) {
      for (std::size_t j = 0; j < d.kw; ++j) {
        double* row = cols + ((c * d.kh + i) * d.kw + j) * d.cells();
        const auto [lo, hi] = valid_span(j, d.pad, d.stride, d.w, d.ow);
        for (std::size_t y = 0; y < d.oh; ++y) {
          const std::size_t yy = y * d.stride + i;
          double* out = row + y * d.ow;
          if (yy < d.pad || yy - d.pad >= d.h) {
            std::fill(out, out + d.ow, 0.0);
            continue;
          }
          const double* src = plane + (yy - d.pad) * d.w;
          std::fill(out, out + lo, 0.0);
          if (d.stride == 1) {
            std::copy(src + (lo + j - d.pad), src + (hi + j - d.pad), out + lo);
          } else {
            for (std::size_t x0 = lo; x0 < hi; ++x0) out[x0] = src[x0 * d.stride + j - d.pad];
          }
          std::fill(out + hi, out + d.ow, 0.0);
        }
      }
    }
  }
}

void image_col2im(const ConvDims& d, const double* cols, std::size_t img, double* x) {
  for (std::size_t c = 0; c < d.c; ++c) {
    double* plane = x + (img * d.c + c) * d.h * d.w;
    for (std::size_t i = 0; i < d.kh; ++i) {
      for (std::size_t j = 0; j < d.kw; ++j) {
        const double* row = cols + ((c * d.kh + i) * d.kw + j) * d.cells();
        const auto [lo, hi] = valid_span(j, d.pad, d.stride, d.w, d.ow);
        for (std::size_t y = 0; y < d.oh; ++y) {
          const std::size_t yy = y * d.stride + i;
          if (yy < d.pad || yy - d.pad >= d.h) continue;
          double* dst = plane + (yy - d.pad) * d.w;
          const double* in = row + y * d.ow;
          for (std::size_t x0 = lo; x0 < hi; ++x0) dst[x0 * d.stride + j - d.pad] += in[x0];
        }
      }
    }
  }
}

std::vector<double> conv_forward(const ConvDims& d, std::span<const double> x, std::span<const double> w) {
  std::vector<double> out(d.n * d.cout * d.cells());
  std::vector<double> cols(d.patch() * d.cells());
  ConstMap W(w.data(), d.cout, d.patch());
  for (std::size_t img = 0; img < d.n; ++img) {
    image_cols(d, x.data(), img, cols.data());
    MutMap Y(out.data() + img * d.cout * d.cells(), d.cout, d.cells());
    Y.noalias() = W * ConstMap(cols.data(), d.patch(), d.cells());
  }
  return out;
}

std::vector<double> conv_input_grad(const ConvDims& d, std::span<const double> gy, std::span<const double> w) {
  std::vector<double> dx(d.n * d.c * d.h * d.w, 0.0);
  std::vector<double> cols(d.patch() * d.cells());
  ConstMap W(w.data(), d.cout, d.patch());
  for (std::size_t img = 0; img < d.n; ++img) {
    MutMap C(cols.data(), d.patch(), d.cells());
    C.noalias() = W.transpose() * ConstMap(gy.data() + img * d.cout * d.cells(), d.cout, d.cells());
    image_col2im(d, cols.data(), img, dx.data());
  }
  return dx;
}

std::vector<double> conv_weight_grad(const ConvDims& d, std::span<const double> x, std::span<const double> gy) {
  std::vector<double> dw(d.cout * d.patch(), 0.0);
  std::vector<double> cols(d.patch() * d.cells());
  MutMap DW(dw.data(), d.cout, d.patch());
  for (std::size_t img = 0; img < d.n; ++img) {
    image_cols(d, x.data(), img, cols.data());
    DW.noalias() += ConstMap(gy.data() + img * d.cout * d.cells(), d.cout, d.cells()) *
                    ConstMap(cols.data(), d.patch(), d.cells()).transpose();
  }
  return dw;
}

void check_grad_out(const ConvDims& d, const Tensor& gy, const char* op) {
  if (gy.shape() != Shape{d.n, d.cout, d.oh, d.ow}) {
    throw ShapeError(std::string(op) + ": gradient shape " + shape_str(gy.shape()) + " does not match convolution output");
  }
}

}  // namespace

Tensor conv2d_nobias(const Tensor& x, const Tensor& weight, std::size_t stride, std::size_t padding) {
  const auto d = conv_dims(x.shape(), weight.shape(), stride, padding);
  return Tensor::make_result("conv2d", {d.n, d.cout, d.oh, d.ow}, conv_forward(d, x.data(), weight.data()),
                             {x, weight}, [stride, padding](const Tensor& g, std::span<const Tensor> in) {
                               std::vector<Tensor> r(2);
                               if (in[0].requires_grad())
                                 r[0] = conv2d_input_grad(g, in[1], in[0].shape(), stride, padding);
                               if (in[1].requires_grad())
                                 r[1] = conv2d_weight_grad(in[0], g, in[1].shape(), stride, padding);
                               return r;
                             });
}

Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& weight, const Shape& input_shape, std::size_t stride,
                         std::size_t padding) {
  const auto d = conv_dims(input_shape, weight.shape(), stride, padding);
  check_grad_out(d, grad_out, "conv2d_input_grad");
  return Tensor::make_result("conv2d_input_grad", input_shape, conv_input_grad(d, grad_out.data(), weight.data()),
                             {grad_out, weight}, [stride, padding](const Tensor& g, std::span<const Tensor> in) {
                               std::vector<Tensor> r(2);
                               if (in[0].requires_grad()) r[0] = conv2d_nobias(g, in[1], stride, padding);
                               if (in[1].requires_grad())
                                 r[1] = conv2d_weight_grad(g, in[0], in[1].shape(), stride, padding);
                               return r;
                             });
}

Tensor conv2d_weight_grad(const Tensor& x, const Tensor& grad_out, const Shape& weight_shape, std::size_t stride,
                          std::size_t padding) {
  const auto d = conv_dims(x.shape(), weight_shape, stride, padding);
  check_grad_out(d, grad_out, "conv2d_weight_grad");
  return Tensor::make_result("conv2d_weight_grad", weight_shape, conv_weight_grad(d, x.data(), grad_out.data()),
                             {x, grad_out}, [stride, padding](const Tensor& g, std::span<const Tensor> in) {
                               std::vector<Tensor> r(2);
                               if (in[0].requires_grad())
                                 r[0] = conv2d_input_grad(in[1], g, in[0].shape(), stride, padding);
                               if (in[1].requires_grad()) r[1] = conv2d_nobias(in[0], g, stride, padding);
                               return r;
                             });
}

Tensor gather(const Tensor& x, Shape out_shape, std::vector<std::int64_t> index) {
  return apply_map(x, make_gather_map(x.shape(), std::move(out_shape), std::move(index)), false);
}

Tensor max_pool2d(const Tensor& x, std::size_t kernel) {
  if (x.dim() < 2 || kernel == 0) throw ShapeError("max_pool2d: invalid input " + shape_str(x.shape()));
  const std::size_t H = x.shape()[x.dim() - 2], W = x.shape().back();
  if (kernel > H || kernel > W) {
    throw ShapeError("max_pool2d: kernel " + std::to_string(kernel) + " exceeds input " + shape_str(x.shape()));
  }
  const std::size_t oh = H / kernel, ow = W / kernel;
  const std::size_t planes = x.numel() / (H * W);
  auto d = x.data();
  std::vector<std::int64_t> index(planes * oh * ow);
  std::size_t o = 0;
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t base = p * H * W;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j, ++o) {
        std::size_t best = base + i * kernel * W + j * kernel;
        for (std::size_t u = 0; u < kernel; ++u) {
          for (std::size_t v = 0; v < kernel; ++v) {
            const std::size_t at = base + (i * kernel + u) * W + j * kernel + v;
            if (d[at] > d[best]) best = at;
          }
        }
        index[o] = static_cast<std::int64_t>(best);
      }
    }
  }
  Shape out = x.shape();
  out[out.size() - 2] = oh;
  out[out.size() - 1] = ow;
  return gather(x, std::move(out), std::move(index));
}

Tensor avg_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  return apply_map(x, make_avg_pool_map(x.shape(), kernel, stride), false);
}

Tensor adaptive_avg_pool2d(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  return apply_map(x, make_adaptive_pool_map(x.shape(), out_h, out_w), false);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  return apply_map(x, make_slice_map(x.shape(), axis, start, length), false);
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape out = parts[0].shape();
  if (axis >= out.size()) throw ShapeError("concat: axis out of range for " + shape_str(out));
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != out.size()) throw ShapeError("concat: rank mismatch at " + shape_str(probe));
    total += probe[axis];
    probe[axis] = out[axis];
    if (probe != out) throw ShapeError("concat: shapes " + shape_str(p.shape()) + " and " + shape_str(out) + " differ");
  }
  out[axis] = total;
  Tensor result;
  std::size_t start = 0;
  for (const auto& p : parts) {
    auto embedded = apply_map(p, make_slice_map(out, axis, start, p.shape()[axis]), true);
    result = result.defined() ? add(result, embedded) : embedded;
    start += p.shape()[axis];
  }
  return result;
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("stack: no inputs");
  const Shape& item_shape = items[0].shape();
  Shape out{items.size()};
  out.insert(out.end(), item_shape.begin(), item_shape.end());
  std::vector<double> data;
  data.reserve(shape_numel(out));
  for (const auto& t : items) {
    if (t.shape() != item_shape) {
      throw ShapeError("stack: shapes " + shape_str(t.shape()) + " and " + shape_str(item_shape) + " differ");
    }
    auto d = t.data();
    data.insert(data.end(), d.begin(), d.end());
  }
  return Tensor(std::move(out), std::move(data));
}

}  // namespace ccomaml
