#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ccomaml/linear_maps.hpp"
#include "ccomaml/tensor.hpp"

namespace ccomaml {

/// Broadcast result shape of two operands; throws ShapeError naming `op`.
Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op);

// Elementwise, numpy broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
/// x^p for a constant exponent.
Tensor pow(const Tensor& x, double p);
Tensor square(const Tensor& x);
Tensor relu(const Tensor& x);

/// 0/1 mask of a > b (broadcast). Not differentiable; the result is a constant.
Tensor greater(const Tensor& a, const Tensor& b);

/// 2-D (M×K · K×N) or batched 3-D (B×M×K · B×K×N) product with optional transposes.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor sum_squares(const Tensor& x);

Tensor broadcast_to(const Tensor& x, const Shape& shape);
/// Sums broadcast axes away so the result has `shape`.
Tensor sum_to(const Tensor& x, const Shape& shape);
Tensor reshape(const Tensor& x, Shape shape);
Tensor flatten(const Tensor& x);  // N×... → N×rest
Tensor permute(const Tensor& x, std::vector<std::size_t> axes);
Tensor transpose(const Tensor& x);  // 2-D

/// Max over the last axis; gradient routes to the arg-max entry.
Tensor max_last(const Tensor& x);
std::vector<std::size_t> argmax_rows(const Tensor& x);

/// Numerically stable log Σ exp over the last axis (that axis removed).
Tensor logsumexp(const Tensor& x);
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

Tensor im2col(const Tensor& x, std::size_t kernel_h, std::size_t kernel_w, std::size_t stride,
              std::size_t padding);
/// Direct 2-D convolution without bias: x N×C×H×W, weight Cout×C×kh×kw.
/// Its backward is expressed through the two companion ops below, and theirs
/// through each other, so convolution is differentiable to any order.
Tensor conv2d_nobias(const Tensor& x, const Tensor& weight, std::size_t stride, std::size_t padding);
/// ∂⟨g, conv(x, w)⟩/∂x for g = grad_out, producing a tensor of `input_shape`.
Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& weight, const Shape& input_shape, std::size_t stride,
                         std::size_t padding);
/// ∂⟨g, conv(x, w)⟩/∂w, producing a tensor of `weight_shape`.
Tensor conv2d_weight_grad(const Tensor& x, const Tensor& grad_out, const Shape& weight_shape, std::size_t stride,
                          std::size_t padding);
Tensor gather(const Tensor& x, Shape out_shape, std::vector<std::int64_t> index);
/// k×k window max over the last two axes (stride k).
Tensor max_pool2d(const Tensor& x, std::size_t kernel);
Tensor avg_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride);
Tensor adaptive_avg_pool2d(const Tensor& x, std::size_t out_h, std::size_t out_w);

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);

/// Stacks equally shaped constant tensors along a new leading axis.
Tensor stack(std::span<const Tensor> items);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }
inline Tensor operator*(const Tensor& x, double c) { return mul_scalar(x, c); }
inline Tensor operator*(double c, const Tensor& x) { return mul_scalar(x, c); }
inline Tensor operator+(const Tensor& x, double c) { return add_scalar(x, c); }

}  // namespace ccomaml
