#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "ccomaml/tensor.hpp"

namespace ccomaml {

/// A fixed linear operator between two shapes. Applying it to a tensor is
/// differentiable, and its backward pass is the adjoint applied to the
/// incoming gradient, so every structural op (reshape, permute, broadcast,
/// im2col, pooling, slicing, gathers) shares one exact higher-order rule.
class LinearMap {
 public:
  virtual ~LinearMap() = default;
  virtual std::string_view name() const = 0;
  virtual const Shape& in_shape() const = 0;
  virtual const Shape& out_shape() const = 0;
  /// out is zero-initialized and sized to out_shape.
  virtual void apply(std::span<const double> in, std::span<double> out) const = 0;
  /// out is zero-initialized and sized to in_shape.
  virtual void apply_adjoint(std::span<const double> in, std::span<double> out) const = 0;
};

using LinearMapPtr = std::shared_ptr<const LinearMap>;

/// Applies `map` (or its adjoint) to `x`.
Tensor apply_map(const Tensor& x, const LinearMapPtr& map, bool adjoint = false);

LinearMapPtr make_reshape_map(Shape in, Shape out);
LinearMapPtr make_permute_map(Shape in, std::vector<std::size_t> axes);
/// Numpy-style broadcast from `in` to `out`; adjoint sums back.
LinearMapPtr make_broadcast_map(Shape in, Shape out);

struct ConvGeometry {
  std::size_t batch = 0, channels = 0, height = 0, width = 0;
  std::size_t kernel_h = 0, kernel_w = 0;
  std::size_t stride = 1, padding = 0;
  std::size_t out_h() const { return (height + 2 * padding - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (width + 2 * padding - kernel_w) / stride + 1; }
};

/// N×C×H×W → (N·OH·OW)×(C·kh·kw) patch matrix with zero padding.
LinearMapPtr make_im2col_map(const ConvGeometry& geometry);

/// out[i] = in[index[i]] (index −1 yields 0); adjoint scatter-adds.
LinearMapPtr make_gather_map(Shape in, Shape out, std::vector<std::int64_t> index);

/// Per-output-cell window mean over the last two axes. Windows follow the
/// adaptive binning rule [floor(i·H/oh), ceil((i+1)·H/oh)).
LinearMapPtr make_adaptive_pool_map(Shape in, std::size_t out_h, std::size_t out_w);
/// Fixed-window average pooling (kernel, stride, no padding).
LinearMapPtr make_avg_pool_map(Shape in, std::size_t kernel, std::size_t stride);

/// Contiguous slice [start, start+length) along `axis`; adjoint embeds with zeros.
LinearMapPtr make_slice_map(Shape in, std::size_t axis, std::size_t start, std::size_t length);

}  // namespace ccomaml
