#include "ccomaml/linear_maps.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "ccomaml/errors.hpp"

namespace ccomaml {

namespace {

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

class ReshapeMap final : public LinearMap {
 public:
  ReshapeMap(Shape in, Shape out) : in_(std::move(in)), out_(std::move(out)) {}
  std::string_view name() const override { return "reshape"; }
  const Shape& in_shape() const override { return in_; }
  const Shape& out_shape() const override { return out_; }
  void apply(std::span<const double> in, std::span<double> out) const override {
    std::copy(in.begin(), in.end(), out.begin());
  }
  void apply_adjoint(std::span<const double> in, std::span<double> out) const override {
    std::copy(in.begin(), in.end(), out.begin());
  }

 private:
  Shape in_, out_;
};

class PermuteMap final : public LinearMap {
 public:
  PermuteMap(Shape in, std::vector<std::size_t> axes) : in_(std::move(in)), axes_(std::move(axes)) {
    if (axes_.size() != in_.size()) throw ShapeError("permute: axes rank does not match " + shape_str(in_));
    std::vector<bool> used(axes_.size(), false);
    for (auto a : axes_) {
      if (a >= in_.size() || used[a]) throw ShapeError("permute: invalid axes for " + shape_str(in_));
      used[a] = true;
    }
    for (auto a : axes_) out_.push_back(in_[a]);
    auto in_strides = strides_of(in_);
    for (auto a : axes_) src_strides_.push_back(in_strides[a]);
  }
  std::string_view name() const override { return "permute"; }
  const Shape& in_shape() const override { return in_; }
  const Shape& out_shape() const override { return out_; }
  void apply(std::span<const double> in, std::span<double> out) const override {
    walk([&](std::size_t dst, std::size_t src) { out[dst] = in[src]; });
  }
  void apply_adjoint(std::span<const double> in, std::span<double> out) const override {
    walk([&](std::size_t dst, std::size_t src) { out[src] = in[dst]; });
  }

 private:
  template <class F>
  void walk(F&& f) const {
    const std::size_t rank = out_.size();
    const std::size_t total = shape_numel(out_);
    if (rank == 0) {
      f(0, 0);
      return;
    }
    const std::size_t inner = out_.back();
    const std::size_t inner_stride = src_strides_.back();
    std::vector<std::size_t> idx(rank, 0);
    std::size_t src_base = 0;
    for (std::size_t dst = 0; dst < total; dst += inner) {
      for (std::size_t k = 0; k < inner; ++k) f(dst + k, src_base + k * inner_stride);
      // advance all but the innermost axis
      for (std::size_t ax = rank - 1; ax-- > 0;) {
        ++idx[ax];
        src_base += src_strides_[ax];
        if (idx[ax] < out_[ax]) break;
        src_base -= idx[ax] * src_strides_[ax];
        idx[ax] = 0;
      }
    }
  }

  Shape in_, out_;
  std::vector<std::size_t> axes_;
  std::vector<std::size_t> src_strides_;
};

class BroadcastMap final : public LinearMap {
 public:
  BroadcastMap(Shape in, Shape out) : in_(std::move(in)), out_(std::move(out)) {
    if (in_.size() > out_.size()) {
      throw ShapeError("broadcast: cannot broadcast " + shape_str(in_) + " to " + shape_str(out_));
    }
    const std::size_t lead = out_.size() - in_.size();
    auto in_strides = strides_of(in_);
    src_strides_.assign(out_.size(), 0);
    for (std::size_t i = 0; i < in_.size(); ++i) {
      if (in_[i] == out_[lead + i]) {
        src_strides_[lead + i] = in_strides[i];
      } else if (in_[i] != 1) {
        throw ShapeError("broadcast: cannot broadcast " + shape_str(in_) + " to " + shape_str(out_));
      }
    }
  }
  std::string_view name() const override { return "broadcast"; }
  const Shape& in_shape() const override { return in_; }
  const Shape& out_shape() const override { return out_; }
  void apply(std::span<const double> in, std::span<double> out) const override {
    walk([&](std::size_t dst, std::size_t src) { out[dst] = in[src]; });
  }
  void apply_adjoint(std::span<const double> in, std::span<double> out) const override {
    walk([&](std::size_t dst, std::size_t src) { out[src] += in[dst]; });
  }

 private:
  template <class F>
  void walk(F&& f) const {
    const std::size_t total = shape_numel(out_);
    const std::size_t rank = out_.size();
    if (rank == 0) {
      f(0, 0);
      return;
    }
    const std::size_t inner = out_.back();
    const std::size_t inner_stride = src_strides_.back();
    std::vector<std::size_t> idx(rank, 0);
    std::size_t src = 0;
    for (std::size_t dst = 0; dst < total; dst += inner) {
      for (std::size_t k = 0; k < inner; ++k) f(dst + k, src + k * inner_stride);
      for (std::size_t ax = rank - 1; ax-- > 0;) {
        ++idx[ax];
        src += src_strides_[ax];
        if (idx[ax] < out_[ax]) break;
        src -= idx[ax] * src_strides_[ax];
        idx[ax] = 0;
      }
    }
  }

  Shape in_, out_;
  std::vector<std::size_t> src_strides_;
};

class Im2ColMap final : public LinearMap {
 public:
  explicit Im2ColMap(const ConvGeometry& g) : g_(g) {
    if (g.kernel_h == 0 || g.kernel_w == 0 || g.stride == 0) throw ShapeError("im2col: zero kernel or stride");
    if (g.height + 2 * g.padding < g.kernel_h || g.width + 2 * g.padding < g.kernel_w) {
      throw ShapeError("im2col: kernel larger than padded input " + std::to_string(g.height) + "x" +
                       std::to_string(g.width));
    }
    in_ = {g.batch, g.channels, g.height, g.width};
    out_ = {g.batch * g.out_h() * g.out_w(), g.channels * g.kernel_h * g.kernel_w};
  }
  std::string_view name() const override { return "im2col"; }
  const Shape& in_shape() const override { return in_; }
  const Shape& out_shape() const override { return out_; }
  void apply(std::span<const double> in, std::span<double> out) const override {
    walk([&](std::size_t dst, std::size_t src) { out[dst] = in[src]; });
  }
  void apply_adjoint(std::span<const double> in, std::span<double> out) const override {
    walk([&](std::size_t dst, std::size_t src) { out[src] += in[dst]; });
  }

 private:
  template <class F>
  void walk(F&& f) const {
    const auto oh = g_.out_h(), ow = g_.out_w();
    const auto kh = g_.kernel_h, kw = g_.kernel_w;
    const auto H = g_.height, W = g_.width, C = g_.channels;
    const std::size_t cols = C * kh * kw;
    const auto pad = static_cast<std::ptrdiff_t>(g_.padding);
    std::size_t row = 0;
    for (std::size_t n = 0; n < g_.batch; ++n) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x, ++row) {
          std::size_t dst = row * cols;
          const auto y0 = static_cast<std::ptrdiff_t>(y * g_.stride) - pad;
          const auto x0 = static_cast<std::ptrdiff_t>(x * g_.stride) - pad;
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t plane = (n * C + c) * H * W;
            for (std::size_t i = 0; i < kh; ++i) {
              const auto yy = y0 + static_cast<std::ptrdiff_t>(i);
              const bool row_ok = yy >= 0 && yy < static_cast<std::ptrdiff_t>(H);
              for (std::size_t j = 0; j < kw; ++j, ++dst) {
                const auto xx = x0 + static_cast<std::ptrdiff_t>(j);
                if (row_ok && xx >= 0 && xx < static_cast<std::ptrdiff_t>(W)) {
                  f(dst, plane + static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx));
                }
              }
            }
          }
        }
      }
    }
  }

  ConvGeometry g_;
  Shape in_, out_;
};

class GatherMap final : public LinearMap {
 public:
  GatherMap(Shape in, Shape out, std::vector<std::int64_t> index)
      : in_(std::move(in)), out_(std::move(out)), index_(std::move(index)) {
    if (index_.size() != shape_numel(out_)) throw ShapeError("gather: index length does not match output shape");
    const auto n = static_cast<std::int64_t>(shape_numel(in_));
    for (auto i : index_) {
      if (i < -1 || i >= n) throw ShapeError("gather: index out of range for " + shape_str(in_));
    }
  }
  std::string_view name() const override { return "gather"; }
  const Shape& in_shape() const override { return in_; }
  const Shape& out_shape() const override { return out_; }
  void apply(std::span<const double> in, std::span<double> out) const override {
    for (std::size_t i = 0; i < index_.size(); ++i) {
      if (index_[i] >= 0) out[i] = in[static_cast<std::size_t>(index_[i])];
    }
  }
  void apply_adjoint(std::span<const double> in, std::span<double> out) const override {
    for (std::size_t i = 0; i < index_.size(); ++i) {
      if (index_[i] >= 0) out[static_cast<std::size_t>(index_[i])] += in[i];
    }
  }

 private:
  Shape in_, out_;
  std::vector<std::int64_t> index_;
};

/// Averaging over explicit rectangular windows of the last two axes.
class WindowPoolMap final : public LinearMap {
 public:
  struct Window {
    std::size_t y0, y1, x0, x1;
  };

  WindowPoolMap(const char* name, Shape in, std::size_t out_h, std::size_t out_w, std::vector<Window> windows)
      : name_(name), in_(std::move(in)), windows_(std::move(windows)) {
    out_ = in_;
    out_[out_.size() - 2] = out_h;
    out_[out_.size() - 1] = out_w;
  }
  std::string_view name() const override { return name_; }
  const Shape& in_shape() const override { return in_; }
  const Shape& out_shape() const override { return out_; }
  void apply(std::span<const double> in, std::span<double> out) const override {
    walk([&](std::size_t o, std::size_t i, double w) { out[o] += w * in[i]; });
  }
  void apply_adjoint(std::span<const double> in, std::span<double> out) const override {
    walk([&](std::size_t o, std::size_t i, double w) { out[i] += w * in[o]; });
  }

 private:
  template <class F>
  void walk(F&& f) const {
    const std::size_t H = in_[in_.size() - 2], W = in_[in_.size() - 1];
    const std::size_t planes = shape_numel(in_) / (H * W);
    const std::size_t cells = windows_.size();
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t c = 0; c < cells; ++c) {
        const auto& win = windows_[c];
        const double w = 1.0 / static_cast<double>((win.y1 - win.y0) * (win.x1 - win.x0));
        const std::size_t o = p * cells + c;
        for (std::size_t y = win.y0; y < win.y1; ++y) {
          for (std::size_t x = win.x0; x < win.x1; ++x) f(o, p * H * W + y * W + x, w);
        }
      }
    }
  }

  const char* name_;
  Shape in_, out_;
  std::vector<Window> windows_;
};

class SliceMap final : public LinearMap {
 public:
  SliceMap(Shape in, std::size_t axis, std::size_t start, std::size_t length)
      : in_(std::move(in)), start_(start), length_(length) {
    if (axis >= in_.size() || length == 0 || start + length > in_[axis]) {
      throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                       ") invalid on axis " + std::to_string(axis) + " of " + shape_str(in_));
    }
    out_ = in_;
    out_[axis] = length;
    outer_ = 1;
    for (std::size_t i = 0; i < axis; ++i) outer_ *= in_[i];
    inner_ = 1;
    for (std::size_t i = axis + 1; i < in_.size(); ++i) inner_ *= in_[i];
    extent_ = in_[axis];
  }
  std::string_view name() const override { return "slice"; }
  const Shape& in_shape() const override { return in_; }
  const Shape& out_shape() const override { return out_; }
  void apply(std::span<const double> in, std::span<double> out) const override {
    for (std::size_t o = 0; o < outer_; ++o) {
      const double* src = in.data() + (o * extent_ + start_) * inner_;
      std::copy(src, src + length_ * inner_, out.data() + o * length_ * inner_);
    }
  }
  void apply_adjoint(std::span<const double> in, std::span<double> out) const override {
    for (std::size_t o = 0; o < outer_; ++o) {
      const double* src = in.data() + o * length_ * inner_;
      std::copy(src, src + length_ * inner_, out.data() + (o * extent_ + start_) * inner_);
    }
  }

 private:
  Shape in_, out_;
  std::size_t start_, length_;
  std::size_t outer_ = 1, inner_ = 1, extent_ = 1;
};

void check_pool_input(const Shape& in, const char* op) {
  if (in.size() < 2) throw ShapeError(std::string(op) + ": expected at least 2 axes, got " + shape_str(in));
}

}  // namespace

LinearMapPtr make_reshape_map(Shape in, Shape out) {
  if (shape_numel(in) != shape_numel(out)) {
    throw ShapeError("reshape: cannot reshape " + shape_str(in) + " to " + shape_str(out));
  }
  return std::make_shared<ReshapeMap>(std::move(in), std::move(out));
}

LinearMapPtr make_permute_map(Shape in, std::vector<std::size_t> axes) {
  return std::make_shared<PermuteMap>(std::move(in), std::move(axes));
}

LinearMapPtr make_broadcast_map(Shape in, Shape out) {
  return std::make_shared<BroadcastMap>(std::move(in), std::move(out));
}

LinearMapPtr make_im2col_map(const ConvGeometry& geometry) { return std::make_shared<Im2ColMap>(geometry); }

LinearMapPtr make_gather_map(Shape in, Shape out, std::vector<std::int64_t> index) {
  return std::make_shared<GatherMap>(std::move(in), std::move(out), std::move(index));
}

LinearMapPtr make_adaptive_pool_map(Shape in, std::size_t out_h, std::size_t out_w) {
  check_pool_input(in, "adaptive_avg_pool");
  const std::size_t H = in[in.size() - 2], W = in[in.size() - 1];
  if (out_h == 0 || out_w == 0) throw ShapeError("adaptive_avg_pool: zero output extent");
  if (out_h > H || out_w > W) {
    throw ShapeError("adaptive_avg_pool: output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                     " exceeds input " + shape_str(in));
  }
  std::vector<WindowPoolMap::Window> windows;
  for (std::size_t i = 0; i < out_h; ++i) {
    const std::size_t y0 = (i * H) / out_h, y1 = ((i + 1) * H + out_h - 1) / out_h;
    for (std::size_t j = 0; j < out_w; ++j) {
      const std::size_t x0 = (j * W) / out_w, x1 = ((j + 1) * W + out_w - 1) / out_w;
      windows.push_back({y0, y1, x0, x1});
    }
  }
  return std::make_shared<WindowPoolMap>("adaptive_avg_pool", std::move(in), out_h, out_w, std::move(windows));
}

LinearMapPtr make_avg_pool_map(Shape in, std::size_t kernel, std::size_t stride) {
  check_pool_input(in, "avg_pool");
  const std::size_t H = in[in.size() - 2], W = in[in.size() - 1];
  if (kernel == 0 || stride == 0 || kernel > H || kernel > W) {
    throw ShapeError("avg_pool: kernel " + std::to_string(kernel) + " invalid for " + shape_str(in));
  }
  const std::size_t oh = (H - kernel) / stride + 1, ow = (W - kernel) / stride + 1;
  std::vector<WindowPoolMap::Window> windows;
  for (std::size_t i = 0; i < oh; ++i) {
    for (std::size_t j = 0; j < ow; ++j) {
      windows.push_back({i * stride, i * stride + kernel, j * stride, j * stride + kernel});
    }
  }
  return std::make_shared<WindowPoolMap>("avg_pool", std::move(in), oh, ow, std::move(windows));
}

LinearMapPtr make_slice_map(Shape in, std::size_t axis, std::size_t start, std::size_t length) {
  return std::make_shared<SliceMap>(std::move(in), axis, start, length);
}

}  // namespace ccomaml
