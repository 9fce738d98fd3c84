#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ccomaml {

/// Extents of a tensor. An empty shape denotes a scalar.
using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

using BackwardFn =
    std::function<std::vector<Tensor>(const Tensor& grad_out, std::span<const Tensor> inputs)>;

/// One record on the tape. Nodes are numbered in creation order, which is a
/// valid topological order because an op can only consume existing tensors.
struct Node {
  std::uint64_t seq = 0;
  const char* op = "";
  std::vector<Tensor> inputs;
  BackwardFn backward;
  bool released = false;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::shared_ptr<Node> node;
  bool leaf_requires_grad = false;
};

std::uint64_t next_node_seq();

}  // namespace detail

/// Dense row-major float64 tensor with shared-handle semantics. Copies share
/// storage and graph position; `detach()` produces an independent value.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor zeros_like(const Tensor& other) { return zeros(other.shape()); }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable view. Only permitted on tensors that are not graph outputs.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  bool is_leaf() const;
  Tensor& requires_grad_(bool value = true);
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const;
  /// Stable identity used to key gradient accumulation.
  const void* grad_key() const;

  /// Builds an op result; records a node when grad mode is on and an input needs grad.
  static Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                            std::vector<Tensor> inputs, detail::BackwardFn backward);

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

bool grad_enabled();

/// Scoped override of the thread-local grad mode.
class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

class NoGradGuard : public GradModeGuard {
 public:
  NoGradGuard() : GradModeGuard(false) {}
};

}  // namespace ccomaml
