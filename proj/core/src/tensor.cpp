#include "ccomaml/tensor.hpp"

#include <atomic>
#include <sstream>

#include "ccomaml/errors.hpp"

namespace ccomaml {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::uint64_t next_node_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed) + 1;
}

}  // namespace detail

namespace {
thread_local bool t_grad_enabled = true;
}

bool grad_enabled() { return t_grad_enabled; }

GradModeGuard::GradModeGuard(bool enabled) : previous_(t_grad_enabled) { t_grad_enabled = enabled; }
GradModeGuard::~GradModeGuard() { t_grad_enabled = previous_; }

Tensor::Tensor(Shape shape) : Tensor(shape, std::vector<double>(shape_numel(shape), 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : impl_(std::make_shared<detail::TensorImpl>()) {
  for (auto extent : shape) {
    if (extent == 0) throw ShapeError("tensor: zero extent in shape " + shape_str(shape));
  }
  if (data.size() != shape_numel(shape)) {
    throw ShapeError("tensor: data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }
Tensor Tensor::zeros(Shape shape) { return Tensor(std::move(shape)); }
Tensor Tensor::full(Shape shape, double value) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

const Shape& Tensor::shape() const {
  if (!impl_) throw AutodiffError("tensor: use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::size(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("tensor: axis out of range for shape " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return data().size(); }

std::span<const double> Tensor::data() const {
  if (!impl_) throw AutodiffError("tensor: use of undefined tensor");
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw AutodiffError("tensor: use of undefined tensor");
  if (impl_->node) throw AutodiffError("tensor: in-place write to a graph output");
  return impl_->data;
}

double Tensor::item() const {
  auto d = data();
  if (d.size() != 1) throw ShapeError("tensor: item() on shape " + shape_str(shape()));
  return d[0];
}

bool Tensor::requires_grad() const { return impl_ && (impl_->leaf_requires_grad || impl_->node); }
bool Tensor::is_leaf() const { return impl_ && !impl_->node; }

Tensor& Tensor::requires_grad_(bool value) {
  if (!impl_) throw AutodiffError("tensor: use of undefined tensor");
  if (impl_->node) throw AutodiffError("tensor: requires_grad_ on a non-leaf tensor");
  impl_->leaf_requires_grad = value;
  return *this;
}

Tensor Tensor::detach() const {
  if (!impl_) return {};
  return Tensor(impl_->shape, impl_->data);
}

const std::shared_ptr<detail::Node>& Tensor::node() const {
  static const std::shared_ptr<detail::Node> none;
  return impl_ ? impl_->node : none;
}

const void* Tensor::grad_key() const {
  if (!impl_) return nullptr;
  if (impl_->node) return impl_->node.get();
  return impl_.get();
}

Tensor Tensor::make_result(const char* op, Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                           detail::BackwardFn backward) {
  Tensor out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return out;
  auto node = std::make_shared<detail::Node>();
  node->seq = detail::next_node_seq();
  node->op = op;
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  out.impl_->node = std::move(node);
  return out;
}

}  // namespace ccomaml
