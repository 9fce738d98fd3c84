#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ccomaml/tensor.hpp"

namespace ccomaml {

/// Named, insertion-ordered collection of tensors (θ, φ′, ψ and their gradients).
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor value;
  };

  void add(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);
  void set(std::string_view name, Tensor value);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t numel() const;

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  std::vector<std::string> names() const;
  std::vector<Tensor> tensors() const;

  /// Independent copy of every value, optionally marked as grad leaves.
  ParameterSet detached(bool requires_grad = false) const;
  /// Subset in this set's order.
  ParameterSet subset(std::span<const std::string> names) const;
  /// FNV-1a over names, shapes and raw value bytes.
  std::uint64_t checksum() const;

 private:
  std::vector<Entry> entries_;
};

/// Whether `a` and `b` hold identically named, shaped and valued tensors.
bool bitwise_equal(const ParameterSet& a, const ParameterSet& b);
double max_abs_diff(const ParameterSet& a, const ParameterSet& b);

struct GradOptions {
  bool create_graph = false;
  /// Keep the backward closures alive for another sweep. Defaults to create_graph.
  int retain_graph = -1;
  /// Upstream gradient for a non-scalar output (a vector-Jacobian product).
  Tensor grad_output;
};

/// Reverse-mode gradient of a scalar `output` (or of ⟨grad_output, output⟩)
/// with respect to `wrt`.
/// Tensors not reachable from `output` receive zeros. With create_graph the
/// returned tensors are themselves differentiable.
std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> wrt, GradOptions options = {});
ParameterSet grad(const Tensor& output, const ParameterSet& wrt, bool create_graph = false);

/// Nodes visited by the most recent reverse sweep on this thread.
std::size_t last_sweep_visited();
/// Nodes reachable from `output` (the size of its graph).
std::size_t graph_size(const Tensor& output);

/// Central-difference numeric gradient of `f` at `at`.
ParameterSet finite_diff(const std::function<double(const ParameterSet&)>& f, const ParameterSet& at,
                         double step);

namespace debug {
/// Negates the backward output of every node named `op` (empty string clears).
/// Used as a negative control by the gradient self-check.
void inject_sign_error(std::string op);
std::string injected_sign_error();
}  // namespace debug

}  // namespace ccomaml
