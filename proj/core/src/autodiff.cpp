#include "ccomaml/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <mutex>
#include <unordered_map>
#include <unordered_set>

#include "ccomaml/errors.hpp"
#include "ccomaml/ops.hpp"

namespace ccomaml {

// ---------------------------------------------------------------------------
// ParameterSet

void ParameterSet::add(std::string name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("ParameterSet: duplicate name '" + name + "'");
  entries_.push_back({std::move(name), std::move(value)});
}

bool ParameterSet::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

const Tensor& ParameterSet::at(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.value;
  }
  throw std::out_of_range("ParameterSet: no parameter '" + std::string(name) + "'");
}

Tensor& ParameterSet::at(std::string_view name) {
  return const_cast<Tensor&>(static_cast<const ParameterSet&>(*this).at(name));
}

void ParameterSet::set(std::string_view name, Tensor value) { at(name) = std::move(value); }

std::size_t ParameterSet::numel() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

std::vector<Tensor> ParameterSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.value);
  return out;
}

ParameterSet ParameterSet::detached(bool requires_grad) const {
  ParameterSet out;
  for (const auto& e : entries_) {
    auto t = e.value.detach();
    if (requires_grad) t.requires_grad_(true);
    out.add(e.name, std::move(t));
  }
  return out;
}

ParameterSet ParameterSet::subset(std::span<const std::string> names) const {
  ParameterSet out;
  for (const auto& e : entries_) {
    if (std::find(names.begin(), names.end(), e.name) != names.end()) out.add(e.name, e.value);
  }
  return out;
}

namespace {
constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

void fnv_mix(std::uint64_t& h, const void* bytes, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}
}  // namespace

std::uint64_t ParameterSet::checksum() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& e : entries_) {
    fnv_mix(h, e.name.data(), e.name.size());
    for (auto extent : e.value.shape()) {
      std::uint64_t x = extent;
      fnv_mix(h, &x, sizeof x);
    }
    auto d = e.value.data();
    fnv_mix(h, d.data(), d.size_bytes());
  }
  return h;
}

bool bitwise_equal(const ParameterSet& a, const ParameterSet& b) {
  if (a.size() != b.size()) return false;
  auto ia = a.begin();
  auto ib = b.begin();
  for (; ia != a.end(); ++ia, ++ib) {
    if (ia->name != ib->name || ia->value.shape() != ib->value.shape()) return false;
    auto da = ia->value.data();
    auto db = ib->value.data();
    if (std::memcmp(da.data(), db.data(), da.size_bytes()) != 0) return false;
  }
  return true;
}

double max_abs_diff(const ParameterSet& a, const ParameterSet& b) {
  if (a.size() != b.size()) throw std::invalid_argument("max_abs_diff: parameter sets differ in size");
  double m = 0.0;
  auto ib = b.begin();
  for (auto ia = a.begin(); ia != a.end(); ++ia, ++ib) {
    auto da = ia->value.data();
    auto db = ib->value.data();
    if (da.size() != db.size()) throw std::invalid_argument("max_abs_diff: shape mismatch at " + ia->name);
    for (std::size_t i = 0; i < da.size(); ++i) m = std::max(m, std::abs(da[i] - db[i]));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Reverse sweep

namespace {

thread_local std::size_t t_last_visited = 0;

std::mutex g_fault_mutex;
std::string g_fault_op;
std::atomic<bool> g_fault_active{false};

std::vector<detail::Node*> collect_nodes(const Tensor& output) {
  std::vector<detail::Node*> nodes;
  if (!output.node()) return nodes;
  std::unordered_set<const detail::Node*> seen;
  std::vector<detail::Node*> stack{output.node().get()};
  seen.insert(stack.back());
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    if (n->released) {
      throw AutodiffError(std::string("grad: graph through '") + n->op +
                          "' was already consumed; pass retain_graph to differentiate twice");
    }
    nodes.push_back(n);
    for (const auto& in : n->inputs) {
      const auto& child = in.node();
      if (child && seen.insert(child.get()).second) stack.push_back(child.get());
    }
  }
  std::sort(nodes.begin(), nodes.end(), [](auto* a, auto* b) { return a->seq > b->seq; });
  return nodes;
}

}  // namespace

std::size_t last_sweep_visited() { return t_last_visited; }

std::size_t graph_size(const Tensor& output) { return collect_nodes(output).size(); }

std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> wrt, GradOptions options) {
  if (!output.defined()) throw AutodiffError("grad: undefined output");
  if (options.grad_output.defined()) {
    if (options.grad_output.shape() != output.shape()) {
      throw AutodiffError("grad: grad_output shape " + shape_str(options.grad_output.shape()) +
                          " does not match output " + shape_str(output.shape()));
    }
  } else if (output.numel() != 1) {
    throw AutodiffError("grad: output must be a scalar, got shape " + shape_str(output.shape()));
  }
  const bool retain = options.retain_graph < 0 ? options.create_graph : options.retain_graph != 0;

  std::unordered_set<const void*> wanted;
  for (const auto& w : wrt) wanted.insert(w.grad_key());

  auto nodes = collect_nodes(output);
  // only nodes with a path to a requested tensor take part in the sweep
  std::unordered_set<const detail::Node*> relevant;
  auto reaches = [&](const Tensor& t) {
    return t.node() ? relevant.count(t.node().get()) > 0 : wanted.count(t.grad_key()) > 0;
  };
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    auto* n = *it;
    bool r = wanted.count(n) > 0;
    for (const auto& in : n->inputs) r = r || reaches(in);
    if (r) relevant.insert(n);
  }
  std::unordered_map<const void*, Tensor> grads;
  grads.emplace(output.grad_key(),
                options.grad_output.defined() ? options.grad_output : Tensor::full(output.shape(), 1.0));

  std::string fault;
  if (g_fault_active.load()) {
    std::lock_guard lock(g_fault_mutex);
    fault = g_fault_op;
  }

  std::size_t visited = 0;
  {
    GradModeGuard mode(options.create_graph);
    for (auto* node : nodes) {
      if (!relevant.count(node)) continue;
      auto it = grads.find(node);
      if (it == grads.end()) continue;
      Tensor g = it->second;
      if (!wanted.count(node)) grads.erase(it);
      ++visited;
      auto input_grads = node->backward(g, node->inputs);
      if (!fault.empty() && fault == node->op) {
        for (auto& ig : input_grads) {
          if (ig.defined()) ig = neg(ig);
        }
      }
      for (std::size_t i = 0; i < node->inputs.size() && i < input_grads.size(); ++i) {
        const auto& in = node->inputs[i];
        auto& ig = input_grads[i];
        if (!ig.defined() || !in.requires_grad() || !reaches(in)) continue;
        const void* key = in.grad_key();
        if (ig.shape() != in.shape()) {
          throw AutodiffError(std::string("grad: backward of '") + node->op + "' produced shape " +
                              shape_str(ig.shape()) + " for input of shape " + shape_str(in.shape()));
        }
        auto [slot, inserted] = grads.try_emplace(key, ig);
        if (!inserted) slot->second = add(slot->second, ig);
      }
    }
  }
  t_last_visited = visited;

  if (!retain) {
    std::vector<std::vector<Tensor>> graveyard;
    for (auto* node : nodes) {
      if (!relevant.count(node)) continue;
      node->released = true;
      node->backward = nullptr;
      // dropping inputs may free nodes still listed; destroy them after the loop
      graveyard.push_back(std::move(node->inputs));
      node->inputs.clear();
    }
  }

  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto it = grads.find(w.grad_key());
    out.push_back(it != grads.end() ? it->second : Tensor::zeros(w.shape()));
  }
  return out;
}

ParameterSet grad(const Tensor& output, const ParameterSet& wrt, bool create_graph) {
  auto tensors = wrt.tensors();
  GradOptions options;
  options.create_graph = create_graph;
  auto gs = grad(output, tensors, options);
  ParameterSet out;
  std::size_t i = 0;
  for (const auto& e : wrt) out.add(e.name, std::move(gs[i++]));
  return out;
}

ParameterSet finite_diff(const std::function<double(const ParameterSet&)>& f, const ParameterSet& at,
                         double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff: step must be positive");
  NoGradGuard no_grad;
  ParameterSet probe = at.detached();
  ParameterSet out;
  for (auto& e : probe) {
    std::vector<double> g(e.value.numel());
    auto values = e.value.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double plus = f(probe);
      values[i] = saved - step;
      const double minus = f(probe);
      values[i] = saved;
      g[i] = (plus - minus) / (2.0 * step);
    }
    out.add(e.name, Tensor(e.value.shape(), std::move(g)));
  }
  return out;
}

namespace debug {

void inject_sign_error(std::string op) {
  std::lock_guard lock(g_fault_mutex);
  g_fault_op = std::move(op);
  g_fault_active.store(!g_fault_op.empty());
}

std::string injected_sign_error() {
  std::lock_guard lock(g_fault_mutex);
  return g_fault_op;
}

}  // namespace debug

}  // namespace ccomaml
