#include "ccomaml_cli/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "ccomaml/layers.hpp"
#include "ccomaml/meta_engine.hpp"
#include "ccomaml/ops.hpp"

namespace ccomaml::cli {

namespace {

using Rng = std::mt19937_64;
using Inputs = std::vector<Tensor>;

constexpr double kStep = 1e-6;
constexpr double kHvpStep = 1e-5;

std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor normal(Rng& rng, Shape shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : t.mutable_data()) v = n(rng);
  return t;
}

Tensor uniform(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.mutable_data()) v = u(rng);
  return t;
}

// |x| in [0.05, 1] with random sign, so kinks at 0 stay out of the stencil
Tensor away_from_zero(Rng& rng, Shape shape) {
  Tensor t = uniform(rng, std::move(shape), 0.05, 1.0);
  std::bernoulli_distribution coin(0.5);
  for (auto& v : t.mutable_data())
    if (coin(rng)) v = -v;
  return t;
}

// Pairwise gaps of at least 0.05 so max selections never flip under a step.
Tensor distinct(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  auto d = t.mutable_data();
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_real_distribution<double> u(0.0, 0.05);
  for (std::size_t i = 0; i < d.size(); ++i) d[order[i]] = 0.1 * static_cast<double>(i) - 1.0 + u(rng);
  return t;
}

struct Case {
  std::string name;
  std::function<Inputs(Rng&)> make;
  std::function<Tensor(const Inputs&)> fn;
};

GradOptions seeded(const Tensor& upstream, bool create_graph = false, bool retain = false) {
  GradOptions o;
  o.create_graph = create_graph;
  o.retain_graph = create_graph || retain;
  o.grad_output = upstream;
  return o;
}

std::vector<double> flat(std::span<const Tensor> ts) {
  std::vector<double> out;
  for (const auto& t : ts) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

Inputs as_leaves(const Inputs& in) {
  Inputs out;
  for (const auto& t : in) out.push_back(t.detach().requires_grad_());
  return out;
}

// ⟨fn(in), weight⟩ in plain arithmetic, so no graph op sits between the
// checked op and the seed (keeps --inject-sign-error attributable).
double objective_value(const Case& c, const Inputs& in, const Tensor& weight) {
  NoGradGuard no_grad;
  const Tensor out = c.fn(in);
  double total = 0.0;
  for (std::size_t i = 0; i < out.numel(); ++i) total += out.at(i) * weight.at(i);
  return total;
}

double first_order_trial(const Case& c, Rng& rng) {
  const Inputs base = c.make(rng);
  Inputs leaves = as_leaves(base);
  Tensor out = c.fn(leaves);
  const Tensor weight = normal(rng, out.shape());
  const auto analytic = flat(grad(out, leaves, seeded(weight)));

  std::vector<double> numeric;
  Inputs probe;
  for (const auto& t : base) probe.push_back(Tensor(t.shape(), {t.data().begin(), t.data().end()}));
  for (auto& t : probe) {
    auto d = t.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double saved = d[i];
      d[i] = saved + kStep;
      const double plus = objective_value(c, probe, weight);
      d[i] = saved - kStep;
      const double minus = objective_value(c, probe, weight);
      d[i] = saved;
      numeric.push_back((plus - minus) / (2.0 * kStep));
    }
  }
  return relative_error(analytic, numeric);
}

std::vector<double> gradient_at(const Case& c, const Inputs& at, const Tensor& weight) {
  Inputs leaves = as_leaves(at);
  return flat(grad(c.fn(leaves), leaves, seeded(weight)));
}

double hvp_trial(const Case& c, Rng& rng) {
  const Inputs base = c.make(rng);
  Inputs leaves = as_leaves(base);
  Tensor out = c.fn(leaves);
  const Tensor weight = normal(rng, out.shape());
  Inputs dir;
  for (const auto& t : base) dir.push_back(normal(rng, t.shape()));

  // H·v = Σ_k vjp(g_k, v_k), summed outside the graph
  const auto g = grad(out, leaves, seeded(weight, true));
  std::vector<double> analytic(flat(leaves).size(), 0.0);
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (!g[k].requires_grad()) continue;
    const auto part = flat(grad(g[k], leaves, seeded(dir[k], false, true)));
    for (std::size_t i = 0; i < part.size(); ++i) analytic[i] += part[i];
  }

  auto shifted = [&](double s) {
    Inputs x;
    for (std::size_t k = 0; k < base.size(); ++k) {
      NoGradGuard no_grad;
      x.push_back(add(base[k], mul_scalar(dir[k], s)).detach());
    }
    return gradient_at(c, x, weight);
  };
  const auto plus = shifted(kHvpStep);
  const auto minus = shifted(-kHvpStep);
  std::vector<double> numeric(plus.size());
  for (std::size_t i = 0; i < plus.size(); ++i) numeric[i] = (plus[i] - minus[i]) / (2.0 * kHvpStep);
  return relative_error(analytic, numeric);
}

std::vector<Case> primitive_cases() {
  std::vector<Case> cases;
  auto unary = [&](std::string name, std::function<Tensor(Rng&, Shape)> gen, std::function<Tensor(const Tensor&)> op) {
    cases.push_back({std::move(name),
                     [gen](Rng& r) { return Inputs{gen(r, {dim(r, 1, 4), dim(r, 1, 5)})}; },
                     [op](const Inputs& in) { return op(in[0]); }});
  };
  auto nrm = [](Rng& r, Shape s) { return normal(r, std::move(s)); };
  auto positive = [](Rng& r, Shape s) { return uniform(r, std::move(s), 0.5, 2.0); };

  // broadcasting binaries: second operand drops or keeps axes at random
  auto binary = [&](std::string name, bool positive_rhs, std::function<Tensor(const Tensor&, const Tensor&)> op) {
    cases.push_back({std::move(name),
                     [positive_rhs](Rng& r) {
                       const std::size_t a = dim(r, 1, 4), b = dim(r, 1, 5);
                       Shape rhs;
                       switch (dim(r, 0, 3)) {
                         case 0: rhs = {a, b}; break;
                         case 1: rhs = {1, b}; break;
                         case 2: rhs = {a, 1}; break;
                         default: rhs = {b}; break;
                       }
                       Tensor y = positive_rhs ? away_from_zero(r, rhs) : normal(r, rhs);
                       if (positive_rhs)
                         for (auto& v : y.mutable_data()) v = v > 0 ? v + 0.5 : v - 0.5;
                       return Inputs{normal(r, {a, b}), y};
                     },
                     [op](const Inputs& in) { return op(in[0], in[1]); }});
  };
  binary("add", false, [](const Tensor& a, const Tensor& b) { return add(a, b); });
  binary("sub", false, [](const Tensor& a, const Tensor& b) { return sub(a, b); });
  binary("mul", false, [](const Tensor& a, const Tensor& b) { return mul(a, b); });
  binary("div", true, [](const Tensor& a, const Tensor& b) { return div(a, b); });

  unary("neg", nrm, [](const Tensor& x) { return neg(x); });
  unary("add_scalar", nrm, [](const Tensor& x) { return add_scalar(x, 0.7); });
  unary("mul_scalar", nrm, [](const Tensor& x) { return mul_scalar(x, -1.3); });
  unary("exp", nrm, [](const Tensor& x) { return exp(x); });
  unary("log", positive, [](const Tensor& x) { return log(x); });
  unary("pow", positive, [](const Tensor& x) { return pow(x, 2.5); });
  unary("pow_negative", positive, [](const Tensor& x) { return pow(x, -1.5); });
  unary("square", nrm, [](const Tensor& x) { return square(x); });
  unary("relu", [](Rng& r, Shape s) { return away_from_zero(r, std::move(s)); }, [](const Tensor& x) { return relu(x); });
  unary("sum", nrm, [](const Tensor& x) { return sum(x); });
  unary("mean", nrm, [](const Tensor& x) { return mean(x); });
  unary("sum_axis0", nrm, [](const Tensor& x) { return sum(x, 0); });
  unary("mean_axis1", nrm, [](const Tensor& x) { return mean(x, 1, true); });
  unary("sum_squares", nrm, [](const Tensor& x) { return sum_squares(x); });
  unary("transpose", nrm, [](const Tensor& x) { return transpose(x); });
  unary("max_last", [](Rng& r, Shape s) { return distinct(r, std::move(s)); }, [](const Tensor& x) { return max_last(x); });
  unary("logsumexp", nrm, [](const Tensor& x) { return logsumexp(x); });
  unary("softmax", nrm, [](const Tensor& x) { return softmax(x); });
  unary("log_softmax", nrm, [](const Tensor& x) { return log_softmax(x); });

  for (int variant = 0; variant < 4; ++variant) {
    const bool ta = variant & 1, tb = variant & 2;
    cases.push_back({std::string("matmul") + (ta ? "_ta" : "") + (tb ? "_tb" : ""),
                     [ta, tb](Rng& r) {
                       const std::size_t m = dim(r, 1, 4), k = dim(r, 1, 4), n = dim(r, 1, 4);
                       return Inputs{normal(r, ta ? Shape{k, m} : Shape{m, k}), normal(r, tb ? Shape{n, k} : Shape{k, n})};
                     },
                     [ta, tb](const Inputs& in) { return matmul(in[0], in[1], ta, tb); }});
  }
  cases.push_back({"matmul_batched",
                   [](Rng& r) {
                     const std::size_t b = dim(r, 1, 3), m = dim(r, 1, 3), k = dim(r, 1, 3), n = dim(r, 1, 3);
                     return Inputs{normal(r, {b, m, k}), normal(r, {b, k, n})};
                   },
                   [](const Inputs& in) { return matmul(in[0], in[1]); }});
  cases.push_back({"broadcast_to",
                   [](Rng& r) { return Inputs{normal(r, {1, dim(r, 1, 4)})}; },
                   [](const Inputs& in) { return broadcast_to(in[0], {3, in[0].size(1)}); }});
  cases.push_back({"sum_to",
                   [](Rng& r) { return Inputs{normal(r, {dim(r, 1, 3), 3, dim(r, 1, 4)})}; },
                   [](const Inputs& in) { return sum_to(in[0], {3, 1}); }});
  cases.push_back({"reshape",
                   [](Rng& r) { return Inputs{normal(r, {2, dim(r, 1, 3), 3})}; },
                   [](const Inputs& in) { return reshape(in[0], {3, in[0].numel() / 3}); }});
  cases.push_back({"flatten",
                   [](Rng& r) { return Inputs{normal(r, {dim(r, 1, 3), 2, dim(r, 1, 3)})}; },
                   [](const Inputs& in) { return flatten(in[0]); }});
  cases.push_back({"permute",
                   [](Rng& r) { return Inputs{normal(r, {dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3)})}; },
                   [](const Inputs& in) { return permute(in[0], {2, 0, 1}); }});
  cases.push_back({"slice",
                   [](Rng& r) { return Inputs{normal(r, {dim(r, 1, 3), dim(r, 3, 6)})}; },
                   [](const Inputs& in) { return slice(in[0], 1, 1, 2); }});
  cases.push_back({"concat",
                   [](Rng& r) {
                     const std::size_t n = dim(r, 1, 3);
                     return Inputs{normal(r, {n, dim(r, 1, 3)}), normal(r, {n, dim(r, 1, 3)})};
                   },
                   [](const Inputs& in) { return concat(in, 1); }});
  cases.push_back({"gather",
                   [](Rng& r) { return Inputs{normal(r, {dim(r, 2, 6)})}; },
                   [](const Inputs& in) {
                     const auto n = static_cast<std::int64_t>(in[0].numel());
                     // repeated and padded (-1) indices
                     return gather(in[0], {5}, {0, n - 1, 0, -1, n / 2});
                   }});
  cases.push_back({"im2col",
                   [](Rng& r) { return Inputs{normal(r, {dim(r, 1, 2), dim(r, 1, 2), dim(r, 3, 5), dim(r, 3, 5)})}; },
                   [](const Inputs& in) { return im2col(in[0], 3, 2, 1, 1); }});
  cases.push_back({"conv2d",
                   [](Rng& r) {
                     const std::size_t c = dim(r, 1, 3);
                     return Inputs{normal(r, {dim(r, 1, 2), c, dim(r, 3, 6), dim(r, 3, 6)}), normal(r, {dim(r, 1, 3), c, 3, 3})};
                   },
                   [](const Inputs& in) { return conv2d_nobias(in[0], in[1], 1, 1); }});
  cases.push_back({"conv2d_strided",
                   [](Rng& r) {
                     const std::size_t c = dim(r, 1, 2);
                     return Inputs{normal(r, {1, c, dim(r, 4, 7), dim(r, 4, 7)}), normal(r, {2, c, 3, 3})};
                   },
                   [](const Inputs& in) { return conv2d_nobias(in[0], in[1], 2, 0); }});
  cases.push_back({"conv2d_input_grad",
                   [](Rng& r) {
                     const std::size_t h = dim(r, 3, 5), w = dim(r, 3, 5);
                     return Inputs{normal(r, {2, 3, h, w}), normal(r, {3, 2, 3, 3})};
                   },
                   [](const Inputs& in) {
                     return conv2d_input_grad(in[0], in[1], {2, 2, in[0].size(2), in[0].size(3)}, 1, 1);
                   }});
  cases.push_back({"conv2d_weight_grad",
                   [](Rng& r) {
                     const std::size_t h = dim(r, 3, 5), w = dim(r, 3, 5);
                     return Inputs{normal(r, {2, 2, h, w}), normal(r, {2, 3, h, w})};
                   },
                   [](const Inputs& in) { return conv2d_weight_grad(in[0], in[1], {3, 2, 3, 3}, 1, 1); }});
  cases.push_back({"max_pool2d",
                   [](Rng& r) { return Inputs{distinct(r, {dim(r, 1, 2), dim(r, 1, 2), 4, 2 * dim(r, 1, 3)})}; },
                   [](const Inputs& in) { return max_pool2d(in[0], 2); }});
  cases.push_back({"avg_pool2d",
                   [](Rng& r) { return Inputs{normal(r, {dim(r, 1, 2), dim(r, 1, 2), dim(r, 3, 5), dim(r, 3, 5)})}; },
                   [](const Inputs& in) { return avg_pool2d(in[0], 2, 1); }});
  cases.push_back({"adaptive_avg_pool2d",
                   [](Rng& r) { return Inputs{normal(r, {1, dim(r, 1, 2), dim(r, 2, 6), dim(r, 2, 6)})}; },
                   [](const Inputs& in) { return adaptive_avg_pool2d(in[0], 2, 2); }});

  // composite layers
  cases.push_back({"layer_conv2d",
                   [](Rng& r) {
                     return Inputs{normal(r, {2, 2, 5, 5}), normal(r, {3, 2, 3, 3}, 0.5), normal(r, {3})};
                   },
                   [](const Inputs& in) { return conv2d(in[0], in[1], in[2], 1, 1); }});
  cases.push_back({"layer_linear",
                   [](Rng& r) {
                     const std::size_t i = dim(r, 1, 4), o = dim(r, 1, 4);
                     return Inputs{normal(r, {dim(r, 1, 4), i}), normal(r, {o, i}), normal(r, {o})};
                   },
                   [](const Inputs& in) { return linear(in[0], in[1], in[2]); }});
  cases.push_back({"layer_norm",
                   [](Rng& r) {
                     const std::size_t d = dim(r, 2, 5);
                     return Inputs{normal(r, {dim(r, 1, 3), d}), normal(r, {d}), normal(r, {d})};
                   },
                   [](const Inputs& in) { return layer_norm(in[0], in[1], in[2]); }});
  cases.push_back({"attention",
                   [](Rng& r) {
                     Inputs in{normal(r, {2, 3, 4}), normal(r, {2, 2, 4})};
                     for (int k = 0; k < 4; ++k) in.push_back(normal(r, {4, 4}, 0.5));
                     for (int k = 0; k < 4; ++k) in.push_back(normal(r, {4}, 0.1));
                     return in;
                   },
                   [](const Inputs& in) {
                     AttentionParams p{in[2], in[3], in[4], in[5], in[6], in[7], in[8], in[9]};
                     return multi_head_attention(in[0], in[1], in[1], p, 2).output;
                   }});
  cases.push_back({"cross_entropy",
                   [](Rng& r) { return Inputs{normal(r, {6, 3})}; },
                   [](const Inputs& in) {
                     static const std::vector<int> labels{0, 2, 1, 1, 0, 2};
                     return cross_entropy(in[0], labels);
                   }});
  return cases;
}

// Numeric gradient that leaves grad mode on, so `f` may differentiate internally.
std::vector<double> numeric_gradient(const std::function<double(const ParameterSet&)>& f, const ParameterSet& at,
                                     double step) {
  ParameterSet probe = at.detached();
  std::vector<double> out;
  for (auto& e : probe) {
    auto d = e.value.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double saved = d[i];
      d[i] = saved + step;
      const double plus = f(probe);
      d[i] = saved - step;
      const double minus = f(probe);
      d[i] = saved;
      out.push_back((plus - minus) / (2.0 * step));
    }
  }
  return out;
}

struct Task {
  Tensor xs, xq;
  std::vector<int> ys, yq;
};

// 2-way 5-shot, 5 queries per class, inputs shifted by class.
Task make_task(Rng& rng, std::size_t features) {
  Task t;
  t.xs = normal(rng, {10, features});
  t.xq = normal(rng, {10, features});
  for (int i = 0; i < 10; ++i) {
    const int label = i % 2;
    t.ys.push_back(label);
    t.yq.push_back(label);
    for (std::size_t f = 0; f < features; ++f) {
      t.xs.mutable_data()[i * features + f] += label ? 0.8 : -0.8;
      t.xq.mutable_data()[i * features + f] += label ? 0.8 : -0.8;
    }
  }
  return t;
}

BilevelCheckResult bilevel_case(std::string model, const ParameterSet& theta0, const Task& task,
                                const std::function<Tensor(const ParameterSet&, const Tensor&)>& logits,
                                double tolerance) {
  const double alpha = 0.5;
  auto support = [&](const ParameterSet& p) { return cross_entropy(logits(p, task.xs), task.ys); };
  auto meta_loss = [&](const ParameterSet& theta, bool second_order) {
    return cross_entropy(logits(adapt(theta, support, {alpha, 1, AdaptMask::All, second_order}), task.xq), task.yq);
  };
  auto flat_set = [](const ParameterSet& s) { return flat(s.tensors()); };

  const ParameterSet theta = theta0.detached(true);
  const auto exact = flat_set(grad(meta_loss(theta, true), theta));
  const ParameterSet theta_fo = theta0.detached(true);
  const auto first = flat_set(grad(meta_loss(theta_fo, false), theta_fo));
  const auto numeric =
      numeric_gradient([&](const ParameterSet& p) { return meta_loss(p, false).item(); }, theta0, 1e-6);

  BilevelCheckResult r;
  r.model = std::move(model);
  r.rel_error = relative_error(exact, numeric);
  r.first_order_gap = relative_error(exact, first);
  r.passed = r.rel_error <= tolerance;
  return r;
}

}  // namespace

double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  if (scale < 1e-12) return std::sqrt(diff) < 1e-12 ? 0.0 : 1.0;
  return std::sqrt(diff) / scale;
}

std::vector<OpCheckResult> check_primitives(const GradcheckOptions& options) {
  std::vector<OpCheckResult> out;
  std::uint64_t salt = 0;
  for (const auto& c : primitive_cases()) {
    Rng rng(options.seed * 1000003ull + ++salt);
    OpCheckResult first{c.name, options.trials, 0.0, true};
    for (std::size_t t = 0; t < options.trials; ++t) first.max_rel_error = std::max(first.max_rel_error, first_order_trial(c, rng));
    first.passed = first.max_rel_error <= options.tolerance;
    out.push_back(first);
    if (options.hvp_trials == 0) continue;
    OpCheckResult second{c.name + ":hvp", options.hvp_trials, 0.0, true};
    for (std::size_t t = 0; t < options.hvp_trials; ++t) second.max_rel_error = std::max(second.max_rel_error, hvp_trial(c, rng));
    second.passed = second.max_rel_error <= options.tolerance;
    out.push_back(second);
  }
  return out;
}

std::vector<BilevelCheckResult> check_bilevel(const GradcheckOptions& options) {
  Rng rng(options.seed ^ 0xb11e7e1ull);
  std::vector<BilevelCheckResult> out;

  // one input feature, logits (z, −z) with z = w·x + b
  {
    const Task task = make_task(rng, 1);
    ParameterSet theta;
    theta.add("w", normal(rng, {1, 1}));
    theta.add("b", normal(rng, {1}));
    auto logits = [](const ParameterSet& p, const Tensor& x) {
      Tensor z = add(matmul(x, p.at("w")), p.at("b"));
      return concat(std::vector<Tensor>{z, neg(z)}, 1);
    };
    out.push_back(bilevel_case("linear-2param", theta, task, logits, options.bilevel_tolerance));
  }
  // 3 → 6 → 2 perceptron
  {
    const Task task = make_task(rng, 3);
    ParameterSet theta;
    theta.add("w1", normal(rng, {6, 3}, 0.6));
    theta.add("b1", normal(rng, {6}, 0.1));
    theta.add("w2", normal(rng, {2, 6}, 0.6));
    theta.add("b2", normal(rng, {2}, 0.1));
    auto logits = [](const ParameterSet& p, const Tensor& x) {
      return linear(relu(linear(x, p.at("w1"), p.at("b1"))), p.at("w2"), p.at("b2"));
    };
    auto r = bilevel_case("perceptron-2layer", theta, task, logits, options.bilevel_tolerance);
    r.passed = r.passed && r.first_order_gap > 1e-6;
    out.push_back(r);
  }
  return out;
}

}  // namespace ccomaml::cli
