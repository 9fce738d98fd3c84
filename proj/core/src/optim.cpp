#include "ccomaml/optim.hpp"

#include <cmath>

#include "ccomaml/errors.hpp"

namespace ccomaml {

namespace {

const Tensor& matching_grad(const ParameterSet& grads, const std::string& name, const Tensor& param) {
  const Tensor& g = grads.at(name);
  if (g.shape() != param.shape()) {
    throw ShapeError("optimizer: gradient for '" + name + "' has shape " + shape_str(g.shape()) + ", parameter has " +
                     shape_str(param.shape()));
  }
  return g;
}

}  // namespace

ParameterSet adam_step(const ParameterSet& params, const ParameterSet& grads, AdamState& state, double lr,
                       double weight_decay, const AdamConfig& config) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  ParameterSet out;
  for (const auto& [name, p] : params) {
    const Tensor& g = matching_grad(grads, name, p);
    if (!state.m.contains(name)) {
      state.m.add(name, Tensor::zeros_like(p));
      state.v.add(name, Tensor::zeros_like(p));
    }
    // fresh moment tensors: copies of a state never alias
    std::vector<double> m(state.m.at(name).data().begin(), state.m.at(name).data().end());
    std::vector<double> v(state.v.at(name).data().begin(), state.v.at(name).data().end());
    auto pd = p.data();
    auto gd = g.data();
    std::vector<double> next(pd.size());
    for (std::size_t i = 0; i < pd.size(); ++i) {
      const double gi = gd[i] + weight_decay * pd[i];
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      next[i] = pd[i] - lr * mhat / (std::sqrt(vhat) + config.eps);
    }
    state.m.set(name, Tensor(p.shape(), std::move(m)));
    state.v.set(name, Tensor(p.shape(), std::move(v)));
    out.add(name, Tensor(p.shape(), std::move(next)));
  }
  return out;
}

ParameterSet sgd_step(const ParameterSet& params, const ParameterSet& grads, double lr, double weight_decay) {
  ParameterSet out;
  for (const auto& [name, p] : params) {
    const Tensor& g = matching_grad(grads, name, p);
    auto pd = p.data();
    auto gd = g.data();
    std::vector<double> next(pd.size());
    for (std::size_t i = 0; i < pd.size(); ++i) next[i] = pd[i] - lr * (gd[i] + weight_decay * pd[i]);
    out.add(name, Tensor(p.shape(), std::move(next)));
  }
  return out;
}

double PlateauScheduler::step(double validation_loss) {
  if (validation_loss < best) {
    best = validation_loss;
    bad_epochs = 0;
  } else if (++bad_epochs >= patience) {
    multiplier *= factor;
    bad_epochs = 0;
  }
  return multiplier;
}

bool EarlyStopping::step(double validation_loss) {
  if (validation_loss < best) {
    best = validation_loss;
    bad_epochs = 0;
    return true;
  }
  return ++bad_epochs < patience;
}

}  // namespace ccomaml
