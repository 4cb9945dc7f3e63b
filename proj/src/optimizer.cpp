#include "iplan/optimizer.hpp"

#include <cmath>

namespace iplan::ad {

std::size_t parameter_count(const ParameterSet& params) {
  std::size_t n = 0;
  for (const Parameter& p : params) n += p.values.size();
  return n;
}

OptimizerState make_optimizer(const ParameterSet& params, double learning_rate, OptimizerMode mode) {
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("optimizer: learning rate must be >= 0");
  OptimizerState s;
  s.mode = mode;
  s.learning_rate = learning_rate;
  for (const Parameter& p : params) {
    s.first_moment.emplace_back(p.values.size(), 0.0);
    s.second_moment.emplace_back(p.values.size(), 0.0);
  }
  return s;
}

void step(ParameterSet& params, std::span<const std::vector<double>> grads, OptimizerState& state) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size())
    throw ShapeError("optimizer: parameter/gradient/moment counts differ");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].size() != params[k].values.size() ||
        state.first_moment[k].size() != params[k].values.size() ||
        state.second_moment[k].size() != params[k].values.size())
      throw ShapeError("optimizer: shape mismatch for '" + params[k].name + "'");
    for (double g : grads[k])
      if (!std::isfinite(g)) throw NonFiniteGradient(params[k].name);
  }

  ++state.step;
  const double lr = state.learning_rate;
  if (state.mode == OptimizerMode::plain) {
    for (std::size_t k = 0; k < params.size(); ++k)
      for (std::size_t i = 0; i < grads[k].size(); ++i) params[k].values[i] -= lr * grads[k][i];
    return;
  }
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    auto& x = params[k].values;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double g = grads[k][i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.epsilon);
    }
  }
}

}  // namespace iplan::ad
