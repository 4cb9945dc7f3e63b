#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "iplan/autodiff.hpp"

namespace iplan::ad {

/// Named trainable array.
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> values;

  bool operator==(const Parameter&) const = default;
};
using ParameterSet = std::vector<Parameter>;

std::size_t parameter_count(const ParameterSet& params);

enum class OptimizerMode {
  adam,
  plain,  // theta <- theta - lr * grad
};

struct OptimizerState {
  OptimizerMode mode = OptimizerMode::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;
};

OptimizerState make_optimizer(const ParameterSet& params, double learning_rate,
                              OptimizerMode mode = OptimizerMode::adam);

struct NonFiniteGradient : std::runtime_error {
  NonFiniteGradient(const std::string& param)
      : std::runtime_error("non-finite gradient in parameter '" + param + "'"), parameter(param) {}
  std::string parameter;
};

/// One update. Gradients are checked first; a NaN/Inf anywhere throws
/// NonFiniteGradient and leaves params and state untouched.
void step(ParameterSet& params, std::span<const std::vector<double>> grads, OptimizerState& state);

}  // namespace iplan::ad
