#include "vfl/optim.hpp"

#include <stdexcept>

namespace vfl {

void validate(const OptimizerConfig& cfg) {
  if (!(cfg.learning_rate > 0.0f)) {
    throw std::invalid_argument("optimizer: learning_rate must be positive");
  }
  if (cfg.momentum < 0.0f || cfg.momentum >= 1.0f) {
    throw std::invalid_argument("optimizer: momentum must be in [0, 1)");
  }
}

SgdOptimizer::SgdOptimizer(OptimizerConfig cfg) : cfg_(cfg) { validate(cfg_); }

void SgdOptimizer::step(ParameterStore& params) {
  if (velocity_.empty()) {
    velocity_.reserve(params.size());
    for (const auto& e : params) velocity_.emplace_back(e.value.shape());
  }
  if (velocity_.size() != params.size()) {
    throw std::invalid_argument("sgd step: store layout changed under the optimizer");
  }
  const float lr = cfg_.learning_rate;
  const float m = cfg_.momentum;
  for (size_t i = 0; i < params.size(); ++i) {
    ParamEntry& e = params[i];
    Tensor& v = velocity_[i];
    if (!v.same_shape(e.value)) {
      throw std::invalid_argument("sgd step: shape changed for parameter " + e.name);
    }
    for (int64_t j = 0; j < v.numel(); ++j) {
      v[j] = m * v[j] + e.grad[j];
      e.value[j] -= lr * v[j];
    }
    e.grad.fill(0.0f);
  }
}

}  // namespace vfl
