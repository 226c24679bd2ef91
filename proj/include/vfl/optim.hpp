#pragma once

#include <vector>

#include "vfl/params.hpp"

namespace vfl {

struct OptimizerConfig {
  float learning_rate = 0.01f;
  float momentum = 0.0f;  // in [0, 1)
};

void validate(const OptimizerConfig& cfg);

/// Plain SGD with optional momentum. Velocity is optimizer state, one tensor
/// per store entry, created lazily on the first step.
///
/// Per step: v <- momentum * v + g;  w <- w - lr * v;  g <- 0.
class SgdOptimizer {
 public:
  explicit SgdOptimizer(OptimizerConfig cfg);

  void step(ParameterStore& params);

  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  std::vector<Tensor> velocity_;
};

}  // namespace vfl
