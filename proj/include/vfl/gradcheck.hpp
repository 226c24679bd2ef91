#pragma once

#include <cstdint>
#include <span>

#include "vfl/layers.hpp"

namespace vfl {

/// Central finite differences (eps = 1e-3) of softmax cross-entropy through a
/// layer sequence against the analytic backward pass. Returns the max over
/// parameters of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
/// Guarded to models with at most 10^4 parameters; throws if non-finite
/// values show up anywhere.
double grad_check(const ModelSpec& model, ParameterStore& params, const Tensor& input,
                  std::span<const int32_t> labels);

}  // namespace vfl
