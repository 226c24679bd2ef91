#pragma once

#include <cstdint>
#include <span>

#include "vfl/tensor.hpp"

namespace vfl {

struct LossResult {
  double loss = 0.0;      // mean over the batch
  Tensor grad_logits;     // (softmax - one_hot) / batch
};

/// Softmax cross-entropy over [B x C] logits and integer class labels.
/// Numerically stabilized with the row max; throws when a label is out of
/// range, identifying the row.
LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int32_t> labels);

}  // namespace vfl
