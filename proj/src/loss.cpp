#include "vfl/loss.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace vfl {

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int32_t> labels) {
  if (logits.rank() != 2) {
    throw std::invalid_argument("softmax_cross_entropy: logits must be [B x C], got " +
                                shape_str(logits.shape()));
  }
  const int64_t B = logits.dim(0), C = logits.dim(1);
  if (B < 1 || static_cast<int64_t>(labels.size()) != B) {
    throw std::invalid_argument("softmax_cross_entropy: need one label per row");
  }

  LossResult res;
  res.grad_logits = Tensor({B, C});
  double total = 0.0;
  const float inv_b = 1.0f / static_cast<float>(B);
  for (int64_t i = 0; i < B; ++i) {
    const int32_t label = labels[static_cast<size_t>(i)];
    if (label < 0 || label >= C) {
      throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(label) +
                                  " out of range [0," + std::to_string(C) + ") at row " +
                                  std::to_string(i));
    }
    const float* row = logits.data() + i * C;
    float m = row[0];
    for (int64_t j = 1; j < C; ++j) m = std::max(m, row[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < C; ++j) sum += std::exp(static_cast<double>(row[j] - m));
    total += std::log(sum) - static_cast<double>(row[label] - m);
    float* grow = res.grad_logits.data() + i * C;
    for (int64_t j = 0; j < C; ++j) {
      const float p = static_cast<float>(std::exp(static_cast<double>(row[j] - m)) / sum);
      grow[j] = (p - (j == label ? 1.0f : 0.0f)) * inv_b;
    }
  }
  res.loss = total / static_cast<double>(B);
  return res;
}

}  // namespace vfl
