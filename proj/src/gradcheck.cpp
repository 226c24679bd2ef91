#include "vfl/gradcheck.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "vfl/loss.hpp"

namespace vfl {

namespace {

double loss_of(const ModelSpec& model, const ParameterStore& params, const Tensor& input,
               std::span<const int32_t> labels) {
  Tensor logits = seq_forward(model, params, input, /*training=*/true, nullptr);
  return softmax_cross_entropy(logits, labels).loss;
}

}  // namespace

double grad_check(const ModelSpec& model, ParameterStore& params, const Tensor& input,
                  std::span<const int32_t> labels) {
  constexpr int64_t kMaxParams = 10000;
  constexpr double kEps = 1e-3;
  if (params.total_params() > kMaxParams) {
    throw std::invalid_argument("grad_check: model exceeds the 10^4 parameter cost guard");
  }

  params.zero_grads();
  std::vector<LayerCache> caches;
  Tensor logits = seq_forward(model, params, input, /*training=*/true, &caches);
  LossResult lr = softmax_cross_entropy(logits, labels);
  seq_backward(model, params, caches, lr.grad_logits);
  if (!std::isfinite(lr.loss) || !params.all_finite()) {
    throw std::runtime_error("grad_check: non-finite values in the analytic pass");
  }

  double max_rel = 0.0;
  for (size_t e = 0; e < params.size(); ++e) {
    Tensor& w = params[e].value;
    const Tensor& g = params[e].grad;
    for (int64_t j = 0; j < w.numel(); ++j) {
      const float saved = w[j];
      w[j] = saved + static_cast<float>(kEps);
      const double up = loss_of(model, params, input, labels);
      w[j] = saved - static_cast<float>(kEps);
      const double down = loss_of(model, params, input, labels);
      w[j] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw std::runtime_error("grad_check: non-finite loss at parameter " + params[e].name);
      }
      const double numeric = (up - down) / (2.0 * kEps);
      const double analytic = static_cast<double>(g[j]);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace vfl
