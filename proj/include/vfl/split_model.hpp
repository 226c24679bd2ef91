#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "vfl/layers.hpp"
#include "vfl/loss.hpp"
#include "vfl/optim.hpp"

namespace vfl {

enum class InteractiveActivation : uint8_t { Identity, Relu };

/// Architecture of both bottom models, the interactive layer and the top
/// model. Defaults mirror the reference setup: 12 tabular inputs, a hidden
/// layer of 20, 10-dimensional embeddings fused through a size-10 interactive
/// layer into a 3-class head. The image bottom is a small residual CNN:
/// stem conv -> image_blocks downsampling residual blocks -> global average
/// pool -> dense to embed_dim.
struct SplitModelConfig {
  int64_t tabular_in = 12;
  int64_t tabular_hidden = 20;
  int64_t embed_dim = 10;
  int64_t image_channels = 1;
  int64_t image_height = 32;
  int64_t image_width = 32;
  int64_t image_blocks = 2;
  int64_t interactive_dim = 10;
  InteractiveActivation interactive_activation = InteractiveActivation::Identity;
  int64_t num_classes = 3;
};

void validate(const SplitModelConfig& cfg);

ModelSpec tabular_bottom_spec(const SplitModelConfig& cfg);
ModelSpec image_bottom_spec(const SplitModelConfig& cfg);
ModelSpec top_spec(const SplitModelConfig& cfg);

/// The four independent parameter stores of the split arrangement. The
/// interactive store holds exactly W_host [d x e], W_guest [d x e], bias [d].
struct SplitParams {
  ParameterStore host_bottom;
  ParameterStore guest_bottom;
  ParameterStore interactive;
  ParameterStore top;
};

/// Deterministic in (cfg, seed): the same pair gives bit-identical stores.
SplitParams build_split_model(const SplitModelConfig& cfg, uint64_t seed);

struct InteractiveCache {
  Tensor e_host;
  Tensor e_guest;
  Tensor pre;  // before the activation
};

/// z = g(e_host * W_host^T + e_guest * W_guest^T + b)
Tensor interactive_forward(const ParameterStore& p, const Tensor& e_host, const Tensor& e_guest,
                           InteractiveActivation g, InteractiveCache* cache);

/// Accumulates W/b gradients and returns (grad_e_host, grad_e_guest).
std::pair<Tensor, Tensor> interactive_backward(ParameterStore& p, const InteractiveCache& cache,
                                               const Tensor& grad_z, InteractiveActivation g);

/// The monolithic variant: identical bottoms and top, but the interactive
/// layer realized as one dense layer over the concatenation [e_host ; e_guest]
/// with weight [d x 2e] = [W_host | W_guest] and the same bias. Training it
/// in-process is the equivalence oracle for the federated protocol.
struct LocalReferenceModel {
  SplitModelConfig cfg;
  ParameterStore host_bottom;
  ParameterStore guest_bottom;
  ParameterStore fused;  // entries: weight [d x 2e], bias [d]
  ParameterStore top;
};

LocalReferenceModel to_local_reference(const SplitModelConfig& cfg, const SplitParams& split);
SplitParams to_split(const LocalReferenceModel& local);

struct LocalOptimizer {
  SgdOptimizer host_bottom, guest_bottom, fused, top;
  explicit LocalOptimizer(const OptimizerConfig& cfg)
      : host_bottom(cfg), guest_bottom(cfg), fused(cfg), top(cfg) {}
};

/// One full forward/backward/update step with in-process gradient flow.
/// With use_images == false the host embedding is zeroed and the image branch
/// is frozen (the tabular-only ablation).
double local_reference_step(LocalReferenceModel& model, const Tensor& images,
                            const Tensor& tabular, std::span<const int32_t> labels,
                            LocalOptimizer& opt, bool use_images = true);

Tensor local_reference_logits(const LocalReferenceModel& model, const Tensor& images,
                              const Tensor& tabular, bool use_images = true);

Tensor split_logits(const SplitModelConfig& cfg, const SplitParams& params, const Tensor& images,
                    const Tensor& tabular);

/// Row-wise argmax; ties resolve to the lowest class index.
std::vector<int32_t> argmax_classes(const Tensor& logits);

std::vector<int32_t> predict(const SplitModelConfig& cfg, const SplitParams& params,
                             const Tensor& images, const Tensor& tabular);

// ---- party-local batch computations used by the training protocol ----

struct GuestStepResult {
  double loss = 0.0;
  Tensor grad_host_embedding;  // [B x embed_dim], the cross-party message
};

struct GuestOptimizer {
  SgdOptimizer bottom, interactive, top;
  explicit GuestOptimizer(const OptimizerConfig& cfg) : bottom(cfg), interactive(cfg), top(cfg) {}
};

/// Guest side of one training batch: consumes the host embedding, runs its
/// bottom + interactive + top, updates all guest-held parameters and returns
/// the gradient to ship back to the host.
GuestStepResult guest_train_step(const SplitModelConfig& cfg, ParameterStore& guest_bottom,
                                 ParameterStore& interactive, ParameterStore& top,
                                 const Tensor& host_embedding, const Tensor& tabular,
                                 std::span<const int32_t> labels, GuestOptimizer& opt);

/// Guest-side evaluation logits for one batch (no updates).
Tensor guest_eval_logits(const SplitModelConfig& cfg, const ParameterStore& guest_bottom,
                         const ParameterStore& interactive, const ParameterStore& top,
                         const Tensor& host_embedding, const Tensor& tabular);

/// Host side: embedding of an image batch, with the caches needed to
/// backpropagate the guest's gradient afterwards.
struct HostForward {
  Tensor embedding;
  std::vector<LayerCache> caches;
};

HostForward host_forward(const SplitModelConfig& cfg, const ParameterStore& host_bottom,
                         const Tensor& images, bool training);

void host_apply_gradient(const SplitModelConfig& cfg, ParameterStore& host_bottom,
                         const HostForward& fwd, const Tensor& grad_embedding, SgdOptimizer& opt);

}  // namespace vfl
