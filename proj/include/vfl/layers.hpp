#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include "vfl/params.hpp"
#include "vfl/tensor.hpp"

namespace vfl {

enum class LayerKind : uint8_t {
  Dense,
  Conv2d,
  Relu,
  MaxPool2d,
  GlobalAvgPool,
  ResidualBlock,
  Flatten,
};

const char* layer_kind_name(LayerKind k);

/// One layer of the vocabulary. Conv kernels are fixed 3x3 with padding 1;
/// max pooling is fixed 2x2 stride 2. A residual block is conv3x3 -> relu ->
/// conv3x3 plus a skip path (1x1 projection when shape changes), relu on the sum.
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;

  int64_t in_dim = 0, out_dim = 0;            // dense
  int64_t in_channels = 0, out_channels = 0;  // conv2d / residual_block
  int stride = 1;                             // conv2d: 1 or 2
  bool downsample = false;                    // residual_block: stride-2 first conv

  static LayerSpec dense(int64_t in, int64_t out);
  static LayerSpec conv2d(int64_t in_ch, int64_t out_ch, int stride = 1);
  static LayerSpec relu();
  static LayerSpec maxpool2d();
  static LayerSpec global_avg_pool();
  static LayerSpec residual_block(int64_t in_ch, int64_t ch, bool downsample);
  static LayerSpec flatten();
};

/// A layer sequence plus the per-sample input shape it expects (no batch dim).
struct ModelSpec {
  std::vector<int64_t> input_shape;
  std::vector<LayerSpec> layers;
};

/// Number of ParameterStore entries a layer owns.
size_t param_count(const LayerSpec& spec);

/// Output shape for a batched input shape; validates the input. Throws
/// std::invalid_argument with expected-vs-actual on mismatch.
std::vector<int64_t> output_shape(const LayerSpec& spec, std::span<const int64_t> input);

/// Shape-chains the whole sequence from a batched input shape; the error names
/// the offending layer index. Returns every intermediate shape (layers+1 entries).
std::vector<std::vector<int64_t>> chain_shapes(const ModelSpec& model, int64_t batch = 1);

// ---- activation caches ----

struct DenseCache {
  Tensor input;
};
struct Conv2dCache {
  Tensor input;
};
struct ReluCache {
  Tensor input;
};
struct MaxPoolCache {
  std::vector<int64_t> in_shape;
  std::vector<int64_t> argmax;  // flat input index feeding each output element
};
struct GapCache {
  std::vector<int64_t> in_shape;
};
struct FlattenCache {
  std::vector<int64_t> in_shape;
};
struct ResidualCache {
  Conv2dCache conv1;
  ReluCache relu1;
  Conv2dCache conv2;
  Conv2dCache proj;
  bool has_proj = false;
  Tensor pre_out;  // main + skip, before the final relu
};

using LayerCache = std::variant<std::monostate, DenseCache, Conv2dCache, ReluCache,
                                MaxPoolCache, GapCache, FlattenCache, ResidualCache>;

/// Forward pass of one layer. `base` is the index of the layer's first entry
/// in the store (layers own param_count(spec) consecutive entries).
std::pair<Tensor, LayerCache> forward(const LayerSpec& spec, const ParameterStore& params,
                                      size_t base, const Tensor& input, bool training);

/// Backward pass of one layer: accumulates parameter gradients into the store
/// and returns the gradient w.r.t. the layer input. Throws on a cache that
/// does not match the spec or a grad_output of the wrong shape.
Tensor backward(const LayerSpec& spec, ParameterStore& params, size_t base,
                const LayerCache& cache, const Tensor& grad_output);

// ---- whole-sequence helpers ----

/// Glorot-uniform weights, zero biases, drawn sequentially in entry order from
/// a single seeded stream; identical (spec, seed) give bit-identical stores.
ParameterStore init_params(const ModelSpec& model, uint64_t seed);

/// Index of layer i's first parameter entry.
size_t param_base(const ModelSpec& model, size_t layer);

Tensor seq_forward(const ModelSpec& model, const ParameterStore& params, const Tensor& input,
                   bool training, std::vector<LayerCache>* caches);

Tensor seq_backward(const ModelSpec& model, ParameterStore& params,
                    const std::vector<LayerCache>& caches, const Tensor& grad_output);

}  // namespace vfl
