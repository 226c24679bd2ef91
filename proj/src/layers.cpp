#include "vfl/layers.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "vfl/rng.hpp"

namespace vfl {

namespace {

[[noreturn]] void shape_error(const LayerSpec& spec, std::span<const int64_t> got,
                              const std::string& expected) {
  throw std::invalid_argument(std::string(layer_kind_name(spec.kind)) + ": expected " + expected +
                              ", got " + shape_str(got));
}

int64_t conv_out_dim(int64_t in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Gathers the 3x3 (or 1x1) receptive fields of one image into a
// [Cin*k*k x Ho*Wo] matrix so the convolution becomes a single GEMM.
void im2col(const float* x, int64_t C, int64_t H, int64_t W, int k, int stride, int pad,
            int64_t Ho, int64_t Wo, RowMajorMatrixXf& cols) {
  cols.setZero();
  for (int64_t c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int64_t row = (c * k + ky) * k + kx;
        for (int64_t oy = 0; oy < Ho; ++oy) {
          const int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (int64_t ox = 0; ox < Wo; ++ox) {
            const int64_t ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= W) continue;
            cols(row, oy * Wo + ox) = x[(c * H + iy) * W + ix];
          }
        }
      }
    }
  }
}

void col2im_add(const RowMajorMatrixXf& cols, int64_t C, int64_t H, int64_t W, int k, int stride,
                int pad, int64_t Ho, int64_t Wo, float* gx) {
  for (int64_t c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int64_t row = (c * k + ky) * k + kx;
        for (int64_t oy = 0; oy < Ho; ++oy) {
          const int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (int64_t ox = 0; ox < Wo; ++ox) {
            const int64_t ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= W) continue;
            gx[(c * H + iy) * W + ix] += cols(row, oy * Wo + ox);
          }
        }
      }
    }
  }
}

Tensor conv_fwd(const Tensor& x, const Tensor& W, const Tensor& b, int k, int stride, int pad) {
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), Wd = x.dim(3);
  const int64_t Cout = W.dim(0);
  const int64_t Ho = conv_out_dim(H, k, stride, pad);
  const int64_t Wo = conv_out_dim(Wd, k, stride, pad);
  Tensor y({B, Cout, Ho, Wo});

  ConstMatMap wmat = W.as_mat(Cout, C * k * k);
  ConstVecMap bvec = b.vec();
  RowMajorMatrixXf cols(C * k * k, Ho * Wo);
  for (int64_t n = 0; n < B; ++n) {
    im2col(x.data() + n * C * H * Wd, C, H, Wd, k, stride, pad, Ho, Wo, cols);
    MatMap ymat(y.data() + n * Cout * Ho * Wo, Cout, Ho * Wo);
    ymat.noalias() = wmat * cols;
    ymat.colwise() += bvec;
  }
  return y;
}

Tensor conv_bwd(const Tensor& x, const Tensor& W, Tensor& gW, Tensor& gb, const Tensor& gy,
                int k, int stride, int pad) {
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), Wd = x.dim(3);
  const int64_t Cout = W.dim(0);
  const int64_t Ho = gy.dim(2), Wo = gy.dim(3);
  Tensor gx(x.shape());

  ConstMatMap wmat = W.as_mat(Cout, C * k * k);
  MatMap gwmat = gW.as_mat(Cout, C * k * k);
  VecMap gbvec = gb.vec();
  RowMajorMatrixXf cols(C * k * k, Ho * Wo);
  RowMajorMatrixXf gcols(C * k * k, Ho * Wo);
  for (int64_t n = 0; n < B; ++n) {
    im2col(x.data() + n * C * H * Wd, C, H, Wd, k, stride, pad, Ho, Wo, cols);
    ConstMatMap gymat(gy.data() + n * Cout * Ho * Wo, Cout, Ho * Wo);
    gwmat.noalias() += gymat * cols.transpose();
    gbvec += gymat.rowwise().sum();
    gcols.noalias() = wmat.transpose() * gymat;
    col2im_add(gcols, C, H, Wd, k, stride, pad, Ho, Wo, gx.data() + n * C * H * Wd);
  }
  return gx;
}

void check_grad_shape(const Tensor& grad_out, std::span<const int64_t> expected,
                      const LayerSpec& spec) {
  if (std::vector<int64_t>(expected.begin(), expected.end()) != grad_out.shape()) {
    throw std::invalid_argument(std::string(layer_kind_name(spec.kind)) +
                                " backward: grad_output shape " + shape_str(grad_out.shape()) +
                                " does not match forward output " + shape_str(expected));
  }
}

template <typename CacheT>
const CacheT& cache_as(const LayerCache& cache, const LayerSpec& spec) {
  const CacheT* c = std::get_if<CacheT>(&cache);
  if (!c) {
    throw std::invalid_argument(std::string("backward: cache does not belong to a ") +
                                layer_kind_name(spec.kind) + " forward pass");
  }
  return *c;
}

bool residual_has_proj(const LayerSpec& spec) {
  return spec.downsample || spec.in_channels != spec.out_channels;
}

}  // namespace

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool2d: return "maxpool2d";
    case LayerKind::GlobalAvgPool: return "global_avg_pool";
    case LayerKind::ResidualBlock: return "residual_block";
    case LayerKind::Flatten: return "flatten";
  }
  return "?";
}

LayerSpec LayerSpec::dense(int64_t in, int64_t out) {
  if (in <= 0 || out <= 0) throw std::invalid_argument("dense: dims must be positive");
  LayerSpec s;
  s.kind = LayerKind::Dense;
  s.in_dim = in;
  s.out_dim = out;
  return s;
}

LayerSpec LayerSpec::conv2d(int64_t in_ch, int64_t out_ch, int stride) {
  if (in_ch <= 0 || out_ch <= 0) throw std::invalid_argument("conv2d: channels must be positive");
  if (stride != 1 && stride != 2) throw std::invalid_argument("conv2d: stride must be 1 or 2");
  LayerSpec s;
  s.kind = LayerKind::Conv2d;
  s.in_channels = in_ch;
  s.out_channels = out_ch;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::relu() {
  LayerSpec s;
  s.kind = LayerKind::Relu;
  return s;
}

LayerSpec LayerSpec::maxpool2d() {
  LayerSpec s;
  s.kind = LayerKind::MaxPool2d;
  return s;
}

LayerSpec LayerSpec::global_avg_pool() {
  LayerSpec s;
  s.kind = LayerKind::GlobalAvgPool;
  return s;
}

LayerSpec LayerSpec::residual_block(int64_t in_ch, int64_t ch, bool downsample) {
  if (in_ch <= 0 || ch <= 0) throw std::invalid_argument("residual_block: channels must be positive");
  LayerSpec s;
  s.kind = LayerKind::ResidualBlock;
  s.in_channels = in_ch;
  s.out_channels = ch;
  s.downsample = downsample;
  s.stride = downsample ? 2 : 1;
  return s;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::Flatten;
  return s;
}

size_t param_count(const LayerSpec& spec) {
  switch (spec.kind) {
    case LayerKind::Dense:
    case LayerKind::Conv2d: return 2;
    case LayerKind::ResidualBlock: return residual_has_proj(spec) ? 6 : 4;
    default: return 0;
  }
}

std::vector<int64_t> output_shape(const LayerSpec& spec, std::span<const int64_t> in) {
  switch (spec.kind) {
    case LayerKind::Dense:
      if (in.size() != 2 || in[1] != spec.in_dim)
        shape_error(spec, in, "[B x " + std::to_string(spec.in_dim) + "]");
      return {in[0], spec.out_dim};
    case LayerKind::Conv2d:
      if (in.size() != 4 || in[1] != spec.in_channels)
        shape_error(spec, in, "[B x " + std::to_string(spec.in_channels) + " x H x W]");
      return {in[0], spec.out_channels, conv_out_dim(in[2], 3, spec.stride, 1),
              conv_out_dim(in[3], 3, spec.stride, 1)};
    case LayerKind::Relu:
      return std::vector<int64_t>(in.begin(), in.end());
    case LayerKind::MaxPool2d:
      if (in.size() != 4 || in[2] < 2 || in[3] < 2)
        shape_error(spec, in, "[B x C x H>=2 x W>=2]");
      return {in[0], in[1], (in[2] - 2) / 2 + 1, (in[3] - 2) / 2 + 1};
    case LayerKind::GlobalAvgPool:
      if (in.size() != 4) shape_error(spec, in, "[B x C x H x W]");
      return {in[0], in[1]};
    case LayerKind::ResidualBlock:
      if (in.size() != 4 || in[1] != spec.in_channels)
        shape_error(spec, in, "[B x " + std::to_string(spec.in_channels) + " x H x W]");
      return {in[0], spec.out_channels, conv_out_dim(in[2], 3, spec.stride, 1),
              conv_out_dim(in[3], 3, spec.stride, 1)};
    case LayerKind::Flatten: {
      if (in.size() < 2) shape_error(spec, in, "[B x ...]");
      int64_t flat = 1;
      for (size_t i = 1; i < in.size(); ++i) flat *= in[i];
      return {in[0], flat};
    }
  }
  throw std::logic_error("unknown layer kind");
}

std::vector<std::vector<int64_t>> chain_shapes(const ModelSpec& model, int64_t batch) {
  std::vector<std::vector<int64_t>> shapes;
  std::vector<int64_t> cur;
  cur.push_back(batch);
  cur.insert(cur.end(), model.input_shape.begin(), model.input_shape.end());
  shapes.push_back(cur);
  for (size_t i = 0; i < model.layers.size(); ++i) {
    try {
      cur = output_shape(model.layers[i], cur);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("layer " + std::to_string(i) + ": " + e.what());
    }
    shapes.push_back(cur);
  }
  return shapes;
}

std::pair<Tensor, LayerCache> forward(const LayerSpec& spec, const ParameterStore& params,
                                      size_t base, const Tensor& input, bool /*training*/) {
  const auto out_shape = output_shape(spec, input.shape());
  switch (spec.kind) {
    case LayerKind::Dense: {
      const Tensor& W = params[base].value;
      const Tensor& b = params[base + 1].value;
      Tensor y(out_shape);
      y.mat().noalias() = input.mat() * W.mat().transpose();
      y.mat().rowwise() += b.vec().transpose();
      return {std::move(y), DenseCache{input}};
    }
    case LayerKind::Conv2d:
      return {conv_fwd(input, params[base].value, params[base + 1].value, 3, spec.stride, 1),
              Conv2dCache{input}};
    case LayerKind::Relu: {
      Tensor y(input.shape());
      const float* x = input.data();
      float* yv = y.data();
      for (int64_t i = 0; i < input.numel(); ++i) yv[i] = x[i] > 0.0f ? x[i] : 0.0f;
      return {std::move(y), ReluCache{input}};
    }
    case LayerKind::MaxPool2d: {
      const int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
      const int64_t Ho = out_shape[2], Wo = out_shape[3];
      Tensor y(out_shape);
      MaxPoolCache cache{input.shape(), std::vector<int64_t>(static_cast<size_t>(B * C * Ho * Wo))};
      const float* x = input.data();
      float* yv = y.data();
      int64_t o = 0;
      for (int64_t nc = 0; nc < B * C; ++nc) {
        const float* plane = x + nc * H * W;
        for (int64_t oy = 0; oy < Ho; ++oy) {
          for (int64_t ox = 0; ox < Wo; ++ox, ++o) {
            // first (lowest flat index) maximum wins on ties
            int64_t best = (oy * 2) * W + ox * 2;
            float bv = plane[best];
            for (int ky = 0; ky < 2; ++ky) {
              for (int kx = 0; kx < 2; ++kx) {
                const int64_t idx = (oy * 2 + ky) * W + ox * 2 + kx;
                if (plane[idx] > bv) {
                  bv = plane[idx];
                  best = idx;
                }
              }
            }
            yv[o] = bv;
            cache.argmax[static_cast<size_t>(o)] = nc * H * W + best;
          }
        }
      }
      return {std::move(y), std::move(cache)};
    }
    case LayerKind::GlobalAvgPool: {
      const int64_t B = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
      Tensor y(out_shape);
      const float* x = input.data();
      for (int64_t nc = 0; nc < B * C; ++nc) {
        float acc = 0.0f;
        for (int64_t i = 0; i < HW; ++i) acc += x[nc * HW + i];
        y[nc] = acc / static_cast<float>(HW);
      }
      return {std::move(y), GapCache{input.shape()}};
    }
    case LayerKind::ResidualBlock: {
      ResidualCache cache;
      cache.has_proj = residual_has_proj(spec);
      const int s = spec.stride;
      Tensor a = conv_fwd(input, params[base].value, params[base + 1].value, 3, s, 1);
      Tensor r(a.shape());
      for (int64_t i = 0; i < a.numel(); ++i) r[i] = a[i] > 0.0f ? a[i] : 0.0f;
      Tensor m = conv_fwd(r, params[base + 2].value, params[base + 3].value, 3, 1, 1);
      cache.conv1.input = input;
      cache.relu1.input = std::move(a);
      cache.conv2.input = std::move(r);
      Tensor pre = std::move(m);
      if (cache.has_proj) {
        Tensor skip = conv_fwd(input, params[base + 4].value, params[base + 5].value, 1, s, 0);
        pre.vec() += skip.vec();
        cache.proj.input = input;
      } else {
        pre.vec() += input.vec();
      }
      Tensor y(pre.shape());
      for (int64_t i = 0; i < pre.numel(); ++i) y[i] = pre[i] > 0.0f ? pre[i] : 0.0f;
      cache.pre_out = std::move(pre);
      return {std::move(y), std::move(cache)};
    }
    case LayerKind::Flatten:
      return {input.reshaped(out_shape), FlattenCache{input.shape()}};
  }
  throw std::logic_error("unknown layer kind");
}

Tensor backward(const LayerSpec& spec, ParameterStore& params, size_t base,
                const LayerCache& cache, const Tensor& grad_output) {
  switch (spec.kind) {
    case LayerKind::Dense: {
      const auto& c = cache_as<DenseCache>(cache, spec);
      check_grad_shape(grad_output, output_shape(spec, c.input.shape()), spec);
      const Tensor& W = params[base].value;
      params[base].grad.mat().noalias() += grad_output.mat().transpose() * c.input.mat();
      params[base + 1].grad.vec() += grad_output.mat().colwise().sum().transpose();
      Tensor gx(c.input.shape());
      gx.mat().noalias() = grad_output.mat() * W.mat();
      return gx;
    }
    case LayerKind::Conv2d: {
      const auto& c = cache_as<Conv2dCache>(cache, spec);
      check_grad_shape(grad_output, output_shape(spec, c.input.shape()), spec);
      return conv_bwd(c.input, params[base].value, params[base].grad, params[base + 1].grad,
                      grad_output, 3, spec.stride, 1);
    }
    case LayerKind::Relu: {
      const auto& c = cache_as<ReluCache>(cache, spec);
      check_grad_shape(grad_output, c.input.shape(), spec);
      Tensor gx(c.input.shape());
      for (int64_t i = 0; i < gx.numel(); ++i) gx[i] = c.input[i] > 0.0f ? grad_output[i] : 0.0f;
      return gx;
    }
    case LayerKind::MaxPool2d: {
      const auto& c = cache_as<MaxPoolCache>(cache, spec);
      check_grad_shape(grad_output, output_shape(spec, c.in_shape), spec);
      Tensor gx(c.in_shape);
      for (int64_t o = 0; o < grad_output.numel(); ++o) {
        gx[c.argmax[static_cast<size_t>(o)]] += grad_output[o];
      }
      return gx;
    }
    case LayerKind::GlobalAvgPool: {
      const auto& c = cache_as<GapCache>(cache, spec);
      check_grad_shape(grad_output, output_shape(spec, c.in_shape), spec);
      const int64_t HW = c.in_shape[2] * c.in_shape[3];
      Tensor gx(c.in_shape);
      const float inv = 1.0f / static_cast<float>(HW);
      for (int64_t nc = 0; nc < c.in_shape[0] * c.in_shape[1]; ++nc) {
        const float g = grad_output[nc] * inv;
        for (int64_t i = 0; i < HW; ++i) gx[nc * HW + i] = g;
      }
      return gx;
    }
    case LayerKind::ResidualBlock: {
      const auto& c = cache_as<ResidualCache>(cache, spec);
      check_grad_shape(grad_output, output_shape(spec, c.conv1.input.shape()), spec);
      const int s = spec.stride;
      Tensor gpre(c.pre_out.shape());
      for (int64_t i = 0; i < gpre.numel(); ++i) {
        gpre[i] = c.pre_out[i] > 0.0f ? grad_output[i] : 0.0f;
      }
      Tensor gr = conv_bwd(c.conv2.input, params[base + 2].value, params[base + 2].grad,
                           params[base + 3].grad, gpre, 3, 1, 1);
      for (int64_t i = 0; i < gr.numel(); ++i) {
        if (!(c.relu1.input[i] > 0.0f)) gr[i] = 0.0f;
      }
      Tensor gx = conv_bwd(c.conv1.input, params[base].value, params[base].grad,
                           params[base + 1].grad, gr, 3, s, 1);
      if (c.has_proj) {
        Tensor gskip = conv_bwd(c.proj.input, params[base + 4].value, params[base + 4].grad,
                                params[base + 5].grad, gpre, 1, s, 0);
        gx.vec() += gskip.vec();
      } else {
        gx.vec() += gpre.vec();
      }
      return gx;
    }
    case LayerKind::Flatten: {
      const auto& c = cache_as<FlattenCache>(cache, spec);
      check_grad_shape(grad_output, output_shape(spec, c.in_shape), spec);
      return grad_output.reshaped(c.in_shape);
    }
  }
  throw std::logic_error("unknown layer kind");
}

namespace {

void glorot_fill(Tensor& w, int64_t fan_in, int64_t fan_out, DetRng& rng) {
  const float bound = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform_float(-bound, bound);
}

void add_conv_params(ParameterStore& store, const std::string& name, int64_t out_ch,
                     int64_t in_ch, int k, DetRng& rng) {
  Tensor W({out_ch, in_ch, k, k});
  glorot_fill(W, in_ch * k * k, out_ch * k * k, rng);
  store.add(name + ".weight", std::move(W));
  store.add(name + ".bias", Tensor({out_ch}));
}

}  // namespace

ParameterStore init_params(const ModelSpec& model, uint64_t seed) {
  chain_shapes(model);  // build-time shape check; throws naming the layer
  ParameterStore store;
  DetRng rng(seed);
  for (size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& spec = model.layers[i];
    const std::string prefix = "l" + std::to_string(i);
    switch (spec.kind) {
      case LayerKind::Dense: {
        Tensor W({spec.out_dim, spec.in_dim});
        glorot_fill(W, spec.in_dim, spec.out_dim, rng);
        store.add(prefix + ".weight", std::move(W));
        store.add(prefix + ".bias", Tensor({spec.out_dim}));
        break;
      }
      case LayerKind::Conv2d:
        add_conv_params(store, prefix, spec.out_channels, spec.in_channels, 3, rng);
        break;
      case LayerKind::ResidualBlock:
        add_conv_params(store, prefix + ".conv1", spec.out_channels, spec.in_channels, 3, rng);
        add_conv_params(store, prefix + ".conv2", spec.out_channels, spec.out_channels, 3, rng);
        if (residual_has_proj(spec)) {
          add_conv_params(store, prefix + ".proj", spec.out_channels, spec.in_channels, 1, rng);
        }
        break;
      default: break;
    }
  }
  return store;
}

size_t param_base(const ModelSpec& model, size_t layer) {
  size_t base = 0;
  for (size_t i = 0; i < layer; ++i) base += param_count(model.layers[i]);
  return base;
}

Tensor seq_forward(const ModelSpec& model, const ParameterStore& params, const Tensor& input,
                   bool training, std::vector<LayerCache>* caches) {
  if (caches) caches->clear();
  Tensor x = input;
  size_t base = 0;
  for (const LayerSpec& spec : model.layers) {
    auto [y, cache] = forward(spec, params, base, x, training);
    x = std::move(y);
    if (caches) caches->push_back(std::move(cache));
    base += param_count(spec);
  }
  return x;
}

Tensor seq_backward(const ModelSpec& model, ParameterStore& params,
                    const std::vector<LayerCache>& caches, const Tensor& grad_output) {
  if (caches.size() != model.layers.size()) {
    throw std::invalid_argument("seq_backward: cache count does not match layer count");
  }
  Tensor g = grad_output;
  for (size_t i = model.layers.size(); i-- > 0;) {
    g = backward(model.layers[i], params, param_base(model, i), caches[i], g);
  }
  return g;
}

}  // namespace vfl
