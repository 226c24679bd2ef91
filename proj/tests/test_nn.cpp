#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "fd_oracle.hpp"
#include "vfl/gradcheck.hpp"
#include "vfl/layers.hpp"
#include "vfl/loss.hpp"
#include "vfl/optim.hpp"
#include "vfl/rng.hpp"
#include "vfl/tensor.hpp"

using namespace vfl;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, DetRng& rng, float lo = -1.0f, float hi = 1.0f) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform_float(lo, hi);
  return t;
}

std::vector<int32_t> random_labels(int64_t batch, int64_t classes, DetRng& rng) {
  std::vector<int32_t> labels(static_cast<size_t>(batch));
  for (auto& l : labels) l = static_cast<int32_t>(rng.below(static_cast<uint64_t>(classes)));
  return labels;
}

// Direct-summation convolution, independent of the im2col implementation.
Tensor conv_reference(const Tensor& x, const Tensor& W, const Tensor& b, int k, int stride,
                      int pad) {
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), Wd = x.dim(3);
  const int64_t Cout = W.dim(0);
  const int64_t Ho = (H + 2 * pad - k) / stride + 1;
  const int64_t Wo = (Wd + 2 * pad - k) / stride + 1;
  Tensor y({B, Cout, Ho, Wo});
  for (int64_t n = 0; n < B; ++n) {
    for (int64_t co = 0; co < Cout; ++co) {
      for (int64_t oy = 0; oy < Ho; ++oy) {
        for (int64_t ox = 0; ox < Wo; ++ox) {
          double acc = b[co];
          for (int64_t ci = 0; ci < C; ++ci) {
            for (int ky = 0; ky < k; ++ky) {
              for (int kx = 0; kx < k; ++kx) {
                const int64_t iy = oy * stride - pad + ky;
                const int64_t ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= H || ix < 0 || ix >= Wd) continue;
                acc += static_cast<double>(x[((n * C + ci) * H + iy) * Wd + ix]) *
                       static_cast<double>(W[((co * C + ci) * k + ky) * k + kx]);
              }
            }
          }
          y[((n * Cout + co) * Ho + oy) * Wo + ox] = static_cast<float>(acc);
        }
      }
    }
  }
  return y;
}

bool bit_identical(const ParameterStore& a, const ParameterStore& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || !a[i].value.same_shape(b[i].value)) return false;
    for (int64_t j = 0; j < a[i].value.numel(); ++j) {
      if (a[i].value[j] != b[i].value[j]) return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("tensor invariants") {
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.all_finite());
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<float>(5)), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({0, 3}), std::invalid_argument);
  t[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_FALSE(t.all_finite());
  t[0] = std::numeric_limits<float>::infinity();
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("init determinism and zero biases") {
  ModelSpec model{{12}, {LayerSpec::dense(12, 20), LayerSpec::relu(), LayerSpec::dense(20, 10)}};
  ParameterStore a = init_params(model, 7);
  ParameterStore b = init_params(model, 7);
  CHECK(bit_identical(a, b));

  ParameterStore c = init_params(model, 8);
  CHECK_FALSE(bit_identical(a, c));

  ModelSpec tiny{{2}, {LayerSpec::dense(2, 3)}};
  ParameterStore p = init_params(tiny, 1);
  const Tensor& bias = p[1].value;
  REQUIRE(bias.numel() == 3);
  for (int64_t i = 0; i < 3; ++i) CHECK(bias[i] == 0.0f);
}

TEST_CASE("glorot bound for dense(10,10)") {
  ModelSpec model{{10}, {LayerSpec::dense(10, 10)}};
  ParameterStore p = init_params(model, 42);
  const float bound = std::sqrt(6.0f / 20.0f);
  for (int64_t i = 0; i < p[0].value.numel(); ++i) {
    CHECK(p[0].value[i] > -bound);
    CHECK(p[0].value[i] < bound);
  }
}

TEST_CASE("shape chain mismatch names the layer") {
  ModelSpec model{{12}, {LayerSpec::dense(12, 20), LayerSpec::dense(21, 5)}};
  CHECK_THROWS_WITH_AS(init_params(model, 1), doctest::Contains("layer 1"),
                       std::invalid_argument);
}

TEST_CASE("dense identity forward") {
  ModelSpec model{{3}, {LayerSpec::dense(3, 3)}};
  ParameterStore p = init_params(model, 3);
  p[0].value.fill(0.0f);
  for (int64_t i = 0; i < 3; ++i) p[0].value[i * 3 + i] = 1.0f;
  Tensor x = Tensor::of({2, 3}, {1.0f, -2.0f, 0.5f, 4.0f, 0.0f, -1.0f});
  auto [y, cache] = forward(model.layers[0], p, 0, x, true);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == doctest::Approx(x[i]));
}

TEST_CASE("relu forward and backward gate") {
  ParameterStore empty;
  Tensor x = Tensor::of({1, 3}, {-1.0f, 0.0f, 2.0f});
  auto [y, cache] = forward(LayerSpec::relu(), empty, 0, x, true);
  CHECK(y[0] == 0.0f);
  CHECK(y[1] == 0.0f);
  CHECK(y[2] == 2.0f);

  Tensor x2 = Tensor::of({1, 2}, {-1.0f, 2.0f});
  auto [y2, cache2] = forward(LayerSpec::relu(), empty, 0, x2, true);
  Tensor g = Tensor::of({1, 2}, {5.0f, 5.0f});
  Tensor gx = backward(LayerSpec::relu(), empty, 0, cache2, g);
  CHECK(gx[0] == 0.0f);
  CHECK(gx[1] == 5.0f);
}

TEST_CASE("conv2d forward equals direct convolution oracle") {
  DetRng rng(99);
  for (int stride : {1, 2}) {
    Tensor x = random_tensor({1, 1, 8, 8}, rng);
    LayerSpec spec = LayerSpec::conv2d(1, 2, stride);
    ModelSpec model{{1, 8, 8}, {spec}};
    ParameterStore p = init_params(model, 5);
    auto [y, cache] = forward(spec, p, 0, x, true);
    Tensor ref = conv_reference(x, p[0].value, p[1].value, 3, stride, 1);
    REQUIRE(y.shape() == ref.shape());
    for (int64_t i = 0; i < y.numel(); ++i) {
      CHECK(std::abs(y[i] - ref[i]) < 1e-6);
    }
  }
}

TEST_CASE("conv2d multi-channel 16x16 against oracle") {
  DetRng rng(123);
  Tensor x = random_tensor({2, 3, 16, 16}, rng);
  LayerSpec spec = LayerSpec::conv2d(3, 4, 2);
  ModelSpec model{{3, 16, 16}, {spec}};
  ParameterStore p = init_params(model, 11);
  auto [y, cache] = forward(spec, p, 0, x, true);
  Tensor ref = conv_reference(x, p[0].value, p[1].value, 3, 2, 1);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(std::abs(y[i] - ref[i]) < 1e-6);
}

TEST_CASE("dense backward with zero grad_output") {
  ModelSpec model{{4}, {LayerSpec::dense(4, 3)}};
  ParameterStore p = init_params(model, 2);
  DetRng rng(1);
  Tensor x = random_tensor({2, 4}, rng);
  auto [y, cache] = forward(model.layers[0], p, 0, x, true);
  Tensor g({2, 3});
  Tensor gx = backward(model.layers[0], p, 0, cache, g);
  for (int64_t i = 0; i < gx.numel(); ++i) CHECK(gx[i] == 0.0f);
  for (int64_t i = 0; i < p[0].grad.numel(); ++i) CHECK(p[0].grad[i] == 0.0f);
  for (int64_t i = 0; i < p[1].grad.numel(); ++i) CHECK(p[1].grad[i] == 0.0f);
}

TEST_CASE("backward rejects mismatched cache and wrong grad shape") {
  ParameterStore empty;
  Tensor x = Tensor::of({1, 2}, {1.0f, 2.0f});
  auto [y, cache] = forward(LayerSpec::relu(), empty, 0, x, true);

  ModelSpec model{{2}, {LayerSpec::dense(2, 2)}};
  ParameterStore p = init_params(model, 1);
  CHECK_THROWS_AS(backward(model.layers[0], p, 0, cache, y), std::invalid_argument);

  Tensor bad_grad({1, 3});
  CHECK_THROWS_AS(backward(LayerSpec::relu(), p, 0, cache, bad_grad), std::invalid_argument);
}

TEST_CASE("maxpool tie-breaking takes lowest flat index") {
  ParameterStore empty;
  Tensor x = Tensor::full({1, 1, 2, 2}, 3.5f);
  auto [y, cache] = forward(LayerSpec::maxpool2d(), empty, 0, x, true);
  REQUIRE(y.numel() == 1);
  CHECK(y[0] == 3.5f);
  Tensor g = Tensor::of({1, 1, 1, 1}, {5.0f});
  Tensor gx = backward(LayerSpec::maxpool2d(), empty, 0, cache, g);
  CHECK(gx[0] == 5.0f);
  CHECK(gx[1] == 0.0f);
  CHECK(gx[2] == 0.0f);
  CHECK(gx[3] == 0.0f);
}

TEST_CASE("finite differences pass for every layer kind") {
  constexpr uint64_t kSeed = 33;
  struct Case {
    const char* name;
    ModelSpec model;
    std::vector<int64_t> in_shape;
  };
  std::vector<Case> cases;
  cases.push_back({"dense", {{6}, {LayerSpec::dense(6, 4)}}, {3, 6}});
  cases.push_back({"conv_s1",
                   {{2, 4, 4},
                    {LayerSpec::conv2d(2, 3, 1), LayerSpec::flatten(), LayerSpec::dense(48, 3)}},
                   {2, 2, 4, 4}});
  cases.push_back({"conv_s2",
                   {{2, 4, 4},
                    {LayerSpec::conv2d(2, 3, 2), LayerSpec::flatten(), LayerSpec::dense(12, 3)}},
                   {2, 2, 4, 4}});
  cases.push_back({"relu_chain",
                   {{5}, {LayerSpec::dense(5, 6), LayerSpec::relu(), LayerSpec::dense(6, 3)}},
                   {4, 5}});
  cases.push_back({"maxpool",
                   {{2, 4, 4},
                    {LayerSpec::conv2d(2, 3, 1), LayerSpec::maxpool2d(), LayerSpec::flatten(),
                     LayerSpec::dense(12, 3)}},
                   {2, 2, 4, 4}});
  cases.push_back({"gap",
                   {{3, 4, 4},
                    {LayerSpec::conv2d(3, 4, 1), LayerSpec::global_avg_pool(),
                     LayerSpec::dense(4, 3)}},
                   {2, 3, 4, 4}});
  cases.push_back({"residual_proj",
                   {{3, 4, 4},
                    {LayerSpec::residual_block(3, 4, true), LayerSpec::flatten(),
                     LayerSpec::dense(16, 3)}},
                   {2, 3, 4, 4}});
  cases.push_back({"residual_identity",
                   {{3, 4, 4},
                    {LayerSpec::residual_block(3, 3, false), LayerSpec::flatten(),
                     LayerSpec::dense(48, 3)}},
                   {2, 3, 4, 4}});

  for (auto& c : cases) {
    const std::string case_name = c.name;
    CAPTURE(case_name);
    DetRng rng(kSeed * 1000 + 7);
    ParameterStore p = init_params(c.model, kSeed);
    Tensor x = random_tensor(c.in_shape, rng, 0.1f, 1.0f);
    auto shapes = chain_shapes(c.model, c.in_shape[0]);
    const int64_t classes = shapes.back()[1];
    auto labels = random_labels(c.in_shape[0], classes, rng);

    p.zero_grads();
    std::vector<LayerCache> caches;
    Tensor logits = seq_forward(c.model, p, x, true, &caches);
    LossResult lr = softmax_cross_entropy(logits, labels);
    seq_backward(c.model, p, caches, lr.grad_logits);
    const double err = fdtest::fd_max_rel_error(c.model, p, x, labels);
    CHECK(err < 1e-2);
  }
}

TEST_CASE("grad_check tabular bottom stack and edge cases") {
  DetRng rng(77);
  // 12 -> 20 -> 10 with a classification head, as the smallest realistic stack
  ModelSpec model{{12},
                  {LayerSpec::dense(12, 20), LayerSpec::relu(), LayerSpec::dense(20, 10),
                   LayerSpec::relu(), LayerSpec::dense(10, 3)}};
  ParameterStore p = init_params(model, 12);
  Tensor x = random_tensor({4, 12}, rng, 0.0f, 1.0f);
  auto labels = random_labels(4, 3, rng);
  CHECK(grad_check(model, p, x, labels) < 1e-2);

  ModelSpec single{{5}, {LayerSpec::dense(5, 4)}};
  ParameterStore sp = init_params(single, 9);
  Tensor sx = random_tensor({3, 5}, rng);
  auto slabels = random_labels(3, 4, rng);
  CHECK(grad_check(single, sp, sx, slabels) < 1e-3);

  ModelSpec relu_only{{4}, {LayerSpec::relu()}};
  ParameterStore rp = init_params(relu_only, 1);
  Tensor rx = random_tensor({2, 4}, rng);
  auto rlabels = random_labels(2, 4, rng);
  CHECK(grad_check(relu_only, rp, rx, rlabels) == 0.0);

  ModelSpec big{{64}, {LayerSpec::dense(64, 200)}};
  ParameterStore bp = init_params(big, 1);
  Tensor bx = random_tensor({1, 64}, rng);
  std::vector<int32_t> blabels{0};
  CHECK_THROWS_AS(grad_check(big, bp, bx, blabels), std::invalid_argument);
}

TEST_CASE("softmax cross entropy") {
  SUBCASE("uniform logits give ln C") {
    for (int64_t C : {2, 3, 10}) {
      Tensor logits({2, C});
      std::vector<int32_t> labels{0, static_cast<int32_t>(C - 1)};
      LossResult r = softmax_cross_entropy(logits, labels);
      CHECK(std::abs(r.loss - std::log(static_cast<double>(C))) < 1e-6);
    }
  }
  SUBCASE("saturated logits give near-zero loss") {
    Tensor logits = Tensor::of({1, 3}, {25.0f, 0.0f, 0.0f});
    std::vector<int32_t> labels{0};
    CHECK(softmax_cross_entropy(logits, labels).loss < 1e-6);
  }
  SUBCASE("label out of range names the row") {
    Tensor logits({2, 3});
    std::vector<int32_t> labels{0, 3};
    CHECK_THROWS_WITH_AS(softmax_cross_entropy(logits, labels), doctest::Contains("row 1"),
                         std::invalid_argument);
  }
  SUBCASE("gradient matches finite differences") {
    DetRng rng(5);
    Tensor logits = random_tensor({3, 4}, rng, -2.0f, 2.0f);
    auto labels = random_labels(3, 4, rng);
    LossResult r = softmax_cross_entropy(logits, labels);
    const double eps = 1e-3;
    for (int64_t i = 0; i < logits.numel(); ++i) {
      const float saved = logits[i];
      logits[i] = saved + static_cast<float>(eps);
      const double up = softmax_cross_entropy(logits, labels).loss;
      logits[i] = saved - static_cast<float>(eps);
      const double down = softmax_cross_entropy(logits, labels).loss;
      logits[i] = saved;
      const double numeric = (up - down) / (2 * eps);
      const double analytic = r.grad_logits[i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-8});
      CHECK(std::abs(numeric - analytic) / denom < 1e-2);
    }
  }
}

TEST_CASE("sgd update rule") {
  SUBCASE("zero gradients are a fixed point") {
    ModelSpec model{{3}, {LayerSpec::dense(3, 2)}};
    ParameterStore p = init_params(model, 4);
    std::vector<float> before(p[0].value.data(), p[0].value.data() + p[0].value.numel());
    SgdOptimizer opt({0.5f, 0.9f});
    opt.step(p);
    for (int64_t i = 0; i < p[0].value.numel(); ++i) CHECK(p[0].value[i] == before[static_cast<size_t>(i)]);
  }
  SUBCASE("plain step arithmetic") {
    ParameterStore p;
    p.add("w", Tensor::of({1}, {1.0f}));
    p[0].grad[0] = 2.0f;
    SgdOptimizer opt({0.1f, 0.0f});
    opt.step(p);
    CHECK(p[0].value[0] == doctest::Approx(0.8f));
    CHECK(p[0].grad[0] == 0.0f);
  }
  SUBCASE("momentum matches hand-unrolled recurrence") {
    ParameterStore p;
    p.add("w", Tensor::of({1}, {1.0f}));
    SgdOptimizer opt({0.1f, 0.9f});
    // step 1: g=2 -> v=2, w=1-0.2=0.8; step 2: g=1 -> v=0.9*2+1=2.8, w=0.8-0.28=0.52
    p[0].grad[0] = 2.0f;
    opt.step(p);
    CHECK(p[0].value[0] == doctest::Approx(0.8f));
    p[0].grad[0] = 1.0f;
    opt.step(p);
    CHECK(p[0].value[0] == doctest::Approx(0.52f));
  }
  SUBCASE("config validation") {
    CHECK_THROWS_AS(SgdOptimizer({0.0f, 0.0f}), std::invalid_argument);
    CHECK_THROWS_AS(SgdOptimizer({0.1f, 1.0f}), std::invalid_argument);
  }
}

TEST_CASE("shape round-trip property over random specs") {
  DetRng rng(555);
  for (int trial = 0; trial < 40; ++trial) {
    const int64_t B = 1 + static_cast<int64_t>(rng.below(3));
    ModelSpec model;
    LayerSpec spec;
    Tensor x;
    switch (rng.below(7)) {
      case 0: {
        const int64_t in = 1 + static_cast<int64_t>(rng.below(8));
        const int64_t out = 1 + static_cast<int64_t>(rng.below(8));
        spec = LayerSpec::dense(in, out);
        model = {{in}, {spec}};
        x = random_tensor({B, in}, rng);
        break;
      }
      case 1: {
        const int64_t ci = 1 + static_cast<int64_t>(rng.below(3));
        const int64_t co = 1 + static_cast<int64_t>(rng.below(3));
        const int stride = rng.below(2) ? 2 : 1;
        const int64_t h = 3 + static_cast<int64_t>(rng.below(6));
        spec = LayerSpec::conv2d(ci, co, stride);
        model = {{ci, h, h}, {spec}};
        x = random_tensor({B, ci, h, h}, rng);
        break;
      }
      case 2: {
        const int64_t d = 1 + static_cast<int64_t>(rng.below(12));
        spec = LayerSpec::relu();
        model = {{d}, {spec}};
        x = random_tensor({B, d}, rng);
        break;
      }
      case 3: {
        const int64_t c = 1 + static_cast<int64_t>(rng.below(3));
        const int64_t h = 2 + static_cast<int64_t>(rng.below(7));
        spec = LayerSpec::maxpool2d();
        model = {{c, h, h}, {spec}};
        x = random_tensor({B, c, h, h}, rng);
        break;
      }
      case 4: {
        const int64_t c = 1 + static_cast<int64_t>(rng.below(4));
        const int64_t h = 1 + static_cast<int64_t>(rng.below(6));
        spec = LayerSpec::global_avg_pool();
        model = {{c, h, h}, {spec}};
        x = random_tensor({B, c, h, h}, rng);
        break;
      }
      case 5: {
        const int64_t ci = 1 + static_cast<int64_t>(rng.below(3));
        const int64_t co = 1 + static_cast<int64_t>(rng.below(3));
        const bool down = rng.below(2) != 0;
        const int64_t h = 4 + static_cast<int64_t>(rng.below(5));
        spec = LayerSpec::residual_block(ci, co, down);
        model = {{ci, h, h}, {spec}};
        x = random_tensor({B, ci, h, h}, rng);
        break;
      }
      default: {
        const int64_t c = 1 + static_cast<int64_t>(rng.below(3));
        const int64_t h = 1 + static_cast<int64_t>(rng.below(5));
        spec = LayerSpec::flatten();
        model = {{c, h, h}, {spec}};
        x = random_tensor({B, c, h, h}, rng);
        break;
      }
    }
    ParameterStore p = init_params(model, 17);
    auto [y, cache] = forward(spec, p, 0, x, true);
    Tensor g(y.shape());
    g.fill(1.0f);
    Tensor gx = backward(spec, p, 0, cache, g);
    CHECK(gx.shape() == x.shape());
  }
}

TEST_CASE("full nn pipeline is bit-reproducible") {
  auto run = [] {
    ModelSpec model{{6},
                    {LayerSpec::dense(6, 8), LayerSpec::relu(), LayerSpec::dense(8, 3)}};
    ParameterStore p = init_params(model, 2718);
    SgdOptimizer opt({0.05f, 0.9f});
    DetRng rng(161);
    std::vector<float> out;
    for (int step = 0; step < 5; ++step) {
      Tensor x = random_tensor({4, 6}, rng);
      auto labels = random_labels(4, 3, rng);
      std::vector<LayerCache> caches;
      Tensor logits = seq_forward(model, p, x, true, &caches);
      LossResult lr = softmax_cross_entropy(logits, labels);
      seq_backward(model, p, caches, lr.grad_logits);
      opt.step(p);
    }
    for (const auto& e : p) {
      out.insert(out.end(), e.value.data(), e.value.data() + e.value.numel());
    }
    return out;
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}
