#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"
#include "tgq/denoiser.hpp"
#include "tgq/diffusion.hpp"
#include "tgq/quantizer.hpp"

namespace ag = tgq::ag;
using namespace tgq;

namespace {

// Straight-line forward pass, independent of the graph code.
Tensor oracle_forward(const DenoiserParams& p, const Tensor& x, const std::vector<int>& ts) {
  const auto& a = p.arch;
  const std::size_t half = a.embed_dim / 2;
  Tensor out({x.rows(), a.data_dim});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::vector<double> h;
    for (std::size_t c = 0; c < a.data_dim; ++c) h.push_back(x.at(r, c));
    const double t = ts[ts.size() == 1 ? 0 : r];
    for (std::size_t i = 0; i < half; ++i) h.push_back(std::sin(t * std::pow(10000.0, -double(i) / half)));
    for (std::size_t i = 0; i < half; ++i) h.push_back(std::cos(t * std::pow(10000.0, -double(i) / half)));
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      const auto& W = p.layers[l].weight;
      std::vector<double> nh(W.cols());
      for (std::size_t j = 0; j < W.cols(); ++j) {
        double acc = p.layers[l].bias[j];
        for (std::size_t i = 0; i < W.rows(); ++i) acc += h[i] * W.at(i, j);
        nh[j] = l + 1 < p.layers.size() ? acc / (1.0 + std::exp(-acc)) : acc;
      }
      h = nh;
    }
    for (std::size_t c = 0; c < a.data_dim; ++c) out.at(r, c) = h[c];
  }
  return out;
}

class FixedQuantizer final : public ActivationQuantizer {
 public:
  explicit FixedQuantizer(QuantParams q) : q_(q) {}
  ag::Var apply(const ag::Var& x, std::size_t, std::span<const int>) const override {
    return ag::constant(quantize(x->value, q_));
  }

 private:
  QuantParams q_;
};

}  // namespace

TEST(Denoiser, TimeEmbeddingValues) {
  const int ts[2] = {0, 5};
  Tensor e = time_embedding(ts, 4);
  EXPECT_EQ(e.at(0, 0), 0.0);
  EXPECT_EQ(e.at(0, 2), 1.0);
  EXPECT_NEAR(e.at(1, 0), std::sin(5.0), 1e-15);
  EXPECT_NEAR(e.at(1, 1), std::sin(5.0 / 100.0), 1e-15);
  EXPECT_NEAR(e.at(1, 3), std::cos(5.0 / 100.0), 1e-15);
  EXPECT_THROW(time_embedding(ts, 3), std::invalid_argument);
}

TEST(Denoiser, ForwardMatchesOracle) {
  Rng rng(20);
  for (std::size_t depth : {1u, 3u}) {
    auto p = DenoiserParams::init(support::tiny_arch(7, depth, 6), rng);
    Tensor x = support::uniform_tensor({5, 2}, rng, -2, 2);
    std::vector<int> ts = {1, 17, 50, 99, 100};
    Tensor got = denoise(p, x, ts);
    Tensor want = oracle_forward(p, x, ts);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
    const std::vector<int> shared = {42};
    Tensor g2 = denoise(p, x, shared);
    Tensor w2 = oracle_forward(p, x, shared);
    for (std::size_t i = 0; i < g2.size(); ++i) EXPECT_NEAR(g2[i], w2[i], 1e-12);
  }
}

TEST(Denoiser, InitBounds) {
  Rng rng(21);
  auto p = DenoiserParams::init(DenoiserArch{}, rng);
  ASSERT_EQ(p.layers.size(), 4u);
  EXPECT_EQ(p.layers[0].weight.shape(), (Tensor::Shape{34, 128}));
  EXPECT_EQ(p.layers[3].weight.shape(), (Tensor::Shape{128, 2}));
  for (const auto& l : p.layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.weight.rows()));
    for (double w : l.weight.raw()) ASSERT_LE(std::abs(w), bound);
    for (double b : l.bias.raw()) ASSERT_LE(std::abs(b), bound);
  }
}

TEST(Denoiser, ParameterGradientsMatchFiniteDifferences) {
  Rng rng(22);
  auto p = DenoiserParams::init(support::tiny_arch(5, 2, 4), rng);
  Tensor x = support::uniform_tensor({3, 2}, rng, -1, 1);
  const std::vector<int> ts = {3, 40, 90};
  auto vars = as_vars(p, true);
  auto loss = ag::sum(ag::square(denoise(vars, p.arch, x, ts)));
  auto grads = ag::backward(loss);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto f = [&](const Tensor& w) {
      DenoiserParams q = p;
      q.layers[l].weight = w;
      Tensor y = denoise(q, x, ts);
      double s = 0;
      for (double v : y.raw()) s += v * v;
      return s;
    };
    auto num = support::numeric_grad(f, p.layers[l].weight);
    EXPECT_LT(support::max_rel_err(grads.at(vars.weights[l].get()), num), 1e-6) << "layer " << l;
  }
}

TEST(Denoiser, QuantContextUsesQuantizedWeightsAndActivations) {
  Rng rng(23);
  auto p = DenoiserParams::init(support::tiny_arch(6, 2, 4), rng);
  Tensor x = support::uniform_tensor({4, 2}, rng, -1, 1);
  const std::vector<int> ts = {10};
  std::vector<QuantParams> wq;
  for (const auto& l : p.layers) wq.push_back(calibrate_scale(l.weight.raw(), 8, 2.4));
  const QuantParams aq = QuantParams::with_bits(8, 0.02);
  FixedQuantizer act(aq);
  QuantContext ctx{wq, &act};
  Tensor got = denoise(p, x, ts, &ctx);

  // Oracle: quantize weights up front, quantize hidden inputs by hand.
  DenoiserParams qp = p;
  for (std::size_t l = 0; l < p.layers.size(); ++l) qp.layers[l].weight = quantize(p.layers[l].weight, wq[l]);
  auto v = as_vars(qp, false);
  const int t1[1] = {10};
  Tensor emb = time_embedding(t1, 4);
  Tensor h({4, 6});
  for (std::size_t r = 0; r < 4; ++r) {
    h.at(r, 0) = x.at(r, 0);
    h.at(r, 1) = x.at(r, 1);
    for (std::size_t c = 0; c < 4; ++c) h.at(r, 2 + c) = emb.at(0, c);
  }
  ag::Var hv = ag::constant(h);
  for (std::size_t l = 0; l < qp.layers.size(); ++l) {
    if (l > 0) hv = ag::constant(quantize(hv->value, aq));
    hv = ag::add_bias(ag::matmul(hv, v.weights[l]), v.biases[l]);
    if (l + 1 < qp.layers.size()) hv = ag::silu(hv);
  }
  EXPECT_EQ(got, hv->value);

  QuantContext missing{wq, nullptr};
  EXPECT_THROW(denoise(p, x, ts, &missing), std::invalid_argument);
  QuantContext short_w{{wq[0]}, &act};
  EXPECT_THROW(denoise(p, x, ts, &short_w), std::invalid_argument);
}

TEST(Denoiser, HiddenInputsShapes) {
  Rng rng(24);
  auto p = DenoiserParams::init(support::tiny_arch(6, 3, 4), rng);
  Tensor x = support::uniform_tensor({4, 2}, rng, -1, 1);
  const std::vector<int> ts = {1, 2, 3, 4};
  auto h = hidden_inputs(p, x, ts);
  ASSERT_EQ(h.size(), 3u);
  for (const auto& a : h) EXPECT_EQ(a.shape(), (Tensor::Shape{4, 6}));
  EXPECT_THROW(denoise(p, Tensor({4, 3}), ts), std::invalid_argument);
}

TEST(Schedule, Basics) {
  auto s = NoiseSchedule::rescaled_linear(100);
  EXPECT_EQ(s.alpha_bar(0), 1.0);
  EXPECT_NEAR(s.beta(1), 1e-3, 1e-15);
  EXPECT_NEAR(s.beta(100), 0.2, 1e-15);
  for (int t = 1; t <= 100; ++t) ASSERT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
  EXPECT_NEAR(s.alpha_bar(2), (1 - s.beta(1)) * (1 - s.beta(2)), 1e-15);
  EXPECT_THROW(s.beta(0), std::out_of_range);
  EXPECT_THROW(s.alpha_bar(101), std::out_of_range);
  EXPECT_THROW(NoiseSchedule(1, 0.1, 0.2), std::invalid_argument);
  EXPECT_THROW(NoiseSchedule(10, 0.3, 0.2), std::invalid_argument);
}

TEST(Diffusion, DdimStepWithTrueNoiseWalksTheForwardMarginal) {
  auto s = NoiseSchedule::rescaled_linear(100);
  Rng rng(25);
  Tensor x0 = support::uniform_tensor({6, 2}, rng, -1, 1);
  Tensor eps = rng.normal_tensor({6, 2});
  for (int t : {1, 30, 100}) {
    Tensor xt = forward_noise(x0, t, eps, s);
    Tensor prev = ddim_step(xt, eps, t, s);
    for (std::size_t i = 0; i < x0.size(); ++i) {
      const double want = std::sqrt(s.alpha_bar(t - 1)) * x0[i] + std::sqrt(1 - s.alpha_bar(t - 1)) * eps[i];
      ASSERT_NEAR(prev[i], want, 1e-10);
    }
  }
}

TEST(Diffusion, SamplerDeterminismAndEarlyStop) {
  NoiseSchedule s(20, 1e-3, 0.2);
  Rng init(26);
  auto p = DenoiserParams::init(support::tiny_arch(8, 2, 4), init);
  Rng r1(1), r2(1);
  auto a = ddim_sample(predictor(p), s, 16, 2, r1, {20, 10});
  auto b = ddim_sample(predictor(p), s, 16, 2, r2, {20, 10});
  EXPECT_EQ(a.samples, b.samples);
  ASSERT_EQ(a.recorded.size(), 2u);
  // Latent recorded at T is the raw Gaussian draw.
  Rng r3(1);
  EXPECT_EQ(a.recorded.at(20), r3.normal_tensor({16, 2}));
  Rng r4(1);
  auto stop = ddim_sample(predictor(p), s, 16, 2, r4, {10}, 10);
  EXPECT_EQ(stop.samples, a.recorded.at(10));
  Rng r5(1);
  EXPECT_THROW(ddim_sample(predictor(p), s, 0, 2, r5), std::invalid_argument);
}

TEST(Diffusion, ToyDatasets) {
  Rng rng(27);
  auto ring = make_toy_dataset("gaussian-ring", 4000, rng);
  ASSERT_EQ(ring.points.shape(), (Tensor::Shape{4000, 2}));
  double mean_r = 0;
  for (std::size_t i = 0; i < 4000; ++i) mean_r += std::hypot(ring.points.at(i, 0), ring.points.at(i, 1));
  EXPECT_NEAR(mean_r / 4000, 1.0, 0.02);
  auto roll = make_toy_dataset("swiss-roll", 4000, rng);
  double ms = 0;
  for (double v : roll.points.raw()) ms += v * v;
  EXPECT_NEAR(ms / 4000, 1.0, 1e-9);
  EXPECT_THROW(make_toy_dataset("moons", 10, rng), std::invalid_argument);
  EXPECT_THROW(make_toy_dataset("gaussian-ring", 0, rng), std::invalid_argument);
}

TEST(Diffusion, ShortPretrainIsDeterministicAndLossDecreases) {
  Rng drng(28);
  auto data = make_toy_dataset("gaussian-ring", 1024, drng);
  auto sched = NoiseSchedule::rescaled_linear(100);
  PretrainConfig cfg;
  cfg.arch = support::tiny_arch(32, 2, 8);
  cfg.epochs = 6;
  cfg.batch_size = 128;
  cfg.lr = 3e-3;
  Rng r1(5), r2(5);
  auto a = pretrain(cfg, data, sched, r1);
  auto b = pretrain(cfg, data, sched, r2);
  EXPECT_TRUE(a.params == b.params);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  ASSERT_EQ(a.epoch_loss.size(), 6u);
  for (std::size_t e = 1; e < a.epoch_loss.size(); ++e) EXPECT_LT(a.epoch_loss[e], a.epoch_loss[e - 1]) << e;
  ToyDataset empty{"x", Tensor({1, 3})};
  EXPECT_THROW(pretrain(cfg, empty, sched, r1), std::invalid_argument);
}
