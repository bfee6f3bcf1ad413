#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "support.hpp"
#include "tgq/denoiser.hpp"
#include "tgq/quantizer.hpp"

namespace ag = tgq::ag;
using namespace tgq;

namespace {

// Exhaustive oracle over the same 200-point grid, written independently.
double oracle_best_scale(const std::vector<double>& xs, int bits, double p) {
  const double zmax = std::pow(2.0, bits - 1) - 1.0, zmin = -std::pow(2.0, bits - 1);
  double m = 0.0;
  for (double x : xs) m = std::max(m, std::fabs(x));
  double best_s = 0.0, best_e = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= 200; ++k) {
    const double s = (k / 200.0) * m / zmax;
    double e = 0.0;
    for (double x : xs) {
      double z = std::round(x / s);
      z = std::min(std::max(z, zmin), zmax);
      e += std::pow(std::fabs(x - s * z), p);
    }
    if (e < best_e) {
      best_e = e;
      best_s = s;
    }
  }
  return best_s;
}

}  // namespace

TEST(Quantizer, ParamsInvariants) {
  const auto q = QuantParams::with_bits(3, 1.0);
  EXPECT_EQ(q.z_min, -4);
  EXPECT_EQ(q.z_max, 3);
  const auto q8 = QuantParams::with_bits(8, 0.1);
  EXPECT_EQ(q8.z_max - q8.z_min, 255);
  EXPECT_THROW(QuantParams::with_bits(1, 1.0), std::invalid_argument);
  EXPECT_THROW(QuantParams::with_bits(8, 0.0), std::invalid_argument);
  EXPECT_THROW(QuantParams::with_bits(8, -1.0), std::invalid_argument);
  QuantParams bad = q8;
  bad.z_max = 100;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  EXPECT_TRUE(QuantParams::full_precision().is_identity());
}

TEST(Quantizer, Examples) {
  const auto q3 = QuantParams::with_bits(3, 1.0);
  EXPECT_EQ(quantize_value(0.0, q3), 0.0);
  EXPECT_EQ(quantize_value(0.0, QuantParams::with_bits(8, 0.37)), 0.0);
  EXPECT_EQ(quantize_value(2.4, q3), 2.0);
  EXPECT_EQ(quantize_value(7.2, q3), 3.0);
  EXPECT_EQ(quantize_value(-9.0, q3), -4.0);
  // Half away from zero.
  EXPECT_EQ(quantize_value(0.5, q3), 1.0);
  EXPECT_EQ(quantize_value(-0.5, q3), -1.0);
  EXPECT_EQ(quantize_value(-2.5, q3), -3.0);
  EXPECT_EQ(quantize_value(1.234, QuantParams::full_precision()), 1.234);
}

TEST(Quantizer, TensorMatchesScalar) {
  Rng rng(5);
  const auto q = QuantParams::with_bits(6, 0.07);
  Tensor x = support::uniform_tensor({7, 9}, rng, -4, 4);
  Tensor y = quantize(x, q);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], quantize_value(x[i], q));
  EXPECT_EQ(quantize(x, QuantParams::full_precision()), x);
}

TEST(QuantizerNode, InsideRangeGradIsAllOnes) {
  const auto q = QuantParams::with_bits(8, 0.1);
  auto x = ag::leaf(Tensor::vector({0.33, -1.27, 2.0, 5.5}), true);
  auto s = ag::leaf(Tensor::scalar(q.scale), true);
  auto g = ag::backward(ag::sum(quantize_node(x, s, q)));
  EXPECT_EQ(g.at(x.get()), Tensor::vector({1, 1, 1, 1}));
}

TEST(QuantizerNode, OutsideRangeGradIsZeroAndScaleGetsBound) {
  const auto q = QuantParams::with_bits(3, 1.0);
  auto x = ag::leaf(Tensor::scalar(100.0), true);
  auto s = ag::leaf(Tensor::scalar(1.0), true);
  auto g = ag::backward(ag::sum(quantize_node(x, s, q)));
  EXPECT_EQ(g.at(x.get()).item(), 0.0);
  EXPECT_DOUBLE_EQ(g.at(s.get()).item(), 3.0 * lsq_grad_scale(1, 3));
  EXPECT_DOUBLE_EQ(lsq_scale_derivative(100.0, q), 3.0);
  EXPECT_DOUBLE_EQ(lsq_scale_derivative(-100.0, q), -4.0);
}

TEST(QuantizerNode, ScaleGradMatchesPiecewiseOracleOnMixedBatch) {
  Rng rng(6);
  const auto q = QuantParams::with_bits(4, 0.3);
  Tensor x0 = support::uniform_tensor({5, 8}, rng, -4, 4);  // covers both clip sides
  Tensor w = support::uniform_tensor({5, 8}, rng, -1, 1);   // upstream gradient
  auto x = ag::leaf(x0, true);
  auto s = ag::leaf(Tensor::scalar(q.scale), true);
  auto g = ag::backward(ag::sum(ag::mul(quantize_node(x, s, q), ag::constant(w))));

  double ds = 0.0;
  int clipped = 0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double v = x0[i] / q.scale;
    double d;
    double dx;
    if (v < q.z_min) {
      d = q.z_min, dx = 0.0, ++clipped;
    } else if (v > q.z_max) {
      d = q.z_max, dx = 0.0, ++clipped;
    } else {
      d = std::round(v) - v, dx = 1.0;
    }
    ds += w[i] * d;
    EXPECT_EQ(g.at(x.get())[i], w[i] * dx);
  }
  ASSERT_GT(clipped, 0);
  ds /= std::sqrt(static_cast<double>(x0.size()) * q.z_max);
  EXPECT_NEAR(g.at(s.get()).item(), ds, 1e-14);
}

TEST(QuantizerNode, IdentityAndErrors) {
  auto x = ag::leaf(Tensor::vector({1.5, -2.25}), true);
  auto s = ag::leaf(Tensor::scalar(1.0), true);
  auto y = quantize_node(x, s, QuantParams::full_precision());
  EXPECT_EQ(y->value, x->value);
  auto bad = ag::leaf(Tensor::scalar(-0.1), true);
  EXPECT_THROW(quantize_node(x, bad, QuantParams::with_bits(8, 1.0)), std::invalid_argument);
  auto zero = ag::leaf(Tensor::scalar(0.0), true);
  EXPECT_THROW(quantize_node(x, zero, QuantParams::with_bits(8, 1.0)), std::invalid_argument);
}

TEST(Calibrate, MatchesGridOracle) {
  const std::vector<double> pm1 = {-1.0, 1.0};
  EXPECT_EQ(calibrate_scale(pm1, 8, 2.0).scale, oracle_best_scale(pm1, 8, 2.0));
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> xs(300);
    for (auto& v : xs) v = rng.normal() * (trial % 3 == 0 ? 3.0 : 1.0);
    for (int bits : {4, 6, 8}) {
      const auto q = calibrate_scale(xs, bits, 2.4);
      EXPECT_EQ(q.scale, oracle_best_scale(xs, bits, 2.4)) << "trial " << trial << " bits " << bits;
      EXPECT_EQ(q.bits, bits);
    }
  }
}

TEST(Calibrate, ScaleEquivariance) {
  Rng rng(9);
  std::vector<double> xs(200);
  for (auto& v : xs) v = rng.normal();
  const double base = calibrate_scale(xs, 8, 2.4).scale;
  for (double c : {0.5, 4.0}) {  // powers of two keep every x / s bit-exact
    std::vector<double> ys = xs;
    for (auto& v : ys) v *= c;
    EXPECT_EQ(calibrate_scale(ys, 8, 2.4).scale, base * c);
  }
  std::vector<double> zs = xs;
  for (auto& v : zs) v *= 3.7;
  EXPECT_NEAR(calibrate_scale(zs, 8, 2.4).scale, base * 3.7, 1e-12 * base * 3.7);
}

TEST(Calibrate, Errors) {
  EXPECT_THROW(calibrate_scale(std::vector<double>{}, 8, 2.4), std::invalid_argument);
  EXPECT_THROW(calibrate_scale(std::vector<double>{0.0, 0.0}, 8, 2.4), std::invalid_argument);
  EXPECT_TRUE(calibrate_scale(std::vector<double>{1.0}, kFullPrecisionBits, 2.4).is_identity());
}

TEST(QuantizeWeights, FullPrecisionLeavesParamsUnchanged) {
  Rng rng(10);
  auto p = DenoiserParams::init(support::tiny_arch(), rng);
  auto [q, qp] = quantize_weights(p, kFullPrecisionBits, 2.4);
  EXPECT_TRUE(q == p);
  for (const auto& w : qp) EXPECT_TRUE(w.is_identity());
}

TEST(QuantizeWeights, PerLayerErrorEqualsOracleMinimum) {
  Rng rng(11);
  auto p = DenoiserParams::init(support::tiny_arch(8, 2), rng);
  auto [q, qp] = quantize_weights(p, 8, 2.4);
  ASSERT_EQ(qp.size(), p.layers.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& w = p.layers[l].weight.raw();
    EXPECT_EQ(qp[l].scale, oracle_best_scale(w, 8, 2.4));
    EXPECT_EQ(q.layers[l].weight, quantize(p.layers[l].weight, qp[l]));
    EXPECT_EQ(q.layers[l].bias, p.layers[l].bias);
  }
}

TEST(QuantizeWeights, GridAlignedWeightsUnchanged) {
  Rng rng(12);
  auto p = DenoiserParams::init(support::tiny_arch(8, 2), rng);
  const double step = 1.0 / 128;  // dyadic, so s * k reproduces w exactly
  for (auto& layer : p.layers) {
    for (auto& w : layer.weight.raw()) w = step * static_cast<double>(rng.uniform_int(-127, 127));
    layer.weight[0] = 127 * step;  // max|w| / z_max == step: the k = 200 candidate
  }
  auto [q, qp] = quantize_weights(p, 8, 2.4);
  for (std::size_t l = 0; l < p.layers.size(); ++l) EXPECT_EQ(q.layers[l].weight, p.layers[l].weight);
}

// Property suite: 10^4 random cases per property and bit width.
class QuantizerProperties : public ::testing::TestWithParam<int> {};

TEST_P(QuantizerProperties, AlgebraHolds) {
  const int bits = GetParam();
  Rng rng(100 + bits);
  constexpr int kCases = 10000;
  for (int i = 0; i < kCases; ++i) {
    const double s = std::exp(rng.uniform() * 8.0 - 6.0);
    const auto q = QuantParams::with_bits(bits, s);
    const double span = s * q.z_max * 1.5;
    const double x = (rng.uniform() * 2.0 - 1.0) * span;
    const double y = (rng.uniform() * 2.0 - 1.0) * span;
    const double qx = quantize_value(x, q);

    ASSERT_EQ(quantize_value(qx, q), qx) << "idempotence x=" << x << " s=" << s;

    const double lo = std::min(x, y), hi = std::max(x, y);
    ASSERT_LE(quantize_value(lo, q), quantize_value(hi, q)) << "monotonicity";

    const double z = qx / s;
    ASSERT_NEAR(z, std::round(z), 1e-9 * std::max(1.0, std::fabs(z))) << "grid membership";
    ASSERT_GE(std::round(z), q.z_min);
    ASSERT_LE(std::round(z), q.z_max);

    if (x / s >= q.z_min && x / s <= q.z_max) {
      ASSERT_LE(std::fabs(x - qx), s / 2.0 * (1.0 + 1e-12)) << "half-step bound";
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Bits, QuantizerProperties, ::testing::Values(8, 6));

TEST(Quantizer, EightBitErrorBelowSixBit) {
  Rng rng(13);
  std::vector<double> xs(100000);
  for (auto& v : xs) v = rng.normal();
  const auto q8 = calibrate_scale(xs, 8, 2.0);
  const auto q6 = calibrate_scale(xs, 6, 2.0);
  EXPECT_LT(lp_error(xs, q8, 2.0), lp_error(xs, q6, 2.0));
}
