#include "tgq/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "tgq/denoiser.hpp"
#include "tgq/kernels.hpp"

namespace tgq {

QuantParams QuantParams::with_bits(int bits, double scale) {
  if (bits == kFullPrecisionBits) return full_precision();
  if (bits < 2 || bits > 30) throw std::invalid_argument("bit-width must be in [2, 30], got " + std::to_string(bits));
  QuantParams q;
  q.bits = bits;
  q.scale = scale;
  q.z_min = -(1 << (bits - 1));
  q.z_max = (1 << (bits - 1)) - 1;
  q.validate();
  return q;
}

void QuantParams::validate() const {
  if (is_identity()) return;
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw std::invalid_argument("quantizer scale must be positive and finite, got " + std::to_string(scale));
  }
  if (bits < 2 || z_min != -(1 << (bits - 1)) || z_max != (1 << (bits - 1)) - 1) {
    throw std::invalid_argument("quantizer bounds inconsistent with bit-width " + std::to_string(bits));
  }
}

double quantize_value(double x, const QuantParams& q) {
  if (q.is_identity()) return x;
  return q.scale * std::clamp(std::round(x / q.scale), static_cast<double>(q.z_min), static_cast<double>(q.z_max));
}

Tensor quantize(const Tensor& x, const QuantParams& q) {
  if (q.is_identity()) return x;
  Tensor out(x.shape());
  kernels::fake_quantize(x.data(), out.data(), q.scale, q.z_min, q.z_max);
  return out;
}

double lsq_grad_scale(std::size_t n_elements, int z_max) {
  return 1.0 / std::sqrt(static_cast<double>(n_elements) * static_cast<double>(z_max));
}

double lsq_scale_derivative(double x, const QuantParams& q) {
  const double v = x / q.scale;
  if (v < q.z_min) return q.z_min;
  if (v > q.z_max) return q.z_max;
  return std::round(v) - v;
}

ag::Var quantize_node(const ag::Var& x, const ag::Var& scale, const QuantParams& q) {
  if (q.is_identity()) return x;
  if (!scale->value.is_scalar()) throw std::invalid_argument("quantize_node: scale must be a single element");
  QuantParams cur = q;
  cur.scale = scale->value[0];
  if (!(cur.scale > 0.0)) {
    throw std::invalid_argument("quantize_node: non-positive scale " + std::to_string(cur.scale));
  }
  Tensor out = quantize(x->value, cur);
  return ag::custom(
      std::move(out), {x, scale},
      [x, cur](const Tensor& g, const std::vector<bool>& need) {
        const Tensor& xv = x->value;
        Tensor gx, gs;
        if (need[0]) {
          gx = Tensor(xv.shape());
          for (std::size_t i = 0; i < xv.size(); ++i) {
            const double v = xv[i] / cur.scale;
            gx[i] = (v >= cur.z_min && v <= cur.z_max) ? g[i] : 0.0;
          }
        }
        if (need[1]) {
          double acc = 0.0;
          for (std::size_t i = 0; i < xv.size(); ++i) acc += g[i] * lsq_scale_derivative(xv[i], cur);
          gs = Tensor::scalar(acc * lsq_grad_scale(xv.size(), cur.z_max));
        }
        return std::vector<Tensor>{std::move(gx), std::move(gs)};
      },
      "quantize");
}

double lp_error(std::span<const double> samples, const QuantParams& q, double p) {
  double err = 0.0;
  for (double x : samples) err += std::pow(std::abs(x - quantize_value(x, q)), p);
  return err;
}

QuantParams calibrate_scale(std::span<const double> samples, int bits, double p) {
  if (bits == kFullPrecisionBits) return QuantParams::full_precision();
  if (samples.empty()) throw std::invalid_argument("calibrate_scale: no samples");
  double max_abs = 0.0;
  for (double x : samples) max_abs = std::max(max_abs, std::abs(x));
  if (max_abs == 0.0) throw std::invalid_argument("calibrate_scale: all samples are zero, range undefined");

  QuantParams best = QuantParams::with_bits(bits, 1.0);
  double best_err = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= kScaleGridSize; ++k) {
    QuantParams cand = best;
    cand.scale = (static_cast<double>(k) / kScaleGridSize) * max_abs / best.z_max;
    const double err = lp_error(samples, cand, p);
    if (err < best_err) {
      best_err = err;
      best.scale = cand.scale;
    }
  }
  return best;
}

std::pair<DenoiserParams, std::vector<QuantParams>> quantize_weights(const DenoiserParams& params, int bits, double p) {
  DenoiserParams out = params;
  std::vector<QuantParams> qs;
  qs.reserve(out.layers.size());
  for (auto& layer : out.layers) {
    QuantParams q = calibrate_scale(layer.weight.data(), bits, p);
    layer.weight = quantize(layer.weight, q);
    qs.push_back(q);
  }
  return {std::move(out), std::move(qs)};
}

}  // namespace tgq
