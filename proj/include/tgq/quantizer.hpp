#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "tgq/autograd.hpp"
#include "tgq/tensor.hpp"

namespace tgq {

struct DenoiserParams;

/// Bit-width sentinel meaning "do not quantize" (infinite precision).
constexpr int kFullPrecisionBits = 0;

/// One uniform rounding function: x -> s * clip(round(x / s), z_min, z_max)
/// with signed integer bounds fixed by the bit-width.
struct QuantParams {
  double scale = 1.0;
  int z_min = 0;
  int z_max = 0;
  int bits = kFullPrecisionBits;

  /// Signed grid [-2^(b-1), 2^(b-1) - 1]. Throws on b < 2 or scale <= 0.
  static QuantParams with_bits(int bits, double scale);
  static QuantParams full_precision() { return QuantParams{}; }

  bool is_identity() const noexcept { return bits == kFullPrecisionBits; }
  /// Throws std::invalid_argument when the invariants do not hold.
  void validate() const;

  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

/// Quantizers of one linear layer: G activation groups for its input and a
/// single timestep-independent weight quantizer.
struct LayerQuantTable {
  std::size_t layer = 0;
  std::vector<QuantParams> groups;
  QuantParams weight;
};

/// Round half away from zero, clip to the integer range, rescale.
double quantize_value(double x, const QuantParams& q);
Tensor quantize(const Tensor& x, const QuantParams& q);

/// LSQ gradient normalizer 1 / sqrt(n * z_max).
double lsq_grad_scale(std::size_t n_elements, int z_max);

/// Partial derivative of the quantizer output wrt the scale, before the
/// LSQ normalizer: round(v) - v inside the clip range, the violated bound
/// outside, with v = x / s.
double lsq_scale_derivative(double x, const QuantParams& q);

/// Differentiable fake quantization. `scale` is a single-element leaf whose
/// value overrides q.scale. Gradients: straight-through for x inside the
/// clip range, zero outside; LSQ rule for the scale.
ag::Var quantize_node(const ag::Var& x, const ag::Var& scale, const QuantParams& q);

/// Sum over samples of |x - quantize(x)|^p.
double lp_error(std::span<const double> samples, const QuantParams& q, double p);

constexpr int kScaleGridSize = 200;

/// Grid search over s_k = (k / 200) * max|x| / z_max, k = 1..200, for the
/// scale with the least l_p error; ties resolve to the smaller scale.
/// Throws when samples are empty or all zero.
QuantParams calibrate_scale(std::span<const double> samples, int bits, double p);

/// Replaces each linear layer's weight by its fake-quantized value, one
/// calibrated scale per layer. Biases stay full precision.
std::pair<DenoiserParams, std::vector<QuantParams>> quantize_weights(const DenoiserParams& params, int bits, double p);

}  // namespace tgq
