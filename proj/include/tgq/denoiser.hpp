#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tgq/autograd.hpp"
#include "tgq/quantizer.hpp"
#include "tgq/rng.hpp"
#include "tgq/tensor.hpp"

namespace tgq {

/// Time-conditioned MLP: concat(x_t, embed(t)) -> depth hidden layers of
/// width `hidden` with x*sigmoid(x) -> data_dim outputs.
struct DenoiserArch {
  std::size_t data_dim = 2;
  std::size_t embed_dim = 32;
  std::size_t hidden = 128;
  std::size_t depth = 3;

  std::size_t num_linear() const noexcept { return depth + 1; }
  friend bool operator==(const DenoiserArch&, const DenoiserArch&) = default;
};

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
};

struct DenoiserParams {
  DenoiserArch arch;
  std::vector<Linear> layers;

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  static DenoiserParams init(const DenoiserArch& arch, Rng& rng);
  static DenoiserParams zeros(const DenoiserArch& arch);

  bool all_finite() const;
  friend bool operator==(const DenoiserParams&, const DenoiserParams&);
};

/// Quantizes the input of linear layer `layer` (1..depth). Each row of x
/// belongs to the timestep at the same row of `timesteps`.
class ActivationQuantizer {
 public:
  virtual ~ActivationQuantizer() = default;
  virtual ag::Var apply(const ag::Var& x, std::size_t layer, std::span<const int> timesteps) const = 0;
};

/// Fake-quant hooks for a forward pass. Weights pass through their static
/// quantizer; the first layer's input is never quantized.
struct QuantContext {
  std::vector<QuantParams> weights;  // one per linear layer
  const ActivationQuantizer* activations = nullptr;
};

/// Sinusoidal embedding [sin(t f_i), cos(t f_i)], f_i = 10000^(-i / (E/2)).
Tensor time_embedding(std::span<const int> timesteps, std::size_t embed_dim);

/// Parameters as graph leaves, in layer order (weight, bias).
struct ParamVars {
  std::vector<ag::Var> weights;
  std::vector<ag::Var> biases;
};
ParamVars as_vars(const DenoiserParams& params, bool requires_grad);

/// Predicted noise for x_t [B x D]. `timesteps` has B entries or a single
/// entry shared by all rows. Throws when ctx is present but lacks a weight
/// quantizer for some layer or an activation quantizer.
ag::Var denoise(const ParamVars& params, const DenoiserArch& arch, const Tensor& x_t, std::span<const int> timesteps,
                const QuantContext* ctx = nullptr);
Tensor denoise(const DenoiserParams& params, const Tensor& x_t, std::span<const int> timesteps,
               const QuantContext* ctx = nullptr);

/// Runs the full-precision network and returns the input of every linear
/// layer 1..depth (index 0 is the first hidden input).
std::vector<Tensor> hidden_inputs(const DenoiserParams& params, const Tensor& x_t, std::span<const int> timesteps);

}  // namespace tgq
