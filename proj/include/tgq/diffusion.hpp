#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "tgq/denoiser.hpp"
#include "tgq/rng.hpp"
#include "tgq/tensor.hpp"

namespace tgq {

/// Linear variance schedule. Timesteps are 1-based: beta(t), alpha_bar(t)
/// for t in [1, T]; alpha_bar(0) is defined as 1.
class NoiseSchedule {
 public:
  NoiseSchedule(int steps, double beta_start, double beta_end);
  /// Default toy schedule: DDPM's 1e-4..0.02 over 1000 steps rescaled to T.
  static NoiseSchedule rescaled_linear(int steps);

  int steps() const noexcept { return steps_; }
  double beta(int t) const;
  double alpha_bar(int t) const;
  const std::vector<double>& betas() const noexcept { return beta_; }

 private:
  int steps_;
  std::vector<double> beta_;
  std::vector<double> alpha_bar_;
};

/// sqrt(alpha_bar(t)) * x0 + sqrt(1 - alpha_bar(t)) * eps.
Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

struct ToyDataset {
  std::string name;
  Tensor points;  // [n x 2]
};

/// "gaussian-ring": 8 modes on the unit circle, std 0.05 each.
/// "swiss-roll": 2-D spiral normalized to unit RMS radius.
ToyDataset make_toy_dataset(const std::string& name, std::size_t n, Rng& rng);

struct PretrainConfig {
  DenoiserArch arch;
  double lr = 1e-3;
  std::size_t batch_size = 256;
  int epochs = 200;
};

struct PretrainResult {
  DenoiserParams params;
  std::vector<double> epoch_loss;
};

/// Fits eps-prediction with Adam on ||eps - eps_theta(x_t, t)||^2 over
/// uniformly drawn t. Throws on an empty dataset or a non-finite loss.
PretrainResult pretrain(const PretrainConfig& cfg, const ToyDataset& data, const NoiseSchedule& sched, Rng& rng,
                        const DenoiserParams* init = nullptr);

/// Predicted-noise callback used by the sampler: (x_t, t) -> eps.
using NoisePredictor = std::function<Tensor(const Tensor& x_t, int t)>;

struct SampleResult {
  Tensor samples;                    // x_0, [n x D]
  std::map<int, Tensor> recorded;    // t -> x_t (the denoiser input at step t)
};

/// Deterministic DDIM from x_T ~ N(0, I) down to x_0. Stops early after
/// producing x_{stop_at} when stop_at > 0 (then `samples` holds x_{stop_at}).
SampleResult ddim_sample(const NoisePredictor& eps_model, const NoiseSchedule& sched, std::size_t n, std::size_t dim,
                         Rng& rng, const std::vector<int>& record = {}, int stop_at = 0);

/// One DDIM update from x_t to x_{t-1}.
Tensor ddim_step(const Tensor& x_t, const Tensor& eps, int t, const NoiseSchedule& sched);

NoisePredictor predictor(const DenoiserParams& params, const QuantContext* ctx = nullptr);

}  // namespace tgq
