#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tgq/calibration.hpp"
#include "tgq/denoiser.hpp"
#include "tgq/diffusion.hpp"
#include "tgq/groupsearch.hpp"
#include "tgq/rng.hpp"

namespace tgq {

/// Mean over rows of ||a_i - quantize(a_i; g(t_i))||^2 / width for one site.
double site_quant_error(const Tensor& acts, std::span<const int> timesteps, const LayerQuantTable& table,
                        const GroupAssignment& assignment);

/// Mean over samples and quantized activation sites of the per-element
/// squared quantization error of the full-precision activations. Throws on
/// an empty sample set.
double quant_error(const DenoiserParams& model, const std::vector<LayerQuantTable>& tables,
                   const GroupAssignment& assignment, const Tensor& x_t, std::span<const int> timesteps);

/// Median pairwise Euclidean distance over the rows of X and Y together.
double median_bandwidth(const Tensor& x, const Tensor& y);

/// Unbiased squared MMD with k(a, b) = exp(-|a - b|^2 / (2 bw^2)). A
/// missing bandwidth selects the median heuristic. Needs n, m >= 2.
double mmd2_unbiased(const Tensor& x, const Tensor& y, std::optional<double> bandwidth = std::nullopt);

/// Hard-assignment quantized model ready for sampling.
struct QuantBundle {
  QuantModel student;
  std::vector<LayerQuantTable> tables;
  GroupAssignment assignment;
  CalibSet calib;
  std::vector<double> mean_entropy;
};

struct MetricsReport {
  static constexpr int kSchemaVersion = 1;
  double c_error = 0.0;
  double g_error = 0.0;
  double mmd2 = 0.0;
  double bandwidth = 0.0;
  std::size_t n_samples = 0;
  std::vector<double> entropy_trace;
};

/// Timesteps whose latents feed the generation error.
std::vector<int> generation_record_steps(int steps, int stride = 10);

/// Samples n points with the quantized DDIM sampler (the full-precision one
/// when bundle is null), measures mmd2 against the dataset, C-Error on the
/// stored calibration set and G-Error on the sampler's own latents.
MetricsReport evaluate(const DenoiserParams& teacher, const QuantBundle* bundle, const ToyDataset& reference,
                       const NoiseSchedule& sched, std::size_t n_samples, Rng& rng);

/// Quantized (or full-precision) DDIM samples.
SampleResult sample_model(const DenoiserParams& teacher, const QuantBundle* bundle, const NoiseSchedule& sched,
                          std::size_t n, Rng& rng, const std::vector<int>& record = {});

}  // namespace tgq
