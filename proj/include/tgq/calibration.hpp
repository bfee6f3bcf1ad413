#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tgq/denoiser.hpp"
#include "tgq/diffusion.hpp"
#include "tgq/groupsearch.hpp"
#include "tgq/rng.hpp"

namespace tgq {

enum class Strategy { kActive, kRandom, kHeuristic, kUcbFull };

std::string to_string(Strategy s);
/// Accepts active | random | heuristic | ucb-full.
Strategy parse_strategy(const std::string& name);

/// Calibration latents: row i is x_{t_i}, stored flat.
struct CalibSet {
  std::size_t dim = 2;
  std::vector<double> x;
  std::vector<int> t;

  std::size_t size() const noexcept { return t.size(); }
  void append(const Tensor& rows, int timestep);
  Tensor gather(std::span<const std::size_t> idx) const;
  Tensor all() const;
};

/// Per-timestep selection counts N_t and the accumulated set S.
struct CalibState {
  Strategy strategy = Strategy::kActive;
  double eta = 1.5;
  double heuristic_mean_frac = 0.4;
  std::vector<long> counts;  // N_t at index t - 1
  CalibSet samples;
  long rounds = 0;

  CalibState(int steps, Strategy s, double eta);
  long count(int t) const { return counts.at(static_cast<std::size_t>(t - 1)); }
  long total() const;
  int steps() const noexcept { return static_cast<int>(counts.size()); }
};

/// Entropy of sigma^t.
double criterion_s1(const GroupSearchState& state, int t);
/// 1 / (N_t + 1).
double criterion_s2(const CalibState& calib, int t);
/// sqrt(ln(sum N + 1) / (N_t + 1)).
double ucb_bonus(const CalibState& calib, int t);

struct Selection {
  int t = 0;
  double s1 = 0.0;
  double s2 = 0.0;
  double score = 0.0;
};

/// Picks the next calibration timestep and increments its count.
///   active:    argmax s1 + eta * s2 (s2 alone on the first round)
///   ucb-full:  argmax s1 + eta * sqrt(ln(sum N + 1) / (N_t + 1))
///   random:    uniform on [1, T]
///   heuristic: round(Normal(mu, T / 2)) clamped to [1, T], mu = 0.4 T
/// Ties resolve to the lowest t.
Selection select_timestep(const GroupSearchState& state, CalibState& calib, Rng& rng);

/// Runs `batch` full-precision DDIM chains from fresh noise down to t and
/// returns the latents x_t [batch x D].
Tensor build_calibration_round(const DenoiserParams& teacher, const NoiseSchedule& sched, int t, std::size_t batch,
                               Rng& rng);

struct CalibConfig {
  int groups = 8;
  double lambda = 0.8;
  double eta = 1.5;
  Strategy strategy = Strategy::kActive;
  std::size_t calib_size = 1024;
  std::size_t round_batch = 64;
  std::size_t search_batch = 64;
  int epochs = 10;
  int act_bits = 8;
  double lp = 2.4;
  double lr = 5e-3;
  double lr_end = 1e-5;
  double logit_lr_mult = 30.0;
  /// Ratio between the largest and smallest initial group scale; group g
  /// starts at spread^(g / (G - 1)) times the calibrated scale, so group 0
  /// (the argmax default for untouched timesteps) keeps the calibrated one.
  double scale_spread = 2.0;
  double heuristic_mean_frac = 0.4;
  /// Record sigma for every timestep after each pass.
  bool log_sigma = true;
};

struct RoundLog {
  long round;
  Strategy strategy;
  Selection sel;
};

struct StepLog {
  std::string phase;  // "round" or "epoch"
  int index;
  long step;
  double lr;
  double loss;
  double distill;
  double entropy;
};

struct SigmaLog {
  std::string phase;
  int index;
  std::vector<double> sigma;  // [T x G], row-major
};

struct CalibLogs {
  std::vector<RoundLog> rounds;
  std::vector<std::vector<long>> count_history;  // N after each round
  std::vector<StepLog> steps;
  std::vector<SigmaLog> sigma;
  std::vector<double> mean_entropy;  // mean over t of entropy(sigma^t), per pass
};

struct CalibResult {
  GroupSearchState state;
  CalibState calib;
  GroupAssignment assignment;
  std::vector<LayerQuantTable> tables;
  CalibLogs logs;
};

/// Per-group multipliers applied to the calibrated initial scale.
std::vector<double> scale_spread_factors(int groups, double spread);

// Streams split from the caller's generator by run_calibration.
constexpr std::uint64_t kSelectStream = 11;
constexpr std::uint64_t kRoundStream = 12;
constexpr std::uint64_t kShuffleStream = 13;

/// Builds the calibration set round by round, interleaving one search pass
/// over S after every round, then trains `epochs` passes over the full set
/// and finalizes the assignment.
CalibResult run_calibration(const DenoiserParams& teacher, const QuantModel& student, const NoiseSchedule& sched,
                            const CalibConfig& cfg, Rng& rng);

/// Activation quantizer templates (one per site) initialized by l_p
/// calibration on the student's activations over `samples`.
std::vector<QuantParams> init_site_quantizers(const QuantModel& student, const CalibSet& samples, int bits, double p);

}  // namespace tgq
