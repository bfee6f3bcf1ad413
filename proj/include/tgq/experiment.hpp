#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "tgq/calibration.hpp"
#include "tgq/checkpoint.hpp"
#include "tgq/config.hpp"
#include "tgq/diffusion.hpp"
#include "tgq/metrics.hpp"

namespace tgq {

// Every stage draws from its own stream of Rng(cfg.seed), so stages can be
// rerun in isolation and still reproduce the full pipeline's numbers.
constexpr std::uint64_t kDataStream = 1;
constexpr std::uint64_t kTrainStream = 2;
constexpr std::uint64_t kCalibStream = 3;
constexpr std::uint64_t kEvalStream = 4;
constexpr std::uint64_t kReferenceStream = 5;
constexpr std::uint64_t kSampleStream = 6;

Rng stage_rng(const ExperimentConfig& cfg, std::uint64_t stream);

NoiseSchedule make_schedule(const ExperimentConfig& cfg);
ToyDataset training_data(const ExperimentConfig& cfg);
/// Fresh draw of eval_samples points, independent of the training set.
ToyDataset reference_data(const ExperimentConfig& cfg);

PretrainResult train_model(const ExperimentConfig& cfg);

struct CalibrationRun {
  QuantBundle bundle;
  CalibResult result;
};

/// Weight quantization (W bits, l_p grid search) followed by the
/// calibration and group search.
CalibrationRun calibrate_model(const ExperimentConfig& cfg, const DenoiserParams& teacher);

MetricsReport evaluate_model(const ExperimentConfig& cfg, const DenoiserParams& teacher, const QuantBundle* bundle);

Checkpoint make_checkpoint(const ExperimentConfig& cfg, const DenoiserParams& params,
                           const QuantBundle* bundle = nullptr);

/// Mean over all timesteps of max_g sigma_g^t.
double mean_max_sigma(const GroupSearchState& state);
/// Same mean restricted to timesteps that received calibration samples.
double mean_max_sigma_calibrated(const GroupSearchState& state, const CalibState& calib);

// CSV writers. All emit a header row.
std::string loss_csv(const std::vector<double>& epoch_loss);
std::string samples_csv(const Tensor& samples);
std::string rounds_csv(const CalibLogs& logs);
std::string counts_csv(const CalibLogs& logs);
std::string steps_csv(const CalibLogs& logs);
std::string sigma_csv(const CalibLogs& logs, int groups);
nlohmann::ordered_json calibration_summary(const CalibResult& r);

/// Writes rounds.csv, counts.csv, search.csv, sigma.csv and
/// calibration.json into dir.
void write_calibration_logs(const std::filesystem::path& dir, const CalibResult& r, int groups);

struct GroupAblationRow {
  int bits;
  int groups;
  MetricsReport metrics;
  double mean_max_sigma;
};

/// G in `groups` x bit widths in `bits`, all from the same teacher and seed.
std::vector<GroupAblationRow> ablate_groups(const ExperimentConfig& cfg, const DenoiserParams& teacher,
                                            const std::vector<int>& groups = {1, 4, 8, 16},
                                            const std::vector<int>& bits = {8, 6});

struct StrategyAblationRow {
  Strategy strategy;
  std::size_t calib_size;
  std::uint64_t seed;
  MetricsReport metrics;
};

std::vector<StrategyAblationRow> ablate_strategy(
    const ExperimentConfig& cfg, const DenoiserParams& teacher,
    const std::vector<Strategy>& strategies = {Strategy::kRandom, Strategy::kHeuristic, Strategy::kActive},
    const std::vector<std::size_t>& sizes = {128, 256, 512, 1024}, const std::vector<std::uint64_t>& seeds = {});

nlohmann::ordered_json to_json(const std::vector<GroupAblationRow>& rows, const ExperimentConfig& cfg);
nlohmann::ordered_json to_json(const std::vector<StrategyAblationRow>& rows, const ExperimentConfig& cfg);

/// Merges metrics / ablation JSON documents into CSV tables keyed by kind
/// ("metrics", "ablate_groups", "ablate_strategy"). Throws on documents
/// with an unknown kind or schema version.
std::map<std::string, std::string> merge_reports(const std::vector<std::filesystem::path>& paths);

}  // namespace tgq
