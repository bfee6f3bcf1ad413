#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "json.hpp"
#include "tgq/calibration.hpp"
#include "tgq/denoiser.hpp"

namespace tgq {

/// Every knob of one experiment. Defaults follow the reference protocol:
/// T = 100, G = 8, lambda = 0.8, eta = 1.5, 1024 calibration latents built
/// in rounds of 64, 10 search epochs, W8A8.
struct ExperimentConfig {
  std::string dataset = "gaussian-ring";
  std::size_t n_data = 8000;
  int steps = 100;
  DenoiserArch arch;

  int pretrain_epochs = 200;
  double pretrain_lr = 1e-3;
  std::size_t pretrain_batch = 256;

  int w_bits = 8;
  int a_bits = 8;
  int groups = 8;
  double lambda = 0.8;
  double eta = 1.5;
  Strategy strategy = Strategy::kActive;
  double heuristic_mean_frac = 0.4;
  std::size_t calib_size = 1024;
  std::size_t batch = 64;
  std::size_t search_batch = 64;
  int epochs = 10;
  /// Unset: 5e-3 at 8 bits or more, 3e-3 below.
  std::optional<double> lr;
  double lr_end = 1e-5;
  double logit_lr_mult = 30.0;
  double scale_spread = 2.0;
  double lp = 2.4;

  std::size_t eval_samples = 2000;
  std::uint64_t seed = 0;
  std::string out_dir = "runs";

  double resolved_lr() const { return lr ? *lr : (a_bits == kFullPrecisionBits || a_bits >= 8 ? 5e-3 : 3e-3); }
  CalibConfig calib_config() const;
};

/// Applies one `key = value` assignment. Throws std::invalid_argument on
/// an unknown key or unparsable value.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// Flat key-value text: `key = value` lines, `#` comments, optional
/// `[section]` headers (keys are global regardless of section), strings
/// optionally double-quoted.
ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});

/// Resolved configuration in the same text format; parse_config of the
/// result reproduces `cfg` exactly.
std::string config_echo(const ExperimentConfig& cfg);
/// `with_paths = false` drops out_dir, so files embedding the config do not
/// depend on where they were written.
nlohmann::ordered_json config_json(const ExperimentConfig& cfg, bool with_paths = true);

}  // namespace tgq
