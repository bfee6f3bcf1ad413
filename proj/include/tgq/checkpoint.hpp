#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "tgq/denoiser.hpp"
#include "tgq/metrics.hpp"

namespace tgq {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MalformedCheckpoint : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class VersionMismatch : public CheckpointError {
 public:
  VersionMismatch(int found, int expected);
  int found;
  int expected;
};

class ShapeMismatch : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct Checkpoint {
  static constexpr int kSchemaVersion = 1;

  DenoiserParams params;
  std::optional<QuantBundle> quant;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  std::uint64_t seed = 0;
};

nlohmann::ordered_json to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::ordered_json& j);

/// Writes pretty-printed JSON; keys are emitted in a fixed order.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws MalformedCheckpoint, VersionMismatch or ShapeMismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::ordered_json to_json(const QuantParams& q);
QuantParams quant_params_from_json(const nlohmann::ordered_json& j);

nlohmann::ordered_json metrics_json(const MetricsReport& r, const nlohmann::ordered_json& config);

/// Writes `text` to path, creating parent directories.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace tgq
