// Command-line front end: train, calibrate, sample, eval, ablations, report.
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tgq/experiment.hpp"

namespace {

using namespace tgq;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  std::string out;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "key = value config file");
  app->add_option("--seed", c.seed, "Root seed (overrides the config)");
  app->add_option("--set", c.overrides, "Extra key=value overrides, applied last");
  app->add_option("--out", c.out, "Output directory (default: out_dir from the config)");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config_path.empty() ? ExperimentConfig{} : load_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!c.out.empty()) cfg.out_dir = c.out;
  return cfg;
}

std::filesystem::path out_dir(const ExperimentConfig& cfg) { return cfg.out_dir; }

void echo(const ExperimentConfig& cfg, const std::string& stage) {
  write_text(out_dir(cfg) / (stage + ".config.txt"), config_echo(cfg));
}

Checkpoint require_checkpoint(const std::string& path) {
  if (path.empty()) throw std::invalid_argument("--checkpoint is required");
  return load_checkpoint(path);
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Timestep-grouped post-training quantization of a toy diffusion model"};
  app.require_subcommand(1);

  Common common;
  std::string ckpt_path;
  std::size_t n_samples = 0;
  std::string group_list = "1,4,8,16";
  std::string bit_list = "8,6";
  std::string size_list = "128,256,512,1024";
  std::string seed_list;
  std::vector<std::string> report_inputs;

  auto* train = app.add_subcommand("train", "Pretrain the full-precision denoiser");
  add_common(train, common);

  auto* calibrate = app.add_subcommand("calibrate", "Quantize and run calibration with group search");
  add_common(calibrate, common);
  calibrate->add_option("--checkpoint", ckpt_path, "Full-precision checkpoint")->required();

  auto* sample = app.add_subcommand("sample", "Draw samples and dump them as CSV");
  add_common(sample, common);
  sample->add_option("--checkpoint", ckpt_path, "Checkpoint (quantized if it carries tables)")->required();
  sample->add_option("-n,--num", n_samples, "Number of samples (default: eval_samples)");

  auto* eval = app.add_subcommand("eval", "Write a metrics report");
  add_common(eval, common);
  eval->add_option("--checkpoint", ckpt_path, "Checkpoint to evaluate")->required();

  auto* abl_g = app.add_subcommand("ablate-groups", "Calibrate and evaluate for several group counts");
  add_common(abl_g, common);
  abl_g->add_option("--checkpoint", ckpt_path, "Shared full-precision checkpoint")->required();
  abl_g->add_option("--groups", group_list, "Comma-separated group counts");
  abl_g->add_option("--bits", bit_list, "Comma-separated bit widths (weights = activations)");

  auto* abl_s = app.add_subcommand("ablate-strategy", "Compare timestep selection strategies");
  add_common(abl_s, common);
  abl_s->add_option("--checkpoint", ckpt_path, "Shared full-precision checkpoint")->required();
  abl_s->add_option("--sizes", size_list, "Comma-separated calibration set sizes");
  abl_s->add_option("--seeds", seed_list, "Comma-separated seeds (default: the resolved seed)");

  auto* report = app.add_subcommand("report", "Merge metric and ablation JSON files into CSV tables");
  report->add_option("inputs", report_inputs, "JSON files")->required();
  report->add_option("--out", common.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*report) {
      for (const auto& [kind, csv] : merge_reports({report_inputs.begin(), report_inputs.end()})) {
        write_text(std::filesystem::path(common.out) / (kind + ".csv"), csv);
      }
      return 0;
    }

    const ExperimentConfig cfg = resolve(common);
    const auto dir = out_dir(cfg);

    if (*train) {
      echo(cfg, "train");
      PretrainResult pr = train_model(cfg);
      save_checkpoint(make_checkpoint(cfg, pr.params), dir / "checkpoint.json");
      write_text(dir / "train_loss.csv", loss_csv(pr.epoch_loss));
      std::cout << "final loss " << pr.epoch_loss.back() << "\n";
    } else if (*calibrate) {
      echo(cfg, "calibrate");
      const Checkpoint fp = require_checkpoint(ckpt_path);
      CalibrationRun run = calibrate_model(cfg, fp.params);
      save_checkpoint(make_checkpoint(cfg, fp.params, &run.bundle), dir / "quantized.json");
      write_calibration_logs(dir, run.result, cfg.groups);
      std::cout << "calibration set " << run.bundle.calib.size() << " samples, mean max sigma "
                << run.result.state.mean_max_sigma() << "\n";
    } else if (*sample) {
      echo(cfg, "sample");
      const Checkpoint ck = require_checkpoint(ckpt_path);
      Rng rng = stage_rng(cfg, kSampleStream);
      const std::size_t n = n_samples ? n_samples : cfg.eval_samples;
      SampleResult res =
          sample_model(ck.params, ck.quant ? &*ck.quant : nullptr, make_schedule(cfg), n, rng);
      write_text(dir / "samples.csv", samples_csv(res.samples));
    } else if (*eval) {
      echo(cfg, "eval");
      const Checkpoint ck = require_checkpoint(ckpt_path);
      MetricsReport m = evaluate_model(cfg, ck.params, ck.quant ? &*ck.quant : nullptr);
      write_text(dir / "metrics.json", metrics_json(m, config_json(cfg, false)).dump(2) + "\n");
      std::cout << "mmd2 " << m.mmd2 << " c_error " << m.c_error << " g_error " << m.g_error << "\n";
    } else if (*abl_g) {
      echo(cfg, "ablate_groups");
      const Checkpoint fp = require_checkpoint(ckpt_path);
      auto rows = ablate_groups(cfg, fp.params, parse_int_list(group_list), parse_int_list(bit_list));
      write_text(dir / "ablate_groups.json", to_json(rows, cfg).dump(2) + "\n");
    } else if (*abl_s) {
      echo(cfg, "ablate_strategy");
      const Checkpoint fp = require_checkpoint(ckpt_path);
      std::vector<std::size_t> sizes;
      for (int s : parse_int_list(size_list)) sizes.push_back(static_cast<std::size_t>(s));
      std::vector<std::uint64_t> seeds;
      if (!seed_list.empty()) {
        for (int s : parse_int_list(seed_list)) seeds.push_back(static_cast<std::uint64_t>(s));
      }
      auto rows = ablate_strategy(cfg, fp.params, {Strategy::kRandom, Strategy::kHeuristic, Strategy::kActive},
                                  sizes, seeds);
      write_text(dir / "ablate_strategy.json", to_json(rows, cfg).dump(2) + "\n");
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
