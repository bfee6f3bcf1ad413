#include "tgq/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace tgq {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Round-trip precision for CSV numbers.
std::ostringstream csv_stream() {
  std::ostringstream out;
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  return out;
}

ordered_json metrics_fields(const MetricsReport& m) {
  return {{"c_error", m.c_error}, {"g_error", m.g_error}, {"mmd2", m.mmd2}, {"bandwidth", m.bandwidth}};
}

}  // namespace

Rng stage_rng(const ExperimentConfig& cfg, std::uint64_t stream) { return Rng(cfg.seed).split(stream); }

NoiseSchedule make_schedule(const ExperimentConfig& cfg) { return NoiseSchedule::rescaled_linear(cfg.steps); }

ToyDataset training_data(const ExperimentConfig& cfg) {
  Rng rng = stage_rng(cfg, kDataStream);
  return make_toy_dataset(cfg.dataset, cfg.n_data, rng);
}

ToyDataset reference_data(const ExperimentConfig& cfg) {
  Rng rng = stage_rng(cfg, kReferenceStream);
  return make_toy_dataset(cfg.dataset, cfg.eval_samples, rng);
}

PretrainResult train_model(const ExperimentConfig& cfg) {
  PretrainConfig pc;
  pc.arch = cfg.arch;
  pc.lr = cfg.pretrain_lr;
  pc.batch_size = cfg.pretrain_batch;
  pc.epochs = cfg.pretrain_epochs;
  Rng rng = stage_rng(cfg, kTrainStream);
  return pretrain(pc, training_data(cfg), make_schedule(cfg), rng);
}

CalibrationRun calibrate_model(const ExperimentConfig& cfg, const DenoiserParams& teacher) {
  auto [wq, wparams] = quantize_weights(teacher, cfg.w_bits, cfg.lp);
  QuantModel student{std::move(wq), std::move(wparams)};
  Rng rng = stage_rng(cfg, kCalibStream);
  CalibResult res = run_calibration(teacher, student, make_schedule(cfg), cfg.calib_config(), rng);
  QuantBundle bundle{std::move(student), res.tables, res.assignment, res.calib.samples, res.logs.mean_entropy};
  return {std::move(bundle), std::move(res)};
}

MetricsReport evaluate_model(const ExperimentConfig& cfg, const DenoiserParams& teacher, const QuantBundle* bundle) {
  Rng rng = stage_rng(cfg, kEvalStream);
  return evaluate(teacher, bundle, reference_data(cfg), make_schedule(cfg), cfg.eval_samples, rng);
}

Checkpoint make_checkpoint(const ExperimentConfig& cfg, const DenoiserParams& params, const QuantBundle* bundle) {
  Checkpoint c;
  c.params = params;
  if (bundle) c.quant = *bundle;
  c.config = config_json(cfg, false);
  c.seed = cfg.seed;
  return c;
}

double mean_max_sigma(const GroupSearchState& state) { return state.mean_max_sigma(); }

double mean_max_sigma_calibrated(const GroupSearchState& state, const CalibState& calib) {
  double acc = 0.0;
  int n = 0;
  for (int t = 1; t <= calib.steps(); ++t) {
    if (calib.count(t) == 0) continue;
    const auto s = state.sigma(t);
    acc += *std::max_element(s.begin(), s.end());
    ++n;
  }
  return n == 0 ? 0.0 : acc / n;
}

std::string loss_csv(const std::vector<double>& epoch_loss) {
  auto out = csv_stream();
  out << "epoch,loss\n";
  for (std::size_t e = 0; e < epoch_loss.size(); ++e) out << e << ',' << epoch_loss[e] << '\n';
  return out.str();
}

std::string samples_csv(const Tensor& samples) {
  auto out = csv_stream();
  for (std::size_t c = 0; c < samples.cols(); ++c) out << (c ? "," : "") << 'x' << c;
  out << '\n';
  for (std::size_t r = 0; r < samples.rows(); ++r) {
    for (std::size_t c = 0; c < samples.cols(); ++c) out << (c ? "," : "") << samples.at(r, c);
    out << '\n';
  }
  return out.str();
}

std::string rounds_csv(const CalibLogs& logs) {
  auto out = csv_stream();
  out << "round,strategy,t,s1,s2,score\n";
  for (const auto& r : logs.rounds) {
    out << r.round << ',' << to_string(r.strategy) << ',' << r.sel.t << ',' << r.sel.s1 << ',' << r.sel.s2 << ','
        << r.sel.score << '\n';
  }
  return out.str();
}

std::string counts_csv(const CalibLogs& logs) {
  auto out = csv_stream();
  out << "round,t,count\n";
  for (std::size_t r = 0; r < logs.count_history.size(); ++r) {
    const auto& n = logs.count_history[r];
    for (std::size_t t = 0; t < n.size(); ++t) out << r << ',' << t + 1 << ',' << n[t] << '\n';
  }
  return out.str();
}

std::string steps_csv(const CalibLogs& logs) {
  auto out = csv_stream();
  out << "phase,index,step,lr,loss,distill,entropy\n";
  for (const auto& s : logs.steps) {
    out << s.phase << ',' << s.index << ',' << s.step << ',' << s.lr << ',' << s.loss << ',' << s.distill << ','
        << s.entropy << '\n';
  }
  return out.str();
}

std::string sigma_csv(const CalibLogs& logs, int groups) {
  auto out = csv_stream();
  out << "phase,epoch,t,g,sigma\n";
  const auto G = static_cast<std::size_t>(groups);
  for (const auto& s : logs.sigma) {
    for (std::size_t i = 0; i < s.sigma.size(); ++i) {
      out << s.phase << ',' << s.index << ',' << i / G + 1 << ',' << i % G << ',' << s.sigma[i] << '\n';
    }
  }
  return out.str();
}

ordered_json calibration_summary(const CalibResult& r) {
  ordered_json j;
  j["schema_version"] = 1;
  j["strategy"] = to_string(r.calib.strategy);
  j["rounds"] = r.calib.rounds;
  j["samples"] = r.calib.samples.size();
  j["counts"] = r.calib.counts;
  j["assignment"] = r.assignment.group;
  j["mean_max_sigma"] = r.state.mean_max_sigma();
  j["mean_max_sigma_calibrated"] = mean_max_sigma_calibrated(r.state, r.calib);
  j["mean_entropy"] = r.logs.mean_entropy;
  return j;
}

void write_calibration_logs(const std::filesystem::path& dir, const CalibResult& r, int groups) {
  write_text(dir / "rounds.csv", rounds_csv(r.logs));
  write_text(dir / "counts.csv", counts_csv(r.logs));
  write_text(dir / "search.csv", steps_csv(r.logs));
  write_text(dir / "sigma.csv", sigma_csv(r.logs, groups));
  write_text(dir / "calibration.json", calibration_summary(r).dump(2) + "\n");
}

std::vector<GroupAblationRow> ablate_groups(const ExperimentConfig& cfg, const DenoiserParams& teacher,
                                            const std::vector<int>& groups, const std::vector<int>& bits) {
  std::vector<GroupAblationRow> rows;
  for (int b : bits) {
    for (int g : groups) {
      ExperimentConfig arm = cfg;
      arm.w_bits = arm.a_bits = b;
      arm.groups = g;
      CalibrationRun run = calibrate_model(arm, teacher);
      rows.push_back({b, g, evaluate_model(arm, teacher, &run.bundle), run.result.state.mean_max_sigma()});
    }
  }
  return rows;
}

std::vector<StrategyAblationRow> ablate_strategy(const ExperimentConfig& cfg, const DenoiserParams& teacher,
                                                 const std::vector<Strategy>& strategies,
                                                 const std::vector<std::size_t>& sizes,
                                                 const std::vector<std::uint64_t>& seeds) {
  const std::vector<std::uint64_t> seed_list = seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : seeds;
  std::vector<StrategyAblationRow> rows;
  for (std::uint64_t seed : seed_list) {
    for (std::size_t n : sizes) {
      for (Strategy s : strategies) {
        ExperimentConfig arm = cfg;
        arm.seed = seed;
        arm.calib_size = n;
        arm.strategy = s;
        CalibrationRun run = calibrate_model(arm, teacher);
        rows.push_back({s, n, seed, evaluate_model(arm, teacher, &run.bundle)});
      }
    }
  }
  return rows;
}

ordered_json to_json(const std::vector<GroupAblationRow>& rows, const ExperimentConfig& cfg) {
  ordered_json j;
  j["schema_version"] = MetricsReport::kSchemaVersion;
  j["kind"] = "ablate_groups";
  ordered_json arr = ordered_json::array();
  for (const auto& r : rows) {
    ordered_json row = {{"bits", r.bits}, {"G", r.groups}};
    row.update(metrics_fields(r.metrics));
    row["mean_max_sigma"] = r.mean_max_sigma;
    arr.push_back(std::move(row));
  }
  j["rows"] = std::move(arr);
  j["config"] = config_json(cfg, false);
  return j;
}

ordered_json to_json(const std::vector<StrategyAblationRow>& rows, const ExperimentConfig& cfg) {
  ordered_json j;
  j["schema_version"] = MetricsReport::kSchemaVersion;
  j["kind"] = "ablate_strategy";
  ordered_json arr = ordered_json::array();
  for (const auto& r : rows) {
    ordered_json row = {{"strategy", to_string(r.strategy)}, {"calib_size", r.calib_size}, {"seed", r.seed}};
    row.update(metrics_fields(r.metrics));
    arr.push_back(std::move(row));
  }
  j["rows"] = std::move(arr);
  j["config"] = config_json(cfg, false);
  return j;
}

std::map<std::string, std::string> merge_reports(const std::vector<std::filesystem::path>& paths) {
  static const std::map<std::string, std::vector<std::string>> columns = {
      {"metrics", {"c_error", "g_error", "mmd2", "bandwidth", "n_samples"}},
      {"ablate_groups", {"bits", "G", "c_error", "g_error", "mmd2", "bandwidth", "mean_max_sigma"}},
      {"ablate_strategy", {"strategy", "calib_size", "seed", "c_error", "g_error", "mmd2", "bandwidth"}},
  };
  std::map<std::string, std::ostringstream> tables;
  for (const auto& path : paths) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open report '" + path.string() + "'");
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw std::invalid_argument("report '" + path.string() + "' is not valid JSON: " + e.what());
    }
    if (doc.value("schema_version", -1) != MetricsReport::kSchemaVersion) {
      throw std::invalid_argument("report '" + path.string() + "' has an unsupported schema_version");
    }
    const std::string kind = doc.value("kind", "");
    auto col = columns.find(kind);
    if (col == columns.end()) throw std::invalid_argument("report '" + path.string() + "' has unknown kind '" + kind + "'");
    auto& out = tables[kind];
    if (out.tellp() == 0) {
      out << std::setprecision(std::numeric_limits<double>::max_digits10) << "source";
      for (const auto& c : col->second) out << ',' << c;
      out << '\n';
    }
    const json rows = kind == "metrics" ? json::array({doc}) : doc.at("rows");
    for (const auto& row : rows) {
      out << path.filename().string();
      for (const auto& c : col->second) {
        const auto& v = row.at(c);
        out << ',';
        if (v.is_string()) {
          out << v.get<std::string>();
        } else if (v.is_number_float()) {
          out << v.get<double>();
        } else {
          out << v.dump();
        }
      }
      out << '\n';
    }
  }
  std::map<std::string, std::string> result;
  for (auto& [k, v] : tables) result[k] = v.str();
  return result;
}

}  // namespace tgq
