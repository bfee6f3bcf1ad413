#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "support.hpp"
#include "tgq/checkpoint.hpp"
#include "tgq/config.hpp"
#include "tgq/experiment.hpp"

using namespace tgq;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("tgq_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

QuantBundle small_bundle(const DenoiserParams& p) {
  QuantBundle b;
  auto [wq, wp] = quantize_weights(p, 6, 2.4);
  b.student = QuantModel{wq, wp};
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    LayerQuantTable t;
    t.layer = l;
    t.weight = wp[l];
    if (l > 0) t.groups = {QuantParams::with_bits(6, 0.013 * l), QuantParams::with_bits(6, 0.031 * l)};
    b.tables.push_back(t);
  }
  b.assignment.group = {0, 1, 1, 0, 1};
  Rng rng(2);
  b.calib.append(rng.normal_tensor({3, 2}), 4);
  b.mean_entropy = {0.69, 0.3, 0.1};
  return b;
}

}  // namespace

TEST(Config, ParseOverridesAndComments) {
  const auto cfg = parse_config(
      "# experiment\n"
      "[model]\n"
      "T = 50   # fewer steps\n"
      "hidden=64\n"
      "[quant]\n"
      "w_bits = 6\n"
      "a_bits = 6\n"
      "G = 4\n"
      "strategy = \"random\"\n"
      "out_dir = \"runs/a # b\"\n"
      "lr = auto\n"
      "seed = 12\n");
  EXPECT_EQ(cfg.steps, 50);
  EXPECT_EQ(cfg.arch.hidden, 64u);
  EXPECT_EQ(cfg.w_bits, 6);
  EXPECT_EQ(cfg.groups, 4);
  EXPECT_EQ(cfg.strategy, Strategy::kRandom);
  EXPECT_EQ(cfg.out_dir, "runs/a # b");
  EXPECT_FALSE(cfg.lr.has_value());
  EXPECT_DOUBLE_EQ(cfg.resolved_lr(), 3e-3);
  EXPECT_EQ(cfg.seed, 12u);
  EXPECT_EQ(cfg.lambda, 0.8);  // untouched default
}

TEST(Config, DefaultsAndResolvedLr) {
  ExperimentConfig cfg;
  EXPECT_EQ(cfg.steps, 100);
  EXPECT_EQ(cfg.groups, 8);
  EXPECT_EQ(cfg.calib_size, 1024u);
  EXPECT_EQ(cfg.batch, 64u);
  EXPECT_DOUBLE_EQ(cfg.resolved_lr(), 5e-3);
  cfg.lr = 1e-2;
  EXPECT_DOUBLE_EQ(cfg.resolved_lr(), 1e-2);
  const auto cc = cfg.calib_config();
  EXPECT_EQ(cc.lr, 1e-2);
  EXPECT_EQ(cc.round_batch, 64u);
  EXPECT_EQ(cc.eta, 1.5);
}

TEST(Config, EchoRoundTrips) {
  ExperimentConfig cfg;
  cfg.lambda = 0.1 + 0.2;  // not representable in short decimal
  cfg.lr = 1.0 / 3.0;
  cfg.strategy = Strategy::kHeuristic;
  cfg.out_dir = "some dir";
  cfg.seed = 18446744073709551615ull;
  const auto back = parse_config(config_echo(cfg));
  EXPECT_EQ(config_json(back), config_json(cfg));
  EXPECT_EQ(back.lambda, cfg.lambda);
  EXPECT_EQ(*back.lr, *cfg.lr);
  EXPECT_EQ(back.seed, cfg.seed);
  EXPECT_FALSE(config_json(cfg, false).contains("out_dir"));
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config("nope = 1\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("G = eight\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("just a line\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("[a.b]\nG = 1\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("strategy = greedy\n"), std::invalid_argument);
  EXPECT_THROW(load_config("/nonexistent/cfg.txt"), std::exception);
}

TEST(Checkpoint, RoundTripIsValueIdentical) {
  Rng rng(1);
  Checkpoint c;
  c.params = DenoiserParams::init(support::tiny_arch(6, 2, 4), rng);
  c.quant = small_bundle(c.params);
  c.config = config_json(ExperimentConfig{}, false);
  c.seed = 77;
  const auto dir = temp_dir("ckpt");
  save_checkpoint(c, dir / "a.json");
  const auto back = load_checkpoint(dir / "a.json");
  EXPECT_EQ(back.params, c.params);
  EXPECT_EQ(back.seed, 77u);
  EXPECT_EQ(back.config, c.config);
  ASSERT_TRUE(back.quant);
  EXPECT_EQ(back.quant->student.params, c.quant->student.params);
  EXPECT_EQ(back.quant->student.weight_params, c.quant->student.weight_params);
  EXPECT_EQ(back.quant->assignment, c.quant->assignment);
  EXPECT_EQ(back.quant->calib.x, c.quant->calib.x);
  EXPECT_EQ(back.quant->calib.t, c.quant->calib.t);
  EXPECT_EQ(back.quant->mean_entropy, c.quant->mean_entropy);
  ASSERT_EQ(back.quant->tables.size(), c.quant->tables.size());
  for (std::size_t l = 0; l < back.quant->tables.size(); ++l) {
    EXPECT_EQ(back.quant->tables[l].groups, c.quant->tables[l].groups);
    EXPECT_EQ(back.quant->tables[l].weight, c.quant->tables[l].weight);
  }
  save_checkpoint(back, dir / "b.json");
  EXPECT_EQ(slurp(dir / "a.json"), slurp(dir / "b.json"));
}

TEST(Checkpoint, LoadErrors) {
  Rng rng(3);
  Checkpoint c;
  c.params = DenoiserParams::init(support::tiny_arch(6, 2, 4), rng);
  const auto dir = temp_dir("ckpt_err");
  save_checkpoint(c, dir / "ok.json");
  const std::string text = slurp(dir / "ok.json");

  write_text(dir / "trunc.json", text.substr(0, text.size() / 2));
  EXPECT_THROW(load_checkpoint(dir / "trunc.json"), MalformedCheckpoint);

  auto j = nlohmann::json::parse(text);
  j["schema_version"] = 2;
  write_text(dir / "v2.json", j.dump());
  try {
    load_checkpoint(dir / "v2.json");
    FAIL() << "expected VersionMismatch";
  } catch (const VersionMismatch& e) {
    EXPECT_EQ(e.found, 2);
    EXPECT_EQ(e.expected, 1);
    const std::string msg = e.what();
    EXPECT_NE(msg.find('2'), std::string::npos);
    EXPECT_NE(msg.find('1'), std::string::npos);
  }

  j = nlohmann::json::parse(text);
  j["arch"]["hidden"] = 7;
  write_text(dir / "shape.json", j.dump());
  EXPECT_THROW(load_checkpoint(dir / "shape.json"), ShapeMismatch);

  j = nlohmann::json::parse(text);
  j["params"].erase(0);
  write_text(dir / "missing.json", j.dump());
  EXPECT_THROW(load_checkpoint(dir / "missing.json"), ShapeMismatch);

  j = nlohmann::json::parse(text);
  j.erase("arch");
  write_text(dir / "noarch.json", j.dump());
  EXPECT_THROW(load_checkpoint(dir / "noarch.json"), MalformedCheckpoint);

  EXPECT_THROW(load_checkpoint(dir / "absent.json"), CheckpointError);
}

TEST(Reports, MergeIntoCsv) {
  const auto dir = temp_dir("reports");
  MetricsReport m;
  m.c_error = 0.5;
  m.g_error = 0.25;
  m.mmd2 = 0.125;
  m.bandwidth = 1.0;
  m.n_samples = 10;
  write_text(dir / "m1.json", metrics_json(m, config_json(ExperimentConfig{}, false)).dump());
  m.mmd2 = 0.0625;
  write_text(dir / "m2.json", metrics_json(m, config_json(ExperimentConfig{}, false)).dump());
  std::vector<StrategyAblationRow> rows = {{Strategy::kActive, 128, 3, m}, {Strategy::kRandom, 256, 3, m}};
  write_text(dir / "s.json", to_json(rows, ExperimentConfig{}).dump());

  const auto out = merge_reports({dir / "m1.json", dir / "m2.json", dir / "s.json"});
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out.at("metrics"),
            "source,c_error,g_error,mmd2,bandwidth,n_samples\n"
            "m1.json,0.5,0.25,0.125,1,10\n"
            "m2.json,0.5,0.25,0.0625,1,10\n");
  EXPECT_EQ(out.at("ablate_strategy"),
            "source,strategy,calib_size,seed,c_error,g_error,mmd2,bandwidth\n"
            "s.json,active,128,3,0.5,0.25,0.0625,1\n"
            "s.json,random,256,3,0.5,0.25,0.0625,1\n");

  write_text(dir / "bad.json", R"({"schema_version": 9, "kind": "metrics"})");
  EXPECT_THROW(merge_reports({dir / "bad.json"}), std::invalid_argument);
  write_text(dir / "odd.json", R"({"schema_version": 1, "kind": "weird"})");
  EXPECT_THROW(merge_reports({dir / "odd.json"}), std::invalid_argument);
}

TEST(Csv, WritersEmitHeaders) {
  EXPECT_EQ(loss_csv({0.5, 0.25}), "epoch,loss\n0,0.5\n1,0.25\n");
  EXPECT_EQ(samples_csv(Tensor::matrix(1, 2, {1.5, -2})), "x0,x1\n1.5,-2\n");
}
