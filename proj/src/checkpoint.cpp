#include "tgq/checkpoint.hpp"

#include <fstream>
#include <sstream>

namespace tgq {

using nlohmann::json;
using nlohmann::ordered_json;

VersionMismatch::VersionMismatch(int found_, int expected_)
    : CheckpointError("checkpoint schema version " + std::to_string(found_) + " does not match supported version " +
                      std::to_string(expected_)),
      found(found_),
      expected(expected_) {}

namespace {

ordered_json tensor_json(const std::string& name, const Tensor& t) {
  ordered_json j;
  j["name"] = name;
  j["shape"] = t.shape();
  j["data"] = t.raw();
  return j;
}

Tensor tensor_from_json(const ordered_json& j, const Tensor::Shape& expected, const std::string& name) {
  auto shape = j.at("shape").get<Tensor::Shape>();
  auto data = j.at("data").get<std::vector<double>>();
  if (shape != expected) {
    throw ShapeMismatch("parameter '" + name + "' has shape " + shape_str(shape) + ", architecture expects " +
                        shape_str(expected));
  }
  if (shape_numel(shape) != data.size()) {
    throw ShapeMismatch("parameter '" + name + "' holds " + std::to_string(data.size()) + " values for shape " +
                        shape_str(shape));
  }
  return Tensor(std::move(shape), std::move(data));
}

template <class F>
auto guarded(F f) {
  try {
    return f();
  } catch (const CheckpointError&) {
    throw;
  } catch (const json::exception& e) {
    throw MalformedCheckpoint(std::string("malformed checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw MalformedCheckpoint(std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace

ordered_json to_json(const QuantParams& q) {
  ordered_json j;
  j["bits"] = q.bits;
  j["scale"] = q.scale;
  j["z_min"] = q.z_min;
  j["z_max"] = q.z_max;
  return j;
}

QuantParams quant_params_from_json(const ordered_json& j) {
  QuantParams q;
  q.bits = j.at("bits").get<int>();
  q.scale = j.at("scale").get<double>();
  q.z_min = j.at("z_min").get<int>();
  q.z_max = j.at("z_max").get<int>();
  q.validate();
  return q;
}

ordered_json to_json(const Checkpoint& ckpt) {
  ordered_json j;
  j["schema_version"] = Checkpoint::kSchemaVersion;
  j["seed"] = ckpt.seed;
  const auto& a = ckpt.params.arch;
  j["arch"] = {{"data_dim", a.data_dim}, {"embed_dim", a.embed_dim}, {"hidden", a.hidden}, {"depth", a.depth}};
  ordered_json params = ordered_json::array();
  for (std::size_t l = 0; l < ckpt.params.layers.size(); ++l) {
    params.push_back(tensor_json("layer" + std::to_string(l) + ".weight", ckpt.params.layers[l].weight));
    params.push_back(tensor_json("layer" + std::to_string(l) + ".bias", ckpt.params.layers[l].bias));
  }
  j["params"] = std::move(params);
  if (ckpt.quant) {
    const auto& q = *ckpt.quant;
    ordered_json qj;
    ordered_json weights = ordered_json::array();
    for (const auto& w : q.student.weight_params) weights.push_back(to_json(w));
    qj["weight"] = std::move(weights);
    ordered_json acts = ordered_json::array();
    for (const auto& tab : q.tables) {
      ordered_json groups = ordered_json::array();
      for (const auto& g : tab.groups) groups.push_back(to_json(g));
      acts.push_back({{"layer", tab.layer}, {"groups", std::move(groups)}});
    }
    qj["activation"] = std::move(acts);
    qj["assignment"] = q.assignment.group;
    qj["calib"] = {{"dim", q.calib.dim}, {"t", q.calib.t}, {"x", q.calib.x}};
    qj["mean_entropy"] = q.mean_entropy;
    j["quant"] = std::move(qj);
  }
  j["config"] = ckpt.config;
  return j;
}

Checkpoint checkpoint_from_json(const ordered_json& j) {
  return guarded([&] {
    if (!j.is_object()) throw MalformedCheckpoint("malformed checkpoint: top level is not an object");
    const int version = j.at("schema_version").get<int>();
    if (version != Checkpoint::kSchemaVersion) throw VersionMismatch(version, Checkpoint::kSchemaVersion);
    Checkpoint ckpt;
    ckpt.seed = j.at("seed").get<std::uint64_t>();
    DenoiserArch arch;
    const auto& aj = j.at("arch");
    arch.data_dim = aj.at("data_dim").get<std::size_t>();
    arch.embed_dim = aj.at("embed_dim").get<std::size_t>();
    arch.hidden = aj.at("hidden").get<std::size_t>();
    arch.depth = aj.at("depth").get<std::size_t>();
    DenoiserParams shapes = DenoiserParams::zeros(arch);
    const auto& pj = j.at("params");
    if (!pj.is_array() || pj.size() != 2 * shapes.layers.size()) {
      throw ShapeMismatch("checkpoint holds " + std::to_string(pj.size()) + " parameter tensors, architecture needs " +
                          std::to_string(2 * shapes.layers.size()));
    }
    ckpt.params.arch = arch;
    for (std::size_t l = 0; l < shapes.layers.size(); ++l) {
      Linear lin;
      lin.weight = tensor_from_json(pj[2 * l], shapes.layers[l].weight.shape(), "layer" + std::to_string(l) + ".weight");
      lin.bias = tensor_from_json(pj[2 * l + 1], shapes.layers[l].bias.shape(), "layer" + std::to_string(l) + ".bias");
      ckpt.params.layers.push_back(std::move(lin));
    }
    if (j.contains("quant")) {
      const auto& qj = j.at("quant");
      QuantBundle b;
      for (const auto& w : qj.at("weight")) b.student.weight_params.push_back(quant_params_from_json(w));
      if (b.student.weight_params.size() != arch.num_linear()) {
        throw ShapeMismatch("checkpoint has " + std::to_string(b.student.weight_params.size()) +
                            " weight quantizers for " + std::to_string(arch.num_linear()) + " layers");
      }
      b.student.params = ckpt.params;
      for (std::size_t l = 0; l < arch.num_linear(); ++l) {
        b.student.params.layers[l].weight = quantize(ckpt.params.layers[l].weight, b.student.weight_params[l]);
      }
      for (const auto& aj2 : qj.at("activation")) {
        LayerQuantTable tab;
        tab.layer = aj2.at("layer").get<std::size_t>();
        for (const auto& g : aj2.at("groups")) tab.groups.push_back(quant_params_from_json(g));
        tab.weight = b.student.weight_params.at(tab.layer);
        b.tables.push_back(std::move(tab));
      }
      b.assignment.group = qj.at("assignment").get<std::vector<int>>();
      const auto& cj = qj.at("calib");
      b.calib.dim = cj.at("dim").get<std::size_t>();
      b.calib.t = cj.at("t").get<std::vector<int>>();
      b.calib.x = cj.at("x").get<std::vector<double>>();
      if (b.calib.x.size() != b.calib.t.size() * b.calib.dim) {
        throw ShapeMismatch("calibration set holds " + std::to_string(b.calib.x.size()) + " values for " +
                            std::to_string(b.calib.t.size()) + " samples");
      }
      b.mean_entropy = qj.at("mean_entropy").get<std::vector<double>>();
      ckpt.quant = std::move(b);
    }
    if (j.contains("config")) ckpt.config = ordered_json(j.at("config"));
    return ckpt;
  });
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_text(path, to_json(ckpt).dump(1) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  ordered_json j;
  try {
    j = ordered_json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw MalformedCheckpoint("malformed checkpoint '" + path.string() + "': " + e.what());
  }
  return checkpoint_from_json(j);
}

ordered_json metrics_json(const MetricsReport& r, const ordered_json& config) {
  ordered_json j;
  j["schema_version"] = MetricsReport::kSchemaVersion;
  j["kind"] = "metrics";
  j["c_error"] = r.c_error;
  j["g_error"] = r.g_error;
  j["mmd2"] = r.mmd2;
  j["bandwidth"] = r.bandwidth;
  j["n_samples"] = r.n_samples;
  j["entropy_trace"] = r.entropy_trace;
  j["config"] = config;
  return j;
}

}  // namespace tgq
