#include "tgq/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace tgq {

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::string unquote(const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* b = v.data();
  const char* e = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(b, e, out);
  if (ec != std::errc{} || ptr != e) throw std::invalid_argument("config: bad value '" + v + "' for key '" + key + "'");
  return out;
}

// Shortest text that parses back to the same double.
std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)>;

template <class T, class M>
Setter num(M ExperimentConfig::*field) {
  return [field](ExperimentConfig& c, const std::string& k, const std::string& v) {
    c.*field = static_cast<M>(parse_number<T>(k, v));
  };
}

template <class T>
Setter arch_num(std::size_t DenoiserArch::*field) {
  return [field](ExperimentConfig& c, const std::string& k, const std::string& v) {
    c.arch.*field = parse_number<std::size_t>(k, v);
  };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> s = {
      {"dataset", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.dataset = v; }},
      {"n_data", num<std::size_t>(&ExperimentConfig::n_data)},
      {"T", num<int>(&ExperimentConfig::steps)},
      {"embed_dim", arch_num<std::size_t>(&DenoiserArch::embed_dim)},
      {"hidden", arch_num<std::size_t>(&DenoiserArch::hidden)},
      {"depth", arch_num<std::size_t>(&DenoiserArch::depth)},
      {"pretrain_epochs", num<int>(&ExperimentConfig::pretrain_epochs)},
      {"pretrain_lr", num<double>(&ExperimentConfig::pretrain_lr)},
      {"pretrain_batch", num<std::size_t>(&ExperimentConfig::pretrain_batch)},
      {"w_bits", num<int>(&ExperimentConfig::w_bits)},
      {"a_bits", num<int>(&ExperimentConfig::a_bits)},
      {"G", num<int>(&ExperimentConfig::groups)},
      {"lambda", num<double>(&ExperimentConfig::lambda)},
      {"eta", num<double>(&ExperimentConfig::eta)},
      {"strategy",
       [](ExperimentConfig& c, const std::string&, const std::string& v) { c.strategy = parse_strategy(v); }},
      {"heuristic_mean_frac", num<double>(&ExperimentConfig::heuristic_mean_frac)},
      {"calib_size", num<std::size_t>(&ExperimentConfig::calib_size)},
      {"batch", num<std::size_t>(&ExperimentConfig::batch)},
      {"search_batch", num<std::size_t>(&ExperimentConfig::search_batch)},
      {"epochs", num<int>(&ExperimentConfig::epochs)},
      {"lr",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         if (v == "auto") {
           c.lr.reset();
         } else {
           c.lr = parse_number<double>(k, v);
         }
       }},
      {"lr_end", num<double>(&ExperimentConfig::lr_end)},
      {"logit_lr_mult", num<double>(&ExperimentConfig::logit_lr_mult)},
      {"scale_spread", num<double>(&ExperimentConfig::scale_spread)},
      {"lp", num<double>(&ExperimentConfig::lp)},
      {"eval_samples", num<std::size_t>(&ExperimentConfig::eval_samples)},
      {"seed", num<std::uint64_t>(&ExperimentConfig::seed)},
      {"out_dir", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }},
  };
  return s;
}

}  // namespace

CalibConfig ExperimentConfig::calib_config() const {
  CalibConfig c;
  c.groups = groups;
  c.lambda = lambda;
  c.eta = eta;
  c.strategy = strategy;
  c.calib_size = calib_size;
  c.round_batch = batch;
  c.search_batch = search_batch;
  c.epochs = epochs;
  c.act_bits = a_bits;
  c.lp = lp;
  c.lr = resolved_lr();
  c.lr_end = lr_end;
  c.logit_lr_mult = logit_lr_mult;
  c.scale_spread = scale_spread;
  c.heuristic_mean_frac = heuristic_mean_frac;
  return c;
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  const auto& s = setters();
  auto it = s.find(key);
  if (it == s.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
  it->second(cfg, key, unquote(trim(value)));
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.find('.') != std::string::npos) {
        throw std::invalid_argument("config line " + std::to_string(lineno) + ": bad section header '" + line + "'");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    set_config_value(base, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

nlohmann::ordered_json config_json(const ExperimentConfig& c, bool with_paths) {
  nlohmann::ordered_json j;
  j["dataset"] = c.dataset;
  j["n_data"] = c.n_data;
  j["T"] = c.steps;
  j["embed_dim"] = c.arch.embed_dim;
  j["hidden"] = c.arch.hidden;
  j["depth"] = c.arch.depth;
  j["pretrain_epochs"] = c.pretrain_epochs;
  j["pretrain_lr"] = c.pretrain_lr;
  j["pretrain_batch"] = c.pretrain_batch;
  j["w_bits"] = c.w_bits;
  j["a_bits"] = c.a_bits;
  j["G"] = c.groups;
  j["lambda"] = c.lambda;
  j["eta"] = c.eta;
  j["strategy"] = to_string(c.strategy);
  j["heuristic_mean_frac"] = c.heuristic_mean_frac;
  j["calib_size"] = c.calib_size;
  j["batch"] = c.batch;
  j["search_batch"] = c.search_batch;
  j["epochs"] = c.epochs;
  j["lr"] = c.resolved_lr();
  j["lr_end"] = c.lr_end;
  j["logit_lr_mult"] = c.logit_lr_mult;
  j["scale_spread"] = c.scale_spread;
  j["lp"] = c.lp;
  j["eval_samples"] = c.eval_samples;
  j["seed"] = c.seed;
  if (with_paths) j["out_dir"] = c.out_dir;
  return j;
}

std::string config_echo(const ExperimentConfig& cfg) {
  std::ostringstream out;
  const auto j = config_json(cfg);
  for (const auto& [key, value] : j.items()) {
    out << key << " = ";
    if (value.is_string()) {
      out << '"' << value.get<std::string>() << '"';
    } else if (value.is_number_float()) {
      out << fmt_double(value.get<double>());
    } else {
      out << value.dump();
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace tgq
