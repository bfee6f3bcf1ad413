#include "tgq/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>

#include "tgq/optim.hpp"

namespace tgq {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kActive: return "active";
    case Strategy::kRandom: return "random";
    case Strategy::kHeuristic: return "heuristic";
    case Strategy::kUcbFull: return "ucb-full";
  }
  return "unknown";
}

Strategy parse_strategy(const std::string& name) {
  if (name == "active") return Strategy::kActive;
  if (name == "random") return Strategy::kRandom;
  if (name == "heuristic") return Strategy::kHeuristic;
  if (name == "ucb-full") return Strategy::kUcbFull;
  throw std::invalid_argument("unknown strategy '" + name + "' (expected active, random, heuristic or ucb-full)");
}

void CalibSet::append(const Tensor& rows, int timestep) {
  if (rows.cols() != dim) throw std::invalid_argument("CalibSet::append: dimension mismatch");
  x.insert(x.end(), rows.raw().begin(), rows.raw().end());
  t.insert(t.end(), rows.rows(), timestep);
}

Tensor CalibSet::gather(std::span<const std::size_t> idx) const {
  Tensor out({idx.size(), dim});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    for (std::size_t c = 0; c < dim; ++c) out.at(r, c) = x[idx[r] * dim + c];
  }
  return out;
}

Tensor CalibSet::all() const {
  if (t.empty()) throw std::logic_error("CalibSet::all on an empty set");
  return Tensor({t.size(), dim}, x);
}

CalibState::CalibState(int steps, Strategy s, double eta_) : strategy(s), eta(eta_) {
  if (steps < 1) throw std::invalid_argument("CalibState needs T >= 1");
  counts.assign(static_cast<std::size_t>(steps), 0);
}

long CalibState::total() const { return std::accumulate(counts.begin(), counts.end(), 0L); }

double criterion_s1(const GroupSearchState& state, int t) { return state.entropy_at(t); }

double criterion_s2(const CalibState& calib, int t) { return 1.0 / (static_cast<double>(calib.count(t)) + 1.0); }

double ucb_bonus(const CalibState& calib, int t) {
  return std::sqrt(std::log(static_cast<double>(calib.total()) + 1.0) / (static_cast<double>(calib.count(t)) + 1.0));
}

Selection select_timestep(const GroupSearchState& state, CalibState& calib, Rng& rng) {
  const int steps = calib.steps();
  if (state.steps() != steps) throw std::invalid_argument("select_timestep: state and counts disagree on T");
  Selection best;
  switch (calib.strategy) {
    case Strategy::kActive:
    case Strategy::kUcbFull: {
      const bool cold = calib.rounds == 0;
      best.score = -std::numeric_limits<double>::infinity();
      for (int t = 1; t <= steps; ++t) {
        Selection s;
        s.t = t;
        s.s1 = cold ? 0.0 : criterion_s1(state, t);
        s.s2 = calib.strategy == Strategy::kActive ? criterion_s2(calib, t) : ucb_bonus(calib, t);
        s.score = s.s1 + calib.eta * s.s2;
        if (s.score > best.score) best = s;
      }
      break;
    }
    case Strategy::kRandom:
      best.t = static_cast<int>(rng.uniform_int(1, steps));
      break;
    case Strategy::kHeuristic: {
      const double mu = calib.heuristic_mean_frac * steps;
      const double draw = std::round(rng.normal(mu, steps / 2.0));
      best.t = static_cast<int>(std::clamp(draw, 1.0, static_cast<double>(steps)));
      break;
    }
  }
  if (calib.strategy == Strategy::kRandom || calib.strategy == Strategy::kHeuristic) {
    best.s1 = criterion_s1(state, best.t);
    best.s2 = criterion_s2(calib, best.t);
    best.score = best.s1 + calib.eta * best.s2;
  }
  ++calib.counts[static_cast<std::size_t>(best.t - 1)];
  ++calib.rounds;
  return best;
}

Tensor build_calibration_round(const DenoiserParams& teacher, const NoiseSchedule& sched, int t, std::size_t batch,
                               Rng& rng) {
  if (t < 1 || t > sched.steps()) throw std::out_of_range("build_calibration_round: timestep outside [1, T]");
  auto res = ddim_sample(predictor(teacher), sched, batch, teacher.arch.data_dim, rng, {t}, t);
  return res.recorded.at(t);
}

std::vector<double> scale_spread_factors(int groups, double spread) {
  std::vector<double> f(static_cast<std::size_t>(groups), 1.0);
  if (groups == 1 || spread == 1.0) return f;
  for (int g = 0; g < groups; ++g) {
    const double e = static_cast<double>(g) / (groups - 1);
    f[static_cast<std::size_t>(g)] = std::pow(spread, e);
  }
  return f;
}

std::vector<QuantParams> init_site_quantizers(const QuantModel& student, const CalibSet& samples, int bits, double p) {
  std::vector<QuantParams> sites;
  const std::size_t depth = student.params.arch.depth;
  if (bits == kFullPrecisionBits) return std::vector<QuantParams>(depth, QuantParams::full_precision());
  auto acts = hidden_inputs(student.params, samples.all(), samples.t);
  for (const auto& a : acts) sites.push_back(calibrate_scale(a.data(), bits, p));
  return sites;
}

namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

struct TeacherCache {
  std::vector<double> eps;
  void append(const Tensor& e) { eps.insert(eps.end(), e.raw().begin(), e.raw().end()); }
};

SearchBatch make_batch(const CalibSet& set, const TeacherCache& cache, std::span<const std::size_t> idx) {
  SearchBatch b;
  b.x_t = set.gather(idx);
  b.teacher_eps = Tensor({idx.size(), set.dim});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    b.timesteps.push_back(set.t[idx[r]]);
    for (std::size_t c = 0; c < set.dim; ++c) b.teacher_eps.at(r, c) = cache.eps[idx[r] * set.dim + c];
  }
  return b;
}

std::vector<double> flat_sigma(const GroupSearchState& s) {
  std::vector<double> out;
  for (int t = 1; t <= s.steps(); ++t) {
    auto row = s.sigma(t);
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

double mean_entropy(const GroupSearchState& s) {
  double acc = 0.0;
  for (int t = 1; t <= s.steps(); ++t) acc += s.entropy_at(t);
  return acc / s.steps();
}

}  // namespace

CalibResult run_calibration(const DenoiserParams& teacher, const QuantModel& student, const NoiseSchedule& sched,
                            const CalibConfig& cfg, Rng& rng) {
  if (cfg.calib_size == 0 || cfg.round_batch == 0 || cfg.search_batch == 0) {
    throw std::invalid_argument("run_calibration: sizes must be positive");
  }
  const int steps = sched.steps();
  const std::size_t dim = teacher.arch.data_dim;
  Rng sel_rng = rng.split(kSelectStream);
  Rng round_rng = rng.split(kRoundStream);
  Rng shuffle_rng = rng.split(kShuffleStream);

  CalibState calib(steps, cfg.strategy, cfg.eta);
  calib.heuristic_mean_frac = cfg.heuristic_mean_frac;
  calib.samples.dim = dim;
  TeacherCache cache;
  CalibLogs logs;

  // Interleaved passes run at the initial rate; the closing epochs decay it
  // exponentially to lr_end.
  const std::size_t rounds = ceil_div(cfg.calib_size, cfg.round_batch);
  const long decay_steps = cfg.epochs * static_cast<long>(ceil_div(cfg.calib_size, cfg.search_batch));
  long decay_step = 0;

  GroupSearchState cold(steps, cfg.groups, {}, cfg.lambda);
  std::optional<GroupSearchState> state;
  std::optional<SearchOptimizer> opt;
  long step = 0;

  auto run_pass = [&](const std::string& phase, int index) {
    std::vector<std::size_t> order(calib.samples.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size(); start += cfg.search_batch) {
      const std::size_t n = std::min(cfg.search_batch, order.size() - start);
      SearchBatch batch = make_batch(calib.samples, cache, std::span(order).subspan(start, n));
      const double lr = phase == "epoch" ? exp_decay_lr(cfg.lr, cfg.lr_end, decay_step++, decay_steps) : cfg.lr;
      SearchOptimConfig oc;
      oc.scale_lr = lr;
      oc.logit_lr = lr * cfg.logit_lr_mult;
      SearchObjective obj = opt->step(*state, student, batch, oc);
      logs.steps.push_back({phase, index, step, lr, obj.total->value[0], obj.distill, obj.entropy});
      ++step;
    }
    logs.mean_entropy.push_back(mean_entropy(*state));
    if (cfg.log_sigma) logs.sigma.push_back({phase, index, flat_sigma(*state)});
  };

  for (std::size_t r = 0; r < rounds; ++r) {
    const Selection sel = select_timestep(state ? *state : cold, calib, sel_rng);
    const std::size_t n = std::min(cfg.round_batch, cfg.calib_size - calib.samples.size());
    Tensor x = build_calibration_round(teacher, sched, sel.t, n, round_rng);
    calib.samples.append(x, sel.t);
    const int ts[1] = {sel.t};
    cache.append(denoise(teacher, x, ts));
    logs.rounds.push_back({static_cast<long>(r), cfg.strategy, sel});
    logs.count_history.push_back(calib.counts);
    if (!state) {
      auto sites = init_site_quantizers(student, calib.samples, cfg.act_bits, cfg.lp);
      state.emplace(steps, cfg.groups, std::move(sites), cfg.lambda, scale_spread_factors(cfg.groups, cfg.scale_spread));
      opt.emplace(*state);
    }
    run_pass("round", static_cast<int>(r));
  }
  for (int e = 0; e < cfg.epochs; ++e) run_pass("epoch", e);

  GroupAssignment assignment = finalize(*state);
  auto tables = state->tables(student.weight_params);
  return CalibResult{std::move(*state), std::move(calib), std::move(assignment), std::move(tables), std::move(logs)};
}

}  // namespace tgq
