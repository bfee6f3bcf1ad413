#include "tgq/diffusion.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "tgq/optim.hpp"

namespace tgq {

NoiseSchedule::NoiseSchedule(int steps, double beta_start, double beta_end) : steps_(steps) {
  if (steps < 2) throw std::invalid_argument("noise schedule needs T >= 2, got " + std::to_string(steps));
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw std::invalid_argument("noise schedule needs 0 < beta_start <= beta_end < 1");
  }
  beta_.resize(static_cast<std::size_t>(steps));
  alpha_bar_.resize(static_cast<std::size_t>(steps));
  double prod = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(steps - 1);
    beta_[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) * frac;
    prod *= 1.0 - beta_[static_cast<std::size_t>(i)];
    alpha_bar_[static_cast<std::size_t>(i)] = prod;
  }
}

NoiseSchedule NoiseSchedule::rescaled_linear(int steps) {
  const double k = 1000.0 / static_cast<double>(steps);
  return NoiseSchedule(steps, 1e-4 * k, 0.02 * k);
}

double NoiseSchedule::beta(int t) const {
  if (t < 1 || t > steps_) throw std::out_of_range("timestep " + std::to_string(t) + " outside [1, T]");
  return beta_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  if (t < 1 || t > steps_) throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, T]");
  return alpha_bar_[static_cast<std::size_t>(t - 1)];
}

Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  if (!x0.same_shape(eps)) throw std::invalid_argument("forward_noise: x0 and eps shapes differ");
  if (t < 1 || t > sched.steps()) throw std::out_of_range("forward_noise: timestep outside [1, T]");
  const double ab = sched.alpha_bar(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

ToyDataset make_toy_dataset(const std::string& name, std::size_t n, Rng& rng) {
  if (n == 0) throw std::invalid_argument("toy dataset needs n >= 1");
  Tensor pts({n, 2});
  if (name == "gaussian-ring") {
    for (std::size_t i = 0; i < n; ++i) {
      const auto mode = static_cast<double>(rng.uniform_int(0, 7));
      const double angle = 2.0 * std::numbers::pi * mode / 8.0;
      pts.at(i, 0) = std::cos(angle) + 0.05 * rng.normal();
      pts.at(i, 1) = std::sin(angle) + 0.05 * rng.normal();
    }
  } else if (name == "swiss-roll") {
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double t = 1.5 * std::numbers::pi * (1.0 + 2.0 * rng.uniform());
      pts.at(i, 0) = t * std::cos(t) + 0.25 * rng.normal();
      pts.at(i, 1) = t * std::sin(t) + 0.25 * rng.normal();
      sq += pts.at(i, 0) * pts.at(i, 0) + pts.at(i, 1) * pts.at(i, 1);
    }
    const double rms = std::sqrt(sq / static_cast<double>(n));
    for (auto& v : pts.raw()) v /= rms;
  } else {
    throw std::invalid_argument("unknown toy dataset '" + name + "' (expected gaussian-ring or swiss-roll)");
  }
  return {name, std::move(pts)};
}

PretrainResult pretrain(const PretrainConfig& cfg, const ToyDataset& data, const NoiseSchedule& sched, Rng& rng,
                        const DenoiserParams* init) {
  const std::size_t n = data.points.rows();
  if (data.points.size() == 0 || n == 0) throw std::invalid_argument("pretrain: empty dataset");
  if (data.points.cols() != cfg.arch.data_dim) throw std::invalid_argument("pretrain: dataset dimension mismatch");
  if (cfg.batch_size == 0) throw std::invalid_argument("pretrain: batch size must be positive");

  Rng init_rng = rng.split(1);
  Rng data_rng = rng.split(2);
  PretrainResult res{init ? *init : DenoiserParams::init(cfg.arch, init_rng), {}};
  DenoiserParams& p = res.params;

  std::vector<const Tensor*> cref;
  for (auto& l : p.layers) {
    cref.push_back(&l.weight);
    cref.push_back(&l.bias);
  }
  Adam opt(cref);
  const std::size_t d = cfg.arch.data_dim;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    data_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, n - start);
      Tensor x0({b, d}), eps({b, d}), xt({b, d});
      std::vector<int> ts(b);
      for (std::size_t r = 0; r < b; ++r) {
        for (std::size_t c = 0; c < d; ++c) x0.at(r, c) = data.points.at(order[start + r], c);
        ts[r] = static_cast<int>(data_rng.uniform_int(1, sched.steps()));
        for (std::size_t c = 0; c < d; ++c) eps.at(r, c) = data_rng.normal();
        const double ab = sched.alpha_bar(ts[r]);
        for (std::size_t c = 0; c < d; ++c) {
          xt.at(r, c) = std::sqrt(ab) * x0.at(r, c) + std::sqrt(1.0 - ab) * eps.at(r, c);
        }
      }
      ParamVars vars = as_vars(p, true);
      ag::Var pred = denoise(vars, cfg.arch, xt, ts);
      ag::Var loss = ag::mul(ag::sum(ag::square(ag::sub(pred, ag::constant(eps)))), 1.0 / static_cast<double>(b));
      const double lv = loss->value[0];
      if (!std::isfinite(lv)) {
        std::ostringstream msg;
        msg << "pretrain diverged: loss " << lv << " at epoch " << epoch << ", batch " << batches;
        throw std::runtime_error(msg.str());
      }
      ag::backward(loss);
      std::vector<Tensor*> ps;
      std::vector<const Tensor*> gs;
      for (std::size_t l = 0; l < p.layers.size(); ++l) {
        ps.push_back(&p.layers[l].weight);
        gs.push_back(&vars.weights[l]->grad);
        ps.push_back(&p.layers[l].bias);
        gs.push_back(&vars.biases[l]->grad);
      }
      opt.step(ps, gs, cfg.lr);
      loss_sum += lv;
      ++batches;
    }
    res.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
  }
  return res;
}

Tensor ddim_step(const Tensor& x_t, const Tensor& eps, int t, const NoiseSchedule& sched) {
  const double ab_t = sched.alpha_bar(t);
  const double ab_prev = sched.alpha_bar(t - 1);
  const double s_t = std::sqrt(1.0 - ab_t), a_t = std::sqrt(ab_t);
  const double a_prev = std::sqrt(ab_prev), s_prev = std::sqrt(1.0 - ab_prev);
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x0_hat = (x_t[i] - s_t * eps[i]) / a_t;
    out[i] = a_prev * x0_hat + s_prev * eps[i];
  }
  return out;
}

SampleResult ddim_sample(const NoisePredictor& eps_model, const NoiseSchedule& sched, std::size_t n, std::size_t dim,
                         Rng& rng, const std::vector<int>& record, int stop_at) {
  if (n == 0) throw std::invalid_argument("ddim_sample: n must be >= 1");
  if (stop_at < 0 || stop_at > sched.steps()) throw std::out_of_range("ddim_sample: stop_at outside [0, T]");
  SampleResult res;
  Tensor x = rng.normal_tensor({n, dim});
  auto wants = [&](int t) {
    for (int r : record) {
      if (r == t) return true;
    }
    return false;
  };
  for (int t = sched.steps(); t > stop_at; --t) {
    if (wants(t)) res.recorded.emplace(t, x);
    x = ddim_step(x, eps_model(x, t), t, sched);
  }
  if (stop_at > 0 && wants(stop_at)) res.recorded.emplace(stop_at, x);
  res.samples = std::move(x);
  return res;
}

NoisePredictor predictor(const DenoiserParams& params, const QuantContext* ctx) {
  return [&params, ctx](const Tensor& x_t, int t) {
    const int ts[1] = {t};
    return denoise(params, x_t, ts, ctx);
  };
}

}  // namespace tgq
