#include "tgq/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace tgq {

Adam::Adam(const std::vector<const Tensor*>& params, AdamConfig cfg) : cfg_(cfg) {
  for (const Tensor* p : params) {
    m_.emplace_back(p->shape());
    v_.emplace_back(p->shape());
  }
}

void Adam::step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw std::invalid_argument("Adam::step: parameter count changed since construction");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    if (!g.same_shape(p)) throw std::invalid_argument("Adam::step: gradient shape mismatch");
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

double exp_decay_lr(double lr0, double lr_end, long step, long total_steps) {
  if (total_steps <= 1) return lr0;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return lr0 * std::pow(lr_end / lr0, frac);
}

}  // namespace tgq
