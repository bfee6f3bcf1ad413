#pragma once

#include <vector>

#include "tgq/tensor.hpp"

namespace tgq {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimizer over a fixed list of parameter tensors.
class Adam {
 public:
  Adam() = default;
  Adam(const std::vector<const Tensor*>& params, AdamConfig cfg = {});

  /// params[i] -= lr * mhat / (sqrt(vhat) + eps). grads must line up with
  /// the tensors passed at construction.
  void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, double lr);

  long steps() const noexcept { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

/// lr_k = lr0 * (lr_end / lr0)^(k / (n - 1)) for k in [0, n).
double exp_decay_lr(double lr0, double lr_end, long step, long total_steps);

}  // namespace tgq
