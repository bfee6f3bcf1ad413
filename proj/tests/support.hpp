#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "tgq/autograd.hpp"
#include "tgq/denoiser.hpp"
#include "tgq/rng.hpp"
#include "tgq/tensor.hpp"

namespace tgq::support {

/// Relative error with a floor on the denominator, so gradients that are
/// zero on both sides compare as equal instead of 0/0.
inline double rel_err(double a, double b, double floor = 1e-4) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central difference of f wrt every element of x.
inline Tensor numeric_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-6) {
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double dn = f(probe);
    probe[i] = orig;
    g[i] = (up - dn) / (2.0 * h);
  }
  return g;
}

inline double max_rel_err(const Tensor& a, const Tensor& b, double floor = 1e-4) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i], floor));
  return m;
}

inline Tensor uniform_tensor(Tensor::Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (auto& v : t.raw()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

inline DenoiserArch tiny_arch(std::size_t hidden = 6, std::size_t depth = 2, std::size_t embed = 4) {
  DenoiserArch a;
  a.hidden = hidden;
  a.depth = depth;
  a.embed_dim = embed;
  return a;
}

}  // namespace tgq::support
