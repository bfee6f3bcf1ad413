#include "tgq/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tgq::kernels {

namespace {

void check_gemm(Trans ta, Trans tb, GemmShape s, std::span<const double> a, std::span<const double> b,
                std::span<double> c) {
  (void)ta;
  (void)tb;
  if (a.size() != s.m * s.k || b.size() != s.k * s.n || c.size() != s.m * s.n) {
    throw std::invalid_argument("gemm: buffer sizes do not match the requested shape");
  }
}

inline double quantize_one(double x, double scale, double z_min, double z_max) {
  return scale * std::clamp(std::round(x / scale), z_min, z_max);
}

// Row i of the kernel matrix; summed left to right.
inline double rbf_row(const double* xi, std::span<const double> y, std::size_t ny, std::size_t dim, double gamma,
                      std::size_t skip) {
  double acc = 0.0;
  for (std::size_t j = 0; j < ny; ++j) {
    if (j == skip) continue;
    const double* yj = y.data() + j * dim;
    double d2 = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = xi[d] - yj[d];
      d2 += diff * diff;
    }
    acc += std::exp(-gamma * d2);
  }
  return acc;
}

}  // namespace

namespace serial {

void gemm(Trans ta, Trans tb, GemmShape s, std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate) {
  check_gemm(ta, tb, s, a, b, c);
  for (std::size_t i = 0; i < s.m; ++i) {
    for (std::size_t j = 0; j < s.n; ++j) {
      double acc = accumulate ? c[i * s.n + j] : 0.0;
      for (std::size_t p = 0; p < s.k; ++p) {
        const double av = ta == Trans::kNo ? a[i * s.k + p] : a[p * s.m + i];
        const double bv = tb == Trans::kNo ? b[p * s.n + j] : b[j * s.k + p];
        acc += av * bv;
      }
      c[i * s.n + j] = acc;
    }
  }
}

double rbf_sum(std::span<const double> x, std::size_t nx, std::span<const double> y, std::size_t ny, std::size_t dim,
               double gamma, bool exclude_diagonal) {
  double total = 0.0;
  for (std::size_t i = 0; i < nx; ++i) {
    total += rbf_row(x.data() + i * dim, y, ny, dim, gamma, exclude_diagonal ? i : ny);
  }
  return total;
}

void fake_quantize(std::span<const double> x, std::span<double> out, double scale, double z_min, double z_max) {
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = quantize_one(x[i], scale, z_min, z_max);
}

}  // namespace serial

namespace parallel {

void gemm(Trans ta, Trans tb, GemmShape s, std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate) {
  check_gemm(ta, tb, s, a, b, c);
  const auto m = static_cast<long>(s.m);
  if (tb == Trans::kYes) {
    // Dot-product form; each (i, j) is independent.
#pragma omp parallel for schedule(static)
    for (long ii = 0; ii < m; ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      for (std::size_t j = 0; j < s.n; ++j) {
        double acc = accumulate ? c[i * s.n + j] : 0.0;
        const double* bj = b.data() + j * s.k;
        if (ta == Trans::kNo) {
          const double* ai = a.data() + i * s.k;
          for (std::size_t p = 0; p < s.k; ++p) acc += ai[p] * bj[p];
        } else {
          for (std::size_t p = 0; p < s.k; ++p) acc += a[p * s.m + i] * bj[p];
        }
        c[i * s.n + j] = acc;
      }
    }
    return;
  }
  // Row-streaming form: c_i += a_ip * b_p for p ascending, the same
  // accumulation order as the reference.
#pragma omp parallel for schedule(static)
  for (long ii = 0; ii < m; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* ci = c.data() + i * s.n;
    if (!accumulate) std::fill(ci, ci + s.n, 0.0);
    for (std::size_t p = 0; p < s.k; ++p) {
      const double av = ta == Trans::kNo ? a[i * s.k + p] : a[p * s.m + i];
      const double* bp = b.data() + p * s.n;
      for (std::size_t j = 0; j < s.n; ++j) ci[j] += av * bp[j];
    }
  }
}

double rbf_sum(std::span<const double> x, std::size_t nx, std::span<const double> y, std::size_t ny, std::size_t dim,
               double gamma, bool exclude_diagonal) {
  std::vector<double> partial(nx, 0.0);
  const auto n = static_cast<long>(nx);
#pragma omp parallel for schedule(dynamic, 16)
  for (long ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    partial[i] = rbf_row(x.data() + i * dim, y, ny, dim, gamma, exclude_diagonal ? i : ny);
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

void fake_quantize(std::span<const double> x, std::span<double> out, double scale, double z_min, double z_max) {
  const auto n = static_cast<long>(x.size());
#pragma omp parallel for schedule(static) if (n > 4096)
  for (long i = 0; i < n; ++i) out[i] = quantize_one(x[i], scale, z_min, z_max);
}

}  // namespace parallel

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace tgq::kernels
