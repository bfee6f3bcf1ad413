#pragma once

// Data-parallel inner loops. Every kernel has a serial reference and an
// OpenMP version; both accumulate in the same order, so results are
// bit-identical regardless of thread count.

#include <cstddef>
#include <span>

namespace tgq::kernels {

enum class Trans { kNo, kYes };

struct GemmShape {
  std::size_t m;  // rows of op(A) and C
  std::size_t n;  // cols of op(B) and C
  std::size_t k;  // shared dimension
};

namespace serial {

/// C = op(A) * op(B), or C += ... when accumulate is set. A is stored
/// row-major as (m x k) or (k x m) when transposed; likewise B.
void gemm(Trans ta, Trans tb, GemmShape s, std::span<const double> a, std::span<const double> b,
          std::span<double> c, bool accumulate = false);

/// Sum over i, j of exp(-gamma * |x_i - y_j|^2); skips i == j when
/// exclude_diagonal is set (x and y must then be the same set).
double rbf_sum(std::span<const double> x, std::size_t nx, std::span<const double> y, std::size_t ny,
               std::size_t dim, double gamma, bool exclude_diagonal);

/// Uniform fake quantization of every element.
void fake_quantize(std::span<const double> x, std::span<double> out, double scale, double z_min, double z_max);

}  // namespace serial

namespace parallel {

void gemm(Trans ta, Trans tb, GemmShape s, std::span<const double> a, std::span<const double> b,
          std::span<double> c, bool accumulate = false);

double rbf_sum(std::span<const double> x, std::size_t nx, std::span<const double> y, std::size_t ny,
               std::size_t dim, double gamma, bool exclude_diagonal);

void fake_quantize(std::span<const double> x, std::span<double> out, double scale, double z_min, double z_max);

}  // namespace parallel

// Default entry points used by the rest of the library.
using parallel::fake_quantize;
using parallel::gemm;
using parallel::rbf_sum;

/// Number of OpenMP threads available (1 when built without OpenMP).
int max_threads();

}  // namespace tgq::kernels
