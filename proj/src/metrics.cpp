#include "tgq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tgq/kernels.hpp"

namespace tgq {

double site_quant_error(const Tensor& acts, std::span<const int> timesteps, const LayerQuantTable& table,
                        const GroupAssignment& assignment) {
  const std::size_t rows = acts.rows(), cols = acts.cols();
  if (rows == 0 || timesteps.size() != rows) throw std::invalid_argument("site_quant_error: one timestep per row");
  if (table.groups.empty()) throw std::invalid_argument("site_quant_error: layer has no activation quantizer");
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const auto& q = table.groups.at(static_cast<std::size_t>(assignment.group_of(timesteps[i])));
    double row = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double a = acts.at(i, j);
      const double d = a - quantize_value(a, q);
      row += d * d;
    }
    total += row / static_cast<double>(cols);
  }
  return total / static_cast<double>(rows);
}

double quant_error(const DenoiserParams& model, const std::vector<LayerQuantTable>& tables,
                   const GroupAssignment& assignment, const Tensor& x_t, std::span<const int> timesteps) {
  if (timesteps.empty() || x_t.size() == 0) throw std::invalid_argument("quant_error: no samples");
  auto acts = hidden_inputs(model, x_t, timesteps);
  double total = 0.0;
  std::size_t sites = 0;
  for (std::size_t s = 0; s < acts.size(); ++s) {
    const auto& tab = tables.at(s + 1);
    total += site_quant_error(acts[s], timesteps, tab, assignment);
    ++sites;
  }
  return total / static_cast<double>(sites);
}

double median_bandwidth(const Tensor& x, const Tensor& y) {
  const std::size_t d = x.cols();
  if (y.cols() != d) throw std::invalid_argument("median_bandwidth: dimension mismatch");
  const std::size_t n = x.rows() + y.rows();
  auto row = [&](std::size_t i) { return i < x.rows() ? x.data().data() + i * d : y.data().data() + (i - x.rows()) * d; };
  std::vector<double> dist;
  dist.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    const double* a = row(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const double* b = row(j);
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
      dist.push_back(std::sqrt(s));
    }
  }
  if (dist.empty()) throw std::invalid_argument("median_bandwidth: need at least two points");
  auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
  std::nth_element(dist.begin(), mid, dist.end());
  return *mid;
}

double mmd2_unbiased(const Tensor& x, const Tensor& y, std::optional<double> bandwidth) {
  const std::size_t n = x.rows(), m = y.rows(), d = x.cols();
  if (n < 2 || m < 2) throw std::invalid_argument("mmd2_unbiased: need at least two samples on each side");
  if (y.cols() != d) throw std::invalid_argument("mmd2_unbiased: dimension mismatch");
  const double bw = bandwidth ? *bandwidth : median_bandwidth(x, y);
  if (!(bw > 0.0)) throw std::invalid_argument("mmd2_unbiased: bandwidth must be positive");
  const double gamma = 1.0 / (2.0 * bw * bw);
  const double kxx = kernels::rbf_sum(x.data(), n, x.data(), n, d, gamma, true);
  const double kyy = kernels::rbf_sum(y.data(), m, y.data(), m, d, gamma, true);
  const double kxy = kernels::rbf_sum(x.data(), n, y.data(), m, d, gamma, false);
  const double dn = static_cast<double>(n), dm = static_cast<double>(m);
  return kxx / (dn * (dn - 1.0)) + kyy / (dm * (dm - 1.0)) - 2.0 * kxy / (dn * dm);
}

std::vector<int> generation_record_steps(int steps, int stride) {
  std::vector<int> out;
  for (int t = steps; t >= 1; --t) {
    if (t % stride == 0) out.push_back(t);
  }
  return out;
}

SampleResult sample_model(const DenoiserParams& teacher, const QuantBundle* bundle, const NoiseSchedule& sched,
                          std::size_t n, Rng& rng, const std::vector<int>& record) {
  if (!bundle) return ddim_sample(predictor(teacher), sched, n, teacher.arch.data_dim, rng, record);
  GroupedQuantizer gq(bundle->tables, bundle->assignment);
  QuantContext ctx{bundle->student.weight_params, &gq};
  return ddim_sample(predictor(bundle->student.params, &ctx), sched, n, teacher.arch.data_dim, rng, record);
}

MetricsReport evaluate(const DenoiserParams& teacher, const QuantBundle* bundle, const ToyDataset& reference,
                       const NoiseSchedule& sched, std::size_t n_samples, Rng& rng) {
  MetricsReport rep;
  rep.n_samples = n_samples;
  const auto record = generation_record_steps(sched.steps());
  SampleResult gen = sample_model(teacher, bundle, sched, n_samples, rng, record);

  const std::size_t n_ref = std::min(n_samples, reference.points.rows());
  const std::size_t d = reference.points.cols();
  Tensor ref({n_ref, d}, std::vector<double>(reference.points.raw().begin(),
                                             reference.points.raw().begin() + static_cast<std::ptrdiff_t>(n_ref * d)));
  rep.bandwidth = median_bandwidth(gen.samples, ref);
  rep.mmd2 = mmd2_unbiased(gen.samples, ref, rep.bandwidth);

  if (bundle) {
    if (bundle->calib.size() > 0) {
      rep.c_error = quant_error(teacher, bundle->tables, bundle->assignment, bundle->calib.all(), bundle->calib.t);
    }
    std::vector<double> xs;
    std::vector<int> ts;
    for (const auto& [t, x] : gen.recorded) {
      xs.insert(xs.end(), x.raw().begin(), x.raw().end());
      ts.insert(ts.end(), x.rows(), t);
    }
    if (!ts.empty()) {
      rep.g_error = quant_error(teacher, bundle->tables, bundle->assignment, Tensor({ts.size(), d}, std::move(xs)), ts);
    }
    rep.entropy_trace = bundle->mean_entropy;
  }
  return rep;
}

}  // namespace tgq
