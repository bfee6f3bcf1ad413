#include "tgq/groupsearch.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace tgq {

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (p.empty()) return p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t g = 0; g < p.size(); ++g) {
    p[g] = std::exp(logits[g] - mx);
    z += p[g];
  }
  for (auto& v : p) v /= z;
  return p;
}

double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

namespace {

std::span<const double> logit_row(const Tensor& logits, int t) {
  const std::size_t g = logits.cols();
  if (t < 1 || static_cast<std::size_t>(t) > logits.rows()) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [1, " + std::to_string(logits.rows()) + "]");
  }
  return logits.data().subspan(static_cast<std::size_t>(t - 1) * g, g);
}

// sigma per row of a batch, [B x G].
Tensor batch_sigma(const Tensor& logits, std::span<const int> timesteps) {
  const std::size_t g = logits.cols();
  Tensor out({timesteps.size(), g});
  for (std::size_t i = 0; i < timesteps.size(); ++i) {
    auto p = softmax(logit_row(logits, timesteps[i]));
    std::copy(p.begin(), p.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * g));
  }
  return out;
}

}  // namespace

GroupSearchState::GroupSearchState(int steps, int groups, std::vector<QuantParams> sites, double lambda,
                                   std::vector<double> spread)
    : steps_(steps), groups_(groups), lambda_(lambda), site_params_(std::move(sites)) {
  if (steps < 1) throw std::invalid_argument("group search needs T >= 1");
  if (groups < 1) throw std::invalid_argument("group search needs G >= 1");
  if (!spread.empty() && spread.size() != static_cast<std::size_t>(groups)) {
    throw std::invalid_argument("scale spread must have one entry per group");
  }
  logits_ = Tensor({static_cast<std::size_t>(steps), static_cast<std::size_t>(groups)});
  for (const auto& site : site_params_) {
    site.validate();
    Tensor s({static_cast<std::size_t>(groups)}, site.scale);
    if (!spread.empty()) {
      for (std::size_t g = 0; g < s.size(); ++g) s[g] *= spread[g];
    }
    scales_.push_back(std::move(s));
  }
}

std::vector<double> GroupSearchState::sigma(int t) const { return softmax(logit_row(logits_, t)); }

double GroupSearchState::entropy_at(int t) const { return entropy(sigma(t)); }

double GroupSearchState::mean_max_sigma() const {
  double acc = 0.0;
  for (int t = 1; t <= steps_; ++t) {
    auto s = sigma(t);
    acc += *std::max_element(s.begin(), s.end());
  }
  return acc / steps_;
}

std::vector<LayerQuantTable> GroupSearchState::tables(const std::vector<QuantParams>& weight_params) const {
  if (weight_params.size() != site_params_.size() + 1) {
    throw std::invalid_argument("tables: expected one weight quantizer per linear layer");
  }
  std::vector<LayerQuantTable> out;
  out.push_back({0, {}, weight_params[0]});
  for (std::size_t s = 0; s < site_params_.size(); ++s) {
    LayerQuantTable tab{s + 1, {}, weight_params[s + 1]};
    for (int g = 0; g < groups_; ++g) {
      QuantParams q = site_params_[s];
      if (!q.is_identity()) q.scale = scales_[s][static_cast<std::size_t>(g)];
      tab.groups.push_back(q);
    }
    out.push_back(std::move(tab));
  }
  return out;
}

ag::Var mixture_quantize(const ag::Var& x, std::span<const int> timesteps, const ag::Var& logits,
                         const ag::Var& scales, const QuantParams& site) {
  if (site.is_identity()) return x;
  const Tensor& xv = x->value;
  const std::size_t rows = xv.rows(), cols = xv.cols();
  const std::size_t groups = logits->value.cols();
  if (timesteps.size() != rows) throw std::invalid_argument("mixture_quantize: one timestep per row required");
  if (scales->value.size() != groups) throw std::invalid_argument("mixture_quantize: scale count != group count");
  for (double s : scales->value.raw()) {
    if (!(s > 0.0)) throw std::invalid_argument("mixture_quantize: non-positive scale " + std::to_string(s));
  }
  Tensor sig = batch_sigma(logits->value, timesteps);
  std::vector<QuantParams> qs(groups, site);
  for (std::size_t g = 0; g < groups; ++g) qs[g].scale = scales->value[g];

  Tensor out(xv.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (std::size_t g = 0; g < groups; ++g) acc += sig.at(i, g) * quantize_value(xv.at(i, j), qs[g]);
      out.at(i, j) = acc;
    }
  }
  std::vector<int> ts(timesteps.begin(), timesteps.end());
  Tensor y = out;
  return ag::custom(
      std::move(out), {x, logits, scales},
      [x, logits, qs, sig = std::move(sig), ts = std::move(ts), y = std::move(y), rows, cols, groups](
          const Tensor& g, const std::vector<bool>& need) {
        const Tensor& xv = x->value;
        Tensor gx, gl, gs;
        if (need[0]) gx = Tensor(xv.shape());
        std::vector<double> ds(groups, 0.0);
        // d out_ij / d logit_k = sigma_k (q_k(x_ij) - out_ij)
        std::vector<double> row_dlog(groups);
        if (need[1]) gl = Tensor(logits->value.shape());
        for (std::size_t i = 0; i < rows; ++i) {
          std::fill(row_dlog.begin(), row_dlog.end(), 0.0);
          for (std::size_t j = 0; j < cols; ++j) {
            const double xij = xv.at(i, j);
            const double gij = g.at(i, j);
            double pass = 0.0;
            for (std::size_t k = 0; k < groups; ++k) {
              const QuantParams& q = qs[k];
              const double v = xij / q.scale;
              const double sk = sig.at(i, k);
              if (v >= q.z_min && v <= q.z_max) pass += sk;
              if (need[2]) ds[k] += (gij * sk) * lsq_scale_derivative(xij, q);
              if (need[1]) row_dlog[k] += gij * (quantize_value(xij, q) - y.at(i, j));
            }
            if (need[0]) gx.at(i, j) = gij * pass;
          }
          if (need[1]) {
            const std::size_t base = static_cast<std::size_t>(ts[i] - 1) * groups;
            for (std::size_t k = 0; k < groups; ++k) gl[base + k] += sig.at(i, k) * row_dlog[k];
          }
        }
        if (need[2]) {
          gs = Tensor({groups});
          for (std::size_t k = 0; k < groups; ++k) gs[k] = ds[k] * lsq_grad_scale(rows * cols, qs[k].z_max);
        }
        return std::vector<Tensor>{std::move(gx), std::move(gl), std::move(gs)};
      },
      "mixture_quantize");
}

ag::Var entropy_term(const ag::Var& logits, std::span<const int> timesteps) {
  if (timesteps.empty()) throw std::invalid_argument("entropy_term: empty batch");
  const std::size_t b = timesteps.size();
  const std::size_t groups = logits->value.cols();
  Tensor sig = batch_sigma(logits->value, timesteps);
  std::vector<double> h(b);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    h[i] = entropy(sig.data().subspan(i * groups, groups));
    total += h[i];
  }
  std::vector<int> ts(timesteps.begin(), timesteps.end());
  return ag::custom(
      Tensor::scalar(total / static_cast<double>(b)), {logits},
      [logits, sig = std::move(sig), h = std::move(h), ts = std::move(ts), b, groups](const Tensor& g,
                                                                                     const std::vector<bool>&) {
        // dH/dz_k = -sigma_k (log sigma_k + H)
        Tensor gl(logits->value.shape());
        const double scale = g[0] / static_cast<double>(b);
        for (std::size_t i = 0; i < b; ++i) {
          const std::size_t base = static_cast<std::size_t>(ts[i] - 1) * groups;
          for (std::size_t k = 0; k < groups; ++k) {
            const double p = sig.at(i, k);
            if (p > 0.0) gl[base + k] += scale * (-p * (std::log(p) + h[i]));
          }
        }
        return std::vector<Tensor>{std::move(gl)};
      },
      "entropy");
}

SearchVars search_vars(const GroupSearchState& state, bool requires_grad) {
  SearchVars v;
  v.logits = ag::leaf(state.logits(), requires_grad, "logits");
  for (std::size_t s = 0; s < state.sites(); ++s) {
    v.scales.push_back(ag::leaf(state.scales(s), requires_grad, "scales" + std::to_string(s + 1)));
  }
  return v;
}

ag::Var MixtureQuantizer::apply(const ag::Var& x, std::size_t layer, std::span<const int> timesteps) const {
  if (layer == 0 || layer > state_.sites()) {
    throw std::invalid_argument("mixture quantizer: no activation site for layer " + std::to_string(layer));
  }
  return mixture_quantize(x, timesteps, vars_.logits, vars_.scales[layer - 1], state_.site_template(layer - 1));
}

GroupedQuantizer::GroupedQuantizer(std::vector<LayerQuantTable> tables, GroupAssignment assignment)
    : tables_(std::move(tables)), assignment_(std::move(assignment)) {
  for (const auto& tab : tables_) {
    for (const auto& q : tab.groups) {
      q.validate();
    }
    for (int g : assignment_.group) {
      if (!tab.groups.empty() && (g < 0 || static_cast<std::size_t>(g) >= tab.groups.size())) {
        throw std::invalid_argument("group assignment references a missing group " + std::to_string(g));
      }
    }
  }
}

ag::Var GroupedQuantizer::apply(const ag::Var& x, std::size_t layer, std::span<const int> timesteps) const {
  if (layer >= tables_.size() || tables_[layer].groups.empty()) {
    throw std::invalid_argument("grouped quantizer: no activation quantizer for layer " + std::to_string(layer));
  }
  const auto& groups = tables_[layer].groups;
  const Tensor& xv = x->value;
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (timesteps.size() != rows) throw std::invalid_argument("grouped quantizer: one timestep per row required");
  Tensor out(xv.shape());
  std::vector<QuantParams> row_q(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    row_q[i] = groups[static_cast<std::size_t>(assignment_.group_of(timesteps[i]))];
    for (std::size_t j = 0; j < cols; ++j) out.at(i, j) = quantize_value(xv.at(i, j), row_q[i]);
  }
  return ag::custom(
      std::move(out), {x},
      [x, row_q = std::move(row_q), cols](const Tensor& g, const std::vector<bool>&) {
        Tensor gx(g.shape());
        for (std::size_t i = 0; i < row_q.size(); ++i) {
          const auto& q = row_q[i];
          for (std::size_t j = 0; j < cols; ++j) {
            const double xv_ij = x->value.at(i, j);
            const bool inside = q.is_identity() || (xv_ij / q.scale >= q.z_min && xv_ij / q.scale <= q.z_max);
            gx.at(i, j) = inside ? g.at(i, j) : 0.0;
          }
        }
        return std::vector<Tensor>{std::move(gx)};
      },
      "grouped_quantize");
}

SearchObjective search_objective(const QuantModel& student, const SearchBatch& batch, const GroupSearchState& state,
                                 const SearchVars& vars) {
  const std::size_t b = batch.timesteps.size();
  if (b == 0 || batch.x_t.rows() != b || !batch.teacher_eps.same_shape(batch.x_t)) {
    throw std::invalid_argument("search_objective: malformed batch");
  }
  MixtureQuantizer mq(state, vars);
  QuantContext ctx{student.weight_params, &mq};
  ParamVars pv = as_vars(student.params, false);
  ag::Var pred = denoise(pv, student.params.arch, batch.x_t, batch.timesteps, &ctx);
  ag::Var jd = ag::mul(ag::sum(ag::square(ag::sub(pred, ag::constant(batch.teacher_eps)))), 1.0 / static_cast<double>(b));
  ag::Var je = entropy_term(vars.logits, batch.timesteps);
  SearchObjective obj;
  obj.distill = jd->value[0];
  obj.entropy = je->value[0];
  obj.total = ag::add(jd, ag::mul(je, state.lambda()));
  return obj;
}

SearchOptimizer::SearchOptimizer(const GroupSearchState& state) : logits_opt_({&state.logits()}) {
  std::vector<const Tensor*> sc;
  for (std::size_t s = 0; s < state.sites(); ++s) sc.push_back(&state.scales(s));
  scales_opt_ = Adam(sc);
}

SearchObjective SearchOptimizer::step(GroupSearchState& state, const QuantModel& student, const SearchBatch& batch,
                                      const SearchOptimConfig& cfg) {
  SearchVars vars = search_vars(state, true);
  SearchObjective obj = search_objective(student, batch, state, vars);
  const double loss = obj.total->value[0];
  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg << "group search produced a non-finite loss (J_d=" << obj.distill << ", J_e=" << obj.entropy
        << ", batch of " << batch.timesteps.size() << ")";
    throw std::runtime_error(msg.str());
  }
  ag::backward(obj.total);
  logits_opt_.step({&state.logits()}, {&vars.logits->grad}, cfg.logit_lr);
  std::vector<Tensor*> ps;
  std::vector<const Tensor*> gs;
  for (std::size_t s = 0; s < state.sites(); ++s) {
    ps.push_back(&state.scales(s));
    gs.push_back(&vars.scales[s]->grad);
  }
  scales_opt_.step(ps, gs, cfg.scale_lr);
  for (std::size_t s = 0; s < state.sites(); ++s) {
    for (auto& v : state.scales(s).raw()) v = std::max(v, cfg.min_scale);
  }
  return obj;
}

GroupAssignment finalize(const GroupSearchState& state) {
  GroupAssignment a;
  a.group.resize(static_cast<std::size_t>(state.steps()));
  for (int t = 1; t <= state.steps(); ++t) {
    auto s = state.sigma(t);
    a.group[static_cast<std::size_t>(t - 1)] = static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin());
  }
  return a;
}

}  // namespace tgq
