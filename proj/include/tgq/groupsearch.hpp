#pragma once

// Differentiable assignment of timesteps to G activation-quantizer groups.
//
// During search each quantized activation is the sigma-weighted sum of its
// G group quantizers, sigma^t = softmax(logits[t]). The logits are shared by
// all layers; every layer owns its own G scales. The objective is the
// distillation error against the full-precision teacher plus lambda times
// the mean entropy of sigma^t over the batch. finalize() keeps the group
// with the largest weight per timestep.

#include <cstddef>
#include <span>
#include <vector>

#include "tgq/autograd.hpp"
#include "tgq/denoiser.hpp"
#include "tgq/optim.hpp"
#include "tgq/quantizer.hpp"
#include "tgq/tensor.hpp"

namespace tgq {

/// Group index (0-based) for each timestep 1..T.
struct GroupAssignment {
  std::vector<int> group;

  int group_of(int t) const { return group.at(static_cast<std::size_t>(t - 1)); }
  int steps() const noexcept { return static_cast<int>(group.size()); }
  friend bool operator==(const GroupAssignment&, const GroupAssignment&) = default;
};

/// Softmax of one row; sums to one.
std::vector<double> softmax(std::span<const double> logits);
/// Sum of -p log p with 0 log 0 = 0.
double entropy(std::span<const double> probs);

class GroupSearchState {
 public:
  /// `sites` holds one template per quantized activation site (layers
  /// 1..depth) carrying the bit-width; every group starts at `initial_scale`
  /// of its site times `spread[g]` (empty spread means all ones).
  GroupSearchState(int steps, int groups, std::vector<QuantParams> sites, double lambda,
                   std::vector<double> spread = {});

  int steps() const noexcept { return steps_; }
  int groups() const noexcept { return groups_; }
  std::size_t sites() const noexcept { return site_params_.size(); }
  double lambda() const noexcept { return lambda_; }

  Tensor& logits() noexcept { return logits_; }
  const Tensor& logits() const noexcept { return logits_; }
  Tensor& scales(std::size_t site) { return scales_.at(site); }
  const Tensor& scales(std::size_t site) const { return scales_.at(site); }
  const QuantParams& site_template(std::size_t site) const { return site_params_.at(site); }

  std::vector<double> sigma(int t) const;
  /// Entropy of sigma^t.
  double entropy_at(int t) const;
  double mean_max_sigma() const;

  /// Per-layer tables (layer 0 carries only its weight quantizer).
  std::vector<LayerQuantTable> tables(const std::vector<QuantParams>& weight_params) const;

 private:
  int steps_;
  int groups_;
  double lambda_;
  Tensor logits_;                        // [T x G]
  std::vector<Tensor> scales_;           // per site, [G]
  std::vector<QuantParams> site_params_;
};

/// Row i of the output is sum_g sigma_g^{t_i} * quantize(x_i; scales[g]).
/// Gradients reach x (straight-through), scales (LSQ) and logits (softmax).
ag::Var mixture_quantize(const ag::Var& x, std::span<const int> timesteps, const ag::Var& logits,
                         const ag::Var& scales, const QuantParams& site);

/// Mean over the batch of the entropy of sigma^{t_i}.
ag::Var entropy_term(const ag::Var& logits, std::span<const int> timesteps);

/// Graph leaves for one optimization step.
struct SearchVars {
  ag::Var logits;
  std::vector<ag::Var> scales;
};
SearchVars search_vars(const GroupSearchState& state, bool requires_grad);

/// ActivationQuantizer backed by the soft mixture.
class MixtureQuantizer final : public ActivationQuantizer {
 public:
  MixtureQuantizer(const GroupSearchState& state, const SearchVars& vars) : state_(state), vars_(vars) {}
  ag::Var apply(const ag::Var& x, std::size_t layer, std::span<const int> timesteps) const override;

 private:
  const GroupSearchState& state_;
  const SearchVars& vars_;
};

/// ActivationQuantizer with a hard assignment: row i uses group g(t_i).
class GroupedQuantizer final : public ActivationQuantizer {
 public:
  GroupedQuantizer(std::vector<LayerQuantTable> tables, GroupAssignment assignment);
  ag::Var apply(const ag::Var& x, std::size_t layer, std::span<const int> timesteps) const override;

  const std::vector<LayerQuantTable>& tables() const noexcept { return tables_; }
  const GroupAssignment& assignment() const noexcept { return assignment_; }

 private:
  std::vector<LayerQuantTable> tables_;
  GroupAssignment assignment_;
};

/// The quantized student: statically weight-quantized parameters plus the
/// weight quantizers used to produce them.
struct QuantModel {
  DenoiserParams params;
  std::vector<QuantParams> weight_params;
};

struct SearchBatch {
  Tensor x_t;                 // [B x D]
  std::vector<int> timesteps; // B entries
  Tensor teacher_eps;         // [B x D], full-precision prediction
};

struct SearchObjective {
  ag::Var total;        // J = J_d + lambda * J_e
  double distill = 0.0; // J_d
  double entropy = 0.0; // J_e
};

/// J = mean_i ||eps_fp - eps_q||^2 + lambda * J_e.
SearchObjective search_objective(const QuantModel& student, const SearchBatch& batch, const GroupSearchState& state,
                                 const SearchVars& vars);

struct SearchOptimConfig {
  double scale_lr = 5e-3;
  double logit_lr = 5e-3;
  double min_scale = 1e-8;
};

/// Adam over the logits and every site's scales.
class SearchOptimizer {
 public:
  explicit SearchOptimizer(const GroupSearchState& state);
  /// One gradient step at the given learning rates. Returns the loss
  /// components evaluated before the update. Throws on a non-finite loss.
  SearchObjective step(GroupSearchState& state, const QuantModel& student, const SearchBatch& batch,
                       const SearchOptimConfig& cfg);

 private:
  Adam logits_opt_;
  Adam scales_opt_;
};

/// argmax_g sigma_g^t per timestep; ties resolve to the lowest group.
GroupAssignment finalize(const GroupSearchState& state);

}  // namespace tgq
