// File: dwr.h
// Description: Density-weighted regression. Per-sample weights are the log
// density ratio between the frozen suboptimal and expert estimators; the
// policy is trained by weighted Euclidean regression onto dataset actions, or
// by one of the comparison objectives.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "adrbc/data.h"
#include "adrbc/nn.h"
#include "adrbc/vqvae.h"

namespace adrbc::dwr {

enum class Objective { kUpperBound, kPlain, kMaxAde, kAdeDivergence, kBc };

std::string to_string(Objective objective);
/// Accepts "upper_bound" (alias "adr-bc"), "plain", "max_ade", "ade_divergence", "bc".
Objective objective_from_string(const std::string& name);
inline constexpr Objective kAllObjectives[] = {Objective::kUpperBound, Objective::kPlain, Objective::kMaxAde,
                                               Objective::kAdeDivergence, Objective::kBc};

struct ActionBounds {
  Vector low;
  Vector high;
};

// ---------------------------------------------------------------- policy

/// Deterministic MLP policy: a = center + half_range * tanh(net((s - mean) / std)).
class Policy {
 public:
  Policy(Index obs_dim, ActionBounds bounds, Index hidden, int layers, Rng& rng);
  Policy(nn::MlpParams net, ActionBounds bounds, std::optional<data::NormStats> norm = std::nullopt);

  Index obs_dim() const { return net_.in_dim(); }
  Index act_dim() const { return net_.out_dim(); }
  const nn::MlpParams& net() const { return net_; }
  nn::MlpParams& mutable_net() { return net_; }
  const ActionBounds& bounds() const { return bounds_; }
  const std::optional<data::NormStats>& norm() const { return norm_; }

  Matrix act(const Matrix& obs) const;
  Vector act(const Vector& obs) const;

  /// Network acting on raw observations: the normalization is folded into the
  /// first layer. Bounds are not part of the exported parameters.
  nn::MlpParams export_net() const;

 private:
  nn::MlpParams net_;
  ActionBounds bounds_;
  std::optional<data::NormStats> norm_;
};

struct PolicyPass {
  nn::ForwardCache cache;
  Matrix action;  // act_dim x b
};

PolicyPass policy_forward(const Policy& policy, const Matrix& obs);
/// Accumulates d/d params given d loss / d action.
void policy_backward(const Policy& policy, const PolicyPass& pass, const Matrix& grad_action,
                     nn::MlpParams& grads);

// ---------------------------------------------------------------- weights

/// lambda_i = log p_sub(a_i | s_i) - log p_exp(a_i | s_i), both estimated with
/// L importance samples from the same noise (a copy of `rng` drives the
/// suboptimal estimate). Throws ContractError unless both are frozen.
Vector density_weight(const vqvae::DensityEstimator& expert, const vqvae::DensityEstimator& subopt,
                      const data::Batch& batch, int samples, Rng& rng);

/// Clamp to [-w_max, w_max].
Vector clamp_weights(const Vector& weights, double w_max);

// ---------------------------------------------------------------- objectives
//
// Each returns the batch loss and, when `grads` is non-null, accumulates its
// gradient with respect to the policy network.

/// Per-column Euclidean residual norms ||pi(s_i) - a_i||.
Vector residual_norms(const Matrix& action, const Matrix& target);

/// mean_i w_i * ||pi(s_i) - a_i||
double dwr_loss(const Vector& weights, const Policy& policy, const data::Batch& batch,
                nn::MlpParams* grads = nullptr);
/// mean(w) * mean_i ||pi(s_i) - a_i||
double dwr_upper_bound_loss(const Vector& weights, const Policy& policy, const data::Batch& batch,
                            nn::MlpParams* grads = nullptr);
/// mean_i ||pi(s_i) - a_i||
double bc_loss(const Policy& policy, const data::Batch& batch, nn::MlpParams* grads = nullptr);
/// -mean_i log p_exp(pi(s_i) | s_i)
double max_ade_loss(const vqvae::DensityEstimator& expert, const Policy& policy, const data::Batch& batch,
                    int samples, Rng& rng, nn::MlpParams* grads = nullptr,
                    vqvae::GradMode mode = vqvae::GradMode::kStraightThrough);
/// mean_i [log p_sub(pi(s_i) | s_i) - log p_exp(pi(s_i) | s_i)], shared noise.
double ade_divergence_loss(const vqvae::DensityEstimator& expert, const vqvae::DensityEstimator& subopt,
                           const Policy& policy, const data::Batch& batch, int samples, Rng& rng,
                           nn::MlpParams* grads = nullptr,
                           vqvae::GradMode mode = vqvae::GradMode::kStraightThrough);

// ---------------------------------------------------------------- training

struct DwrConfig {
  Objective objective = Objective::kUpperBound;
  Index batch_size = 64;
  std::int64_t iterations = 20000;
  double learning_rate = 1e-4;
  std::int64_t eval_interval = 1000;
  int importance_samples = 1;
  std::optional<double> weight_clamp;
  bool normalize_obs = false;
  Index hidden_dim = 256;
  int layers = 4;

  void validate() const;
};

struct PolicyMetricRow {
  std::int64_t iteration = 0;
  double loss = 0.0;
  double mean_weight = 0.0;
  double eval_score_mean = 0.0;
  double eval_score_std = 0.0;
};

/// Returns (mean, std) of normalized scores.
using Evaluator = std::function<std::pair<double, double>(const Policy&)>;

struct PolicyTrainResult {
  Policy policy;
  std::vector<PolicyMetricRow> metrics;
};

/// Trains on batches of `train_ds`: the mixed corpus for the density objectives
/// and the demonstrations for kBc (which ignores the estimators, so they may be
/// null). The training loop runs inside a data::TrainingScope; `evaluate` is
/// called every eval_interval iterations and after the last one. With no
/// evaluator the score columns hold NaN.
PolicyTrainResult train_policy(const vqvae::DensityEstimator* expert, const vqvae::DensityEstimator* subopt,
                               const data::Dataset& train_ds, const ActionBounds& bounds, const DwrConfig& cfg,
                               Rng& rng, const Evaluator& evaluate = {});

// ---------------------------------------------------------------- tabular identity

/// Finite problem: state weights rho(s) and three conditional action tables
/// (states x actions, rows sum to 1).
struct TabularProblem {
  Vector rho;
  Matrix pi;
  Matrix p_star;
  Matrix p_hat;
};

TabularProblem random_tabular(Index states, Index actions, Rng& rng);

/// sum_s rho(s) sum_a pi(a|s) [log(pi / p_star) - log(pi / p_hat)]
double kl_gap(const TabularProblem& p);
/// sum_s rho(s) sum_a pi(a|s) * weight(s, a) with weight = log p_hat - log p_star
/// multiplied by `sign` (+1 normally).
double weighted_form(const TabularProblem& p, double sign = 1.0);

// ---------------------------------------------------------------- timing

struct TimingRow {
  Index batch_size = 0;
  double dwr_seconds = 0.0;             // median per update
  double ade_divergence_seconds = 0.0;  // median per update
};

/// Median wall time of one full policy update (weights, loss, backward, Adam)
/// for the upper-bound objective and for ADE-divergence at each batch size.
std::vector<TimingRow> time_updates(const vqvae::DensityEstimator& expert, const vqvae::DensityEstimator& subopt,
                                    const data::Dataset& ds, const ActionBounds& bounds, const DwrConfig& cfg,
                                    const std::vector<Index>& batch_sizes, int repeats, Rng& rng);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace adrbc::dwr
