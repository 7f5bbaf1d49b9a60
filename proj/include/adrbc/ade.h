// File: ade.h
// Description: Adversarial density estimation. The expert estimator maximizes
// its ELBO on expert samples plus a sigmoid contrast that raises expert density
// and lowers suboptimal density; the suboptimal estimator is trained plainly
// unless lambda2 > 0.

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "adrbc/data.h"
#include "adrbc/vqvae.h"

namespace adrbc::ade {

/// What the sigmoid is applied to.
///  kLogDensity: sigma(d) with d the per-sample log-density surrogate (default)
///  kDensity:    sigma(exp(d)), the literal density reading
enum class SurrogateInput { kLogDensity, kDensity };

/// Where d comes from.
///  kElbo:       d = -(nll + kl) from the training pass (default)
///  kImportance: d = importance-sampled log-density with `importance_samples` draws
enum class SurrogateSource { kElbo, kImportance };

struct AdeConfig {
  double lambda1 = 1.0;
  double lambda2 = 0.0;
  Index batch_size = 64;
  std::int64_t iterations = 5000;
  double learning_rate = 1e-3;
  std::int64_t eval_interval = 1000;
  Index eval_batch_size = 256;
  std::int64_t dead_code_steps = 2000;  // 0 disables re-seeding
  SurrogateInput input = SurrogateInput::kLogDensity;
  SurrogateSource source = SurrogateSource::kElbo;
  int importance_samples = 1;

  void validate() const;
};

double sigmoid(double x);

/// mean sigma(f(d_pos)) - mean sigma(f(d_neg)); f is identity or exp.
double adversarial_term(const Vector& d_pos, const Vector& d_neg,
                        SurrogateInput input = SurrogateInput::kLogDensity);

/// J_iota of `est` on the two batches. Noise for the positive batch is drawn
/// before the negative batch.
double adversarial_term(const vqvae::DensityEstimator& est, const data::Batch& pos,
                        const data::Batch& neg, const AdeConfig& cfg, Rng& rng);

struct LossValue {
  double loss = 0.0;    // value minimized by gradient descent
  double elbo = 0.0;    // mean per-sample ELBO loss on the own batch (incl. VQ terms)
  double j_iota = 0.0;  // 0 when the contrast weight is 0
  std::vector<Index> codes;  // codes selected for the own batch
  Matrix z_e;                // own-batch encoder samples
};

/// Expert objective: mean ELBO(expert) - lambda1 * J_iota(expert, subopt).
/// With lambda1 = 0 the suboptimal batch is ignored and no noise is drawn for
/// it. Accumulates parameter gradients into `grads` when non-null.
/// Throws ArgumentError unless est.role() is expert.
LossValue ade_loss(const vqvae::DensityEstimator& est, const data::Batch& expert,
                   const data::Batch& subopt, const AdeConfig& cfg, Rng& rng,
                   vqvae::EstimatorParams* grads = nullptr,
                   vqvae::GradMode mode = vqvae::GradMode::kStraightThrough);

/// Suboptimal objective: mean ELBO(subopt) - lambda2 * J_iota(subopt, expert).
/// Throws ArgumentError unless est.role() is suboptimal.
LossValue subopt_loss(const vqvae::DensityEstimator& est, const data::Batch& subopt,
                      const data::Batch& expert, const AdeConfig& cfg, Rng& rng,
                      vqvae::EstimatorParams* grads = nullptr,
                      vqvae::GradMode mode = vqvae::GradMode::kStraightThrough);

struct MetricRow {
  std::int64_t iteration = 0;
  double expert_elbo = 0.0;
  double subopt_elbo = 0.0;
  double j_iota = 0.0;
  int codebook_active_count = 0;
};

struct TrainResult {
  vqvae::DensityEstimator expert;
  vqvae::DensityEstimator subopt;
  std::vector<MetricRow> metrics;
  std::vector<double> expert_loss_trace;  // training loss per iteration
  std::vector<double> subopt_loss_trace;
};

/// Paired updates: expert estimator first, then suboptimal, each on fresh
/// batches from its own random stream. Metrics are computed on separate
/// evaluation batches every `eval_interval` iterations and after the last one.
/// Both returned estimators are frozen. Runs inside a data::TrainingScope.
TrainResult train_density(const data::Dataset& expert_ds, const data::Dataset& subopt_ds,
                          const vqvae::EstimatorConfig& est_cfg, const AdeConfig& cfg, Rng& rng);

/// Single-estimator ELBO training on one dataset (no contrast), returning the
/// unfrozen estimator and its loss trace. Used for the linear-Gaussian toy.
struct ElboTrainResult {
  vqvae::DensityEstimator est;
  std::vector<double> loss_trace;
};
ElboTrainResult train_elbo(const data::Dataset& ds, const vqvae::EstimatorConfig& est_cfg,
                           vqvae::Role role, const AdeConfig& cfg, Rng& rng);

}  // namespace adrbc::ade
