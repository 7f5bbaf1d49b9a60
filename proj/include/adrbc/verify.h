// File: verify.h
// Description: Property checks run by `adrbc verify` and the acceptance binary.
// Every check reports pass/fail, a witness string and its wall time.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "adrbc/ade.h"
#include "adrbc/data.h"
#include "adrbc/gradcheck.h"
#include "adrbc/vqvae.h"

namespace adrbc::verify {

struct Options {
  std::uint64_t seed = 0;
  int points = 20;             // random parameter points per gradient check
  double gradient_tol = 1e-4;  // max relative error
  double eps = 1e-5;
  /// Mutation switch: negates every density weight the checks compute.
  bool flip_weight_sign = false;
};

struct CheckResult {
  std::string module;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// "PASS vqvae/elbo_bound (1.234s) detail"
std::string format(const CheckResult& r);

// ---------------------------------------------------------------- density-weight identity

/// 100 random tables, |KL gap - weighted form| <= 1e-12.
CheckResult density_weight_identity(const Options& opt);

// ---------------------------------------------------------------- gradients

struct GradientCheck {
  std::string module;
  std::string name;
  /// Runs one random point (seeded by the given stream) and returns its report.
  std::function<gradcheck::Report(Rng&)> point;
};

/// Every training objective: MLP loss, ELBO + VQ (exact quantizer routing and
/// the pass-through path), importance-sampled density, J(Theta*), the two
/// weighted regressions, BC, Max-ADE and ADE-divergence.
std::vector<GradientCheck> gradient_checks(const Options& opt);

CheckResult run_gradient_check(const GradientCheck& check, const Options& opt);

// ---------------------------------------------------------------- linear-Gaussian toy

struct LinearToy {
  vqvae::DensityEstimator est;
  Matrix held_obs;  // 1 x n
  Matrix held_act;  // act_dim x n
};

/// Data a = u z + B s + c + noise with a one-dimensional latent; the estimator
/// is a linear VAE (one affine layer per network, no quantizer).
LinearToy train_linear_toy(std::uint64_t seed, int held_out, std::int64_t iterations);

/// Exact log p(a | s) of a VAE with a one-dimensional latent and no quantizer,
/// by trapezoid quadrature of p(a | z, s) N(z; 0, 1) over z in [-12, 12].
double quadrature_log_density(const vqvae::DensityEstimator& est, const Vector& s, const Vector& a,
                              int nodes = 40001);

struct ElboBoundReport {
  double fraction_bounded = 0.0;  // share of points with ELBO <= log p + MC error
  double max_is_error = 0.0;      // max |IS(L) - log p| over checked points
  double mean_is_error = 0.0;
};

/// ELBO averaged over `repeats` noise draws with a 99% MC band, compared with
/// the quadrature marginal on every held-out point; the IS estimate with
/// `is_samples` draws is compared on the first `is_points` points.
ElboBoundReport elbo_bound_report(const LinearToy& toy, int repeats, int is_samples, int is_points,
                                  std::uint64_t seed);

CheckResult elbo_bound(const Options& opt);
CheckResult importance_consistency(const Options& opt);

// ---------------------------------------------------------------- cluster fixtures

/// n single-step trajectories, s ~ U[-1, 1]^dim, a = center * 1 + sigma * N(0, I).
data::Dataset cluster_dataset(double center, double sigma, int n, Index dim, Rng& rng);

/// XOR corners: expert actions near (+1, +1) and (-1, -1), suboptimal actions
/// near (+1, -1) and (-1, +1); s ~ U[-1, 1]^2.
data::Dataset corner_dataset(bool expert, double sigma, int n, Rng& rng);

/// Share of (expert, suboptimal) pairs where the expert estimator gives the
/// expert sample the higher importance-sampled log-density (pairs matched by index).
double pair_accuracy(const vqvae::DensityEstimator& expert_est, const data::Dataset& expert_held,
                     const data::Dataset& subopt_held, int samples, std::uint64_t seed);

/// Median density weight on suboptimal-cluster samples minus the median on
/// expert-cluster samples, using estimators trained on separable clusters.
CheckResult cluster_weight_gap(const Options& opt);

// ---------------------------------------------------------------- suite

std::vector<CheckResult> run_all(const Options& opt);

}  // namespace adrbc::verify
