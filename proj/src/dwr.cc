#include "adrbc/dwr.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace adrbc::dwr {
namespace {

using vqvae::DensityEstimator;

Vector half_range(const ActionBounds& b) { return 0.5 * (b.high - b.low); }
Vector center(const ActionBounds& b) { return 0.5 * (b.high + b.low); }

void check_bounds(const ActionBounds& b, Index act_dim) {
  if (b.low.size() != act_dim || b.high.size() != act_dim) {
    throw ConfigError("action bounds do not match the action dim");
  }
  if (!((b.high - b.low).array() > 0.0).all()) {
    throw ConfigError("action bounds need low < high in every dim");
  }
}

Matrix normalized_input(const Policy& policy, const Matrix& obs) {
  if (obs.rows() != policy.obs_dim()) {
    throw ConfigError("policy input has " + std::to_string(obs.rows()) + " dims, expected " +
                      std::to_string(policy.obs_dim()));
  }
  if (!policy.norm()) {
    return obs;
  }
  return ((obs.colwise() - policy.norm()->mean).array().colwise() / policy.norm()->std.array()).matrix();
}

void require_frozen(const DensityEstimator& est) {
  if (!est.frozen()) {
    throw ContractError(vqvae::to_string(est.role()) + " estimator must be frozen before policy training");
  }
}

void check_batch(const Policy& policy, const data::Batch& batch) {
  if (batch.size() == 0) {
    throw ArgumentError("policy loss needs a non-empty batch");
  }
  if (batch.act.rows() != policy.act_dim()) {
    throw ConfigError("batch actions do not match the policy action dim");
  }
}

// d ||r_i|| / d r_i, zero at r_i = 0.
Matrix unit_residuals(const Matrix& action, const Matrix& target) {
  Matrix r = action - target;
  for (Index i = 0; i < r.cols(); ++i) {
    const double n = r.col(i).norm();
    if (n > 0.0) {
      r.col(i) /= n;
    } else {
      r.col(i).setZero();
    }
  }
  return r;
}

// Residual objective with per-sample coefficients c_i: sum_i c_i ||r_i||.
double coefficient_loss(const Vector& coeff, const Policy& policy, const data::Batch& batch,
                        nn::MlpParams* grads) {
  const PolicyPass pass = policy_forward(policy, batch.obs);
  const Vector norms = residual_norms(pass.action, batch.act);
  if (grads != nullptr) {
    Matrix g = unit_residuals(pass.action, batch.act);
    g = (g.array().rowwise() * coeff.transpose().array()).matrix();
    policy_backward(policy, pass, g, *grads);
  }
  return coeff.dot(norms);
}

}  // namespace

std::string to_string(Objective objective) {
  switch (objective) {
    case Objective::kUpperBound:
      return "upper_bound";
    case Objective::kPlain:
      return "plain";
    case Objective::kMaxAde:
      return "max_ade";
    case Objective::kAdeDivergence:
      return "ade_divergence";
    case Objective::kBc:
      return "bc";
  }
  return "unknown";
}

Objective objective_from_string(const std::string& name) {
  if (name == "upper_bound" || name == "adr-bc" || name == "adr_bc") {
    return Objective::kUpperBound;
  }
  if (name == "plain") {
    return Objective::kPlain;
  }
  if (name == "max_ade" || name == "max-ade") {
    return Objective::kMaxAde;
  }
  if (name == "ade_divergence" || name == "ade-divergence") {
    return Objective::kAdeDivergence;
  }
  if (name == "bc") {
    return Objective::kBc;
  }
  throw ConfigError("unknown objective '" + name + "'");
}

// ---------------------------------------------------------------- policy

Policy::Policy(Index obs_dim, ActionBounds bounds, Index hidden, int layers, Rng& rng)
    : bounds_(std::move(bounds)) {
  if (obs_dim < 1 || hidden < 1 || layers < 1) {
    throw ConfigError("policy dims and layer count must be positive");
  }
  std::vector<Index> dims{obs_dim};
  for (int k = 0; k + 1 < layers; ++k) {
    dims.push_back(hidden);
  }
  dims.push_back(bounds_.low.size());
  net_ = nn::make_mlp(dims, nn::Activation::kRelu, nn::Activation::kTanh, rng);
  check_bounds(bounds_, net_.out_dim());
}

Policy::Policy(nn::MlpParams net, ActionBounds bounds, std::optional<data::NormStats> norm)
    : net_(std::move(net)), bounds_(std::move(bounds)), norm_(std::move(norm)) {
  net_.validate();
  check_bounds(bounds_, net_.out_dim());
  if (net_.layers.back().activation != nn::Activation::kTanh) {
    throw ConfigError("policy output layer must use tanh");
  }
  if (norm_ && (norm_->mean.size() != net_.in_dim() || norm_->std.size() != net_.in_dim())) {
    throw ConfigError("normalization stats do not match the policy input dim");
  }
}

Matrix Policy::act(const Matrix& obs) const { return policy_forward(*this, obs).action; }

Vector Policy::act(const Vector& obs) const { return act(Matrix(obs)).col(0); }

nn::MlpParams Policy::export_net() const {
  nn::MlpParams out = net_;
  if (norm_) {
    nn::Layer& first = out.layers.front();
    const Vector inv = norm_->std.cwiseInverse();
    first.bias -= first.weight * (norm_->mean.cwiseProduct(inv));
    first.weight = first.weight * inv.asDiagonal();
  }
  return out;
}

PolicyPass policy_forward(const Policy& policy, const Matrix& obs) {
  PolicyPass pass;
  const Matrix squashed = nn::forward(policy.net(), normalized_input(policy, obs), &pass.cache);
  if (!squashed.allFinite()) {
    throw NumericError("policy produced non-finite actions");
  }
  pass.action = (squashed.array().colwise() * half_range(policy.bounds()).array()).matrix();
  pass.action.colwise() += center(policy.bounds());
  return pass;
}

void policy_backward(const Policy& policy, const PolicyPass& pass, const Matrix& grad_action,
                     nn::MlpParams& grads) {
  const Matrix g = (grad_action.array().colwise() * half_range(policy.bounds()).array()).matrix();
  nn::backward(policy.net(), pass.cache, g, grads);
}

// ---------------------------------------------------------------- weights

Vector density_weight(const DensityEstimator& expert, const DensityEstimator& subopt, const data::Batch& batch,
                      int samples, Rng& rng) {
  require_frozen(expert);
  require_frozen(subopt);
  if (samples < 1) {
    throw ArgumentError("density weights need L >= 1");
  }
  Rng shared = rng;
  const Vector ld_sub = vqvae::log_density_batch(subopt, batch.obs, batch.act, samples, shared);
  const Vector ld_exp = vqvae::log_density_batch(expert, batch.obs, batch.act, samples, rng);
  return ld_sub - ld_exp;
}

Vector clamp_weights(const Vector& weights, double w_max) {
  if (!(w_max >= 0.0)) {
    throw ConfigError("weight clamp must be >= 0");
  }
  return weights.cwiseMax(-w_max).cwiseMin(w_max);
}

// ---------------------------------------------------------------- objectives

Vector residual_norms(const Matrix& action, const Matrix& target) {
  return (action - target).colwise().norm().transpose();
}

double dwr_loss(const Vector& weights, const Policy& policy, const data::Batch& batch, nn::MlpParams* grads) {
  check_batch(policy, batch);
  if (weights.size() != batch.size()) {
    throw ConfigError("weight count does not match batch size");
  }
  return coefficient_loss(weights / static_cast<double>(batch.size()), policy, batch, grads);
}

double dwr_upper_bound_loss(const Vector& weights, const Policy& policy, const data::Batch& batch,
                            nn::MlpParams* grads) {
  check_batch(policy, batch);
  if (weights.size() != batch.size()) {
    throw ConfigError("weight count does not match batch size");
  }
  const double b = static_cast<double>(batch.size());
  return coefficient_loss(Vector::Constant(batch.size(), weights.mean() / b), policy, batch, grads);
}

double bc_loss(const Policy& policy, const data::Batch& batch, nn::MlpParams* grads) {
  check_batch(policy, batch);
  return coefficient_loss(Vector::Constant(batch.size(), 1.0 / static_cast<double>(batch.size())), policy,
                          batch, grads);
}

double max_ade_loss(const DensityEstimator& expert, const Policy& policy, const data::Batch& batch, int samples,
                    Rng& rng, nn::MlpParams* grads, vqvae::GradMode mode) {
  require_frozen(expert);
  check_batch(policy, batch);
  const PolicyPass pass = policy_forward(policy, batch.obs);
  const Matrix noise = vqvae::draw_importance_noise(rng, expert.config().latent_dim, batch.size(), samples);
  const vqvae::ImportancePass ip = vqvae::importance_forward(expert, batch.obs, pass.action, noise, samples);
  const double b = static_cast<double>(batch.size());
  if (grads != nullptr) {
    Matrix g;
    vqvae::importance_backward(expert, ip, Vector::Constant(batch.size(), -1.0 / b), mode, nullptr, &g);
    policy_backward(policy, pass, g, *grads);
  }
  return -ip.log_density.mean();
}

double ade_divergence_loss(const DensityEstimator& expert, const DensityEstimator& subopt, const Policy& policy,
                           const data::Batch& batch, int samples, Rng& rng, nn::MlpParams* grads,
                           vqvae::GradMode mode) {
  require_frozen(expert);
  require_frozen(subopt);
  check_batch(policy, batch);
  if (expert.config().latent_dim != subopt.config().latent_dim) {
    throw ConfigError("estimators have different latent dims");
  }
  const PolicyPass pass = policy_forward(policy, batch.obs);
  const Matrix noise = vqvae::draw_importance_noise(rng, expert.config().latent_dim, batch.size(), samples);
  const vqvae::ImportancePass sub = vqvae::importance_forward(subopt, batch.obs, pass.action, noise, samples);
  const vqvae::ImportancePass exp = vqvae::importance_forward(expert, batch.obs, pass.action, noise, samples);
  const double b = static_cast<double>(batch.size());
  if (grads != nullptr) {
    Matrix g_sub;
    Matrix g_exp;
    vqvae::importance_backward(subopt, sub, Vector::Constant(batch.size(), 1.0 / b), mode, nullptr, &g_sub);
    vqvae::importance_backward(expert, exp, Vector::Constant(batch.size(), -1.0 / b), mode, nullptr, &g_exp);
    policy_backward(policy, pass, g_sub + g_exp, *grads);
  }
  return (sub.log_density - exp.log_density).mean();
}

// ---------------------------------------------------------------- training

void DwrConfig::validate() const {
  if (batch_size < 1) {
    throw ConfigError("policy batch size must be >= 1");
  }
  if (iterations < 0) {
    throw ConfigError("policy iteration count must be >= 0");
  }
  if (!(learning_rate > 0.0)) {
    throw ConfigError("policy learning rate must be > 0");
  }
  if (eval_interval < 1) {
    throw ConfigError("policy evaluation interval must be >= 1");
  }
  if (importance_samples < 1) {
    throw ConfigError("importance sample count must be >= 1");
  }
  if (weight_clamp && !(*weight_clamp >= 0.0)) {
    throw ConfigError("weight clamp must be >= 0");
  }
  if (hidden_dim < 1 || layers < 1) {
    throw ConfigError("policy hidden dim and layer count must be positive");
  }
}

namespace {

struct StepValue {
  double loss = 0.0;
  double mean_weight = 0.0;
};

StepValue objective_step(const DensityEstimator* expert, const DensityEstimator* subopt, const Policy& policy,
                         const data::Batch& batch, const DwrConfig& cfg, Rng& rng, nn::MlpParams& grads) {
  StepValue v;
  switch (cfg.objective) {
    case Objective::kUpperBound:
    case Objective::kPlain: {
      Vector w = density_weight(*expert, *subopt, batch, cfg.importance_samples, rng);
      if (cfg.weight_clamp) {
        w = clamp_weights(w, *cfg.weight_clamp);
      }
      v.mean_weight = w.mean();
      v.loss = cfg.objective == Objective::kUpperBound ? dwr_upper_bound_loss(w, policy, batch, &grads)
                                                       : dwr_loss(w, policy, batch, &grads);
      break;
    }
    case Objective::kMaxAde:
      v.loss = max_ade_loss(*expert, policy, batch, cfg.importance_samples, rng, &grads);
      break;
    case Objective::kAdeDivergence:
      v.loss = ade_divergence_loss(*expert, *subopt, policy, batch, cfg.importance_samples, rng, &grads);
      break;
    case Objective::kBc:
      v.mean_weight = 1.0;
      v.loss = bc_loss(policy, batch, &grads);
      break;
  }
  return v;
}

}  // namespace

PolicyTrainResult train_policy(const DensityEstimator* expert, const DensityEstimator* subopt,
                               const data::Dataset& train_ds, const ActionBounds& bounds, const DwrConfig& cfg,
                               Rng& rng, const Evaluator& evaluate) {
  cfg.validate();
  const bool needs_expert = cfg.objective != Objective::kBc;
  const bool needs_subopt = cfg.objective != Objective::kBc && cfg.objective != Objective::kMaxAde;
  if ((needs_expert && expert == nullptr) || (needs_subopt && subopt == nullptr)) {
    throw ArgumentError("objective " + to_string(cfg.objective) + " needs trained estimators");
  }
  if (needs_expert) {
    require_frozen(*expert);
  }
  if (needs_subopt) {
    require_frozen(*subopt);
  }
  if (train_ds.empty()) {
    throw ArgumentError("policy training needs a non-empty dataset");
  }

  Rng init_rng = rng.fork(1);
  Rng train_rng = rng.fork(2);
  Policy policy(train_ds.obs_dim, bounds, cfg.hidden_dim, cfg.layers, init_rng);
  if (cfg.normalize_obs) {
    policy = Policy(policy.net(), bounds, data::compute_norm_stats(train_ds));
  }
  PolicyTrainResult result{policy, {}};
  nn::OptimState optim = nn::make_optim_state(result.policy.net(), nn::AdamConfig{cfg.learning_rate});
  const data::TransitionTable table(train_ds);

  auto record = [&](std::int64_t it, const StepValue& v) {
    PolicyMetricRow row;
    row.iteration = it;
    row.loss = v.loss;
    row.mean_weight = v.mean_weight;
    if (evaluate) {
      const auto [mean, std] = evaluate(result.policy);
      row.eval_score_mean = mean;
      row.eval_score_std = std;
    } else {
      row.eval_score_mean = std::numeric_limits<double>::quiet_NaN();
      row.eval_score_std = std::numeric_limits<double>::quiet_NaN();
    }
    result.metrics.push_back(row);
  };

  nn::MlpParams grads = result.policy.net().zeros_like();
  for (std::int64_t it = 1; it <= cfg.iterations; ++it) {
    StepValue v;
    {
      data::TrainingScope scope;
      const data::Batch batch = data::sample_batch(table, train_rng, cfg.batch_size);
      nn::set_zero(grads);
      try {
        v = objective_step(expert, subopt, result.policy, batch, cfg, train_rng, grads);
        if (!std::isfinite(v.loss)) {
          throw NumericError("loss is non-finite");
        }
        nn::adam_step(optim, result.policy.mutable_net(), grads);
      } catch (const NumericError& e) {
        throw NumericError("policy training (" + to_string(cfg.objective) + ") failed at iteration " +
                               std::to_string(it) + ": " + e.what(),
                           it);
      }
    }
    if (it % cfg.eval_interval == 0 || it == cfg.iterations) {
      record(it, v);
    }
  }
  return result;
}

// ---------------------------------------------------------------- tabular identity

namespace {

Matrix random_conditional(Index rows, Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      m(r, c) = 0.05 + rng.uniform();
    }
    m.row(r) /= m.row(r).sum();
  }
  return m;
}

}  // namespace

TabularProblem random_tabular(Index states, Index actions, Rng& rng) {
  if (states < 1 || actions < 1) {
    throw ArgumentError("tabular problem needs at least one state and one action");
  }
  TabularProblem p;
  p.rho = random_conditional(1, states, rng).row(0).transpose();
  p.pi = random_conditional(states, actions, rng);
  p.p_star = random_conditional(states, actions, rng);
  p.p_hat = random_conditional(states, actions, rng);
  return p;
}

double kl_gap(const TabularProblem& p) {
  double total = 0.0;
  for (Index s = 0; s < p.pi.rows(); ++s) {
    double kl_star = 0.0;
    double kl_hat = 0.0;
    for (Index a = 0; a < p.pi.cols(); ++a) {
      kl_star += p.pi(s, a) * std::log(p.pi(s, a) / p.p_star(s, a));
      kl_hat += p.pi(s, a) * std::log(p.pi(s, a) / p.p_hat(s, a));
    }
    total += p.rho[s] * (kl_star - kl_hat);
  }
  return total;
}

double weighted_form(const TabularProblem& p, double sign) {
  double total = 0.0;
  for (Index s = 0; s < p.pi.rows(); ++s) {
    double row = 0.0;
    for (Index a = 0; a < p.pi.cols(); ++a) {
      row += p.pi(s, a) * sign * (std::log(p.p_hat(s, a)) - std::log(p.p_star(s, a)));
    }
    total += p.rho[s] * row;
  }
  return total;
}

// ---------------------------------------------------------------- timing

std::vector<TimingRow> time_updates(const DensityEstimator& expert, const DensityEstimator& subopt,
                                    const data::Dataset& ds, const ActionBounds& bounds, const DwrConfig& cfg,
                                    const std::vector<Index>& batch_sizes, int repeats, Rng& rng) {
  if (repeats < 1) {
    throw ArgumentError("timing needs at least one repeat");
  }
  using Clock = std::chrono::steady_clock;
  const data::TransitionTable table(ds);
  Rng init_rng = rng.fork(1);
  const Policy start(ds.obs_dim, bounds, cfg.hidden_dim, cfg.layers, init_rng);

  struct Runner {
    DwrConfig cfg;
    Policy policy;
    nn::OptimState optim;
    nn::MlpParams grads;
    Rng rng;
    std::vector<double> times;
  };
  auto make_runner = [&](Objective objective, Index b) {
    DwrConfig c = cfg;
    c.objective = objective;
    c.batch_size = b;
    return Runner{c, start, nn::make_optim_state(start.net(), nn::AdamConfig{c.learning_rate}),
                  start.net().zeros_like(), rng.fork(static_cast<std::uint64_t>(b)), {}};
  };
  auto update = [&](Runner& u, bool record) {
    const data::Batch batch = data::sample_batch(table, u.rng, u.cfg.batch_size);
    const auto t0 = Clock::now();
    nn::set_zero(u.grads);
    objective_step(&expert, &subopt, u.policy, batch, u.cfg, u.rng, u.grads);
    nn::adam_step(u.optim, u.policy.mutable_net(), u.grads);
    const auto t1 = Clock::now();
    if (record) {
      u.times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
  };
  auto median = [](std::vector<double> v) {
    std::nth_element(v.begin(), v.begin() + static_cast<long>(v.size() / 2), v.end());
    return v[v.size() / 2];
  };

  std::vector<TimingRow> rows;
  for (Index b : batch_sizes) {
    Runner dwr_run = make_runner(Objective::kUpperBound, b);
    Runner div_run = make_runner(Objective::kAdeDivergence, b);
    // Updates alternate so both objectives see the same machine load; the
    // first round is an untimed warm-up.
    for (int k = 0; k <= repeats; ++k) {
      update(dwr_run, k > 0);
      update(div_run, k > 0);
    }
    rows.push_back(TimingRow{b, median(dwr_run.times), median(div_run.times)});
  }
  return rows;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ArgumentError("slope fit needs at least two matched points");
  }
  const auto n = static_cast<double>(x.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) {
      throw ArgumentError("log-log fit needs positive values");
    }
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

}  // namespace adrbc::dwr
