#include "adrbc/ade.h"

#include <cmath>
#include <string>

namespace adrbc::ade {
namespace {

using vqvae::DensityEstimator;
using vqvae::EstimatorParams;
using vqvae::GradMode;

// f(d) and df/dd for the configured sigmoid input.
double squash_input(double d, SurrogateInput input) {
  if (input == SurrogateInput::kLogDensity) {
    return d;
  }
  return d > 700.0 ? std::exp(700.0) : std::exp(d);
}

// d sigma(f(d)) / dd.
double sigmoid_slope(double d, SurrogateInput input) {
  const double f = squash_input(d, input);
  const double s = sigmoid(f);
  const double ds = s * (1.0 - s);
  return input == SurrogateInput::kLogDensity ? ds : ds * f;
}

Vector slopes(const Vector& d, SurrogateInput input) {
  Vector out(d.size());
  for (Index i = 0; i < d.size(); ++i) {
    out[i] = sigmoid_slope(d[i], input);
  }
  return out;
}

void check_batch(const data::Batch& batch, const char* what) {
  if (batch.size() == 0) {
    throw ArgumentError(std::string(what) + " batch is empty");
  }
}

// mean ELBO(own) - weight * [mean sigma(d_own) - mean sigma(d_other)].
LossValue contrast_loss(const DensityEstimator& est, const data::Batch& own,
                        const data::Batch& other, double weight, const AdeConfig& cfg, Rng& rng,
                        EstimatorParams* grads, GradMode mode) {
  check_batch(own, "own");
  const Index latent = est.config().latent_dim;
  const bool contrast = weight > 0.0;
  if (contrast) {
    check_batch(other, "contrast");
  }
  const double b = static_cast<double>(own.size());

  const Matrix own_noise = rng.normal_matrix(latent, own.size());
  const vqvae::ElboPass own_pass = vqvae::elbo_forward(est, own.obs, own.act, own_noise);
  const Vector own_losses = vqvae::elbo_sample_losses(est, own_pass);

  LossValue out;
  out.elbo = own_losses.mean();
  out.codes = own_pass.quant.index;
  out.z_e = own_pass.z_e;

  Vector own_bound_w = Vector::Constant(own.size(), 1.0 / b);
  const Vector own_vq_w = Vector::Constant(own.size(), 1.0 / b);

  if (!contrast) {
    out.loss = out.elbo;
    if (grads != nullptr) {
      vqvae::elbo_backward(est, own_pass, own_bound_w, own_vq_w, mode, *grads);
    }
    return out;
  }

  const double bn = static_cast<double>(other.size());
  if (cfg.source == SurrogateSource::kElbo) {
    const Matrix other_noise = rng.normal_matrix(latent, other.size());
    const vqvae::ElboPass other_pass = vqvae::elbo_forward(est, other.obs, other.act, other_noise);
    const Vector d_own = -own_pass.bound();
    const Vector d_other = -other_pass.bound();
    out.j_iota = adversarial_term(d_own, d_other, cfg.input);
    out.loss = out.elbo - weight * out.j_iota;
    if (grads != nullptr) {
      // d(-weight * mean sigma(d_own)) / d bound_i = weight * slope_i / b
      own_bound_w.array() += weight * slopes(d_own, cfg.input).array() / b;
      const Vector other_bound_w = -weight * slopes(d_other, cfg.input) / bn;
      vqvae::elbo_backward(est, own_pass, own_bound_w, own_vq_w, mode, *grads);
      vqvae::elbo_backward(est, other_pass, other_bound_w, Vector::Zero(other.size()), mode, *grads);
    }
    return out;
  }

  const int L = cfg.importance_samples;
  const Matrix own_is_noise = vqvae::draw_importance_noise(rng, latent, own.size(), L);
  const Matrix other_is_noise = vqvae::draw_importance_noise(rng, latent, other.size(), L);
  const vqvae::ImportancePass own_is = vqvae::importance_forward(est, own.obs, own.act, own_is_noise, L);
  const vqvae::ImportancePass other_is =
      vqvae::importance_forward(est, other.obs, other.act, other_is_noise, L);
  out.j_iota = adversarial_term(own_is.log_density, other_is.log_density, cfg.input);
  out.loss = out.elbo - weight * out.j_iota;
  if (grads != nullptr) {
    vqvae::elbo_backward(est, own_pass, own_bound_w, own_vq_w, mode, *grads);
    const Vector up_own = -weight * slopes(own_is.log_density, cfg.input) / b;
    const Vector up_other = weight * slopes(other_is.log_density, cfg.input) / bn;
    vqvae::importance_backward(est, own_is, up_own, mode, grads, nullptr);
    vqvae::importance_backward(est, other_is, up_other, mode, grads, nullptr);
  }
  return out;
}

// One Adam step on `est`; rethrows numeric failures with the iteration index.
LossValue update(DensityEstimator& est, nn::OptimState& optim, vqvae::CodebookUsage& usage,
                 const data::Batch& own, const data::Batch& other, double weight,
                 const AdeConfig& cfg, Rng& rng, std::int64_t iteration) {
  EstimatorParams grads = est.params().zeros_like();
  LossValue value;
  try {
    value = contrast_loss(est, own, other, weight, cfg, rng, &grads, GradMode::kStraightThrough);
    if (!std::isfinite(value.loss)) {
      throw NumericError("loss is non-finite");
    }
    nn::adam_step(optim, est.mutable_params(), grads);
  } catch (const NumericError& e) {
    throw NumericError(vqvae::to_string(est.role()) + " estimator diverged at iteration " +
                           std::to_string(iteration) + ": " + e.what(),
                       iteration);
  }
  if (est.config().use_quantizer) {
    usage.record(value.codes, iteration);
    usage.reseed_dead(est.mutable_params(), value.z_e, iteration, rng);
  }
  return value;
}

}  // namespace

void AdeConfig::validate() const {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) {
    throw ConfigError("lambda1 and lambda2 must be >= 0");
  }
  if (batch_size < 1 || eval_batch_size < 1) {
    throw ConfigError("batch size must be >= 1");
  }
  if (iterations < 0) {
    throw ConfigError("iteration count must be >= 0");
  }
  if (!(learning_rate > 0.0)) {
    throw ConfigError("learning rate must be > 0");
  }
  if (eval_interval < 1) {
    throw ConfigError("evaluation interval must be >= 1");
  }
  if (dead_code_steps < 0) {
    throw ConfigError("dead-code window must be >= 0");
  }
  if (importance_samples < 1) {
    throw ConfigError("importance sample count must be >= 1");
  }
}

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double adversarial_term(const Vector& d_pos, const Vector& d_neg, SurrogateInput input) {
  if (d_pos.size() == 0 || d_neg.size() == 0) {
    throw ArgumentError("adversarial term needs non-empty batches");
  }
  double pos = 0.0;
  for (Index i = 0; i < d_pos.size(); ++i) {
    pos += sigmoid(squash_input(d_pos[i], input));
  }
  double neg = 0.0;
  for (Index i = 0; i < d_neg.size(); ++i) {
    neg += sigmoid(squash_input(d_neg[i], input));
  }
  return pos / static_cast<double>(d_pos.size()) - neg / static_cast<double>(d_neg.size());
}

double adversarial_term(const DensityEstimator& est, const data::Batch& pos, const data::Batch& neg,
                        const AdeConfig& cfg, Rng& rng) {
  check_batch(pos, "positive");
  check_batch(neg, "negative");
  const Index latent = est.config().latent_dim;
  if (cfg.source == SurrogateSource::kElbo) {
    const Matrix pos_noise = rng.normal_matrix(latent, pos.size());
    const Matrix neg_noise = rng.normal_matrix(latent, neg.size());
    const Vector d_pos = -vqvae::elbo_forward(est, pos.obs, pos.act, pos_noise).bound();
    const Vector d_neg = -vqvae::elbo_forward(est, neg.obs, neg.act, neg_noise).bound();
    return adversarial_term(d_pos, d_neg, cfg.input);
  }
  const Vector d_pos = vqvae::log_density_batch(est, pos.obs, pos.act, cfg.importance_samples, rng);
  const Vector d_neg = vqvae::log_density_batch(est, neg.obs, neg.act, cfg.importance_samples, rng);
  return adversarial_term(d_pos, d_neg, cfg.input);
}

LossValue ade_loss(const DensityEstimator& est, const data::Batch& expert, const data::Batch& subopt,
                   const AdeConfig& cfg, Rng& rng, EstimatorParams* grads, GradMode mode) {
  if (est.role() != vqvae::Role::kExpert) {
    throw ArgumentError("ade_loss needs the expert estimator");
  }
  return contrast_loss(est, expert, subopt, cfg.lambda1, cfg, rng, grads, mode);
}

LossValue subopt_loss(const DensityEstimator& est, const data::Batch& subopt, const data::Batch& expert,
                      const AdeConfig& cfg, Rng& rng, EstimatorParams* grads, GradMode mode) {
  if (est.role() != vqvae::Role::kSuboptimal) {
    throw ArgumentError("subopt_loss needs the suboptimal estimator");
  }
  return contrast_loss(est, subopt, expert, cfg.lambda2, cfg, rng, grads, mode);
}

TrainResult train_density(const data::Dataset& expert_ds, const data::Dataset& subopt_ds,
                          const vqvae::EstimatorConfig& est_cfg, const AdeConfig& cfg, Rng& rng) {
  cfg.validate();
  if (expert_ds.empty() || subopt_ds.empty()) {
    throw ArgumentError("density training needs non-empty expert and suboptimal datasets");
  }
  if (expert_ds.obs_dim != subopt_ds.obs_dim || expert_ds.act_dim != subopt_ds.act_dim) {
    throw ConfigError("expert and suboptimal datasets have different dims");
  }
  vqvae::EstimatorConfig ec = est_cfg;
  ec.obs_dim = expert_ds.obs_dim;
  ec.act_dim = expert_ds.act_dim;

  data::TrainingScope scope;
  Rng init_rng = rng.fork(1);
  Rng expert_rng = rng.fork(2);
  Rng subopt_rng = rng.fork(3);
  Rng eval_rng = rng.fork(4);

  TrainResult result{DensityEstimator(ec, vqvae::Role::kExpert, init_rng),
                     DensityEstimator(ec, vqvae::Role::kSuboptimal, init_rng),
                     {},
                     {},
                     {}};
  const data::TransitionTable expert_table(expert_ds);
  const data::TransitionTable subopt_table(subopt_ds);
  const nn::AdamConfig adam{cfg.learning_rate};
  nn::OptimState expert_opt = nn::make_optim_state(result.expert.params(), adam);
  nn::OptimState subopt_opt = nn::make_optim_state(result.subopt.params(), adam);
  vqvae::CodebookUsage expert_usage(ec.codebook_size, cfg.dead_code_steps);
  vqvae::CodebookUsage subopt_usage(ec.codebook_size, cfg.dead_code_steps);

  auto record = [&](std::int64_t it) {
    const data::Batch e = data::sample_batch(expert_table, eval_rng, cfg.eval_batch_size);
    const data::Batch s = data::sample_batch(subopt_table, eval_rng, cfg.eval_batch_size);
    MetricRow row;
    row.iteration = it;
    row.expert_elbo = vqvae::elbo_loss(result.expert, e.obs, e.act, eval_rng);
    row.subopt_elbo = vqvae::elbo_loss(result.subopt, s.obs, s.act, eval_rng);
    row.j_iota = adversarial_term(result.expert, e, s, cfg, eval_rng);
    row.codebook_active_count = ec.use_quantizer ? expert_usage.active_count(it, cfg.eval_interval) : 0;
    result.metrics.push_back(row);
  };

  result.expert_loss_trace.reserve(static_cast<std::size_t>(cfg.iterations));
  result.subopt_loss_trace.reserve(static_cast<std::size_t>(cfg.iterations));
  const data::Batch none;
  for (std::int64_t it = 1; it <= cfg.iterations; ++it) {
    const data::Batch e = data::sample_batch(expert_table, expert_rng, cfg.batch_size);
    const data::Batch es = cfg.lambda1 > 0.0 ? data::sample_batch(subopt_table, expert_rng, cfg.batch_size) : none;
    const LossValue ev = update(result.expert, expert_opt, expert_usage, e, es, cfg.lambda1, cfg, expert_rng, it);
    result.expert_loss_trace.push_back(ev.loss);

    const data::Batch s = data::sample_batch(subopt_table, subopt_rng, cfg.batch_size);
    const data::Batch se = cfg.lambda2 > 0.0 ? data::sample_batch(expert_table, subopt_rng, cfg.batch_size) : none;
    const LossValue sv = update(result.subopt, subopt_opt, subopt_usage, s, se, cfg.lambda2, cfg, subopt_rng, it);
    result.subopt_loss_trace.push_back(sv.loss);

    if (it % cfg.eval_interval == 0 || it == cfg.iterations) {
      record(it);
    }
  }
  result.expert.freeze();
  result.subopt.freeze();
  return result;
}

ElboTrainResult train_elbo(const data::Dataset& ds, const vqvae::EstimatorConfig& est_cfg,
                           vqvae::Role role, const AdeConfig& cfg, Rng& rng) {
  cfg.validate();
  if (ds.empty()) {
    throw ArgumentError("ELBO training needs a non-empty dataset");
  }
  vqvae::EstimatorConfig ec = est_cfg;
  ec.obs_dim = ds.obs_dim;
  ec.act_dim = ds.act_dim;

  data::TrainingScope scope;
  Rng init_rng = rng.fork(1);
  Rng train_rng = rng.fork(2);
  ElboTrainResult result{DensityEstimator(ec, role, init_rng), {}};
  const data::TransitionTable table(ds);
  nn::OptimState opt = nn::make_optim_state(result.est.params(), nn::AdamConfig{cfg.learning_rate});
  vqvae::CodebookUsage usage(ec.codebook_size, cfg.dead_code_steps);
  const data::Batch none;
  for (std::int64_t it = 1; it <= cfg.iterations; ++it) {
    const data::Batch b = data::sample_batch(table, train_rng, cfg.batch_size);
    result.loss_trace.push_back(update(result.est, opt, usage, b, none, 0.0, cfg, train_rng, it).loss);
  }
  return result;
}

}  // namespace adrbc::ade
