#include "adrbc/verify.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

#include "adrbc/dwr.h"

namespace adrbc::verify {
namespace {

using vqvae::DensityEstimator;
using vqvae::EstimatorParams;
using vqvae::GradMode;
using vqvae::ParamGroup;

constexpr double kMinMargin = 1e-3;
constexpr int kMaxAttempts = 200;

std::string num(double v) {
  std::ostringstream out;
  out.precision(6);
  out << v;
  return out.str();
}

template <class F>
CheckResult timed(const std::string& module, const std::string& name, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r;
  r.module = module;
  r.name = name;
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

vqvae::EstimatorConfig small_config(bool quantizer) {
  vqvae::EstimatorConfig c;
  c.obs_dim = 2;
  c.act_dim = 2;
  c.latent_dim = 3;
  c.codebook_size = 6;
  c.hidden_dim = 5;
  c.layers = 3;
  c.use_quantizer = quantizer;
  return c;
}

data::Batch random_batch(Rng& rng, Index obs_dim, Index act_dim, Index b, double act_scale) {
  data::Batch batch;
  batch.obs = rng.normal_matrix(obs_dim, b);
  batch.act = act_scale * rng.normal_matrix(act_dim, b);
  return batch;
}

// Checks every tensor of `est` group by group. `objective(group)` must read the
// current parameters of `est` and return the loss whose gradient restricted to
// that group equals the analytic one.
gradcheck::Report grouped_check(DensityEstimator& est, const EstimatorParams& analytic,
                                const std::function<double(ParamGroup)>& objective, double eps) {
  gradcheck::Report total;
  EstimatorParams& params = est.mutable_params();
  const EstimatorParams layout = params;
  for (ParamGroup g : {ParamGroup::kEncoder, ParamGroup::kDecoder, ParamGroup::kCodebook}) {
    const auto rep = gradcheck::check(
        params, analytic, [&] { return objective(g); }, eps,
        [&](std::size_t i) { return vqvae::group_of_tensor(layout, i) == g; });
    total = gradcheck::combine(total, rep);
  }
  return total;
}

// Coefficient of the mean squared quantization distance that carries the
// gradient for a group under stop-gradients.
double vq_coefficient(const DensityEstimator& est, ParamGroup g) {
  const double beta = est.config().commitment;
  switch (g) {
    case ParamGroup::kEncoder:
      return beta;
    case ParamGroup::kCodebook:
      return 1.0;
    case ParamGroup::kDecoder:
      return 1.0 + beta;
  }
  return 0.0;
}

gradcheck::Report elbo_point(Rng& rng, bool quantizer, double eps) {
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    DensityEstimator est(small_config(quantizer), vqvae::Role::kExpert, rng);
    const data::Batch batch = random_batch(rng, 2, 2, 4, 1.0);
    const Matrix noise = rng.normal_matrix(3, 4);
    const vqvae::ElboPass pass = vqvae::elbo_forward(est, batch.obs, batch.act, noise);
    if (pass.smoothness_margin(est) < kMinMargin) {
      continue;
    }
    EstimatorParams grads = est.params().zeros_like();
    const Vector w = Vector::Constant(4, 0.25);
    vqvae::elbo_backward(est, pass, w, w, quantizer ? GradMode::kExact : GradMode::kStraightThrough, grads);
    return grouped_check(
        est, grads,
        [&](ParamGroup g) {
          const auto p = vqvae::elbo_forward(est, batch.obs, batch.act, noise);
          return p.bound().mean() + vq_coefficient(est, g) * p.vq_sq.mean();
        },
        eps);
  }
  throw NumericError("no smooth point found for the ELBO check");
}

gradcheck::Report importance_point(Rng& rng, double eps) {
  const int L = 3;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    DensityEstimator est(small_config(true), vqvae::Role::kExpert, rng);
    data::Batch batch = random_batch(rng, 2, 2, 3, 1.0);
    const Matrix noise = vqvae::draw_importance_noise(rng, 3, 3, L);
    const Vector up = rng.normal_vector(3);
    const vqvae::ImportancePass pass = vqvae::importance_forward(est, batch.obs, batch.act, noise, L);
    if (pass.smoothness_margin(est) < kMinMargin) {
      continue;
    }
    EstimatorParams grads = est.params().zeros_like();
    Matrix g_act;
    vqvae::importance_backward(est, pass, up, GradMode::kExact, &grads, &g_act);
    auto objective = [&] {
      return up.dot(vqvae::importance_forward(est, batch.obs, batch.act, noise, L).log_density);
    };
    gradcheck::Report rep = gradcheck::check(est.mutable_params(), grads, objective, eps);
    const Matrix n_act = gradcheck::numeric_input_gradient(batch.act, objective, eps);
    gradcheck::Report act_rep;
    act_rep.coordinates = static_cast<std::size_t>(n_act.size());
    act_rep.max_rel_error = gradcheck::relative_error({g_act.data(), static_cast<std::size_t>(g_act.size())},
                                                      {n_act.data(), static_cast<std::size_t>(n_act.size())});
    act_rep.max_abs_error = (g_act - n_act).cwiseAbs().maxCoeff();
    return gradcheck::combine(rep, act_rep);
  }
  throw NumericError("no smooth point found for the importance check");
}

gradcheck::Report ade_point(Rng& rng, ade::SurrogateSource source, double eps) {
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    DensityEstimator est(small_config(true), vqvae::Role::kExpert, rng);
    // Small actions keep the surrogate near zero where the sigmoid is not flat.
    const data::Batch own = random_batch(rng, 2, 2, 4, 0.3);
    const data::Batch other = random_batch(rng, 2, 2, 3, 0.3);
    ade::AdeConfig cfg;
    cfg.lambda1 = 1.0;
    cfg.source = source;
    cfg.importance_samples = 2;
    const Rng start = rng;
    Rng r = start;
    const Matrix own_noise = r.normal_matrix(3, own.size());
    Matrix other_noise;
    Matrix own_is;
    Matrix other_is;
    if (source == ade::SurrogateSource::kElbo) {
      other_noise = r.normal_matrix(3, other.size());
    } else {
      own_is = vqvae::draw_importance_noise(r, 3, own.size(), 2);
      other_is = vqvae::draw_importance_noise(r, 3, other.size(), 2);
    }
    rng.normal_matrix(7, 7);  // advance the stream for the next attempt

    const auto p = vqvae::elbo_forward(est, own.obs, own.act, own_noise);
    double margin = p.smoothness_margin(est);
    if (source == ade::SurrogateSource::kElbo) {
      margin = std::min(margin, vqvae::elbo_forward(est, other.obs, other.act, other_noise).smoothness_margin(est));
    } else {
      margin = std::min(margin, vqvae::importance_forward(est, own.obs, own.act, own_is, 2).smoothness_margin(est));
      margin =
          std::min(margin, vqvae::importance_forward(est, other.obs, other.act, other_is, 2).smoothness_margin(est));
    }
    if (margin < kMinMargin) {
      continue;
    }
    EstimatorParams grads = est.params().zeros_like();
    Rng a = start;
    ade::ade_loss(est, own, other, cfg, a, &grads, GradMode::kExact);
    return grouped_check(
        est, grads,
        [&](ParamGroup g) {
          const auto po = vqvae::elbo_forward(est, own.obs, own.act, own_noise);
          double j = 0.0;
          if (source == ade::SurrogateSource::kElbo) {
            const auto pn = vqvae::elbo_forward(est, other.obs, other.act, other_noise);
            j = ade::adversarial_term(-po.bound(), -pn.bound());
          } else {
            j = ade::adversarial_term(vqvae::importance_forward(est, own.obs, own.act, own_is, 2).log_density,
                                      vqvae::importance_forward(est, other.obs, other.act, other_is, 2).log_density);
          }
          return po.bound().mean() + vq_coefficient(est, g) * po.vq_sq.mean() - cfg.lambda1 * j;
        },
        eps);
  }
  throw NumericError("no smooth point found for the ADE check");
}

dwr::Policy small_policy(Rng& rng) {
  dwr::ActionBounds bounds{Vector::Constant(2, -1.0), Vector::Constant(2, 1.0)};
  return dwr::Policy(2, bounds, 6, 3, rng);
}

enum class PolicyObjective { kPlain, kUpperBound, kBc, kMaxAde, kAdeDivergence };

gradcheck::Report policy_point(Rng& rng, PolicyObjective which, double eps) {
  const int L = 2;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    dwr::Policy policy = small_policy(rng);
    DensityEstimator expert(small_config(true), vqvae::Role::kExpert, rng);
    DensityEstimator subopt(small_config(true), vqvae::Role::kSuboptimal, rng);
    expert.freeze();
    subopt.freeze();
    data::Batch batch = random_batch(rng, 2, 2, 5, 0.5);
    const Vector w = rng.normal_vector(5);
    const Rng start = rng;
    rng.normal_matrix(7, 7);

    const dwr::PolicyPass pp = dwr::policy_forward(policy, batch.obs);
    double margin = pp.cache.relu_margin(policy.net());
    if (which == PolicyObjective::kMaxAde || which == PolicyObjective::kAdeDivergence) {
      Rng r = start;
      const Matrix noise = vqvae::draw_importance_noise(r, 3, 5, L);
      margin = std::min(margin, vqvae::importance_forward(expert, batch.obs, pp.action, noise, L).smoothness_margin(expert));
      margin = std::min(margin, vqvae::importance_forward(subopt, batch.obs, pp.action, noise, L).smoothness_margin(subopt));
    }
    if (margin < kMinMargin) {
      continue;
    }
    auto loss = [&](nn::MlpParams* g) {
      Rng r = start;
      switch (which) {
        case PolicyObjective::kPlain:
          return dwr::dwr_loss(w, policy, batch, g);
        case PolicyObjective::kUpperBound:
          return dwr::dwr_upper_bound_loss(w, policy, batch, g);
        case PolicyObjective::kBc:
          return dwr::bc_loss(policy, batch, g);
        case PolicyObjective::kMaxAde:
          return dwr::max_ade_loss(expert, policy, batch, L, r, g, GradMode::kExact);
        case PolicyObjective::kAdeDivergence:
          return dwr::ade_divergence_loss(expert, subopt, policy, batch, L, r, g, GradMode::kExact);
      }
      return 0.0;
    };
    nn::MlpParams grads = policy.net().zeros_like();
    loss(&grads);
    return gradcheck::check(policy.mutable_net(), grads, [&] { return loss(nullptr); }, eps);
  }
  throw NumericError("no smooth point found for the policy check");
}

gradcheck::Report mlp_point(Rng& rng, double eps) {
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    nn::MlpParams params = nn::make_mlp({3, 5, 4, 2}, attempt % 2 == 0 ? nn::Activation::kRelu : nn::Activation::kTanh,
                                        nn::Activation::kTanh, rng);
    const Matrix x = rng.normal_matrix(3, 6);
    const Matrix y = rng.normal_matrix(2, 6);
    nn::ForwardCache cache;
    nn::forward(params, x, &cache);
    if (cache.relu_margin(params) < kMinMargin) {
      continue;
    }
    const nn::OutputLoss loss = [&](const Matrix& out) {
      const Matrix r = out - y;
      return nn::LossEval{0.5 * r.squaredNorm() / 6.0, r / 6.0};
    };
    const nn::MlpParams grads = nn::grad(params, x, loss);
    return gradcheck::check(params, grads, [&] { return loss(nn::forward(params, x)).value; }, eps);
  }
  throw NumericError("no smooth point found for the MLP check");
}

}  // namespace

std::string format(const CheckResult& r) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(3);
  out << (r.passed ? "PASS " : "FAIL ") << r.module << '/' << r.name << " (" << r.seconds << "s) " << r.detail;
  return out.str();
}

// ---------------------------------------------------------------- density-weight identity

CheckResult density_weight_identity(const Options& opt) {
  return timed("dwr", "density_weight_identity", [&](CheckResult& r) {
    Rng rng(opt.seed, 101);
    double worst = 0.0;
    double witness_gap = 0.0;
    double witness_form = 0.0;
    for (int t = 0; t < 100; ++t) {
      const Index states = 1 + static_cast<Index>(rng.uniform_index(10));
      const Index actions = 2 + static_cast<Index>(rng.uniform_index(9));
      const dwr::TabularProblem p = dwr::random_tabular(states, actions, rng);
      const double gap = dwr::kl_gap(p);
      const double form = dwr::weighted_form(p, opt.flip_weight_sign ? -1.0 : 1.0);
      if (std::abs(gap - form) >= worst) {
        worst = std::abs(gap - form);
        witness_gap = gap;
        witness_form = form;
      }
    }
    r.passed = worst <= 1e-12;
    r.detail = "max |kl_gap - weighted| = " + num(worst) + " over 100 tables (witness " + num(witness_gap) + " vs " +
               num(witness_form) + ")";
  });
}

// ---------------------------------------------------------------- gradients

std::vector<GradientCheck> gradient_checks(const Options& opt) {
  const double eps = opt.eps;
  std::vector<GradientCheck> out;
  out.push_back({"nn", "mlp_loss", [eps](Rng& r) { return mlp_point(r, eps); }});
  out.push_back({"vqvae", "elbo_vq", [eps](Rng& r) { return elbo_point(r, true, eps); }});
  out.push_back({"vqvae", "elbo_passthrough", [eps](Rng& r) { return elbo_point(r, false, eps); }});
  out.push_back({"vqvae", "importance_density", [eps](Rng& r) { return importance_point(r, eps); }});
  out.push_back({"ade", "ade_loss", [eps](Rng& r) { return ade_point(r, ade::SurrogateSource::kElbo, eps); }});
  out.push_back(
      {"ade", "ade_loss_importance", [eps](Rng& r) { return ade_point(r, ade::SurrogateSource::kImportance, eps); }});
  out.push_back({"dwr", "plain", [eps](Rng& r) { return policy_point(r, PolicyObjective::kPlain, eps); }});
  out.push_back({"dwr", "upper_bound", [eps](Rng& r) { return policy_point(r, PolicyObjective::kUpperBound, eps); }});
  out.push_back({"dwr", "bc", [eps](Rng& r) { return policy_point(r, PolicyObjective::kBc, eps); }});
  out.push_back({"dwr", "max_ade", [eps](Rng& r) { return policy_point(r, PolicyObjective::kMaxAde, eps); }});
  out.push_back(
      {"dwr", "ade_divergence", [eps](Rng& r) { return policy_point(r, PolicyObjective::kAdeDivergence, eps); }});
  return out;
}

CheckResult run_gradient_check(const GradientCheck& check, const Options& opt) {
  return timed(check.module, "gradient_" + check.name, [&](CheckResult& r) {
    Rng rng(opt.seed, 202);
    gradcheck::Report total;
    for (int p = 0; p < opt.points; ++p) {
      Rng point = rng.fork(static_cast<std::uint64_t>(p));
      total = gradcheck::combine(total, check.point(point));
    }
    r.passed = total.max_rel_error < opt.gradient_tol;
    r.detail = "max rel error " + num(total.max_rel_error) + " (abs " + num(total.max_abs_error) + ") over " +
               std::to_string(total.coordinates) + " coordinates at " + std::to_string(opt.points) + " points";
  });
}

// ---------------------------------------------------------------- linear-Gaussian toy

LinearToy train_linear_toy(std::uint64_t seed, int held_out, std::int64_t iterations) {
  Rng rng(seed, 303);
  Vector u(2);
  u << 1.0, 0.5;
  Vector slope(2);
  slope << 0.8, -0.6;
  Vector offset(2);
  offset << 0.1, -0.2;
  const double noise = 0.3;
  auto sample = [&](Rng& r, Vector& s, Vector& a) {
    s = Vector::Constant(1, r.uniform(-1.0, 1.0));
    const double z = r.normal();
    a = u * z + slope * s[0] + offset;
    a[0] += noise * r.normal();
    a[1] += noise * r.normal();
  };

  data::Dataset ds;
  ds.obs_dim = 1;
  ds.act_dim = 2;
  for (int i = 0; i < 4000; ++i) {
    Vector s;
    Vector a;
    sample(rng, s, a);
    data::Trajectory t;
    t.transitions.emplace_back(s, a, 0.0, true);
    ds.trajectories.push_back(std::move(t));
  }

  vqvae::EstimatorConfig ec;
  ec.latent_dim = 1;
  ec.codebook_size = 1;
  ec.layers = 1;
  ec.activation = nn::Activation::kIdentity;
  ec.use_quantizer = false;
  ade::AdeConfig cfg;
  cfg.iterations = iterations;
  cfg.batch_size = 128;
  cfg.learning_rate = 5e-3;
  cfg.dead_code_steps = 0;
  Rng train_rng = rng.fork(1);
  ade::ElboTrainResult trained = ade::train_elbo(ds, ec, vqvae::Role::kExpert, cfg, train_rng);
  trained.est.freeze();

  LinearToy toy{std::move(trained.est), Matrix(1, held_out), Matrix(2, held_out)};
  Rng held = rng.fork(2);
  for (int i = 0; i < held_out; ++i) {
    Vector s;
    Vector a;
    sample(held, s, a);
    toy.held_obs.col(i) = s;
    toy.held_act.col(i) = a;
  }
  return toy;
}

double quadrature_log_density(const DensityEstimator& est, const Vector& s, const Vector& a, int nodes) {
  if (est.config().latent_dim != 1 || est.config().use_quantizer) {
    throw ArgumentError("quadrature needs a one-dimensional latent without quantizer");
  }
  if (nodes < 3) {
    throw ArgumentError("quadrature needs at least three nodes");
  }
  const double lo = -12.0;
  const double hi = 12.0;
  const double h = (hi - lo) / (nodes - 1);
  Matrix z(1, nodes);
  for (int k = 0; k < nodes; ++k) {
    z(0, k) = lo + h * k;
  }
  Matrix in(1 + s.size(), nodes);
  in.topRows(1) = z;
  in.bottomRows(s.size()) = s.replicate(1, nodes);
  const Matrix head = nn::forward(est.params().decoder, in);
  const Index d = a.size();
  const Matrix mean = head.topRows(d);
  const Matrix log_var = nn::clamp_log_var(head.bottomRows(d));
  const double log2pi = std::log(2.0 * std::numbers::pi);
  Vector terms(nodes);
  for (int k = 0; k < nodes; ++k) {
    double ll = 0.0;
    for (Index j = 0; j < d; ++j) {
      const double r = a[j] - mean(j, k);
      ll += -0.5 * (r * r * std::exp(-log_var(j, k)) + log_var(j, k) + log2pi);
    }
    const double prior = -0.5 * (z(0, k) * z(0, k) + log2pi);
    const double weight = (k == 0 || k == nodes - 1) ? 0.5 : 1.0;
    terms[k] = ll + prior + std::log(weight * h);
  }
  const double m = terms.maxCoeff();
  return m + std::log((terms.array() - m).exp().sum());
}

ElboBoundReport elbo_bound_report(const LinearToy& toy, int repeats, int is_samples, int is_points,
                                  std::uint64_t seed) {
  const Index n = toy.held_obs.cols();
  const DensityEstimator& est = toy.est;
  Rng rng(seed, 404);
  Vector exact(n);
  for (Index i = 0; i < n; ++i) {
    exact[i] = quadrature_log_density(est, toy.held_obs.col(i), toy.held_act.col(i), 8001);
  }

  // Single-sample ELBO values, `repeats` per point for the mean and another
  // independent `repeats` for its standard error.
  const Matrix obs = toy.held_obs.replicate(1, 2 * repeats);
  const Matrix act = toy.held_act.replicate(1, 2 * repeats);
  const Matrix noise = rng.normal_matrix(1, n * 2 * repeats);
  const Vector elbo = -vqvae::elbo_forward(est, obs, act, noise).bound();
  ElboBoundReport rep;
  int bounded = 0;
  for (Index i = 0; i < n; ++i) {
    double mean = 0.0;
    double spread_mean = 0.0;
    for (int k = 0; k < repeats; ++k) {
      mean += elbo[k * n + i];
      spread_mean += elbo[(repeats + k) * n + i];
    }
    mean /= repeats;
    spread_mean /= repeats;
    double var = 0.0;
    for (int k = 0; k < repeats; ++k) {
      const double v = elbo[(repeats + k) * n + i] - spread_mean;
      var += v * v;
    }
    const double sd = std::sqrt(var / std::max(1, repeats - 1));
    const double mc = 2.576 * sd / std::sqrt(static_cast<double>(repeats));
    if (mean <= exact[i] + mc) {
      ++bounded;
    }
  }
  rep.fraction_bounded = static_cast<double>(bounded) / static_cast<double>(n);

  const Index m = std::min<Index>(is_points, n);
  double total = 0.0;
  for (Index i = 0; i < m; ++i) {
    const Vector ld = vqvae::log_density_batch(est, toy.held_obs.col(i), toy.held_act.col(i), is_samples, rng);
    const double err = std::abs(ld[0] - exact[i]);
    rep.max_is_error = std::max(rep.max_is_error, err);
    total += err;
  }
  rep.mean_is_error = m > 0 ? total / static_cast<double>(m) : 0.0;
  return rep;
}

CheckResult elbo_bound(const Options& opt) {
  return timed("vqvae", "elbo_bound", [&](CheckResult& r) {
    const LinearToy toy = train_linear_toy(opt.seed, 500, 3000);
    const ElboBoundReport rep = elbo_bound_report(toy, 200, 10000, 500, opt.seed);
    r.passed = rep.fraction_bounded >= 0.99 && rep.max_is_error <= 0.05;
    r.detail = "bounded fraction " + num(rep.fraction_bounded) + ", IS(L=1e4) max error " + num(rep.max_is_error) +
               " nats (mean " + num(rep.mean_is_error) + ")";
  });
}

CheckResult importance_consistency(const Options& opt) {
  return timed("vqvae", "importance_consistency", [&](CheckResult& r) {
    Rng rng(opt.seed, 505);
    DensityEstimator est(small_config(true), vqvae::Role::kExpert, rng);
    est.freeze();
    const Vector s = rng.normal_vector(2);
    const Vector a = rng.normal_vector(2);
    std::vector<double> variances;
    for (int L : {1, 10, 100}) {
      std::vector<double> values;
      for (int k = 0; k < 200; ++k) {
        values.push_back(vqvae::log_density(est, s, a, L, rng).log_density);
      }
      double mean = 0.0;
      for (double v : values) {
        mean += v;
      }
      mean /= 200.0;
      double var = 0.0;
      for (double v : values) {
        var += (v - mean) * (v - mean);
      }
      variances.push_back(var / 199.0);
    }
    r.passed = variances[1] < variances[0] && variances[2] < variances[1];
    r.detail = "variance over 200 repeats at L=1,10,100: " + num(variances[0]) + ", " + num(variances[1]) + ", " +
               num(variances[2]);
  });
}

// ---------------------------------------------------------------- cluster fixtures

data::Dataset cluster_dataset(double center, double sigma, int n, Index dim, Rng& rng) {
  data::Dataset ds;
  ds.obs_dim = dim;
  ds.act_dim = dim;
  for (int i = 0; i < n; ++i) {
    Vector s(dim);
    Vector a(dim);
    for (Index j = 0; j < dim; ++j) {
      s[j] = rng.uniform(-1.0, 1.0);
    }
    for (Index j = 0; j < dim; ++j) {
      a[j] = center + sigma * rng.normal();
    }
    data::Trajectory t;
    t.transitions.emplace_back(s, a, 0.0, true);
    ds.trajectories.push_back(std::move(t));
  }
  return ds;
}

data::Dataset corner_dataset(bool expert, double sigma, int n, Rng& rng) {
  data::Dataset ds;
  ds.obs_dim = 2;
  ds.act_dim = 2;
  for (int i = 0; i < n; ++i) {
    Vector s(2);
    s << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);
    const double m = rng.uniform() < 0.5 ? 1.0 : -1.0;
    Vector a(2);
    a[0] = m + sigma * rng.normal();
    a[1] = (expert ? m : -m) + sigma * rng.normal();
    data::Trajectory t;
    t.transitions.emplace_back(s, a, 0.0, true);
    ds.trajectories.push_back(std::move(t));
  }
  return ds;
}

double pair_accuracy(const DensityEstimator& expert_est, const data::Dataset& expert_held,
                     const data::Dataset& subopt_held, int samples, std::uint64_t seed) {
  const data::TransitionTable e(expert_held);
  const data::TransitionTable s(subopt_held);
  const Index n = std::min(e.size(), s.size());
  if (n == 0) {
    throw ArgumentError("pair accuracy needs non-empty held-out sets");
  }
  Rng rng(seed, 606);
  const Vector le = vqvae::log_density_batch(expert_est, e.obs.leftCols(n), e.act.leftCols(n), samples, rng);
  const Vector ls = vqvae::log_density_batch(expert_est, s.obs.leftCols(n), s.act.leftCols(n), samples, rng);
  Index wins = 0;
  for (Index i = 0; i < n; ++i) {
    wins += le[i] > ls[i] ? 1 : 0;
  }
  return static_cast<double>(wins) / static_cast<double>(n);
}

CheckResult cluster_weight_gap(const Options& opt) {
  return timed("dwr", "cluster_weight_gap", [&](CheckResult& r) {
    Rng rng(opt.seed, 707);
    const data::Dataset expert = cluster_dataset(1.0, 0.5, 500, 2, rng);
    const data::Dataset subopt = cluster_dataset(-1.0, 0.5, 2000, 2, rng);
    const data::Dataset expert_held = cluster_dataset(1.0, 0.5, 300, 2, rng);
    const data::Dataset subopt_held = cluster_dataset(-1.0, 0.5, 300, 2, rng);
    vqvae::EstimatorConfig ec;
    ec.latent_dim = 16;
    ec.codebook_size = 64;
    ade::AdeConfig cfg;
    cfg.iterations = 1000;
    cfg.eval_interval = 1000;
    Rng train_rng = rng.fork(1);
    const ade::TrainResult trained = ade::train_density(expert, subopt, ec, cfg, train_rng);
    const double sign = opt.flip_weight_sign ? -1.0 : 1.0;
    auto median_weight = [&](const data::Dataset& ds) {
      const data::TransitionTable t(ds);
      Rng wr(opt.seed, 708);
      Vector w = sign * dwr::density_weight(trained.expert, trained.subopt, data::Batch{t.obs, t.act}, 1, wr);
      std::vector<double> v(w.data(), w.data() + w.size());
      std::nth_element(v.begin(), v.begin() + static_cast<long>(v.size() / 2), v.end());
      return v[v.size() / 2];
    };
    const double exp_med = median_weight(expert_held);
    const double sub_med = median_weight(subopt_held);
    r.passed = sub_med - exp_med > 0.0;
    r.detail = "median weight on suboptimal samples " + num(sub_med) + " vs expert samples " + num(exp_med);
  });
}

// ---------------------------------------------------------------- suite

std::vector<CheckResult> run_all(const Options& opt) {
  std::vector<CheckResult> out;
  out.push_back(density_weight_identity(opt));
  for (const GradientCheck& g : gradient_checks(opt)) {
    out.push_back(run_gradient_check(g, opt));
  }
  out.push_back(elbo_bound(opt));
  out.push_back(importance_consistency(opt));
  out.push_back(cluster_weight_gap(opt));
  return out;
}

}  // namespace adrbc::verify
