#include "adrbc/vqvae.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>

#include "adrbc/checkpoint.h"

namespace adrbc::vqvae {
namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

// Rows [0, n) and [n, 2n) of a stacked head output.
Matrix top(const Matrix& m, Index n) { return m.topRows(n); }
Matrix bottom(const Matrix& m, Index n) { return m.bottomRows(n); }

Matrix stack(const Matrix& upper, const Matrix& lower) {
  Matrix out(upper.rows() + lower.rows(), upper.cols());
  out << upper, lower;
  return out;
}

// 1 where the raw log-variance lies inside the clamp range.
Matrix clamp_mask(const Matrix& raw) {
  return ((raw.array() >= nn::kLogVarMin) && (raw.array() <= nn::kLogVarMax)).cast<double>().matrix();
}

Matrix repeat_columns(const Matrix& m, int times) {
  Matrix out(m.rows(), m.cols() * times);
  for (Index i = 0; i < m.cols(); ++i) {
    for (int l = 0; l < times; ++l) {
      out.col(i * times + l) = m.col(i);
    }
  }
  return out;
}

void check_batch(const DensityEstimator& est, const Matrix& obs, const Matrix& act) {
  const auto& c = est.config();
  if (obs.rows() != c.obs_dim || act.rows() != c.act_dim || obs.cols() != act.cols()) {
    throw ConfigError("estimator input dims do not match (obs " + std::to_string(obs.rows()) +
                      ", act " + std::to_string(act.rows()) + ")");
  }
}

struct EncoderOut {
  nn::ForwardCache cache;
  Matrix mean;
  Matrix raw_log_var;
  Matrix log_var;
};

EncoderOut run_encoder(const DensityEstimator& est, const Matrix& obs, const Matrix& act) {
  check_batch(est, obs, act);
  const Index latent = est.config().latent_dim;
  EncoderOut out;
  const Matrix head = nn::forward(est.params().encoder, stack(obs, act), &out.cache);
  if (!head.allFinite()) {
    throw NumericError("encoder produced non-finite activations");
  }
  out.mean = top(head, latent);
  out.raw_log_var = bottom(head, latent);
  out.log_var = nn::clamp_log_var(out.raw_log_var);
  return out;
}

struct DecoderOut {
  nn::ForwardCache cache;
  Matrix mean;
  Matrix raw_log_var;
  Matrix log_var;
};

DecoderOut run_decoder(const DensityEstimator& est, const Matrix& z_q, const Matrix& obs) {
  const Index act_dim = est.config().act_dim;
  DecoderOut out;
  const Matrix head = nn::forward(est.params().decoder, stack(z_q, obs), &out.cache);
  if (!head.allFinite()) {
    throw NumericError("decoder produced non-finite activations");
  }
  out.mean = top(head, act_dim);
  out.raw_log_var = bottom(head, act_dim);
  out.log_var = nn::clamp_log_var(out.raw_log_var);
  return out;
}

// Column-wise -log N(act; mean, exp(log_var)).
Vector gaussian_nll(const Matrix& act, const Matrix& mean, const Matrix& log_var) {
  const Matrix r = act - mean;
  const Matrix terms = (r.array().square() * (-log_var.array()).exp() + log_var.array() + kLog2Pi).matrix();
  return 0.5 * terms.colwise().sum().transpose();
}

Quantized snap(const DensityEstimator& est, const Matrix& z) {
  if (est.config().use_quantizer) {
    return quantize(z, est.params().codebook);
  }
  Quantized q;
  q.z_q = z;
  q.gap = Vector::Constant(z.cols(), std::numeric_limits<double>::infinity());
  return q;
}

double min_gap(const Quantized& q) {
  return q.gap.size() == 0 ? std::numeric_limits<double>::infinity() : q.gap.minCoeff();
}

}  // namespace

std::string to_string(Role role) {
  return role == Role::kExpert ? "expert" : "suboptimal";
}

void EstimatorConfig::validate() const {
  if (obs_dim <= 0 || act_dim <= 0 || latent_dim <= 0 || codebook_size <= 0) {
    throw ConfigError("estimator dims must be positive");
  }
  if (layers < 1) {
    throw ConfigError("estimator networks need at least one layer");
  }
  if (commitment < 0.0) {
    throw ConfigError("commitment coefficient must be >= 0");
  }
}

EstimatorParams EstimatorParams::zeros_like() const {
  return {encoder.zeros_like(), decoder.zeros_like(), Matrix::Zero(codebook.rows(), codebook.cols())};
}

ParamGroup group_of_tensor(const EstimatorParams& p, std::size_t tensor_index) {
  const std::size_t enc = 2 * p.encoder.layers.size();
  const std::size_t dec = 2 * p.decoder.layers.size();
  if (tensor_index < enc) {
    return ParamGroup::kEncoder;
  }
  if (tensor_index < enc + dec) {
    return ParamGroup::kDecoder;
  }
  return ParamGroup::kCodebook;
}

bool bitwise_equal(const EstimatorParams& lhs, const EstimatorParams& rhs) {
  return nn::bitwise_equal(lhs.encoder, rhs.encoder) && nn::bitwise_equal(lhs.decoder, rhs.decoder) &&
         lhs.codebook.rows() == rhs.codebook.rows() && lhs.codebook.cols() == rhs.codebook.cols() &&
         std::memcmp(lhs.codebook.data(), rhs.codebook.data(),
                     sizeof(double) * static_cast<std::size_t>(lhs.codebook.size())) == 0;
}

DensityEstimator::DensityEstimator(const EstimatorConfig& config, Role role, Rng& rng)
    : config_(config), role_(role) {
  config_.validate();
  const Index h = config_.resolved_hidden_dim();
  std::vector<Index> enc_dims{config_.obs_dim + config_.act_dim};
  std::vector<Index> dec_dims{config_.latent_dim + config_.obs_dim};
  for (int k = 0; k + 1 < config_.layers; ++k) {
    enc_dims.push_back(h);
    dec_dims.push_back(h);
  }
  enc_dims.push_back(2 * config_.latent_dim);
  dec_dims.push_back(2 * config_.act_dim);
  params_.encoder = nn::make_mlp(enc_dims, config_.activation, nn::Activation::kIdentity, rng);
  params_.decoder = nn::make_mlp(dec_dims, config_.activation, nn::Activation::kIdentity, rng);
  params_.codebook = rng.normal_matrix(config_.latent_dim, config_.codebook_size);
}

DensityEstimator::DensityEstimator(const EstimatorConfig& config, Role role, EstimatorParams params)
    : config_(config), role_(role), params_(std::move(params)) {
  config_.validate();
  params_.encoder.validate();
  params_.decoder.validate();
  if (params_.encoder.in_dim() != config_.obs_dim + config_.act_dim ||
      params_.encoder.out_dim() != 2 * config_.latent_dim ||
      params_.decoder.in_dim() != config_.latent_dim + config_.obs_dim ||
      params_.decoder.out_dim() != 2 * config_.act_dim ||
      params_.codebook.rows() != config_.latent_dim ||
      params_.codebook.cols() != config_.codebook_size) {
    throw ConfigError("estimator parameters do not match config dims");
  }
  if (!params_.codebook.allFinite()) {
    throw ConfigError("codebook has non-finite entries");
  }
}

EstimatorParams& DensityEstimator::mutable_params() {
  if (frozen_) {
    throw ContractError(to_string(role_) + " estimator is frozen");
  }
  return params_;
}

// ---------------------------------------------------------------- encode / quantize

Encoding encode(const DensityEstimator& est, const Matrix& obs, const Matrix& act,
                const Matrix* noise) {
  EncoderOut enc = run_encoder(est, obs, act);
  Encoding out;
  out.mean = std::move(enc.mean);
  out.log_var = std::move(enc.log_var);
  if (noise != nullptr) {
    if (noise->rows() != out.mean.rows() || noise->cols() != out.mean.cols()) {
      throw ConfigError("encode: noise shape does not match latent batch");
    }
    out.z_e = out.mean + ((0.5 * out.log_var.array()).exp() * noise->array()).matrix();
  } else {
    out.z_e = out.mean;
  }
  return out;
}

SampleEncoding encode(const DensityEstimator& est, const Vector& s, const Vector& a,
                      const Vector* noise) {
  const Matrix n = noise != nullptr ? Matrix(*noise) : Matrix();
  const Encoding enc = encode(est, Matrix(s), Matrix(a), noise != nullptr ? &n : nullptr);
  return {nn::GaussianHead(enc.mean.col(0), enc.log_var.col(0)), enc.z_e.col(0)};
}

Quantized quantize(const Matrix& z_e, const Matrix& codebook) {
  if (codebook.cols() == 0) {
    throw ArgumentError("quantize: codebook is empty");
  }
  if (codebook.rows() != z_e.rows()) {
    throw ConfigError("quantize: latent dim does not match codebook");
  }
  Quantized q;
  q.index.resize(static_cast<std::size_t>(z_e.cols()));
  q.z_q.resize(z_e.rows(), z_e.cols());
  q.gap.resize(z_e.cols());
  for (Index i = 0; i < z_e.cols(); ++i) {
    const Eigen::RowVectorXd d2 = (codebook.colwise() - z_e.col(i)).colwise().squaredNorm();
    Index best = 0;
    double best_d = d2[0];
    double second_d = std::numeric_limits<double>::infinity();
    for (Index k = 1; k < d2.size(); ++k) {
      if (d2[k] < best_d) {
        second_d = best_d;
        best_d = d2[k];
        best = k;
      } else if (d2[k] < second_d) {
        second_d = d2[k];
      }
    }
    q.index[static_cast<std::size_t>(i)] = best;
    q.z_q.col(i) = codebook.col(best);
    q.gap[i] = second_d - best_d;
  }
  return q;
}

SampleQuantized quantize(const Vector& z_e, const Matrix& codebook) {
  const Quantized q = quantize(Matrix(z_e), codebook);
  return {q.index[0], q.z_q.col(0)};
}

// ---------------------------------------------------------------- ELBO

double ElboPass::smoothness_margin(const DensityEstimator& est) const {
  return std::min({encoder_cache.relu_margin(est.params().encoder),
                   decoder_cache.relu_margin(est.params().decoder), min_gap(quant)});
}

ElboPass elbo_forward(const DensityEstimator& est, const Matrix& obs, const Matrix& act,
                      const Matrix& noise) {
  ElboPass pass;
  EncoderOut enc = run_encoder(est, obs, act);
  if (noise.rows() != enc.mean.rows() || noise.cols() != enc.mean.cols()) {
    throw ConfigError("elbo_forward: noise shape does not match latent batch");
  }
  pass.obs = obs;
  pass.act = act;
  pass.noise = noise;
  pass.encoder_cache = std::move(enc.cache);
  pass.mean = std::move(enc.mean);
  pass.raw_log_var = std::move(enc.raw_log_var);
  pass.log_var = std::move(enc.log_var);
  pass.z_e = pass.mean + ((0.5 * pass.log_var.array()).exp() * noise.array()).matrix();
  pass.quant = snap(est, pass.z_e);

  DecoderOut dec = run_decoder(est, pass.quant.z_q, obs);
  pass.decoder_cache = std::move(dec.cache);
  pass.decoder_mean = std::move(dec.mean);
  pass.decoder_raw_log_var = std::move(dec.raw_log_var);
  pass.decoder_log_var = std::move(dec.log_var);

  pass.nll = gaussian_nll(act, pass.decoder_mean, pass.decoder_log_var);
  pass.kl = 0.5 * (pass.log_var.array().exp() + pass.mean.array().square() - 1.0 - pass.log_var.array())
                      .matrix()
                      .colwise()
                      .sum()
                      .transpose();
  pass.vq_sq = (pass.z_e - pass.quant.z_q).colwise().squaredNorm().transpose();
  if (!pass.nll.allFinite()) {
    throw NumericError("ELBO reconstruction term is non-finite");
  }
  if (!pass.kl.allFinite()) {
    throw NumericError("ELBO KL term is non-finite");
  }
  if (!pass.vq_sq.allFinite()) {
    throw NumericError("VQ term is non-finite");
  }
  return pass;
}

Vector elbo_sample_losses(const DensityEstimator& est, const ElboPass& pass) {
  return pass.nll + pass.kl + (1.0 + est.config().commitment) * pass.vq_sq;
}

double elbo_loss(const DensityEstimator& est, const Matrix& obs, const Matrix& act, Rng& rng) {
  if (obs.cols() == 0) {
    throw ArgumentError("elbo_loss: batch is empty");
  }
  const Matrix noise = rng.normal_matrix(est.config().latent_dim, obs.cols());
  const ElboPass pass = elbo_forward(est, obs, act, noise);
  return elbo_sample_losses(est, pass).mean();
}

void elbo_backward(const DensityEstimator& est, const ElboPass& pass, const Vector& bound_weight,
                   const Vector& vq_weight, GradMode mode, EstimatorParams& grads,
                   Matrix* grad_act) {
  const Index b = pass.obs.cols();
  const Index latent = est.config().latent_dim;
  const Index act_dim = est.config().act_dim;
  const Index obs_dim = est.config().obs_dim;
  if (bound_weight.size() != b || vq_weight.size() != b) {
    throw ConfigError("elbo_backward: weight length does not match batch");
  }
  const EstimatorParams& params = est.params();

  // Decoder head.
  const Matrix inv_var = (-pass.decoder_log_var.array()).exp().matrix();
  const Matrix r = pass.act - pass.decoder_mean;
  const Matrix r_scaled = (r.array() * inv_var.array()).matrix();
  Matrix d_dec_mean = -(r_scaled.array().rowwise() * bound_weight.transpose().array()).matrix();
  Matrix d_dec_lv = (0.5 * (1.0 - r.array() * r_scaled.array()) * clamp_mask(pass.decoder_raw_log_var).array())
                        .matrix();
  d_dec_lv = (d_dec_lv.array().rowwise() * bound_weight.transpose().array()).matrix();
  const Matrix d_dec_in =
      nn::backward(params.decoder, pass.decoder_cache, stack(d_dec_mean, d_dec_lv), grads.decoder);
  const Matrix d_zq = d_dec_in.topRows(latent);

  // Quantizer and VQ terms.
  Matrix d_ze = Matrix::Zero(latent, b);
  if (est.config().use_quantizer) {
    const double beta = est.config().commitment;
    for (Index i = 0; i < b; ++i) {
      const Index k = pass.quant.index[static_cast<std::size_t>(i)];
      const Vector diff = pass.z_e.col(i) - pass.quant.z_q.col(i);
      if (mode == GradMode::kStraightThrough) {
        d_ze.col(i) += d_zq.col(i);
      } else {
        grads.codebook.col(k) += d_zq.col(i);
      }
      grads.codebook.col(k) -= 2.0 * vq_weight[i] * diff;
      d_ze.col(i) += 2.0 * beta * vq_weight[i] * diff;
    }
  } else {
    d_ze += d_zq;
  }

  // Reparameterization and KL.
  const Matrix sigma = (0.5 * pass.log_var.array()).exp().matrix();
  Matrix d_mean = d_ze + (pass.mean.array().rowwise() * bound_weight.transpose().array()).matrix();
  Matrix d_lv = (d_ze.array() * pass.noise.array() * 0.5 * sigma.array()).matrix();
  d_lv += ((0.5 * (pass.log_var.array().exp() - 1.0)).rowwise() * bound_weight.transpose().array())
              .matrix();
  d_lv = (d_lv.array() * clamp_mask(pass.raw_log_var).array()).matrix();
  const Matrix d_enc_in = nn::backward(params.encoder, pass.encoder_cache, stack(d_mean, d_lv), grads.encoder);

  if (grad_act != nullptr) {
    Matrix g = (r_scaled.array().rowwise() * bound_weight.transpose().array()).matrix();
    g += d_enc_in.middleRows(obs_dim, act_dim);
    *grad_act = std::move(g);
  }
}

// ---------------------------------------------------------------- importance sampling

Matrix draw_importance_noise(Rng& rng, Index latent_dim, Index batch, int samples) {
  if (samples < 1) {
    throw ArgumentError("importance sampling needs L >= 1");
  }
  return rng.normal_matrix(latent_dim, batch * samples);
}

double ImportancePass::smoothness_margin(const DensityEstimator& est) const {
  return std::min({encoder_cache.relu_margin(est.params().encoder),
                   decoder_cache.relu_margin(est.params().decoder), min_gap(quant)});
}

ImportancePass importance_forward(const DensityEstimator& est, const Matrix& obs,
                                  const Matrix& act, const Matrix& noise, int samples) {
  if (samples < 1) {
    throw ArgumentError("importance sampling needs L >= 1");
  }
  const Index b = obs.cols();
  const Index latent = est.config().latent_dim;
  if (noise.rows() != latent || noise.cols() != b * samples) {
    throw ConfigError("importance_forward: noise must be latent x (b * L)");
  }
  ImportancePass pass;
  pass.samples = samples;
  EncoderOut enc = run_encoder(est, obs, act);
  pass.obs = obs;
  pass.act = act;
  pass.noise = noise;
  pass.encoder_cache = std::move(enc.cache);
  pass.mean = std::move(enc.mean);
  pass.raw_log_var = std::move(enc.raw_log_var);
  pass.log_var = std::move(enc.log_var);

  const Matrix sigma = (0.5 * pass.log_var.array()).exp().matrix();
  pass.z = repeat_columns(pass.mean, samples) +
           (repeat_columns(sigma, samples).array() * noise.array()).matrix();
  pass.quant = snap(est, pass.z);

  const Matrix obs_rep = repeat_columns(obs, samples);
  DecoderOut dec = run_decoder(est, pass.quant.z_q, obs_rep);
  pass.decoder_cache = std::move(dec.cache);
  pass.decoder_mean = std::move(dec.mean);
  pass.decoder_raw_log_var = std::move(dec.raw_log_var);
  pass.decoder_log_var = std::move(dec.log_var);

  const Vector log_lik = -gaussian_nll(repeat_columns(act, samples), pass.decoder_mean, pass.decoder_log_var);
  const double latent_const = 0.5 * static_cast<double>(latent) * kLog2Pi;
  const Vector log_prior = -0.5 * pass.z.colwise().squaredNorm().transpose().array() - latent_const;
  const Vector lv_sum = repeat_columns(pass.log_var, samples).colwise().sum().transpose();
  const Vector log_q = (-0.5 * noise.colwise().squaredNorm().transpose().array() - 0.5 * lv_sum.array() -
                        latent_const)
                           .matrix();

  pass.log_weight.resize(samples, b);
  pass.log_density.resize(b);
  const double log_l = std::log(static_cast<double>(samples));
  for (Index i = 0; i < b; ++i) {
    for (int l = 0; l < samples; ++l) {
      const Index c = i * samples + l;
      pass.log_weight(l, i) = log_lik[c] + log_prior[c] - log_q[c];
    }
    const double m = pass.log_weight.col(i).maxCoeff();
    pass.log_density[i] = m + std::log((pass.log_weight.col(i).array() - m).exp().sum()) - log_l;
  }
  if (!pass.log_density.allFinite()) {
    throw NumericError("importance-sampled log-density is non-finite");
  }
  return pass;
}

void importance_backward(const DensityEstimator& est, const ImportancePass& pass,
                         const Vector& upstream, GradMode mode, EstimatorParams* grads,
                         Matrix* grad_act) {
  const Index b = pass.obs.cols();
  const int L = pass.samples;
  const Index latent = est.config().latent_dim;
  const Index act_dim = est.config().act_dim;
  const Index obs_dim = est.config().obs_dim;
  if (upstream.size() != b) {
    throw ConfigError("importance_backward: upstream length does not match batch");
  }
  const EstimatorParams& params = est.params();
  EstimatorParams scratch;
  EstimatorParams* g = grads;
  if (g == nullptr) {
    scratch = params.zeros_like();
    g = &scratch;
  }

  // d log_density_i / d log_weight(l, i) = softmax over l.
  Vector dw(b * L);
  for (Index i = 0; i < b; ++i) {
    const double m = pass.log_weight.col(i).maxCoeff();
    const Eigen::ArrayXd e = (pass.log_weight.col(i).array() - m).exp();
    const double s = e.sum();
    for (int l = 0; l < L; ++l) {
      dw[i * L + l] = upstream[i] * e[l] / s;
    }
  }

  // log p(a | z_q, s) through the decoder.
  const Matrix act_rep = repeat_columns(pass.act, L);
  const Matrix inv_var = (-pass.decoder_log_var.array()).exp().matrix();
  const Matrix r = act_rep - pass.decoder_mean;
  const Matrix r_scaled = (r.array() * inv_var.array()).matrix();
  Matrix d_dec_mean = (r_scaled.array().rowwise() * dw.transpose().array()).matrix();
  Matrix d_dec_lv = (-0.5 * (1.0 - r.array() * r_scaled.array()) *
                     clamp_mask(pass.decoder_raw_log_var).array())
                        .matrix();
  d_dec_lv = (d_dec_lv.array().rowwise() * dw.transpose().array()).matrix();
  const Matrix d_dec_in =
      nn::backward(params.decoder, pass.decoder_cache, stack(d_dec_mean, d_dec_lv), g->decoder);
  const Matrix d_zq = d_dec_in.topRows(latent);

  Matrix d_z = Matrix::Zero(latent, b * L);
  if (est.config().use_quantizer) {
    for (Index c = 0; c < b * L; ++c) {
      if (mode == GradMode::kStraightThrough) {
        d_z.col(c) += d_zq.col(c);
      } else {
        g->codebook.col(pass.quant.index[static_cast<std::size_t>(c)]) += d_zq.col(c);
      }
    }
  } else {
    d_z += d_zq;
  }
  // log p(z) = -||z||^2 / 2 + const.
  d_z -= (pass.z.array().rowwise() * dw.transpose().array()).matrix();

  // z = mean + sigma * eps; -log q(z) = |eps|^2 / 2 + sum(log_var) / 2 + const.
  const Matrix sigma = (0.5 * pass.log_var.array()).exp().matrix();
  Matrix d_mean = Matrix::Zero(latent, b);
  Matrix d_lv = Matrix::Zero(latent, b);
  for (Index i = 0; i < b; ++i) {
    for (int l = 0; l < L; ++l) {
      const Index c = i * L + l;
      d_mean.col(i) += d_z.col(c);
      d_lv.col(i) += (d_z.col(c).array() * pass.noise.col(c).array() * 0.5 * sigma.col(i).array()).matrix();
      d_lv.col(i).array() += 0.5 * dw[c];
    }
  }
  d_lv = (d_lv.array() * clamp_mask(pass.raw_log_var).array()).matrix();
  const Matrix d_enc_in =
      nn::backward(params.encoder, pass.encoder_cache, stack(d_mean, d_lv), g->encoder);

  if (grad_act != nullptr) {
    Matrix ga = Matrix::Zero(act_dim, b);
    for (Index i = 0; i < b; ++i) {
      for (int l = 0; l < L; ++l) {
        const Index c = i * L + l;
        ga.col(i) -= dw[c] * r_scaled.col(c);
      }
    }
    ga += d_enc_in.middleRows(obs_dim, act_dim);
    *grad_act = std::move(ga);
  }
}

Vector log_density_batch(const DensityEstimator& est, const Matrix& obs, const Matrix& act,
                         int samples, Rng& rng) {
  const Matrix noise = draw_importance_noise(rng, est.config().latent_dim, obs.cols(), samples);
  return importance_forward(est, obs, act, noise, samples).log_density;
}

DensityValue log_density(const DensityEstimator& est, const Vector& s, const Vector& a,
                         int samples, Rng& rng) {
  const Vector v = log_density_batch(est, Matrix(s), Matrix(a), samples, rng);
  return {v[0], samples};
}

// ---------------------------------------------------------------- codebook upkeep

CodebookUsage::CodebookUsage(Index codebook_size, std::int64_t dead_after)
    : last_used_(static_cast<std::size_t>(codebook_size), 0), dead_after_(dead_after) {}

void CodebookUsage::record(const std::vector<Index>& indices, std::int64_t step) {
  for (Index k : indices) {
    last_used_[static_cast<std::size_t>(k)] = step;
  }
}

int CodebookUsage::reseed_dead(EstimatorParams& params, const Matrix& recent_z_e, std::int64_t step,
                               Rng& rng) {
  if (dead_after_ <= 0 || recent_z_e.cols() == 0) {
    return 0;
  }
  int reseeded = 0;
  for (std::size_t k = 0; k < last_used_.size(); ++k) {
    if (step - last_used_[k] >= dead_after_) {
      const auto pick = static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(recent_z_e.cols())));
      params.codebook.col(static_cast<Index>(k)) = recent_z_e.col(pick);
      last_used_[k] = step;
      ++reseeded;
    }
  }
  return reseeded;
}

int CodebookUsage::active_count(std::int64_t step, std::int64_t window) const {
  int n = 0;
  for (std::int64_t t : last_used_) {
    if (t > 0 && step - t < window) {
      ++n;
    }
  }
  return n;
}

// ---------------------------------------------------------------- checkpoints

std::vector<char> encode_estimator(const DensityEstimator& est) {
  io::ByteWriter out;
  out.magic("ADRW");
  out.u32(checkpoint::kEstimatorVersion);
  out.u8(static_cast<std::uint8_t>(est.role()));
  out.u8(est.config().use_quantizer ? 1 : 0);
  out.f64(est.config().commitment);
  checkpoint::write_mlp_block(out, est.params().encoder);
  checkpoint::write_mlp_block(out, est.params().decoder);
  const Matrix& cb = est.params().codebook;
  out.u32(static_cast<std::uint32_t>(cb.rows()));
  out.u32(static_cast<std::uint32_t>(cb.cols()));
  for (Index r = 0; r < cb.rows(); ++r) {
    for (Index c = 0; c < cb.cols(); ++c) {
      out.f64(cb(r, c));
    }
  }
  return out.bytes();
}

DensityEstimator decode_estimator(std::vector<char> bytes) {
  io::ByteReader in(std::move(bytes));
  in.expect_magic("ADRW");
  const std::size_t version_offset = in.offset();
  const std::uint32_t version = in.u32("version");
  if (version != checkpoint::kEstimatorVersion) {
    throw FormatError("not an estimator checkpoint (version " + std::to_string(version) + ")",
                      version_offset);
  }
  const std::size_t role_offset = in.offset();
  const std::uint8_t role = in.u8("role");
  if (role > 1) {
    throw FormatError("unknown estimator role " + std::to_string(role), role_offset);
  }
  const bool use_quantizer = in.u8("quantizer flag") != 0;
  const double commitment = in.f64("commitment");
  EstimatorParams params;
  const std::size_t enc_offset = in.offset();
  params.encoder = checkpoint::read_mlp_block(in);
  params.decoder = checkpoint::read_mlp_block(in);
  const std::uint32_t rows = in.u32("codebook rows");
  const std::uint32_t cols = in.u32("codebook cols");
  params.codebook.resize(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      params.codebook(r, c) = in.f64("codebook");
    }
  }
  if (!in.at_end()) {
    throw FormatError("trailing bytes after codebook", in.offset());
  }
  if (params.encoder.layers.empty() || params.decoder.layers.empty()) {
    throw FormatError("estimator networks must have layers", enc_offset);
  }
  EstimatorConfig config;
  config.latent_dim = rows;
  config.codebook_size = cols;
  config.act_dim = params.decoder.out_dim() / 2;
  config.obs_dim = params.decoder.in_dim() - rows;
  config.hidden_dim = params.encoder.layers.size() > 1 ? params.encoder.layers.front().weight.rows() : 0;
  config.layers = static_cast<int>(params.encoder.layers.size());
  config.commitment = commitment;
  config.use_quantizer = use_quantizer;
  config.activation = params.encoder.layers.size() > 1 ? params.encoder.layers.front().activation
                                                       : nn::Activation::kRelu;
  try {
    return DensityEstimator(config, static_cast<Role>(role), std::move(params));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("inconsistent estimator checkpoint: ") + e.what(), enc_offset);
  }
}

void save_estimator(const DensityEstimator& est, const std::string& path) {
  io::write_file(path, encode_estimator(est));
}

DensityEstimator load_estimator(const std::string& path) {
  return decode_estimator(io::read_file(path));
}

}  // namespace adrbc::vqvae
