// File: vqvae.h
// Description: Conditional VQ-VAE behavior-density estimator.
//
// Encoder q(z | s, a): MLP on [s; a] producing a diagonal Gaussian over the
// latent. The sample z_e is snapped to its nearest codebook entry z_q. Decoder
// p(a | z_q, s): MLP on [z_q; s] producing a diagonal Gaussian over actions.
// Both log-variances are clamped to [-10, 10].

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adrbc/nn.h"
#include "adrbc/rng.h"
#include "adrbc/types.h"

namespace adrbc::vqvae {

enum class Role : std::uint8_t { kExpert = 0, kSuboptimal = 1 };
std::string to_string(Role role);

/// How gradients cross the quantizer.
///  kStraightThrough: d/dz_e receives the decoder gradient at z_q unchanged and
///                    the codebook learns only from the codebook term.
///  kExact:           the true local derivative; z_q depends on the selected
///                    codebook entry and not on z_e. Used by finite-difference checks.
enum class GradMode { kStraightThrough, kExact };

struct EstimatorConfig {
  Index obs_dim = 0;
  Index act_dim = 0;
  Index latent_dim = 750;
  Index codebook_size = 4096;
  Index hidden_dim = 0;  // 0 selects 2 * act_dim
  int layers = 3;        // affine layers per network
  double commitment = 0.25;
  bool use_quantizer = true;
  nn::Activation activation = nn::Activation::kRelu;

  Index resolved_hidden_dim() const { return hidden_dim > 0 ? hidden_dim : 2 * act_dim; }
  void validate() const;
};

struct EstimatorParams {
  nn::MlpParams encoder;
  nn::MlpParams decoder;
  Matrix codebook;  // latent_dim x codebook_size, one entry per column

  EstimatorParams zeros_like() const;
};

// Visit order: encoder tensors, decoder tensors, codebook.
template <class F>
void visit_tensors(EstimatorParams& p, F&& fn) {
  nn::visit_tensors(p.encoder, fn);
  nn::visit_tensors(p.decoder, fn);
  fn(std::span<double>(p.codebook.data(), static_cast<std::size_t>(p.codebook.size())));
}

template <class F>
void visit_tensors(const EstimatorParams& p, F&& fn) {
  nn::visit_tensors(p.encoder, fn);
  nn::visit_tensors(p.decoder, fn);
  fn(std::span<const double>(p.codebook.data(), static_cast<std::size_t>(p.codebook.size())));
}

enum class ParamGroup { kEncoder, kDecoder, kCodebook };
/// Which group the tensor with the given visit index belongs to.
ParamGroup group_of_tensor(const EstimatorParams& p, std::size_t tensor_index);

bool bitwise_equal(const EstimatorParams& lhs, const EstimatorParams& rhs);

class DensityEstimator {
 public:
  /// Fresh estimator: MLPs use the uniform fan-in init, codebook entries ~ N(0, I).
  DensityEstimator(const EstimatorConfig& config, Role role, Rng& rng);
  DensityEstimator(const EstimatorConfig& config, Role role, EstimatorParams params);

  const EstimatorConfig& config() const { return config_; }
  Role role() const { return role_; }
  const EstimatorParams& params() const { return params_; }

  /// Throws ContractError once frozen.
  EstimatorParams& mutable_params();

  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

 private:
  EstimatorConfig config_;
  Role role_;
  EstimatorParams params_;
  bool frozen_ = false;
};

// ---------------------------------------------------------------- encode / quantize

struct Encoding {
  Matrix mean;     // latent x b
  Matrix log_var;  // clamped
  Matrix z_e;
};

/// `noise` (latent x b) selects training mode (z_e = mean + sigma * noise);
/// nullptr selects evaluation mode (z_e = mean).
Encoding encode(const DensityEstimator& est, const Matrix& obs, const Matrix& act,
                const Matrix* noise);

struct SampleEncoding {
  nn::GaussianHead head;
  Vector z_e;
};
SampleEncoding encode(const DensityEstimator& est, const Vector& s, const Vector& a,
                      const Vector* noise);

struct Quantized {
  std::vector<Index> index;
  Matrix z_q;
  Vector gap;  // second-smallest minus smallest squared distance (inf with one entry)
};

/// Nearest codebook entry per column; ties go to the lowest index.
Quantized quantize(const Matrix& z_e, const Matrix& codebook);

struct SampleQuantized {
  Index index;
  Vector z_q;
};
SampleQuantized quantize(const Vector& z_e, const Matrix& codebook);

// ---------------------------------------------------------------- ELBO

struct ElboPass {
  Matrix obs;
  Matrix act;
  Matrix noise;
  nn::ForwardCache encoder_cache;
  Matrix mean;
  Matrix log_var;
  Matrix raw_log_var;
  Matrix z_e;
  Quantized quant;
  nn::ForwardCache decoder_cache;
  Matrix decoder_mean;
  Matrix decoder_log_var;
  Matrix decoder_raw_log_var;

  Vector nll;     // -log p(a | z_q, s)
  Vector kl;      // KL(q(z | s, a) || N(0, I))
  Vector vq_sq;   // ||z_e - z_q||^2

  /// Per-sample negative ELBO (nll + kl), the log-density surrogate's negation.
  Vector bound() const { return nll + kl; }
  /// Distance to the nearest non-smooth point (ReLU kink or quantizer boundary).
  double smoothness_margin(const DensityEstimator& est) const;
};

ElboPass elbo_forward(const DensityEstimator& est, const Matrix& obs, const Matrix& act,
                      const Matrix& noise);

/// Per-sample loss: nll + kl + ||sg(z_e) - z_q||^2 + commitment * ||z_e - sg(z_q)||^2.
Vector elbo_sample_losses(const DensityEstimator& est, const ElboPass& pass);

/// Batch mean of elbo_sample_losses with noise drawn from `rng`.
double elbo_loss(const DensityEstimator& est, const Matrix& obs, const Matrix& act, Rng& rng);

/// Accumulates gradients of sum_i [bound_weight_i * (nll_i + kl_i) + vq_weight_i * vq_terms_i]
/// into `grads`; optionally writes d/d act (act_dim x b) into `grad_act`.
void elbo_backward(const DensityEstimator& est, const ElboPass& pass, const Vector& bound_weight,
                   const Vector& vq_weight, GradMode mode, EstimatorParams& grads,
                   Matrix* grad_act = nullptr);

// ---------------------------------------------------------------- importance-sampled density

struct DensityValue {
  double log_density = 0.0;  // nats
  int samples = 1;
};

/// Noise for `importance_forward`: latent x (b * L), column i * L + l.
Matrix draw_importance_noise(Rng& rng, Index latent_dim, Index batch, int samples);

struct ImportancePass {
  int samples = 1;
  Matrix obs;
  Matrix act;
  Matrix noise;
  nn::ForwardCache encoder_cache;
  Matrix mean;
  Matrix log_var;
  Matrix raw_log_var;
  Matrix z;  // latent x (b * L)
  Quantized quant;
  nn::ForwardCache decoder_cache;
  Matrix decoder_mean;
  Matrix decoder_log_var;
  Matrix decoder_raw_log_var;
  Matrix log_weight;   // L x b: log p(a|z_q,s) + log p(z) - log q(z|s,a)
  Vector log_density;  // b: log mean_l exp(log_weight)

  double smoothness_margin(const DensityEstimator& est) const;
};

ImportancePass importance_forward(const DensityEstimator& est, const Matrix& obs,
                                  const Matrix& act, const Matrix& noise, int samples);

/// Backpropagates sum_i upstream_i * log_density_i. Either output may be null.
void importance_backward(const DensityEstimator& est, const ImportancePass& pass,
                         const Vector& upstream, GradMode mode, EstimatorParams* grads,
                         Matrix* grad_act);

/// Importance-sampled log p(a | s) per column with L samples from `rng`.
Vector log_density_batch(const DensityEstimator& est, const Matrix& obs, const Matrix& act,
                         int samples, Rng& rng);

DensityValue log_density(const DensityEstimator& est, const Vector& s, const Vector& a,
                         int samples, Rng& rng);

// ---------------------------------------------------------------- codebook upkeep

/// Tracks when each code was last selected and re-seeds codes idle for
/// `dead_after` consecutive steps to a random recent z_e.
class CodebookUsage {
 public:
  CodebookUsage(Index codebook_size, std::int64_t dead_after);

  void record(const std::vector<Index>& indices, std::int64_t step);
  /// Returns the number of codes re-seeded.
  int reseed_dead(EstimatorParams& params, const Matrix& recent_z_e, std::int64_t step, Rng& rng);
  /// Codes selected within the last `window` steps.
  int active_count(std::int64_t step, std::int64_t window) const;

 private:
  std::vector<std::int64_t> last_used_;
  std::int64_t dead_after_;
};

// ---------------------------------------------------------------- checkpoints
//
// "ADRW" | version u32 = 2 | role u8 | quantizer flag u8 | commitment f64 |
// encoder block | decoder block | codebook rows u32, cols u32, f64 row-major

std::vector<char> encode_estimator(const DensityEstimator& est);
DensityEstimator decode_estimator(std::vector<char> bytes);
void save_estimator(const DensityEstimator& est, const std::string& path);
DensityEstimator load_estimator(const std::string& path);

}  // namespace adrbc::vqvae
