// File: nn.h
// Description: Dense MLPs with explicit reverse-mode gradients, Adam, and
// Gaussian reparameterization

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "adrbc/errors.h"
#include "adrbc/rng.h"
#include "adrbc/types.h"

namespace adrbc::nn {

enum class Activation : std::uint8_t { kIdentity = 0, kRelu = 1, kTanh = 2 };

std::string to_string(Activation activation);
Activation activation_from_tag(std::uint8_t tag);

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::kIdentity;
};

struct MlpParams {
  std::vector<Layer> layers;

  Index in_dim() const;
  Index out_dim() const;
  std::size_t parameter_count() const;

  /// Throws ConfigError if dims do not chain or any entry is non-finite.
  void validate() const;

  /// Same shapes and activations, all parameters zero.
  MlpParams zeros_like() const;
};

bool bitwise_equal(const MlpParams& lhs, const MlpParams& rhs);

// Tensor visitation used by the optimizer and the finite-difference checker.
// Order: for each layer, weight (column-major) then bias.
template <class F>
void visit_tensors(MlpParams& params, F&& fn) {
  for (auto& layer : params.layers) {
    fn(std::span<double>(layer.weight.data(), static_cast<std::size_t>(layer.weight.size())));
    fn(std::span<double>(layer.bias.data(), static_cast<std::size_t>(layer.bias.size())));
  }
}

template <class F>
void visit_tensors(const MlpParams& params, F&& fn) {
  for (const auto& layer : params.layers) {
    fn(std::span<const double>(layer.weight.data(), static_cast<std::size_t>(layer.weight.size())));
    fn(std::span<const double>(layer.bias.data(), static_cast<std::size_t>(layer.bias.size())));
  }
}

/// Layer sizes dims[0] -> dims[1] -> ... ; hidden layers use `hidden`, the last
/// layer uses `output`. Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
MlpParams make_mlp(const std::vector<Index>& dims, Activation hidden, Activation output, Rng& rng);

/// Per-layer intermediates kept for the backward pass.
struct ForwardCache {
  Matrix input;
  std::vector<Matrix> pre;   // affine outputs
  std::vector<Matrix> post;  // activation outputs

  /// Smallest |pre-activation| feeding a ReLU; +inf when there is none.
  double relu_margin(const MlpParams& params) const;
};

Matrix forward(const MlpParams& params, const Matrix& inputs, ForwardCache* cache = nullptr);
Vector forward(const MlpParams& params, const Vector& x);

/// Accumulates parameter gradients into `grads` and returns d loss / d inputs.
Matrix backward(const MlpParams& params, const ForwardCache& cache, const Matrix& grad_output,
                MlpParams& grads);

/// Loss defined on the network output (one column per sample).
struct LossEval {
  double value = 0.0;
  Matrix grad_output;
};
using OutputLoss = std::function<LossEval(const Matrix& output)>;

/// Gradient of `loss(forward(params, inputs))` with respect to every parameter.
/// Throws NumericError whose where() is the first layer with a non-finite
/// activation, or the layer count when only the loss value is non-finite.
MlpParams grad(const MlpParams& params, const Matrix& inputs, const OutputLoss& loss,
               double* value = nullptr);

// ---------------------------------------------------------------- Adam

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<Vector> first_moment;
  std::vector<Vector> second_moment;
};

template <class Params>
OptimState make_optim_state(const Params& params, const AdamConfig& config) {
  OptimState state;
  state.config = config;
  visit_tensors(params, [&](std::span<const double> t) {
    state.first_moment.push_back(Vector::Zero(static_cast<Index>(t.size())));
    state.second_moment.push_back(Vector::Zero(static_cast<Index>(t.size())));
  });
  return state;
}

template <class Params>
void set_zero(Params& params) {
  visit_tensors(params, [](std::span<double> t) { std::fill(t.begin(), t.end(), 0.0); });
}

/// Bias-corrected Adam update in place. Throws ConfigError on shape mismatch and
/// NumericError (where = tensor index) on non-finite gradients; nothing is
/// modified when it throws.
template <class Params>
void adam_step(OptimState& state, Params& params, const Params& grads) {
  std::vector<std::span<const double>> g;
  visit_tensors(grads, [&](std::span<const double> t) { g.push_back(t); });
  if (g.size() != state.first_moment.size()) {
    throw ConfigError("adam_step: gradient tensor count does not match optimizer state");
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (static_cast<Index>(g[i].size()) != state.first_moment[i].size()) {
      throw ConfigError("adam_step: gradient shape does not match optimizer state");
    }
    if (!Eigen::Map<const Vector>(g[i].data(), static_cast<Index>(g[i].size())).allFinite()) {
      throw NumericError("adam_step: non-finite gradient", static_cast<long long>(i));
    }
  }
  std::size_t count = 0;
  visit_tensors(params, [&](std::span<double> t) {
    if (count >= g.size() || t.size() != g[count].size()) {
      throw ConfigError("adam_step: parameter shape does not match optimizer state");
    }
    ++count;
  });
  if (count != g.size()) {
    throw ConfigError("adam_step: parameter tensor count does not match optimizer state");
  }

  state.step += 1;
  const AdamConfig& c = state.config;
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const double step_size = c.learning_rate / correction1;
  const double inv_sqrt_c2 = 1.0 / std::sqrt(correction2);
  std::size_t k = 0;
  visit_tensors(params, [&](std::span<double> p) {
    const auto n = static_cast<Index>(p.size());
    auto m = state.first_moment[k].array();
    auto v = state.second_moment[k].array();
    const Eigen::Map<const Eigen::ArrayXd> gk(g[k].data(), n);
    Eigen::Map<Eigen::ArrayXd> pk(p.data(), n);
    m = c.beta1 * m + (1.0 - c.beta1) * gk;
    v = c.beta2 * v + (1.0 - c.beta2) * gk.square();
    pk -= step_size * m / (v.sqrt() * inv_sqrt_c2 + c.epsilon);
    ++k;
  });
}

// ---------------------------------------------------------------- Gaussian heads

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

/// Diagonal Gaussian; log_var is clamped to [kLogVarMin, kLogVarMax] on construction.
struct GaussianHead {
  GaussianHead() = default;
  GaussianHead(Vector mean_, const Vector& log_var_);

  Vector mean;
  Vector log_var;
};

/// z = mean + exp(log_var / 2) * noise.
Vector reparam_sample(const GaussianHead& head, const Vector& noise);

/// Elementwise clamp to the log-variance range.
Matrix clamp_log_var(const Matrix& raw);

}  // namespace adrbc::nn
