#include "adrbc/nn.h"

#include <cstring>
#include <limits>

namespace adrbc::nn {
namespace {

Matrix apply_activation(Activation activation, const Matrix& pre) {
  switch (activation) {
    case Activation::kIdentity:
      return pre;
    case Activation::kRelu:
      return pre.cwiseMax(0.0);
    case Activation::kTanh:
      return pre.array().tanh().matrix();
  }
  return pre;
}

// d post / d pre applied to an upstream gradient.
Matrix activation_backward(Activation activation, const Matrix& pre, const Matrix& post,
                           const Matrix& upstream) {
  switch (activation) {
    case Activation::kIdentity:
      return upstream;
    case Activation::kRelu:
      return (pre.array() > 0.0).select(upstream, 0.0);
    case Activation::kTanh:
      return (upstream.array() * (1.0 - post.array().square())).matrix();
  }
  return upstream;
}

bool all_finite(const Matrix& m) {
  return m.allFinite();
}

}  // namespace

std::string to_string(Activation activation) {
  switch (activation) {
    case Activation::kIdentity:
      return "identity";
    case Activation::kRelu:
      return "relu";
    case Activation::kTanh:
      return "tanh";
  }
  return "unknown";
}

Activation activation_from_tag(std::uint8_t tag) {
  if (tag > 2) {
    throw ConfigError("unknown activation tag " + std::to_string(tag));
  }
  return static_cast<Activation>(tag);
}

Index MlpParams::in_dim() const {
  return layers.empty() ? 0 : layers.front().weight.cols();
}

Index MlpParams::out_dim() const {
  return layers.empty() ? 0 : layers.back().weight.rows();
}

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers) {
    n += static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
  }
  return n;
}

void MlpParams::validate() const {
  if (layers.empty()) {
    throw ConfigError("MLP has no layers");
  }
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const Layer& layer = layers[k];
    if (layer.bias.size() != layer.weight.rows()) {
      throw ConfigError("layer " + std::to_string(k) + ": bias length does not match weight rows");
    }
    if (k + 1 < layers.size() && layer.weight.rows() != layers[k + 1].weight.cols()) {
      throw ConfigError("layer " + std::to_string(k) + " out-dim does not match layer " +
                        std::to_string(k + 1) + " in-dim");
    }
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) {
      throw ConfigError("layer " + std::to_string(k) + " has non-finite parameters");
    }
  }
}

MlpParams MlpParams::zeros_like() const {
  MlpParams out;
  out.layers.reserve(layers.size());
  for (const auto& layer : layers) {
    out.layers.push_back({Matrix::Zero(layer.weight.rows(), layer.weight.cols()),
                          Vector::Zero(layer.bias.size()), layer.activation});
  }
  return out;
}

bool bitwise_equal(const MlpParams& lhs, const MlpParams& rhs) {
  if (lhs.layers.size() != rhs.layers.size()) {
    return false;
  }
  for (std::size_t k = 0; k < lhs.layers.size(); ++k) {
    const Layer& a = lhs.layers[k];
    const Layer& b = rhs.layers[k];
    if (a.activation != b.activation || a.weight.rows() != b.weight.rows() ||
        a.weight.cols() != b.weight.cols() || a.bias.size() != b.bias.size()) {
      return false;
    }
    if (std::memcmp(a.weight.data(), b.weight.data(), sizeof(double) * a.weight.size()) != 0 ||
        std::memcmp(a.bias.data(), b.bias.data(), sizeof(double) * a.bias.size()) != 0) {
      return false;
    }
  }
  return true;
}

MlpParams make_mlp(const std::vector<Index>& dims, Activation hidden, Activation output, Rng& rng) {
  if (dims.size() < 2) {
    throw ConfigError("make_mlp needs at least input and output dims");
  }
  MlpParams params;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    const Index in = dims[k];
    const Index out = dims[k + 1];
    if (in <= 0 || out <= 0) {
      throw ConfigError("make_mlp: layer dims must be positive");
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Layer layer;
    layer.weight.resize(out, in);
    layer.bias.resize(out);
    for (Index c = 0; c < in; ++c) {
      for (Index r = 0; r < out; ++r) {
        layer.weight(r, c) = rng.uniform(-bound, bound);
      }
    }
    for (Index r = 0; r < out; ++r) {
      layer.bias[r] = rng.uniform(-bound, bound);
    }
    layer.activation = (k + 2 == dims.size()) ? output : hidden;
    params.layers.push_back(std::move(layer));
  }
  return params;
}

double ForwardCache::relu_margin(const MlpParams& params) const {
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < params.layers.size() && k < pre.size(); ++k) {
    if (params.layers[k].activation == Activation::kRelu && pre[k].size() > 0) {
      margin = std::min(margin, pre[k].cwiseAbs().minCoeff());
    }
  }
  return margin;
}

Matrix forward(const MlpParams& params, const Matrix& inputs, ForwardCache* cache) {
  if (params.layers.empty()) {
    throw ConfigError("forward: MLP has no layers");
  }
  if (inputs.rows() != params.in_dim()) {
    throw ConfigError("forward: input has " + std::to_string(inputs.rows()) +
                      " rows, network expects " + std::to_string(params.in_dim()));
  }
  if (cache != nullptr) {
    cache->input = inputs;
    cache->pre.clear();
    cache->post.clear();
  }
  Matrix x = inputs;
  for (const Layer& layer : params.layers) {
    Matrix pre = layer.weight * x;
    pre.colwise() += layer.bias;
    Matrix post = apply_activation(layer.activation, pre);
    if (cache != nullptr) {
      cache->pre.push_back(std::move(pre));
      cache->post.push_back(post);
    }
    x = std::move(post);
  }
  return x;
}

Vector forward(const MlpParams& params, const Vector& x) {
  const Matrix out = forward(params, Matrix(x), nullptr);
  return out.col(0);
}

Matrix backward(const MlpParams& params, const ForwardCache& cache, const Matrix& grad_output,
                MlpParams& grads) {
  const std::size_t n = params.layers.size();
  if (cache.pre.size() != n || grads.layers.size() != n) {
    throw ConfigError("backward: cache or gradient structure does not match network");
  }
  Matrix upstream = grad_output;
  for (std::size_t i = n; i-- > 0;) {
    const Layer& layer = params.layers[i];
    const Matrix delta = activation_backward(layer.activation, cache.pre[i], cache.post[i], upstream);
    const Matrix& layer_input = (i == 0) ? cache.input : cache.post[i - 1];
    grads.layers[i].weight.noalias() += delta * layer_input.transpose();
    grads.layers[i].bias += delta.rowwise().sum();
    upstream = layer.weight.transpose() * delta;
  }
  return upstream;
}

MlpParams grad(const MlpParams& params, const Matrix& inputs, const OutputLoss& loss,
               double* value) {
  ForwardCache cache;
  const Matrix output = forward(params, inputs, &cache);
  for (std::size_t k = 0; k < cache.post.size(); ++k) {
    if (!all_finite(cache.post[k])) {
      throw NumericError("non-finite activation in layer " + std::to_string(k),
                         static_cast<long long>(k));
    }
  }
  LossEval eval = loss(output);
  if (!std::isfinite(eval.value)) {
    throw NumericError("loss is non-finite", static_cast<long long>(params.layers.size()));
  }
  if (eval.grad_output.rows() != output.rows() || eval.grad_output.cols() != output.cols()) {
    throw ConfigError("loss gradient shape does not match network output");
  }
  MlpParams grads = params.zeros_like();
  backward(params, cache, eval.grad_output, grads);
  if (value != nullptr) {
    *value = eval.value;
  }
  return grads;
}

GaussianHead::GaussianHead(Vector mean_, const Vector& log_var_)
    : mean(std::move(mean_)), log_var(log_var_.cwiseMax(kLogVarMin).cwiseMin(kLogVarMax)) {
  if (mean.size() != log_var.size()) {
    throw ConfigError("GaussianHead: mean and log-variance lengths differ");
  }
}

Vector reparam_sample(const GaussianHead& head, const Vector& noise) {
  if (noise.size() != head.mean.size()) {
    throw ConfigError("reparam_sample: noise length does not match head dimension");
  }
  return head.mean + ((0.5 * head.log_var.array()).exp() * noise.array()).matrix();
}

Matrix clamp_log_var(const Matrix& raw) {
  return raw.cwiseMax(kLogVarMin).cwiseMin(kLogVarMax);
}

}  // namespace adrbc::nn
