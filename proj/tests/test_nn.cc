#include <doctest.h>

#include <cmath>
#include <limits>

#include "adrbc/checkpoint.h"
#include "adrbc/gradcheck.h"
#include "adrbc/nn.h"

using namespace adrbc;

namespace {

nn::MlpParams single_layer(Matrix w, Vector b, nn::Activation act) {
  nn::MlpParams p;
  p.layers.push_back(nn::Layer{std::move(w), std::move(b), act});
  return p;
}

double apply(nn::Activation a, double x) {
  switch (a) {
    case nn::Activation::kRelu:
      return x > 0 ? x : 0.0;
    case nn::Activation::kTanh:
      return std::tanh(x);
    case nn::Activation::kIdentity:
      return x;
  }
  return x;
}

nn::OutputLoss squared_loss(const Matrix& target) {
  return [target](const Matrix& out) {
    const Matrix r = out - target;
    return nn::LossEval{0.5 * r.squaredNorm(), r};
  };
}

}  // namespace

TEST_CASE("forward: identity layer passes input through") {
  const auto p = single_layer(Matrix::Identity(2, 2), Vector::Zero(2), nn::Activation::kIdentity);
  Vector x(2);
  x << 1, 2;
  const Vector y = nn::forward(p, x);
  CHECK(y[0] == 1.0);
  CHECK(y[1] == 2.0);
}

TEST_CASE("forward: relu clips a negative pre-activation") {
  const auto p = single_layer(Matrix::Constant(1, 1, -1.0), Vector::Zero(1), nn::Activation::kRelu);
  CHECK(nn::forward(p, Vector(Vector::Constant(1, 3.0)))[0] == 0.0);
}

TEST_CASE("forward: two-layer net matches straight-line arithmetic") {
  Rng rng(3);
  const auto p = nn::make_mlp({3, 4, 2}, nn::Activation::kTanh, nn::Activation::kRelu, rng);
  for (int trial = 0; trial < 3; ++trial) {
    const Vector x = rng.normal_vector(3);
    double h[4];
    for (int i = 0; i < 4; ++i) {
      double s = p.layers[0].bias[i];
      for (int j = 0; j < 3; ++j) {
        s += p.layers[0].weight(i, j) * x[j];
      }
      h[i] = apply(p.layers[0].activation, s);
    }
    const Vector y = nn::forward(p, x);
    for (int i = 0; i < 2; ++i) {
      double s = p.layers[1].bias[i];
      for (int j = 0; j < 4; ++j) {
        s += p.layers[1].weight(i, j) * h[j];
      }
      CHECK(std::abs(y[i] - apply(p.layers[1].activation, s)) <= 1e-12);
    }
  }
}

TEST_CASE("forward: dimension mismatch is a config error") {
  Rng rng(1);
  const auto p = nn::make_mlp({3, 2}, nn::Activation::kRelu, nn::Activation::kIdentity, rng);
  CHECK_THROWS_AS(nn::forward(p, Vector(Vector::Zero(2))), ConfigError);
}

TEST_CASE("forward is pure") {
  Rng rng(2);
  const auto p = nn::make_mlp({4, 8, 8, 3}, nn::Activation::kRelu, nn::Activation::kTanh, rng);
  const Matrix x = rng.normal_matrix(4, 16);
  const Matrix a = nn::forward(p, x);
  const Matrix b = nn::forward(p, x);
  CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0);
}

TEST_CASE("make_mlp: fan-in uniform init and chained dims") {
  Rng rng(4);
  const auto p = nn::make_mlp({5, 7, 3}, nn::Activation::kRelu, nn::Activation::kIdentity, rng);
  REQUIRE(p.layers.size() == 2);
  CHECK(p.in_dim() == 5);
  CHECK(p.out_dim() == 3);
  CHECK(p.layers[0].weight.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(5.0));
  CHECK(p.layers[1].weight.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(7.0));
  CHECK(p.layers[1].bias.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(7.0));
  CHECK_NOTHROW(p.validate());
  nn::MlpParams broken = p;
  broken.layers[1].weight = Matrix::Zero(3, 6);
  CHECK_THROWS_AS(broken.validate(), ConfigError);
  broken = p;
  broken.layers[0].bias[0] = std::nan("");
  CHECK_THROWS_AS(broken.validate(), ConfigError);
}

TEST_CASE("grad: hand derivative of a scalar least-squares loss") {
  const auto p = single_layer(Matrix::Constant(1, 1, 1.0), Vector::Zero(1), nn::Activation::kIdentity);
  const Matrix x = Matrix::Constant(1, 1, 2.0);
  double value = 0.0;
  const auto g = nn::grad(p, x, squared_loss(Matrix::Zero(1, 1)), &value);
  CHECK(value == doctest::Approx(2.0));
  CHECK(g.layers[0].weight(0, 0) == doctest::Approx(4.0));
  CHECK(g.layers[0].bias[0] == doctest::Approx(2.0));
}

TEST_CASE("grad: constant loss gives zero gradient") {
  Rng rng(5);
  const auto p = nn::make_mlp({3, 4, 2}, nn::Activation::kRelu, nn::Activation::kIdentity, rng);
  const auto g = nn::grad(p, rng.normal_matrix(3, 5), [](const Matrix& out) {
    return nn::LossEval{7.0, Matrix::Zero(out.rows(), out.cols())};
  });
  nn::visit_tensors(g, [](std::span<const double> t) {
    for (double v : t) {
      CHECK(v == 0.0);
    }
  });
}

TEST_CASE("grad: matches central differences at random points") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed, 9);
    const nn::Activation hidden = seed % 3 == 0   ? nn::Activation::kTanh
                                  : seed % 3 == 1 ? nn::Activation::kRelu
                                                  : nn::Activation::kIdentity;
    nn::MlpParams p = nn::make_mlp({3, 6, 5, 2}, hidden, nn::Activation::kTanh, rng);
    const Matrix x = rng.normal_matrix(3, 4);
    nn::ForwardCache cache;
    nn::forward(p, x, &cache);
    if (cache.relu_margin(p) < 1e-3) {
      continue;
    }
    const auto loss = squared_loss(rng.normal_matrix(2, 4));
    const auto g = nn::grad(p, x, loss);
    const auto rep = gradcheck::check(p, g, [&] { return loss(nn::forward(p, x)).value; });
    CHECK(rep.max_rel_error < 1e-4);
  }
}

TEST_CASE("grad: backward returns the input gradient") {
  Rng rng(11);
  const auto p = nn::make_mlp({3, 5, 2}, nn::Activation::kTanh, nn::Activation::kIdentity, rng);
  Matrix x = rng.normal_matrix(3, 4);
  const auto loss = squared_loss(rng.normal_matrix(2, 4));
  nn::ForwardCache cache;
  const Matrix out = nn::forward(p, x, &cache);
  nn::MlpParams grads = p.zeros_like();
  const Matrix gx = nn::backward(p, cache, loss(out).grad_output, grads);
  const Matrix numeric = gradcheck::numeric_input_gradient(x, [&] { return loss(nn::forward(p, x)).value; });
  CHECK((gx - numeric).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("grad: non-finite values raise a numeric error with the layer index") {
  nn::MlpParams p;
  p.layers.push_back(nn::Layer{Matrix::Constant(1, 1, 1e308), Vector::Zero(1), nn::Activation::kIdentity});
  p.layers.push_back(nn::Layer{Matrix::Constant(1, 1, 1.0), Vector::Zero(1), nn::Activation::kIdentity});
  const Matrix x = Matrix::Constant(1, 1, 10.0);
  try {
    nn::grad(p, x, squared_loss(Matrix::Zero(1, 1)));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.where() == 0);
  }

  const auto q = single_layer(Matrix::Constant(1, 1, 1.0), Vector::Zero(1), nn::Activation::kIdentity);
  try {
    nn::grad(q, x, [](const Matrix& out) {
      return nn::LossEval{std::numeric_limits<double>::infinity(), Matrix::Zero(out.rows(), out.cols())};
    });
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.where() == 1);
  }
}

TEST_CASE("adam: first bias-corrected step moves by the learning rate") {
  auto p = single_layer(Matrix::Constant(1, 1, 0.3), Vector::Zero(1), nn::Activation::kIdentity);
  auto g = p.zeros_like();
  g.layers[0].weight(0, 0) = 5.0;
  auto state = nn::make_optim_state(p, nn::AdamConfig{0.1});
  nn::adam_step(state, p, g);
  CHECK(std::abs(p.layers[0].weight(0, 0) - (0.3 - 0.1)) < 1e-8);
  CHECK(state.step == 1);
}

TEST_CASE("adam: zero gradient leaves parameters and moments unchanged") {
  Rng rng(6);
  auto p = nn::make_mlp({3, 4, 2}, nn::Activation::kRelu, nn::Activation::kIdentity, rng);
  const auto before = p;
  auto state = nn::make_optim_state(p, nn::AdamConfig{0.01});
  for (int i = 0; i < 3; ++i) {
    nn::adam_step(state, p, p.zeros_like());
  }
  CHECK(nn::bitwise_equal(p, before));
  CHECK(state.step == 3);
  for (const auto& m : state.first_moment) {
    CHECK(m.isZero(0.0));
  }
  for (const auto& v : state.second_moment) {
    CHECK(v.isZero(0.0));
  }
}

TEST_CASE("adam: 100 steps on p^2 follow the scalar recurrence") {
  auto p = single_layer(Matrix::Constant(1, 1, 1.0), Vector::Zero(1), nn::Activation::kIdentity);
  auto state = nn::make_optim_state(p, nn::AdamConfig{0.01});
  double ref = 1.0;
  double m = 0.0;
  double v = 0.0;
  for (int t = 1; t <= 100; ++t) {
    auto g = p.zeros_like();
    g.layers[0].weight(0, 0) = 2.0 * p.layers[0].weight(0, 0);
    nn::adam_step(state, p, g);
    const double gr = 2.0 * ref;
    m = 0.9 * m + 0.1 * gr;
    v = 0.999 * v + 0.001 * gr * gr;
    ref -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  const double final = p.layers[0].weight(0, 0);
  CHECK(std::abs(final - ref) < 1e-12);
  CHECK(std::abs(final) < 1.0);
  CHECK(std::abs(final) < 0.5);
}

TEST_CASE("adam: non-finite gradient is rejected without modifying anything") {
  auto p = single_layer(Matrix::Constant(1, 1, 1.0), Vector::Zero(1), nn::Activation::kIdentity);
  auto g = p.zeros_like();
  g.layers[0].bias[0] = std::nan("");
  auto state = nn::make_optim_state(p, nn::AdamConfig{0.01});
  CHECK_THROWS_AS(nn::adam_step(state, p, g), NumericError);
  CHECK(state.step == 0);
  CHECK(p.layers[0].weight(0, 0) == 1.0);
}

TEST_CASE("adam: shape mismatch is a config error") {
  Rng rng(8);
  auto p = nn::make_mlp({2, 3}, nn::Activation::kRelu, nn::Activation::kIdentity, rng);
  const auto other = nn::make_mlp({2, 4}, nn::Activation::kRelu, nn::Activation::kIdentity, rng);
  auto state = nn::make_optim_state(p, nn::AdamConfig{});
  CHECK_THROWS_AS(nn::adam_step(state, p, other), ConfigError);
}

TEST_CASE("reparam_sample: closed-form cases") {
  Vector mean(2);
  mean << 0.5, -2.0;
  const nn::GaussianHead head(mean, Vector::Zero(2));
  const Vector z = nn::reparam_sample(head, Vector::Zero(2));
  CHECK(z == mean);
  const nn::GaussianHead unit(Vector::Zero(2), Vector::Zero(2));
  Vector noise(2);
  noise << 1, -1;
  CHECK(nn::reparam_sample(unit, noise) == noise);
  CHECK_THROWS_AS(nn::reparam_sample(unit, Vector::Zero(3)), ConfigError);
}

TEST_CASE("reparam_sample: moments of 1e5 samples") {
  Vector mean(2);
  mean << 1.5, -0.5;
  Vector log_var(2);
  log_var << std::log(4.0), std::log(0.25);
  const nn::GaussianHead head(mean, log_var);
  Rng rng(12);
  const int n = 100000;
  Vector sum = Vector::Zero(2);
  Vector sq = Vector::Zero(2);
  for (int i = 0; i < n; ++i) {
    const Vector z = nn::reparam_sample(head, rng.normal_vector(2));
    sum += z;
    sq += z.cwiseProduct(z);
  }
  for (int j = 0; j < 2; ++j) {
    const double var = std::exp(log_var[j]);
    const double m = sum[j] / n;
    const double v = sq[j] / n - m * m;
    CHECK(std::abs(m - mean[j]) < 3.0 * std::sqrt(var / n));
    CHECK(std::abs(v - var) < 3.0 * var * std::sqrt(2.0 / n));
  }
}

TEST_CASE("gaussian head clamps the log-variance") {
  Vector lv(3);
  lv << -50, 0.5, 50;
  const nn::GaussianHead h(Vector::Zero(3), lv);
  CHECK(h.log_var[0] == nn::kLogVarMin);
  CHECK(h.log_var[1] == 0.5);
  CHECK(h.log_var[2] == nn::kLogVarMax);
}

TEST_CASE("checkpoint: parameter container round trip and errors") {
  Rng rng(13);
  const auto p = nn::make_mlp({3, 5, 2}, nn::Activation::kRelu, nn::Activation::kTanh, rng);
  const auto bytes = checkpoint::encode_params(p);
  CHECK(nn::bitwise_equal(checkpoint::decode_params(bytes), p));

  auto bad = bytes;
  bad[0] = 'X';
  bad[1] = 'X';
  bad[2] = 'X';
  bad[3] = 'X';
  try {
    checkpoint::decode_params(bad);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 0);
  }
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(checkpoint::decode_params(truncated), FormatError);
  CHECK_THROWS_AS(checkpoint::load_params("/nonexistent/dir/params.adrw"), IoError);
}
