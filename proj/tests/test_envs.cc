#include <doctest.h>

#include <cmath>

#include "adrbc/envs.h"

using namespace adrbc;
using envs::ControllerKind;

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) {
    s += x;
  }
  return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) {
    s += (x - m) * (x - m);
  }
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::vector<double> corpus_returns(const data::Dataset& ds) {
  std::vector<double> out;
  for (const auto& t : ds.trajectories) {
    out.push_back(t.total_return());
  }
  return out;
}

}  // namespace

TEST_CASE("make_env: constructor contracts") {
  const envs::Env pm = envs::make_env("point-mass-2d", 0);
  CHECK(pm.obs_dim() == 4);
  CHECK(pm.act_dim() == 2);
  CHECK(pm.horizon() == 50);
  const envs::Env arc = envs::make_env("arc-reach-2d", 0);
  CHECK(arc.obs_dim() == 4);
  CHECK(arc.horizon() == 30);
  const envs::Env bandit = envs::make_env("bandit-1d", 0);
  CHECK(bandit.obs_dim() == 1);
  CHECK(bandit.act_dim() == 1);
  CHECK(bandit.horizon() == 1);
  CHECK_THROWS_AS(envs::make_env("hopper", 0), ArgumentError);
}

TEST_CASE("make_env: same seed gives identical initial states") {
  for (const auto& name : envs::kEnvNames) {
    envs::Env a = envs::make_env(name, 17);
    envs::Env b = envs::make_env(name, 17);
    for (int i = 0; i < 5; ++i) {
      CHECK(a.reset() == b.reset());
    }
  }
}

TEST_CASE("bandit reward is minus the distance to the target action") {
  envs::Env env = envs::make_env("bandit-1d", 3);
  const Vector s = env.reset();
  const double target = 0.5 * s[0] + 0.25;
  const auto r = env.step(Vector::Constant(1, target - 0.3));
  CHECK(r.reward == doctest::Approx(-0.3).epsilon(1e-12));
  CHECK(r.done);
  CHECK_THROWS_AS(env.step(Vector::Zero(1)), ContractError);
  CHECK(envs::expert_action(envs::Kind::kBandit, s)[0] == doctest::Approx(target).epsilon(1e-15));
}

TEST_CASE("actions are clipped and projected onto the unit disk") {
  envs::Env env = envs::make_env("point-mass-2d", 1);
  env.reset();
  Vector a(2);
  a << 3.0, 3.0;
  const Vector f = env.feasible(a);
  CHECK(f.norm() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(f[0] == doctest::Approx(f[1]));
  Vector nan(2);
  nan << std::nan(""), 0.0;
  CHECK_THROWS_AS(env.step(nan), NumericError);
  CHECK_THROWS_AS(env.step(Vector::Zero(3)), ConfigError);
}

TEST_CASE("rollout: zero actions keep the agent in place") {
  envs::Env env = envs::make_env("point-mass-2d", 2);
  const envs::Controller zero = [](const Vector&, Rng&) { return Vector(Vector::Zero(2)); };
  Rng rng(1);
  const data::Trajectory t = envs::rollout(env, zero, rng);
  REQUIRE(t.length() == 50);
  // The goal is placed 1.5 away from the start.
  CHECK(t.total_return() == doctest::Approx(-75.0).epsilon(1e-12));
  for (const auto& tr : t.transitions) {
    CHECK(tr.s.head(2) == t.transitions[0].s.head(2));
  }
  CHECK(t.transitions.back().done);
}

TEST_CASE("rollout: scripted expert is optimal on the bandit") {
  envs::Env env = envs::make_env("bandit-1d", 4);
  Rng rng(2);
  const auto expert = envs::make_controller(env, ControllerKind::kExpert, 0.0, rng);
  for (int i = 0; i < 20; ++i) {
    CHECK(envs::episode_return(env, expert, rng) == 0.0);
  }
}

TEST_CASE("rollout: bit-identical under fixed seeds") {
  for (const auto& name : envs::kEnvNames) {
    envs::Env e1 = envs::make_env(name, 5);
    envs::Env e2 = envs::make_env(name, 5);
    Rng r1(6);
    Rng r2(6);
    const auto c1 = envs::make_controller(e1, ControllerKind::kNoisyExpert, 0.3, r1);
    const auto c2 = envs::make_controller(e2, ControllerKind::kNoisyExpert, 0.3, r2);
    const auto t1 = envs::rollout(e1, c1, r1);
    const auto t2 = envs::rollout(e2, c2, r2);
    data::Dataset d1;
    d1.obs_dim = e1.obs_dim();
    d1.act_dim = e1.act_dim();
    d1.trajectories = {t1};
    data::Dataset d2 = d1;
    d2.trajectories = {t2};
    CHECK(data::bitwise_equal(d1, d2));
  }
}

TEST_CASE("rollout: non-finite controller output is a numeric error") {
  envs::Env env = envs::make_env("point-mass-2d", 7);
  const envs::Controller bad = [](const Vector&, Rng&) { return Vector(Vector::Constant(2, std::nan(""))); };
  Rng rng(3);
  CHECK_THROWS_AS(envs::rollout(env, bad, rng), NumericError);
}

TEST_CASE("corpus specs parse and print") {
  const auto spec = envs::parse_corpus_spec("expert:0:5,noisy:0.3:500,random:0:7,detour:0.5:2");
  REQUIRE(spec.size() == 4);
  CHECK(spec[1].controller == ControllerKind::kNoisyExpert);
  CHECK(spec[1].sigma == 0.3);
  CHECK(spec[1].count == 500);
  CHECK(envs::parse_corpus_spec(envs::to_string(spec)).size() == 4);
  CHECK_THROWS_AS(envs::parse_corpus_spec(""), ConfigError);
  CHECK_THROWS_AS(envs::parse_corpus_spec("expert:0"), ConfigError);
  CHECK_THROWS_AS(envs::parse_corpus_spec("expert:x:5"), ConfigError);
  CHECK_THROWS_AS(envs::parse_corpus_spec("oracle:0:5"), ConfigError);
  CHECK_THROWS_AS(envs::parse_corpus_spec("noisy:-1:5"), ConfigError);
}

TEST_CASE("generate_corpus: random corpus matches the random reference") {
  envs::Env env = envs::make_env("point-mass-2d", 8);
  Rng rng(9);
  const auto ds = envs::generate_corpus(env, envs::parse_corpus_spec("random:0:500"), rng);
  const auto returns = corpus_returns(ds);
  const auto& refs = envs::builtin_refs("point-mass-2d");
  const double sd = sd_of(returns);
  const double se = sd * std::sqrt(1.0 / 500.0 + 1.0 / envs::kCalibrationEpisodes);
  CHECK(std::abs(mean_of(returns) - refs.random_return) < 3.0 * se);
}

TEST_CASE("generate_corpus: noiseless expert returns equal the expert reference") {
  for (const std::string name : {"point-mass-2d", "bandit-1d"}) {
    envs::Env env = envs::make_env(name, 10);
    Rng rng(11);
    const auto ds = envs::generate_corpus(env, envs::parse_corpus_spec("expert:0:20"), rng);
    const auto& refs = envs::builtin_refs(name);
    for (double r : corpus_returns(ds)) {
      CHECK(r == doctest::Approx(refs.expert_return).epsilon(1e-9));
    }
  }
}

TEST_CASE("generate_corpus: top-5 split recovers expert trajectories") {
  // Fixed start-to-goal distance, so the scripted expert attains the best return.
  for (const std::string name : {"point-mass-2d", "bandit-1d"}) {
    envs::Env env = envs::make_env(name, 12);
    Rng rng(13);
    const auto ds = envs::generate_corpus(env, envs::parse_corpus_spec("expert:0:10,noisy:0.3:90"), rng);
    REQUIRE(ds.trajectories.size() == 100);
    const auto split = data::split_by_return(ds, 5);
    for (std::size_t i : split.expert_indices) {
      CHECK(i < 10);
    }
  }
}

TEST_CASE("normalized_score is affine with fixed anchors") {
  const envs::ScoreRefs refs{-80.0, -10.0};
  CHECK(envs::normalized_score(-10.0, refs) == 100.0);
  CHECK(envs::normalized_score(-80.0, refs) == 0.0);
  CHECK(envs::normalized_score(-45.0, refs) == doctest::Approx(50.0).epsilon(1e-15));
  for (double alpha : {-0.5, 0.1, 0.37, 1.2}) {
    const double ret = alpha * refs.expert_return + (1 - alpha) * refs.random_return;
    CHECK(envs::normalized_score(ret, refs) == doctest::Approx(100.0 * alpha).epsilon(1e-12));
  }
  CHECK_THROWS_AS(envs::normalized_score(0.0, envs::ScoreRefs{1.0, 1.0}), ArgumentError);
  CHECK_THROWS_AS(envs::normalized_score(0.0, envs::ScoreRefs{0.0, std::nan("")}), ArgumentError);
}

TEST_CASE("evaluate: scripted expert, random controller and zero spread") {
  const auto& refs = envs::builtin_refs("point-mass-2d");
  envs::Env env = envs::make_env("point-mass-2d", 14);
  Rng rng(15);
  const auto expert = envs::make_controller(env, ControllerKind::kExpert, 0.0, rng);
  const auto ev = envs::evaluate(expert, env, 30, refs, rng);
  CHECK(ev.mean == doctest::Approx(100.0).epsilon(1e-9));
  CHECK(ev.std < 1e-9);

  const auto random = envs::make_controller(env, ControllerKind::kRandom, 0.0, rng);
  const int n = 400;
  const auto rv = envs::evaluate(random, env, n, refs, rng);
  CHECK(std::abs(rv.mean) < 3.0 * rv.std * std::sqrt(1.0 / n + 1.0 / envs::kCalibrationEpisodes));
  CHECK(rv.best >= rv.mean);
  CHECK_THROWS_AS(envs::evaluate(random, env, 0, refs, rng), ArgumentError);
}

TEST_CASE("score reference tables round trip") {
  std::map<std::string, envs::ScoreRefs> table;
  table["point-mass-2d"] = {-76.5, -10.25};
  table["bandit-1d"] = {-0.5000000000000001, 0.0};
  const std::string text = envs::format_refs_table(table);
  CHECK(text.rfind("env,random_ref,expert_ref\n", 0) == 0);
  const auto back = envs::parse_refs_table(text);
  REQUIRE(back.size() == 2);
  CHECK(back.at("bandit-1d").random_return == table["bandit-1d"].random_return);
  CHECK(back.at("point-mass-2d").expert_return == -10.25);
  CHECK_THROWS_AS(envs::parse_refs_table("env,random_ref,expert_ref\nx,1\n"), ConfigError);
  CHECK_THROWS_AS(envs::parse_refs_table("env,random_ref,expert_ref\nx,a,b\n"), ConfigError);
}

TEST_CASE("calibration: expert above random on every task") {
  for (const auto& name : envs::kEnvNames) {
    const auto refs = envs::calibrate(name, 200, 3);
    CHECK(refs.expert_return > refs.random_return);
  }
  CHECK_THROWS_AS(envs::calibrate("point-mass-2d", 0, 1), ArgumentError);
}
