#include "adrbc/envs.h"

#include <cmath>
#include <mutex>
#include <numbers>
#include <sstream>

namespace adrbc::envs {
namespace {

constexpr double kDt = 0.1;
constexpr double kReachRadius = 1.5;

Vector project_disk(Vector a) {
  const double n = a.norm();
  if (n > 1.0) {
    a /= n;
  }
  return a;
}

// Move toward the goal at full speed, slowing to land exactly on it.
Vector reach_action(const Vector& obs) {
  const Vector delta = obs.segment(2, 2) - obs.head(2);
  const double d = delta.norm();
  if (d == 0.0) {
    return Vector::Zero(2);
  }
  return delta / d * std::min(1.0, d / kDt);
}

double bandit_target(double s) { return 0.5 * s + 0.25; }

}  // namespace

Env::Env(Kind kind, std::uint64_t seed) : kind_(kind), rng_(seed, 0x656e76) {
  const Index a = act_dim();
  bounds_.low = Vector::Constant(a, -1.0);
  bounds_.high = Vector::Constant(a, 1.0);
  pos_ = Vector::Zero(kind == Kind::kBandit ? 1 : 2);
  goal_ = pos_;
}

std::string Env::name() const {
  switch (kind_) {
    case Kind::kPointMass:
      return "point-mass-2d";
    case Kind::kArcReach:
      return "arc-reach-2d";
    case Kind::kBandit:
      return "bandit-1d";
  }
  return "unknown";
}

Index Env::obs_dim() const { return kind_ == Kind::kBandit ? 1 : 4; }
Index Env::act_dim() const { return kind_ == Kind::kBandit ? 1 : 2; }

int Env::horizon() const {
  switch (kind_) {
    case Kind::kPointMass:
      return 50;
    case Kind::kArcReach:
      return 30;
    case Kind::kBandit:
      return 1;
  }
  return 1;
}

Vector Env::observation() const {
  if (kind_ == Kind::kBandit) {
    return pos_;
  }
  Vector obs(4);
  obs << pos_, goal_;
  return obs;
}

Vector Env::reset() {
  t_ = 0;
  switch (kind_) {
    case Kind::kPointMass: {
      pos_ = Vector(2);
      pos_ << rng_.uniform(-0.5, 0.5), rng_.uniform(-0.5, 0.5);
      const double phi = rng_.uniform(0.0, 2.0 * std::numbers::pi);
      goal_ = Vector(2);
      goal_ << pos_[0] + kReachRadius * std::cos(phi), pos_[1] + kReachRadius * std::sin(phi);
      break;
    }
    case Kind::kArcReach: {
      pos_ = Vector(2);
      pos_ << rng_.uniform(-0.1, 0.1), rng_.uniform(-0.1, 0.1);
      const double phi = rng_.uniform(0.0, 2.0 * std::numbers::pi);
      goal_ = Vector(2);
      goal_ << std::cos(phi), std::sin(phi);
      break;
    }
    case Kind::kBandit:
      pos_ = Vector::Constant(1, rng_.uniform(-1.0, 1.0));
      break;
  }
  return observation();
}

Vector Env::feasible(const Vector& action) const {
  if (action.size() != act_dim()) {
    throw ConfigError(name() + ": action has " + std::to_string(action.size()) + " dims, expected " +
                      std::to_string(act_dim()));
  }
  if (!action.allFinite()) {
    throw NumericError(name() + ": non-finite action", t_);
  }
  Vector a = action.cwiseMax(bounds_.low).cwiseMin(bounds_.high);
  if (kind_ != Kind::kBandit) {
    a = project_disk(a);
  }
  return a;
}

StepResult Env::step(const Vector& action) {
  if (t_ >= horizon()) {
    throw ContractError(name() + ": step past the horizon");
  }
  StepResult out;
  out.action = feasible(action);
  if (kind_ == Kind::kBandit) {
    out.reward = -std::abs(out.action[0] - bandit_target(pos_[0]));
  } else {
    pos_ += kDt * out.action;
    out.reward = -(pos_ - goal_).norm();
  }
  ++t_;
  out.done = t_ >= horizon();
  out.obs = observation();
  return out;
}

Env make_env(const std::string& name, std::uint64_t seed) {
  if (name == "point-mass-2d") {
    return Env(Kind::kPointMass, seed);
  }
  if (name == "arc-reach-2d") {
    return Env(Kind::kArcReach, seed);
  }
  if (name == "bandit-1d") {
    return Env(Kind::kBandit, seed);
  }
  throw ArgumentError("unknown env '" + name + "'");
}

// ---------------------------------------------------------------- controllers

Vector expert_action(Kind kind, const Vector& obs) {
  if (kind == Kind::kBandit) {
    return Vector::Constant(1, bandit_target(obs[0]));
  }
  return reach_action(obs);
}

std::string to_string(ControllerKind kind) {
  switch (kind) {
    case ControllerKind::kExpert:
      return "expert";
    case ControllerKind::kNoisyExpert:
      return "noisy";
    case ControllerKind::kRandom:
      return "random";
    case ControllerKind::kDetour:
      return "detour";
  }
  return "unknown";
}

ControllerKind controller_from_string(const std::string& name) {
  if (name == "expert") {
    return ControllerKind::kExpert;
  }
  if (name == "noisy" || name == "noisy-expert") {
    return ControllerKind::kNoisyExpert;
  }
  if (name == "random") {
    return ControllerKind::kRandom;
  }
  if (name == "detour") {
    return ControllerKind::kDetour;
  }
  throw ConfigError("unknown controller '" + name + "'");
}

Controller make_controller(const Env& env, ControllerKind kind, double sigma, Rng& rng) {
  const Kind k = env.kind();
  const dwr::ActionBounds bounds = env.bounds();
  switch (kind) {
    case ControllerKind::kExpert:
      return [k](const Vector& obs, Rng&) { return expert_action(k, obs); };
    case ControllerKind::kNoisyExpert:
      return [k, sigma](const Vector& obs, Rng& r) {
        Vector a = expert_action(k, obs);
        for (Index i = 0; i < a.size(); ++i) {
          a[i] += sigma * r.normal();
        }
        return a;
      };
    case ControllerKind::kRandom:
      return [bounds](const Vector&, Rng& r) {
        Vector a(bounds.low.size());
        for (Index i = 0; i < a.size(); ++i) {
          a[i] = r.uniform(bounds.low[i], bounds.high[i]);
        }
        return a;
      };
    case ControllerKind::kDetour: {
      if (k == Kind::kBandit) {
        const double offset = rng.uniform() < 0.5 ? sigma : -sigma;
        return [k, offset](const Vector& obs, Rng&) {
          return Vector(expert_action(k, obs).array() + offset);
        };
      }
      const double angle = rng.uniform() < 0.5 ? sigma : -sigma;
      const double c = std::cos(angle);
      const double s = std::sin(angle);
      return [k, c, s](const Vector& obs, Rng&) {
        const Vector a = expert_action(k, obs);
        Vector out(2);
        out << c * a[0] - s * a[1], s * a[0] + c * a[1];
        return out;
      };
    }
  }
  throw ConfigError("unknown controller");
}

Controller policy_controller(const dwr::Policy& policy) {
  return [&policy](const Vector& obs, Rng&) { return policy.act(obs); };
}

// ---------------------------------------------------------------- rollouts

data::Trajectory rollout(Env& env, const Controller& controller, Rng& rng) {
  data::Trajectory traj;
  Vector obs = env.reset();
  bool done = false;
  while (!done) {
    const Vector raw = controller(obs, rng);
    if (!raw.allFinite()) {
      throw NumericError("controller produced a non-finite action", env.t());
    }
    StepResult r = env.step(raw);
    traj.transitions.emplace_back(obs, r.action, r.reward, r.done);
    obs = std::move(r.obs);
    done = r.done;
  }
  return traj;
}

double episode_return(Env& env, const Controller& controller, Rng& rng) {
  Vector obs = env.reset();
  double total = 0.0;
  bool done = false;
  while (!done) {
    const Vector raw = controller(obs, rng);
    if (!raw.allFinite()) {
      throw NumericError("controller produced a non-finite action", env.t());
    }
    StepResult r = env.step(raw);
    total += r.reward;
    obs = std::move(r.obs);
    done = r.done;
  }
  return total;
}

CorpusSpec parse_corpus_spec(const std::string& text) {
  CorpusSpec spec;
  std::stringstream all(text);
  std::string item;
  while (std::getline(all, item, ',')) {
    std::stringstream parts(item);
    std::string name;
    std::string sigma;
    std::string count;
    if (!std::getline(parts, name, ':') || !std::getline(parts, sigma, ':') || !std::getline(parts, count, ':')) {
      throw ConfigError("corpus entry '" + item + "' is not controller:sigma:count");
    }
    CorpusEntry e;
    e.controller = controller_from_string(name);
    try {
      std::size_t used = 0;
      e.sigma = std::stod(sigma, &used);
      if (used != sigma.size()) {
        throw std::invalid_argument("sigma");
      }
      e.count = std::stoi(count, &used);
      if (used != count.size()) {
        throw std::invalid_argument("count");
      }
    } catch (const std::logic_error&) {
      throw ConfigError("corpus entry '" + item + "' has a malformed number");
    }
    if (e.count < 0 || !(e.sigma >= 0.0)) {
      throw ConfigError("corpus entry '" + item + "' needs sigma >= 0 and count >= 0");
    }
    spec.push_back(e);
  }
  if (spec.empty()) {
    throw ConfigError("corpus spec is empty");
  }
  return spec;
}

std::string to_string(const CorpusSpec& spec) {
  std::ostringstream out;
  out.precision(17);
  for (std::size_t i = 0; i < spec.size(); ++i) {
    if (i > 0) {
      out << ',';
    }
    out << to_string(spec[i].controller) << ':' << spec[i].sigma << ':' << spec[i].count;
  }
  return out.str();
}

data::Dataset generate_corpus(Env& env, const CorpusSpec& spec, Rng& rng) {
  data::Dataset ds;
  ds.obs_dim = env.obs_dim();
  ds.act_dim = env.act_dim();
  std::uint64_t episode = 0;
  for (const CorpusEntry& e : spec) {
    for (int n = 0; n < e.count; ++n) {
      Rng ep = rng.fork(episode++);
      const Controller c = make_controller(env, e.controller, e.sigma, ep);
      ds.trajectories.push_back(rollout(env, c, ep));
    }
  }
  return ds;
}

// ---------------------------------------------------------------- scoring

void ScoreRefs::validate() const {
  if (!std::isfinite(random_return) || !std::isfinite(expert_return) || !(expert_return > random_return)) {
    throw ArgumentError("score references need finite expert_return > random_return");
  }
}

double normalized_score(double ret, const ScoreRefs& refs) {
  refs.validate();
  return 100.0 * (ret - refs.random_return) / (refs.expert_return - refs.random_return);
}

ScoreRefs calibrate(const std::string& env_name, int episodes, std::uint64_t seed) {
  if (episodes < 1) {
    throw ArgumentError("calibration needs at least one episode");
  }
  Env env = make_env(env_name, seed);
  Rng rng(seed, 1);
  double expert = 0.0;
  double random = 0.0;
  const Controller ec = make_controller(env, ControllerKind::kExpert, 0.0, rng);
  const Controller rc = make_controller(env, ControllerKind::kRandom, 0.0, rng);
  for (int i = 0; i < episodes; ++i) {
    expert += episode_return(env, ec, rng);
  }
  for (int i = 0; i < episodes; ++i) {
    random += episode_return(env, rc, rng);
  }
  ScoreRefs refs{random / episodes, expert / episodes};
  refs.validate();
  return refs;
}

const ScoreRefs& builtin_refs(const std::string& env_name) {
  static std::mutex mu;
  static std::map<std::string, ScoreRefs> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(env_name);
  if (it == cache.end()) {
    it = cache.emplace(env_name, calibrate(env_name, kCalibrationEpisodes, kCalibrationSeed)).first;
  }
  return it->second;
}

std::string format_refs_table(const std::map<std::string, ScoreRefs>& table) {
  std::ostringstream out;
  out.precision(17);
  out << "env,random_ref,expert_ref\n";
  for (const auto& [name, refs] : table) {
    out << name << ',' << refs.random_return << ',' << refs.expert_return << '\n';
  }
  return out.str();
}

std::map<std::string, ScoreRefs> parse_refs_table(const std::string& text) {
  std::map<std::string, ScoreRefs> table;
  std::stringstream in(text);
  std::string line;
  bool header = true;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') {
      continue;
    }
    if (header) {
      header = false;
      if (line.rfind("env,", 0) == 0) {
        continue;
      }
    }
    std::stringstream parts(line);
    std::string name;
    std::string random;
    std::string expert;
    if (!std::getline(parts, name, ',') || !std::getline(parts, random, ',') || !std::getline(parts, expert)) {
      throw ConfigError("score table line " + std::to_string(line_no) + " needs env,random_ref,expert_ref");
    }
    ScoreRefs refs;
    try {
      refs.random_return = std::stod(random);
      refs.expert_return = std::stod(expert);
    } catch (const std::logic_error&) {
      throw ConfigError("score table line " + std::to_string(line_no) + " has a malformed number");
    }
    table[name] = refs;
  }
  return table;
}

Evaluation evaluate(const Controller& controller, Env& env, int episodes, const ScoreRefs& refs, Rng& rng) {
  if (episodes < 1) {
    throw ArgumentError("evaluation needs at least one episode");
  }
  refs.validate();
  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(episodes));
  for (int i = 0; i < episodes; ++i) {
    scores.push_back(normalized_score(episode_return(env, controller, rng), refs));
  }
  Evaluation ev;
  double sum = 0.0;
  ev.best = scores.front();
  for (double s : scores) {
    sum += s;
    ev.best = std::max(ev.best, s);
  }
  ev.mean = sum / episodes;
  double var = 0.0;
  for (double s : scores) {
    var += (s - ev.mean) * (s - ev.mean);
  }
  ev.std = std::sqrt(var / episodes);
  return ev;
}

}  // namespace adrbc::envs
