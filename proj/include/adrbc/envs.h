// File: envs.h
// Description: Synthetic continuous-control tasks, scripted controllers,
// corpus generation, rollouts and normalized scoring.
//
//   point-mass-2d  obs (px, py, gx, gy), act in [-1, 1]^2 projected onto the
//                  unit disk, p' = p + 0.1 a, reward -||p' - g||, T = 50.
//                  p0 ~ U[-0.5, 0.5]^2, g = p0 + 1.5 (cos phi, sin phi).
//   arc-reach-2d   same dynamics, p0 ~ U[-0.1, 0.1]^2, g on the unit circle, T = 30.
//   bandit-1d      obs s ~ U[-1, 1], act in [-1, 1], reward -|a - (0.5 s + 0.25)|, T = 1.

#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "adrbc/data.h"
#include "adrbc/dwr.h"
#include "adrbc/rng.h"

namespace adrbc::envs {

enum class Kind { kPointMass, kArcReach, kBandit };

struct StepResult {
  Vector obs;
  Vector action;  // the action actually applied (clipped / projected)
  double reward = 0.0;
  bool done = false;
};

class Env {
 public:
  Env(Kind kind, std::uint64_t seed);

  Kind kind() const { return kind_; }
  std::string name() const;
  Index obs_dim() const;
  Index act_dim() const;
  int horizon() const;
  const dwr::ActionBounds& bounds() const { return bounds_; }

  /// Samples an initial state from the env's own stream.
  Vector reset();
  /// Throws ContractError past the horizon and NumericError on non-finite actions.
  StepResult step(const Vector& action);

  Vector observation() const;
  int t() const { return t_; }

  /// Clipping to bounds (and projection onto the unit disk for the 2-d tasks).
  Vector feasible(const Vector& action) const;

 private:
  Kind kind_;
  Rng rng_;
  dwr::ActionBounds bounds_;
  Vector pos_;
  Vector goal_;
  int t_ = 0;
};

inline const std::vector<std::string> kEnvNames = {"point-mass-2d", "arc-reach-2d", "bandit-1d"};

/// Throws ArgumentError on unknown names.
Env make_env(const std::string& name, std::uint64_t seed);

// ---------------------------------------------------------------- controllers

/// Maps an observation to an action; may draw from the rng.
using Controller = std::function<Vector(const Vector& obs, Rng& rng)>;

/// Optimal action for the env's task.
Vector expert_action(Kind kind, const Vector& obs);

enum class ControllerKind { kExpert, kNoisyExpert, kRandom, kDetour };
std::string to_string(ControllerKind kind);
ControllerKind controller_from_string(const std::string& name);

/// kNoisyExpert adds N(0, sigma^2 I) to the expert action; kDetour rotates the
/// expert direction by +sigma or -sigma radians (sign fixed per episode, so the
/// controller must be rebuilt per episode); kRandom draws uniformly in bounds.
Controller make_controller(const Env& env, ControllerKind kind, double sigma, Rng& rng);

Controller policy_controller(const dwr::Policy& policy);

// ---------------------------------------------------------------- rollouts

/// One episode from env.reset() until done; rewards are recorded.
data::Trajectory rollout(Env& env, const Controller& controller, Rng& rng);

/// Undiscounted return of one episode without building a trajectory.
double episode_return(Env& env, const Controller& controller, Rng& rng);

struct CorpusEntry {
  ControllerKind controller = ControllerKind::kExpert;
  double sigma = 0.0;
  int count = 0;
};

using CorpusSpec = std::vector<CorpusEntry>;

/// Parses "expert:0:5,noisy:0.3:500" (controller:sigma:count, comma separated).
CorpusSpec parse_corpus_spec(const std::string& text);
std::string to_string(const CorpusSpec& spec);

/// Trajectories in spec order; each episode uses its own child stream of `rng`.
data::Dataset generate_corpus(Env& env, const CorpusSpec& spec, Rng& rng);

// ---------------------------------------------------------------- scoring

struct ScoreRefs {
  double random_return = 0.0;
  double expert_return = 0.0;

  /// Throws ArgumentError unless expert_return > random_return (both finite).
  void validate() const;
};

/// 100 * (ret - random) / (expert - random).
double normalized_score(double ret, const ScoreRefs& refs);

/// Mean returns of the scripted expert and the uniform-random controller.
ScoreRefs calibrate(const std::string& env_name, int episodes, std::uint64_t seed);

inline constexpr int kCalibrationEpisodes = 2000;
inline constexpr std::uint64_t kCalibrationSeed = 20240917;

/// calibrate(name, kCalibrationEpisodes, kCalibrationSeed), cached.
const ScoreRefs& builtin_refs(const std::string& env_name);

/// "env,random_ref,expert_ref" with a header line.
std::string format_refs_table(const std::map<std::string, ScoreRefs>& table);
std::map<std::string, ScoreRefs> parse_refs_table(const std::string& text);

struct Evaluation {
  double mean = 0.0;  // normalized score
  double std = 0.0;   // population std of normalized scores
  double best = 0.0;  // best single-episode score
};

/// n episodes from `env`; controller randomness comes from `rng`.
Evaluation evaluate(const Controller& controller, Env& env, int episodes, const ScoreRefs& refs, Rng& rng);

}  // namespace adrbc::envs
