// File: data.h
// Description: Trajectory datasets, the "ADRB" file format, batch sampling and
// demonstration selection.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adrbc/errors.h"
#include "adrbc/rng.h"
#include "adrbc/types.h"

namespace adrbc::data {

// While a TrainingScope is alive on the current thread, reading any reward
// throws ContractError. Training loops open one so that no loss can depend on
// rewards; ranking, scoring and file IO run outside of it.
class TrainingScope {
 public:
  TrainingScope();
  ~TrainingScope();
  TrainingScope(const TrainingScope&) = delete;
  TrainingScope& operator=(const TrainingScope&) = delete;

  static bool active();
};

class Transition {
 public:
  Transition() = default;
  Transition(Vector s_, Vector a_, double reward, bool done_)
      : s(std::move(s_)), a(std::move(a_)), done(done_), reward_(reward) {}

  Vector s;
  Vector a;
  bool done = false;

  /// Throws ContractError inside a TrainingScope.
  double reward() const;

 private:
  double reward_ = 0.0;
};

struct Trajectory {
  std::vector<Transition> transitions;

  std::size_t length() const { return transitions.size(); }
  /// Undiscounted sum of rewards. Throws ContractError inside a TrainingScope.
  double total_return() const;
};

enum class Role : std::uint8_t { kExpert, kSuboptimal, kMixed };

std::string to_string(Role role);

struct NormStats {
  Vector mean;
  Vector std;  // floored at kStdFloor
};

inline constexpr double kStdFloor = 1e-8;

struct Dataset {
  Index obs_dim = 0;
  Index act_dim = 0;
  std::vector<Trajectory> trajectories;
  Role role = Role::kMixed;
  std::optional<NormStats> norm;

  std::size_t transition_count() const;
  bool empty() const { return transition_count() == 0; }

  /// Throws ConfigError on empty trajectories, dim mismatch or non-finite values.
  void validate() const;
};

/// Dims, trajectory structure and every f64 compared bit for bit (role and
/// normalization stats are not compared).
bool bitwise_equal(const Dataset& lhs, const Dataset& rhs);

/// Concatenation of the trajectory lists; dims must agree.
Dataset concat(const Dataset& first, const Dataset& second, Role role = Role::kMixed);

// ---------------------------------------------------------------- files
//
// "ADRB" | version u32 = 1 | obs_dim u32 | act_dim u32 | traj_count u32 |
// per trajectory: length u32, then per transition
//   obs f64[obs_dim], act f64[act_dim], reward f64, done u8

inline constexpr std::uint32_t kDatasetVersion = 1;

std::vector<char> encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::vector<char> bytes, Role role = Role::kMixed);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path, Role role = Role::kMixed);

/// Text fixtures: one transition per line "obs..., act..., reward, done",
/// blank line between trajectories, '#' starts a comment line.
Dataset parse_text_dataset(const std::string& text, Index obs_dim, Index act_dim);
Dataset load_text_dataset(const std::string& path, Index obs_dim, Index act_dim);

// ---------------------------------------------------------------- selection

struct ReturnSplit {
  Dataset expert;
  Dataset suboptimal;
  std::vector<std::size_t> expert_indices;      // original indices, ascending
  std::vector<std::size_t> suboptimal_indices;  // original indices, ascending
};

/// Top-k trajectories by return (ties go to the earlier index) become the
/// expert set; the rest is suboptimal. Requires 1 <= k < trajectory count.
ReturnSplit split_by_return(const Dataset& ds, std::size_t k);

// ---------------------------------------------------------------- sampling

/// Flat column view of every transition (observations and actions only).
struct TransitionTable {
  explicit TransitionTable(const Dataset& ds);

  Matrix obs;  // obs_dim x N
  Matrix act;  // act_dim x N
  Index size() const { return obs.cols(); }
};

struct Batch {
  Matrix obs;  // obs_dim x b
  Matrix act;  // act_dim x b
  Index size() const { return obs.cols(); }
};

/// b transitions drawn i.i.d. uniformly (with replacement) over all transitions.
Batch sample_batch(const TransitionTable& table, Rng& rng, Index b);
Batch sample_batch(const Dataset& ds, Rng& rng, Index b);

// ---------------------------------------------------------------- normalization

NormStats compute_norm_stats(const Dataset& ds);
/// Applies (s - mean) / std to every observation and records the stats.
Dataset apply_normalization(const Dataset& ds, const NormStats& stats);
Dataset normalize_obs(const Dataset& ds);

}  // namespace adrbc::data
