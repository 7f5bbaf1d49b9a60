// File: cli.h
// Description: Run configuration, pipeline stages and the subcommands of the
// `adrbc` tool (gen-data, calibrate, train, eval, ablate, verify).
//
// Config files hold one key=value pair per line; `#` starts a comment.
// Unknown keys and malformed values are ConfigErrors raised before any work.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "adrbc/ade.h"
#include "adrbc/data.h"
#include "adrbc/dwr.h"
#include "adrbc/envs.h"
#include "adrbc/vqvae.h"

namespace adrbc::cli {

struct RunConfig {
  std::string env = "point-mass-2d";
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::string out = "run";
  std::string data_dir;  // empty: same as out

  // data
  std::string corpus = "expert:0:5,noisy:0.3:500";
  int demos = 5;

  // density estimators
  double lambda1 = 1.0;
  double lambda2 = 0.0;
  std::int64_t vae_iterations = 5000;
  double vae_lr = 1e-3;
  Index latent_dim = 16;
  Index codebook_size = 64;
  Index vae_hidden = 0;
  int vae_layers = 3;
  double commitment = 0.25;
  std::int64_t dead_code_steps = 2000;
  ade::SurrogateSource surrogate_source = ade::SurrogateSource::kElbo;
  ade::SurrogateInput surrogate_input = ade::SurrogateInput::kLogDensity;

  // policy
  dwr::Objective objective = dwr::Objective::kUpperBound;
  std::int64_t policy_iterations = 20000;
  double policy_lr = 1e-4;
  Index policy_hidden = 256;
  int policy_layers = 4;
  std::optional<double> weight_clamp;
  bool normalize_obs = false;

  // shared
  Index batch_size = 64;
  std::int64_t eval_interval = 1000;
  int eval_episodes = 50;
  int importance_samples = 1;

  // scoring
  std::string score_refs;  // empty: built-in calibration
  int calibration_episodes = envs::kCalibrationEpisodes;

  // eval
  std::string policy;  // empty: <out>/policy.adrw

  // ablate
  std::string ablate_mode = "objectives";  // or "timing"
  std::vector<Index> timing_batches = {10, 20, 50, 100, 200, 300};
  int timing_repeats = 20;

  // verify
  bool flip_weight_sign = false;
  int gradient_points = 20;

  /// Desk-scale defaults, or the large-scale values when `paper_scale` is set
  /// (latent 750, 4096 codes, 1e5 estimator and 1e6 policy iterations).
  static RunConfig defaults(bool paper_scale);

  /// Throws ConfigError on an unknown key or a malformed value.
  void set(const std::string& key, const std::string& value);
  /// Throws ConfigError on out-of-range values or an unknown env.
  void validate() const;
  /// Every key in canonical form, one per line.
  std::string to_text() const;

  std::string data_directory() const { return data_dir.empty() ? out : data_dir; }
  vqvae::EstimatorConfig estimator_config() const;
  ade::AdeConfig ade_config() const;
  dwr::DwrConfig dwr_config(dwr::Objective obj) const;
};

/// Applies the pairs in `text` on top of `base`; errors carry the line number.
RunConfig parse_config(const std::string& text, RunConfig base);
RunConfig load_config(const std::string& path, RunConfig base);

/// "%.17g"
std::string fmt(double v);

// ---------------------------------------------------------------- pipeline stages

struct Corpus {
  data::Dataset expert;
  data::Dataset suboptimal;
  data::Dataset mixed;
};

/// Rolls out cfg.corpus on cfg.env and keeps the top cfg.demos trajectories
/// by return as demonstrations; the rest form the suboptimal set.
Corpus make_corpus(const RunConfig& cfg, std::uint64_t seed);

/// Both estimators trained on the corpus (stream 11 of `seed`). NumericErrors
/// are re-raised with the stage name prefixed.
ade::TrainResult density_stage(const RunConfig& cfg, const Corpus& corpus, std::uint64_t seed);

/// Score references for cfg.env: cfg.score_refs if set, else the built-in ones.
envs::ScoreRefs score_refs(const RunConfig& cfg);

/// Normalized score of `policy` over cfg.eval_episodes on env seed 1000 + seed.
envs::Evaluation evaluate_policy(const RunConfig& cfg, const dwr::Policy& policy, std::uint64_t seed);

/// Policy training (stream 12 of `seed`) on the mixed corpus, or on the
/// demonstrations for BC, evaluating every eval_interval iterations.
dwr::PolicyTrainResult policy_stage(const RunConfig& cfg, dwr::Objective obj, const Corpus& corpus,
                                    const ade::TrainResult* density, std::uint64_t seed);

Corpus load_corpus(const std::string& dir);

// ---------------------------------------------------------------- commands

void cmd_gen_data(const RunConfig& cfg, std::ostream& log);
void cmd_calibrate(const RunConfig& cfg, std::ostream& log);
void cmd_train(const RunConfig& cfg, std::ostream& log);
void cmd_eval(const RunConfig& cfg, std::ostream& log);
void cmd_ablate(const RunConfig& cfg, std::ostream& log);
/// Returns true when every check passed.
bool cmd_verify(const RunConfig& cfg, std::ostream& log);

/// Maps the exception in flight to an exit code: 1 validation, 2 numeric, 3 IO.
int exit_code(const std::exception& e);

/// Full command-line entry point; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace adrbc::cli
