#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "adrbc/checkpoint.h"
#include "adrbc/cli.h"

using namespace adrbc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "adrbc");
  std::vector<const char*> argv;
  for (const auto& a : args) {
    argv.push_back(a.c_str());
  }
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("adrbc_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  fs::create_directories(dir);
  const fs::path p = dir / "run.cfg";
  std::ofstream(p) << text;
  return p;
}

int line_count(const std::string& text) { return static_cast<int>(std::count(text.begin(), text.end(), '\n')); }

const char* kBanditConfig =
    "env=bandit-1d\n"
    "corpus=expert:0:20,noisy:0.3:200\n"
    "demos=20\n"
    "vae_iterations=300\n"
    "latent_dim=4\n"
    "codebook_size=8\n"
    "policy_iterations=2000\n"
    "policy_lr=1e-3\n"
    "policy_hidden=64\n"
    "policy_layers=3\n"
    "eval_interval=500\n"
    "eval_episodes=100\n";

}  // namespace

TEST_CASE("config: keys, comments, scientific integers and errors") {
  const cli::RunConfig c = cli::parse_config(
      "# comment\n"
      "env = bandit-1d\n"
      "vae_iterations=1e5  # trailing\n"
      "seeds=3,4\n"
      "weight_clamp=2.5\n"
      "normalize_obs=yes\n"
      "objective=bc\n",
      cli::RunConfig::defaults(false));
  CHECK(c.env == "bandit-1d");
  CHECK(c.vae_iterations == 100000);
  CHECK(c.seeds == std::vector<std::uint64_t>{3, 4});
  CHECK(c.weight_clamp.value() == 2.5);
  CHECK(c.normalize_obs);
  CHECK(c.objective == dwr::Objective::kBc);
  CHECK_NOTHROW(c.validate());

  CHECK_THROWS_AS(cli::parse_config("not_a_key=1\n", c), ConfigError);
  CHECK_THROWS_AS(cli::parse_config("lambda1=abc\n", c), ConfigError);
  CHECK_THROWS_AS(cli::parse_config("demos=2.5\n", c), ConfigError);
  CHECK_THROWS_AS(cli::parse_config("objective=dagger\n", c), ConfigError);
  CHECK_THROWS_AS(cli::parse_config("justtext\n", c), ConfigError);
  try {
    cli::parse_config("env=bandit-1d\n\nbogus=1\n", c);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }

  cli::RunConfig bad = c;
  bad.env = "walker";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.lambda1 = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("config: to_text round trips and large-scale defaults") {
  cli::RunConfig c = cli::RunConfig::defaults(false);
  c.lambda1 = 0.3;
  c.weight_clamp = 4.0;
  c.seeds = {9, 8};
  const cli::RunConfig back = cli::parse_config(c.to_text(), cli::RunConfig::defaults(false));
  CHECK(back.to_text() == c.to_text());
  const cli::RunConfig big = cli::RunConfig::defaults(true);
  CHECK(big.latent_dim == 750);
  CHECK(big.codebook_size == 4096);
  CHECK(big.vae_iterations == 100000);
  CHECK(big.policy_iterations == 1000000);
}

TEST_CASE("fmt prints 17 significant digits") {
  CHECK(cli::fmt(0.1) == "0.10000000000000001");
  CHECK(std::stod(cli::fmt(1.0 / 3.0)) == 1.0 / 3.0);
  CHECK(cli::fmt(2.0) == "2");
}

TEST_CASE("exit codes") {
  CHECK(cli::exit_code(ConfigError("x")) == 1);
  CHECK(cli::exit_code(ArgumentError("x")) == 1);
  CHECK(cli::exit_code(NumericError("x", 3)) == 2);
  CHECK(cli::exit_code(IoError("x")) == 3);
  CHECK(cli::exit_code(FormatError("x", 0)) == 3);

  CHECK(run_cli({"--help"}).code == 0);
  CHECK(run_cli({}).code == 1);
  CHECK(run_cli({"frobnicate"}).code == 1);
  CHECK(run_cli({"train", "--seed", "abc"}).code == 1);

  const fs::path dir = fresh_dir("exit");
  const fs::path cfg = write_config(dir, "not_a_key=1\n");
  const Outcome o = run_cli({"gen-data", "--config", cfg.string(), "--out", (dir / "out").string()});
  CHECK(o.code == 1);
  CHECK(o.err.find("not_a_key") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "out"));

  CHECK(run_cli({"gen-data", "--config", (dir / "missing.cfg").string()}).code == 3);
  CHECK(run_cli({"train", "--out", (dir / "empty").string()}).code == 3);
}

TEST_CASE("gen-data: files reload, manifest returns match, same seed is byte-identical") {
  const fs::path a = fresh_dir("gen_a");
  const fs::path b = fresh_dir("gen_b");
  const fs::path cfg = write_config(a, "env=point-mass-2d\ncorpus=expert:0:4,noisy:0.3:12\ndemos=4\n");
  REQUIRE(run_cli({"gen-data", "--config", cfg.string(), "--seed", "5", "--out", a.string()}).code == 0);
  REQUIRE(run_cli({"gen-data", "--config", cfg.string(), "--seed", "5", "--out", b.string()}).code == 0);
  for (const char* f : {"expert.adrb", "suboptimal.adrb", "mixed.adrb"}) {
    CHECK(slurp(a / f) == slurp(b / f));
  }

  const cli::Corpus corpus = cli::load_corpus(a.string());
  CHECK(corpus.expert.trajectories.size() == 4);
  CHECK(corpus.suboptimal.trajectories.size() == 12);
  CHECK(corpus.mixed.trajectories.size() == 16);

  std::map<std::string, std::string> manifest;
  std::istringstream in(slurp(a / "manifest.txt"));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    REQUIRE(eq != std::string::npos);
    manifest[line.substr(0, eq)] = line.substr(eq + 1);
  }
  CHECK(manifest.at("seed") == "5");
  CHECK(manifest.at("mixed.trajectories") == "16");
  for (std::size_t i = 0; i < corpus.mixed.trajectories.size(); ++i) {
    const double r = std::stod(manifest.at("mixed.return." + std::to_string(i)));
    CHECK(r == corpus.mixed.trajectories[i].total_return());
  }

  const fs::path c = fresh_dir("gen_c");
  REQUIRE(run_cli({"gen-data", "--config", cfg.string(), "--seed", "6", "--out", c.string()}).code == 0);
  CHECK(slurp(a / "mixed.adrb") != slurp(c / "mixed.adrb"));
}

TEST_CASE("calibrate writes a reference table for every task") {
  const fs::path dir = fresh_dir("calibrate");
  const fs::path cfg = write_config(dir, "calibration_episodes=50\n");
  REQUIRE(run_cli({"calibrate", "--config", cfg.string(), "--out", dir.string()}).code == 0);
  const auto table = envs::parse_refs_table(slurp(dir / "score_refs.csv"));
  CHECK(table.size() == envs::kEnvNames.size());
  for (const auto& [name, refs] : table) {
    CHECK(refs.expert_return > refs.random_return);
  }
}

TEST_CASE("train: zero iterations give initialized checkpoints and header-only metrics") {
  const fs::path dir = fresh_dir("train_zero");
  const fs::path cfg = write_config(dir,
                                    "env=bandit-1d\ncorpus=expert:0:3,noisy:0.3:10\ndemos=3\n"
                                    "vae_iterations=0\npolicy_iterations=0\nlatent_dim=3\ncodebook_size=4\n"
                                    "policy_hidden=8\neval_episodes=5\n");
  REQUIRE(run_cli({"gen-data", "--config", cfg.string(), "--out", dir.string()}).code == 0);
  const Outcome o = run_cli({"train", "--config", cfg.string(), "--out", dir.string()});
  INFO(o.err);
  REQUIRE(o.code == 0);
  const auto expert = vqvae::load_estimator((dir / "expert_estimator.adrw").string());
  const auto subopt = vqvae::load_estimator((dir / "suboptimal_estimator.adrw").string());
  CHECK(expert.role() == vqvae::Role::kExpert);
  CHECK(subopt.role() == vqvae::Role::kSuboptimal);
  CHECK(expert.config().latent_dim == 3);
  CHECK(line_count(slurp(dir / "density_metrics.csv")) == 1);
  CHECK(line_count(slurp(dir / "policy_metrics.csv")) == 1);
  const nn::MlpParams policy = checkpoint::load_params((dir / "policy.adrw").string());
  CHECK(policy.in_dim() == 1);
  CHECK(policy.out_dim() == 1);
  CHECK(slurp(dir / "summary.txt").rfind("summary objective=upper_bound env=bandit-1d seed=0 score_mean=", 0) == 0);
}

TEST_CASE("train: behavior cloning needs no density estimators") {
  const fs::path dir = fresh_dir("train_bc");
  const fs::path cfg = write_config(dir,
                                    "env=bandit-1d\ncorpus=expert:0:3,noisy:0.3:10\ndemos=3\nobjective=bc\n"
                                    "policy_iterations=50\npolicy_hidden=8\neval_interval=25\neval_episodes=5\n");
  REQUIRE(run_cli({"gen-data", "--config", cfg.string(), "--out", dir.string()}).code == 0);
  REQUIRE(run_cli({"train", "--config", cfg.string(), "--out", dir.string()}).code == 0);
  CHECK_FALSE(fs::exists(dir / "expert_estimator.adrw"));
  CHECK(fs::exists(dir / "policy.adrw"));
  CHECK(line_count(slurp(dir / "policy_metrics.csv")) == 3);
}

TEST_CASE("train then eval: small bandit run reaches a high score") {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = fresh_dir("bandit");
  const fs::path cfg = write_config(dir, kBanditConfig);
  REQUIRE(run_cli({"gen-data", "--config", cfg.string(), "--out", dir.string()}).code == 0);
  const Outcome t = run_cli({"train", "--config", cfg.string(), "--out", dir.string()});
  INFO(t.err);
  REQUIRE(t.code == 0);
  const Outcome e = run_cli({"eval", "--config", cfg.string(), "--out", dir.string()});
  REQUIRE(e.code == 0);
  const std::string csv = slurp(dir / "eval.csv");
  REQUIRE(line_count(csv) == 2);
  const std::string row = csv.substr(csv.find('\n') + 1);
  std::vector<std::string> cols;
  std::stringstream ss(row);
  for (std::string c; std::getline(ss, c, ',');) {
    cols.push_back(c);
  }
  REQUIRE(cols.size() == 5);
  CHECK(cols[0] == "bandit-1d");
  CHECK(std::stod(cols[2]) >= 90.0);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(seconds < 120.0);

  // A policy for a different task is rejected.
  const fs::path other = write_config(dir / "other", "env=point-mass-2d\n");
  CHECK(run_cli({"eval", "--config", other.string(), "--out", dir.string()}).code == 1);
}

TEST_CASE("ablate: every objective per seed and the timing mode") {
  const fs::path dir = fresh_dir("ablate");
  const fs::path cfg = write_config(dir,
                                    "env=bandit-1d\ncorpus=expert:0:3,noisy:0.3:20\ndemos=3\nseeds=0\n"
                                    "vae_iterations=20\nlatent_dim=3\ncodebook_size=4\npolicy_iterations=20\n"
                                    "policy_hidden=8\neval_interval=20\neval_episodes=5\n"
                                    "timing_batches=8,16\ntiming_repeats=2\n");
  REQUIRE(run_cli({"gen-data", "--config", cfg.string(), "--out", dir.string()}).code == 0);
  REQUIRE(run_cli({"ablate", "--config", cfg.string(), "--out", dir.string()}).code == 0);
  CHECK(line_count(slurp(dir / "ablation.csv")) == 6);
  CHECK(line_count(slurp(dir / "ablation_summary.csv")) == 6);

  std::ofstream(cfg, std::ios::app) << "ablate_mode=timing\n";
  REQUIRE(run_cli({"ablate", "--config", cfg.string(), "--out", dir.string()}).code == 0);
  const std::string timing = slurp(dir / "timing.csv");
  CHECK(timing.rfind("batch_size,dwr_seconds,ade_divergence_seconds\n", 0) == 0);
  CHECK(line_count(timing) == 3);
}

TEST_CASE("verify passes, and fails when density weights are negated") {
  const fs::path dir = fresh_dir("verify");
  const Outcome ok = run_cli({"verify", "--out", dir.string()});
  INFO(ok.out);
  CHECK(ok.code == 0);
  CHECK(ok.out.find("FAIL") == std::string::npos);

  const fs::path cfg = write_config(dir, "flip_weight_sign=true\n");
  const Outcome bad = run_cli({"verify", "--config", cfg.string(), "--out", dir.string()});
  CHECK(bad.code == 1);
  CHECK(bad.out.find("FAIL") != std::string::npos);
}
