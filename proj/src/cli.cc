#include "adrbc/cli.h"

#include <CLI11.hpp>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "adrbc/checkpoint.h"
#include "adrbc/verify.h"

namespace adrbc::cli {
namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) {
    return {};
  }
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    out.push_back(trim(item));
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& want) {
  throw ConfigError("config key '" + key + "': expected " + want + ", got '" + value + "'");
}

double parse_double(const std::string& key, const std::string& v) {
  if (v.empty()) {
    bad_value(key, v, "a number");
  }
  char* end = nullptr;
  errno = 0;
  const double d = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || errno == ERANGE || !std::isfinite(d)) {
    bad_value(key, v, "a finite number");
  }
  return d;
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  // Accepts plain integers and integral scientific notation such as 1e5.
  const double d = parse_double(key, v);
  if (d != std::floor(d) || std::abs(d) > 9.0e15) {
    bad_value(key, v, "an integer");
  }
  return static_cast<std::int64_t>(d);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    bad_value(key, v, "a non-negative integer");
  }
  errno = 0;
  const unsigned long long u = std::strtoull(v.c_str(), nullptr, 10);
  if (errno == ERANGE) {
    bad_value(key, v, "a 64-bit integer");
  }
  return u;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") {
    return true;
  }
  if (v == "false" || v == "0" || v == "no") {
    return false;
  }
  bad_value(key, v, "true or false");
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out += (i ? "," : "") + std::to_string(xs[i]);
  }
  return out;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw IoError("cannot create directory '" + dir + "': " + ec.message());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open '" + path + "' for writing");
  }
  out << text;
  if (!out.flush()) {
    throw IoError("write failed for '" + path + "'");
  }
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open '" + path + "'");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string path_in(const std::string& dir, const std::string& file) { return (fs::path(dir) / file).string(); }

std::string source_name(ade::SurrogateSource s) { return s == ade::SurrogateSource::kElbo ? "elbo" : "importance"; }
std::string input_name(ade::SurrogateInput s) {
  return s == ade::SurrogateInput::kLogDensity ? "log_density" : "density";
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"env", [](RunConfig& c, auto&, auto& v) { c.env = v; }},
      {"seed", [](RunConfig& c, auto& k, auto& v) { c.seed = parse_u64(k, v); }},
      {"seeds",
       [](RunConfig& c, auto& k, auto& v) {
         c.seeds.clear();
         for (const auto& s : split(v, ',')) {
           c.seeds.push_back(parse_u64(k, s));
         }
       }},
      {"out", [](RunConfig& c, auto&, auto& v) { c.out = v; }},
      {"data_dir", [](RunConfig& c, auto&, auto& v) { c.data_dir = v; }},
      {"corpus",
       [](RunConfig& c, auto& k, auto& v) {
         try {
           envs::parse_corpus_spec(v);
         } catch (const std::exception& e) {
           bad_value(k, v, std::string("a corpus spec (") + e.what() + ")");
         }
         c.corpus = v;
       }},
      {"demos", [](RunConfig& c, auto& k, auto& v) { c.demos = static_cast<int>(parse_int(k, v)); }},
      {"lambda1", [](RunConfig& c, auto& k, auto& v) { c.lambda1 = parse_double(k, v); }},
      {"lambda2", [](RunConfig& c, auto& k, auto& v) { c.lambda2 = parse_double(k, v); }},
      {"vae_iterations", [](RunConfig& c, auto& k, auto& v) { c.vae_iterations = parse_int(k, v); }},
      {"vae_lr", [](RunConfig& c, auto& k, auto& v) { c.vae_lr = parse_double(k, v); }},
      {"latent_dim", [](RunConfig& c, auto& k, auto& v) { c.latent_dim = parse_int(k, v); }},
      {"codebook_size", [](RunConfig& c, auto& k, auto& v) { c.codebook_size = parse_int(k, v); }},
      {"vae_hidden", [](RunConfig& c, auto& k, auto& v) { c.vae_hidden = parse_int(k, v); }},
      {"vae_layers", [](RunConfig& c, auto& k, auto& v) { c.vae_layers = static_cast<int>(parse_int(k, v)); }},
      {"commitment", [](RunConfig& c, auto& k, auto& v) { c.commitment = parse_double(k, v); }},
      {"dead_code_steps", [](RunConfig& c, auto& k, auto& v) { c.dead_code_steps = parse_int(k, v); }},
      {"surrogate_source",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "elbo") {
           c.surrogate_source = ade::SurrogateSource::kElbo;
         } else if (v == "importance") {
           c.surrogate_source = ade::SurrogateSource::kImportance;
         } else {
           bad_value(k, v, "elbo or importance");
         }
       }},
      {"surrogate_input",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "log_density") {
           c.surrogate_input = ade::SurrogateInput::kLogDensity;
         } else if (v == "density") {
           c.surrogate_input = ade::SurrogateInput::kDensity;
         } else {
           bad_value(k, v, "log_density or density");
         }
       }},
      {"objective",
       [](RunConfig& c, auto& k, auto& v) {
         try {
           c.objective = dwr::objective_from_string(v);
         } catch (const std::exception&) {
           bad_value(k, v, "upper_bound, plain, max_ade, ade_divergence or bc");
         }
       }},
      {"policy_iterations", [](RunConfig& c, auto& k, auto& v) { c.policy_iterations = parse_int(k, v); }},
      {"policy_lr", [](RunConfig& c, auto& k, auto& v) { c.policy_lr = parse_double(k, v); }},
      {"policy_hidden", [](RunConfig& c, auto& k, auto& v) { c.policy_hidden = parse_int(k, v); }},
      {"policy_layers",
       [](RunConfig& c, auto& k, auto& v) { c.policy_layers = static_cast<int>(parse_int(k, v)); }},
      {"weight_clamp",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "none") {
           c.weight_clamp.reset();
         } else {
           c.weight_clamp = parse_double(k, v);
         }
       }},
      {"normalize_obs", [](RunConfig& c, auto& k, auto& v) { c.normalize_obs = parse_bool(k, v); }},
      {"batch_size", [](RunConfig& c, auto& k, auto& v) { c.batch_size = parse_int(k, v); }},
      {"eval_interval", [](RunConfig& c, auto& k, auto& v) { c.eval_interval = parse_int(k, v); }},
      {"eval_episodes",
       [](RunConfig& c, auto& k, auto& v) { c.eval_episodes = static_cast<int>(parse_int(k, v)); }},
      {"importance_samples",
       [](RunConfig& c, auto& k, auto& v) { c.importance_samples = static_cast<int>(parse_int(k, v)); }},
      {"score_refs", [](RunConfig& c, auto&, auto& v) { c.score_refs = v; }},
      {"calibration_episodes",
       [](RunConfig& c, auto& k, auto& v) { c.calibration_episodes = static_cast<int>(parse_int(k, v)); }},
      {"policy", [](RunConfig& c, auto&, auto& v) { c.policy = v; }},
      {"ablate_mode",
       [](RunConfig& c, auto& k, auto& v) {
         if (v != "objectives" && v != "timing") {
           bad_value(k, v, "objectives or timing");
         }
         c.ablate_mode = v;
       }},
      {"timing_batches",
       [](RunConfig& c, auto& k, auto& v) {
         c.timing_batches.clear();
         for (const auto& s : split(v, ',')) {
           c.timing_batches.push_back(parse_int(k, s));
         }
       }},
      {"timing_repeats",
       [](RunConfig& c, auto& k, auto& v) { c.timing_repeats = static_cast<int>(parse_int(k, v)); }},
      {"flip_weight_sign", [](RunConfig& c, auto& k, auto& v) { c.flip_weight_sign = parse_bool(k, v); }},
      {"gradient_points",
       [](RunConfig& c, auto& k, auto& v) { c.gradient_points = static_cast<int>(parse_int(k, v)); }},
  };
  return table;
}

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string density_metrics_csv(const std::vector<ade::MetricRow>& rows) {
  std::string out = "iteration,expert_elbo,subopt_elbo,j_iota,codebook_active_count\n";
  for (const auto& r : rows) {
    out += std::to_string(r.iteration) + ',' + fmt(r.expert_elbo) + ',' + fmt(r.subopt_elbo) + ',' + fmt(r.j_iota) +
           ',' + std::to_string(r.codebook_active_count) + '\n';
  }
  return out;
}

std::string policy_metrics_csv(const std::vector<dwr::PolicyMetricRow>& rows) {
  std::string out = "iteration,loss,mean_weight,eval_score_mean,eval_score_std\n";
  for (const auto& r : rows) {
    out += std::to_string(r.iteration) + ',' + fmt(r.loss) + ',' + fmt(r.mean_weight) + ',' + fmt(r.eval_score_mean) +
           ',' + fmt(r.eval_score_std) + '\n';
  }
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) {
    return std::nan("");
  }
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

// ---------------------------------------------------------------- RunConfig

RunConfig RunConfig::defaults(bool paper_scale) {
  RunConfig c;
  if (paper_scale) {
    c.latent_dim = 750;
    c.codebook_size = 4096;
    c.vae_iterations = 100000;
    c.policy_iterations = 1000000;
  }
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = setters().find(key);
  if (it == setters().end()) {
    throw ConfigError("unknown config key '" + key + "'");
  }
  it->second(*this, key, value);
}

void RunConfig::validate() const {
  if (std::find(envs::kEnvNames.begin(), envs::kEnvNames.end(), env) == envs::kEnvNames.end()) {
    throw ConfigError("unknown env '" + env + "'");
  }
  if (out.empty()) {
    throw ConfigError("out must not be empty");
  }
  if (seeds.empty()) {
    throw ConfigError("seeds must list at least one seed");
  }
  if (demos < 1) {
    throw ConfigError("demos must be >= 1");
  }
  int total = 0;
  for (const auto& e : envs::parse_corpus_spec(corpus)) {
    total += e.count;
  }
  if (demos >= total) {
    throw ConfigError("demos must be smaller than the corpus size (" + std::to_string(total) + ")");
  }
  if (eval_episodes < 1) {
    throw ConfigError("eval_episodes must be >= 1");
  }
  if (calibration_episodes < 1) {
    throw ConfigError("calibration_episodes must be >= 1");
  }
  if (timing_batches.empty() || timing_repeats < 1) {
    throw ConfigError("timing needs at least one batch size and one repeat");
  }
  for (Index b : timing_batches) {
    if (b < 1) {
      throw ConfigError("timing batch sizes must be >= 1");
    }
  }
  if (gradient_points < 1) {
    throw ConfigError("gradient_points must be >= 1");
  }
  try {
    vqvae::EstimatorConfig ec = estimator_config();
    ec.obs_dim = 1;
    ec.act_dim = 1;
    ec.validate();
    ade_config().validate();
    for (dwr::Objective o : dwr::kAllObjectives) {
      dwr_config(o).validate();
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

std::string RunConfig::to_text() const {
  std::ostringstream o;
  o << "env=" << env << '\n'
    << "seed=" << seed << '\n'
    << "seeds=" << join(seeds) << '\n'
    << "out=" << out << '\n'
    << "data_dir=" << data_dir << '\n'
    << "corpus=" << corpus << '\n'
    << "demos=" << demos << '\n'
    << "lambda1=" << fmt(lambda1) << '\n'
    << "lambda2=" << fmt(lambda2) << '\n'
    << "vae_iterations=" << vae_iterations << '\n'
    << "vae_lr=" << fmt(vae_lr) << '\n'
    << "latent_dim=" << latent_dim << '\n'
    << "codebook_size=" << codebook_size << '\n'
    << "vae_hidden=" << vae_hidden << '\n'
    << "vae_layers=" << vae_layers << '\n'
    << "commitment=" << fmt(commitment) << '\n'
    << "dead_code_steps=" << dead_code_steps << '\n'
    << "surrogate_source=" << source_name(surrogate_source) << '\n'
    << "surrogate_input=" << input_name(surrogate_input) << '\n'
    << "objective=" << dwr::to_string(objective) << '\n'
    << "policy_iterations=" << policy_iterations << '\n'
    << "policy_lr=" << fmt(policy_lr) << '\n'
    << "policy_hidden=" << policy_hidden << '\n'
    << "policy_layers=" << policy_layers << '\n'
    << "weight_clamp=" << (weight_clamp ? fmt(*weight_clamp) : std::string("none")) << '\n'
    << "normalize_obs=" << (normalize_obs ? "true" : "false") << '\n'
    << "batch_size=" << batch_size << '\n'
    << "eval_interval=" << eval_interval << '\n'
    << "eval_episodes=" << eval_episodes << '\n'
    << "importance_samples=" << importance_samples << '\n'
    << "score_refs=" << score_refs << '\n'
    << "calibration_episodes=" << calibration_episodes << '\n'
    << "policy=" << policy << '\n'
    << "ablate_mode=" << ablate_mode << '\n'
    << "timing_batches=" << join(timing_batches) << '\n'
    << "timing_repeats=" << timing_repeats << '\n'
    << "flip_weight_sign=" << (flip_weight_sign ? "true" : "false") << '\n'
    << "gradient_points=" << gradient_points << '\n';
  return o.str();
}

vqvae::EstimatorConfig RunConfig::estimator_config() const {
  vqvae::EstimatorConfig ec;
  ec.latent_dim = latent_dim;
  ec.codebook_size = codebook_size;
  ec.hidden_dim = vae_hidden;
  ec.layers = vae_layers;
  ec.commitment = commitment;
  return ec;
}

ade::AdeConfig RunConfig::ade_config() const {
  ade::AdeConfig a;
  a.lambda1 = lambda1;
  a.lambda2 = lambda2;
  a.batch_size = batch_size;
  a.iterations = vae_iterations;
  a.learning_rate = vae_lr;
  a.eval_interval = eval_interval;
  a.dead_code_steps = dead_code_steps;
  a.input = surrogate_input;
  a.source = surrogate_source;
  a.importance_samples = importance_samples;
  return a;
}

dwr::DwrConfig RunConfig::dwr_config(dwr::Objective obj) const {
  dwr::DwrConfig d;
  d.objective = obj;
  d.batch_size = batch_size;
  d.iterations = policy_iterations;
  d.learning_rate = policy_lr;
  d.eval_interval = eval_interval;
  d.importance_samples = importance_samples;
  d.weight_clamp = weight_clamp;
  d.normalize_obs = normalize_obs;
  d.hidden_dim = policy_hidden;
  d.layers = policy_layers;
  return d;
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) {
      line.erase(hash);
    }
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(number) + ": expected key=value");
    }
    try {
      base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(number) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::string& path, RunConfig base) { return parse_config(read_text(path), std::move(base)); }

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------- pipeline stages

Corpus make_corpus(const RunConfig& cfg, std::uint64_t seed) {
  envs::Env env = envs::make_env(cfg.env, seed);
  Rng rng = Rng(seed).fork(10);
  data::Dataset mixed = envs::generate_corpus(env, envs::parse_corpus_spec(cfg.corpus), rng);
  data::ReturnSplit split = data::split_by_return(mixed, static_cast<std::size_t>(cfg.demos));
  return Corpus{std::move(split.expert), std::move(split.suboptimal), std::move(mixed)};
}

ade::TrainResult density_stage(const RunConfig& cfg, const Corpus& corpus, std::uint64_t seed) {
  Rng rng = Rng(seed).fork(11);
  try {
    return ade::train_density(corpus.expert, corpus.suboptimal, cfg.estimator_config(), cfg.ade_config(), rng);
  } catch (const NumericError& e) {
    throw NumericError(std::string("density stage: ") + e.what(), e.where());
  }
}

envs::ScoreRefs score_refs(const RunConfig& cfg) {
  if (cfg.score_refs.empty()) {
    return envs::builtin_refs(cfg.env);
  }
  const auto table = envs::parse_refs_table(read_text(cfg.score_refs));
  const auto it = table.find(cfg.env);
  if (it == table.end()) {
    throw ConfigError("score reference table '" + cfg.score_refs + "' has no row for " + cfg.env);
  }
  return it->second;
}

envs::Evaluation evaluate_policy(const RunConfig& cfg, const dwr::Policy& policy, std::uint64_t seed) {
  envs::Env env = envs::make_env(cfg.env, 1000 + seed);
  Rng rng(seed, 7);
  return envs::evaluate(envs::policy_controller(policy), env, cfg.eval_episodes, score_refs(cfg), rng);
}

dwr::PolicyTrainResult policy_stage(const RunConfig& cfg, dwr::Objective obj, const Corpus& corpus,
                                    const ade::TrainResult* density, std::uint64_t seed) {
  const envs::Env env = envs::make_env(cfg.env, seed);
  const bool bc = obj == dwr::Objective::kBc;
  if (!bc && density == nullptr) {
    throw ArgumentError("policy stage: objective " + dwr::to_string(obj) + " needs trained estimators");
  }
  const data::Dataset& train = bc ? corpus.expert : corpus.mixed;
  const dwr::Evaluator evaluator = [&](const dwr::Policy& p) {
    const envs::Evaluation e = evaluate_policy(cfg, p, seed);
    return std::make_pair(e.mean, e.std);
  };
  Rng rng = Rng(seed).fork(12);
  try {
    return dwr::train_policy(bc ? nullptr : &density->expert, bc ? nullptr : &density->subopt, train, env.bounds(),
                             cfg.dwr_config(obj), rng, evaluator);
  } catch (const NumericError& e) {
    throw NumericError(std::string("policy stage: ") + e.what(), e.where());
  }
}

Corpus load_corpus(const std::string& dir) {
  return Corpus{data::load_dataset(path_in(dir, "expert.adrb"), data::Role::kExpert),
                data::load_dataset(path_in(dir, "suboptimal.adrb"), data::Role::kSuboptimal),
                data::load_dataset(path_in(dir, "mixed.adrb"), data::Role::kMixed)};
}

// ---------------------------------------------------------------- commands

void cmd_gen_data(const RunConfig& cfg, std::ostream& log) {
  const Corpus corpus = make_corpus(cfg, cfg.seed);
  ensure_dir(cfg.out);
  data::save_dataset(corpus.expert, path_in(cfg.out, "expert.adrb"));
  data::save_dataset(corpus.suboptimal, path_in(cfg.out, "suboptimal.adrb"));
  data::save_dataset(corpus.mixed, path_in(cfg.out, "mixed.adrb"));

  std::string m;
  m += "created=" + timestamp() + '\n';
  m += "env=" + cfg.env + '\n';
  m += "seed=" + std::to_string(cfg.seed) + '\n';
  m += "corpus=" + cfg.corpus + '\n';
  m += "demos=" + std::to_string(cfg.demos) + '\n';
  const std::pair<const char*, const data::Dataset*> files[] = {
      {"expert", &corpus.expert}, {"suboptimal", &corpus.suboptimal}, {"mixed", &corpus.mixed}};
  for (const auto& [name, ds] : files) {
    m += std::string(name) + ".trajectories=" + std::to_string(ds->trajectories.size()) + '\n';
    m += std::string(name) + ".transitions=" + std::to_string(ds->transition_count()) + '\n';
  }
  for (const auto& [name, ds] : files) {
    for (std::size_t i = 0; i < ds->trajectories.size(); ++i) {
      m += std::string(name) + ".return." + std::to_string(i) + '=' + fmt(ds->trajectories[i].total_return()) + '\n';
    }
  }
  write_text(path_in(cfg.out, "manifest.txt"), m);
  log << "gen-data: " << corpus.mixed.trajectories.size() << " trajectories (" << corpus.expert.trajectories.size()
      << " demonstrations) written to " << cfg.out << '\n';
}

void cmd_calibrate(const RunConfig& cfg, std::ostream& log) {
  std::map<std::string, envs::ScoreRefs> table;
  for (const auto& name : envs::kEnvNames) {
    table[name] = envs::calibrate(name, cfg.calibration_episodes, cfg.seed);
  }
  ensure_dir(cfg.out);
  write_text(path_in(cfg.out, "score_refs.csv"), envs::format_refs_table(table));
  for (const auto& [name, r] : table) {
    log << "calibrate: " << name << " random " << fmt(r.random_return) << " expert " << fmt(r.expert_return) << '\n';
  }
}

void cmd_train(const RunConfig& cfg, std::ostream& log) {
  const Corpus corpus = load_corpus(cfg.data_directory());
  ensure_dir(cfg.out);
  std::optional<ade::TrainResult> density;
  if (cfg.objective != dwr::Objective::kBc) {
    density.emplace(density_stage(cfg, corpus, cfg.seed));
    vqvae::save_estimator(density->expert, path_in(cfg.out, "expert_estimator.adrw"));
    vqvae::save_estimator(density->subopt, path_in(cfg.out, "suboptimal_estimator.adrw"));
    write_text(path_in(cfg.out, "density_metrics.csv"), density_metrics_csv(density->metrics));
  }
  const dwr::PolicyTrainResult trained =
      policy_stage(cfg, cfg.objective, corpus, density ? &*density : nullptr, cfg.seed);
  checkpoint::save_params(trained.policy.export_net(), path_in(cfg.out, "policy.adrw"));
  write_text(path_in(cfg.out, "policy_metrics.csv"), policy_metrics_csv(trained.metrics));
  const envs::Evaluation e = evaluate_policy(cfg, trained.policy, cfg.seed);
  const std::string summary = "summary objective=" + dwr::to_string(cfg.objective) + " env=" + cfg.env +
                              " seed=" + std::to_string(cfg.seed) + " score_mean=" + fmt(e.mean) +
                              " score_std=" + fmt(e.std) + '\n';
  write_text(path_in(cfg.out, "summary.txt"), summary);
  log << summary;
}

void cmd_eval(const RunConfig& cfg, std::ostream& log) {
  const std::string path = cfg.policy.empty() ? path_in(cfg.out, "policy.adrw") : cfg.policy;
  const envs::Env env = envs::make_env(cfg.env, 0);
  nn::MlpParams net = checkpoint::load_params(path);
  if (net.in_dim() != env.obs_dim() || net.out_dim() != env.act_dim()) {
    throw ConfigError("policy '" + path + "' does not match the dimensions of " + cfg.env);
  }
  const dwr::Policy policy(std::move(net), env.bounds());
  const envs::Evaluation e = evaluate_policy(cfg, policy, cfg.seed);
  ensure_dir(cfg.out);
  write_text(path_in(cfg.out, "eval.csv"), "env,episodes,score_mean,score_std,score_best\n" + cfg.env + ',' +
                                               std::to_string(cfg.eval_episodes) + ',' + fmt(e.mean) + ',' +
                                               fmt(e.std) + ',' + fmt(e.best) + '\n');
  log << "eval " << cfg.env << " score_mean=" << fmt(e.mean) << " score_std=" << fmt(e.std) << '\n';
}

void cmd_ablate(const RunConfig& cfg, std::ostream& log) {
  const Corpus corpus = load_corpus(cfg.data_directory());
  ensure_dir(cfg.out);
  if (cfg.ablate_mode == "timing") {
    const ade::TrainResult density = density_stage(cfg, corpus, cfg.seed);
    const envs::Env env = envs::make_env(cfg.env, cfg.seed);
    Rng rng = Rng(cfg.seed).fork(13);
    const auto rows = dwr::time_updates(density.expert, density.subopt, corpus.mixed, env.bounds(),
                                        cfg.dwr_config(dwr::Objective::kUpperBound), cfg.timing_batches,
                                        cfg.timing_repeats, rng);
    std::string csv = "batch_size,dwr_seconds,ade_divergence_seconds\n";
    std::vector<double> b;
    std::vector<double> t;
    for (const auto& r : rows) {
      csv += std::to_string(r.batch_size) + ',' + fmt(r.dwr_seconds) + ',' + fmt(r.ade_divergence_seconds) + '\n';
      b.push_back(static_cast<double>(r.batch_size));
      t.push_back(r.dwr_seconds);
    }
    write_text(path_in(cfg.out, "timing.csv"), csv);
    log << "timing: log-log slope of update time vs batch size " << fmt(dwr::loglog_slope(b, t)) << '\n';
    return;
  }

  std::string csv = "objective,seed,score_mean,score_std\n";
  std::map<dwr::Objective, std::vector<double>> scores;
  for (std::uint64_t seed : cfg.seeds) {
    const ade::TrainResult density = density_stage(cfg, corpus, seed);
    for (dwr::Objective obj : dwr::kAllObjectives) {
      const dwr::PolicyTrainResult trained = policy_stage(cfg, obj, corpus, &density, seed);
      const envs::Evaluation e = evaluate_policy(cfg, trained.policy, seed);
      csv += dwr::to_string(obj) + ',' + std::to_string(seed) + ',' + fmt(e.mean) + ',' + fmt(e.std) + '\n';
      scores[obj].push_back(e.mean);
      log << "ablate seed " << seed << ' ' << dwr::to_string(obj) << " score " << fmt(e.mean) << '\n';
    }
  }
  write_text(path_in(cfg.out, "ablation.csv"), csv);

  std::vector<std::pair<double, dwr::Objective>> ranked;
  for (const auto& [obj, v] : scores) {
    ranked.emplace_back(median(v), obj);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::string summary = "rank,objective,median_score\n";
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    summary += std::to_string(i + 1) + ',' + dwr::to_string(ranked[i].second) + ',' + fmt(ranked[i].first) + '\n';
    log << "rank " << i + 1 << ' ' << dwr::to_string(ranked[i].second) << " median " << fmt(ranked[i].first) << '\n';
  }
  write_text(path_in(cfg.out, "ablation_summary.csv"), summary);
}

bool cmd_verify(const RunConfig& cfg, std::ostream& log) {
  verify::Options opt;
  opt.seed = cfg.seed;
  opt.points = cfg.gradient_points;
  opt.flip_weight_sign = cfg.flip_weight_sign;
  bool ok = true;
  auto report = [&](const verify::CheckResult& r) {
    ok = ok && r.passed;
    log << verify::format(r) << std::endl;
  };
  report(verify::density_weight_identity(opt));
  for (const auto& g : verify::gradient_checks(opt)) {
    report(verify::run_gradient_check(g, opt));
  }
  report(verify::elbo_bound(opt));
  report(verify::importance_consistency(opt));
  report(verify::cluster_weight_gap(opt));
  log << (ok ? "verify: all checks passed" : "verify: FAILED") << '\n';
  return ok;
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) {
    return 2;
  }
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e)) {
    return 3;
  }
  return 1;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Density-weighted behavior cloning with adversarially trained VQ-VAE density estimators"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool paper_scale = false;
  struct Command {
    const char* name;
    const char* help;
  };
  const Command commands[] = {
      {"gen-data", "Generate expert, suboptimal and mixed datasets"},
      {"calibrate", "Measure random and expert reference returns"},
      {"train", "Train density estimators and a policy"},
      {"eval", "Evaluate a policy checkpoint"},
      {"ablate", "Compare policy objectives, or time updates with ablate_mode=timing"},
      {"verify", "Run the property and gradient checks"},
  };
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", config_path, "key=value config file");
    sub->add_option("--seed", seed, "Random seed (overrides the config)");
    sub->add_option("--out", out_dir, "Output directory (overrides the config)");
    sub->add_flag("--paper-scale", paper_scale, "Large-scale defaults");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    RunConfig cfg = RunConfig::defaults(paper_scale);
    if (!config_path.empty()) {
      cfg = load_config(config_path, cfg);
    }
    if (seed) {
      cfg.seed = *seed;
    }
    if (!out_dir.empty()) {
      cfg.out = out_dir;
    }
    cfg.validate();

    if (command == "gen-data") {
      cmd_gen_data(cfg, out);
    } else if (command == "calibrate") {
      cmd_calibrate(cfg, out);
    } else if (command == "train") {
      cmd_train(cfg, out);
    } else if (command == "eval") {
      cmd_eval(cfg, out);
    } else if (command == "ablate") {
      cmd_ablate(cfg, out);
    } else if (command == "verify") {
      return cmd_verify(cfg, out) ? 0 : 1;
    }
    return 0;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what();
    if (e.where() >= 0) {
      err << " (at " << e.where() << ')';
    }
    err << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e);
  }
}

}  // namespace adrbc::cli
