#include "adrbc/data.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "adrbc/binary_io.h"

namespace adrbc::data {
namespace {

thread_local int training_depth = 0;

bool bits_equal(const Vector& a, const Vector& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) {
    return "";
  }
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

TrainingScope::TrainingScope() { ++training_depth; }
TrainingScope::~TrainingScope() { --training_depth; }
bool TrainingScope::active() { return training_depth > 0; }

double Transition::reward() const {
  if (TrainingScope::active()) {
    throw ContractError("rewards are not readable from training code");
  }
  return reward_;
}

double Trajectory::total_return() const {
  double sum = 0.0;
  for (const auto& t : transitions) {
    sum += t.reward();
  }
  return sum;
}

std::string to_string(Role role) {
  switch (role) {
    case Role::kExpert:
      return "expert";
    case Role::kSuboptimal:
      return "suboptimal";
    case Role::kMixed:
      return "mixed";
  }
  return "unknown";
}

std::size_t Dataset::transition_count() const {
  std::size_t n = 0;
  for (const auto& traj : trajectories) {
    n += traj.length();
  }
  return n;
}

void Dataset::validate() const {
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto& traj = trajectories[i];
    if (traj.transitions.empty()) {
      throw ConfigError("trajectory " + std::to_string(i) + " is empty");
    }
    for (const auto& t : traj.transitions) {
      if (t.s.size() != obs_dim || t.a.size() != act_dim) {
        throw ConfigError("trajectory " + std::to_string(i) + " does not match dataset dims");
      }
      if (!t.s.allFinite() || !t.a.allFinite()) {
        throw ConfigError("trajectory " + std::to_string(i) + " has non-finite values");
      }
    }
  }
  if (norm && (norm->std.array() < kStdFloor).any()) {
    throw ConfigError("normalization std below floor");
  }
}

bool bitwise_equal(const Dataset& lhs, const Dataset& rhs) {
  if (lhs.obs_dim != rhs.obs_dim || lhs.act_dim != rhs.act_dim ||
      lhs.trajectories.size() != rhs.trajectories.size()) {
    return false;
  }
  for (std::size_t i = 0; i < lhs.trajectories.size(); ++i) {
    const auto& a = lhs.trajectories[i].transitions;
    const auto& b = rhs.trajectories[i].transitions;
    if (a.size() != b.size()) {
      return false;
    }
    for (std::size_t t = 0; t < a.size(); ++t) {
      const double ra = a[t].reward();
      const double rb = b[t].reward();
      if (!bits_equal(a[t].s, b[t].s) || !bits_equal(a[t].a, b[t].a) || a[t].done != b[t].done ||
          std::memcmp(&ra, &rb, sizeof(double)) != 0) {
        return false;
      }
    }
  }
  return true;
}

Dataset concat(const Dataset& first, const Dataset& second, Role role) {
  if (first.obs_dim != second.obs_dim || first.act_dim != second.act_dim) {
    throw ConfigError("concat: datasets have different dims");
  }
  Dataset out;
  out.obs_dim = first.obs_dim;
  out.act_dim = first.act_dim;
  out.role = role;
  out.trajectories = first.trajectories;
  out.trajectories.insert(out.trajectories.end(), second.trajectories.begin(),
                          second.trajectories.end());
  return out;
}

// ---------------------------------------------------------------- files

std::vector<char> encode_dataset(const Dataset& ds) {
  ds.validate();
  io::ByteWriter out;
  out.magic("ADRB");
  out.u32(kDatasetVersion);
  out.u32(static_cast<std::uint32_t>(ds.obs_dim));
  out.u32(static_cast<std::uint32_t>(ds.act_dim));
  out.u32(static_cast<std::uint32_t>(ds.trajectories.size()));
  for (const auto& traj : ds.trajectories) {
    out.u32(static_cast<std::uint32_t>(traj.length()));
    for (const auto& t : traj.transitions) {
      for (Index k = 0; k < ds.obs_dim; ++k) {
        out.f64(t.s[k]);
      }
      for (Index k = 0; k < ds.act_dim; ++k) {
        out.f64(t.a[k]);
      }
      out.f64(t.reward());
      out.u8(t.done ? 1 : 0);
    }
  }
  return out.bytes();
}

Dataset decode_dataset(std::vector<char> bytes, Role role) {
  io::ByteReader in(std::move(bytes));
  in.expect_magic("ADRB");
  const std::size_t version_offset = in.offset();
  const std::uint32_t version = in.u32("version");
  if (version != kDatasetVersion) {
    throw FormatError("unsupported ADRB version " + std::to_string(version), version_offset);
  }
  Dataset ds;
  ds.role = role;
  const std::size_t dims_offset = in.offset();
  ds.obs_dim = in.u32("obs_dim");
  ds.act_dim = in.u32("act_dim");
  if (ds.obs_dim == 0 || ds.act_dim == 0) {
    throw FormatError("dataset dims must be positive", dims_offset);
  }
  const std::uint32_t count = in.u32("trajectory count");
  ds.trajectories.reserve(std::min<std::uint32_t>(count, 1u << 20));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t length_offset = in.offset();
    const std::uint32_t length = in.u32("trajectory length");
    if (length == 0) {
      throw FormatError("trajectory of length zero", length_offset);
    }
    Trajectory traj;
    traj.transitions.reserve(length);
    for (std::uint32_t t = 0; t < length; ++t) {
      Vector s(ds.obs_dim);
      Vector a(ds.act_dim);
      for (Index k = 0; k < ds.obs_dim; ++k) {
        s[k] = in.f64("observation");
      }
      for (Index k = 0; k < ds.act_dim; ++k) {
        a[k] = in.f64("action");
      }
      const double reward = in.f64("reward");
      const std::size_t done_offset = in.offset();
      const std::uint8_t done = in.u8("done flag");
      if (done > 1) {
        throw FormatError("done flag must be 0 or 1", done_offset);
      }
      traj.transitions.emplace_back(std::move(s), std::move(a), reward, done == 1);
    }
    ds.trajectories.push_back(std::move(traj));
  }
  if (!in.at_end()) {
    throw FormatError("trailing bytes after last trajectory", in.offset());
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  io::write_file(path, encode_dataset(ds));
}

Dataset load_dataset(const std::string& path, Role role) {
  return decode_dataset(io::read_file(path), role);
}

Dataset parse_text_dataset(const std::string& text, Index obs_dim, Index act_dim) {
  Dataset ds;
  ds.obs_dim = obs_dim;
  ds.act_dim = act_dim;
  const Index fields = obs_dim + act_dim + 2;
  std::istringstream lines(text);
  std::string line;
  std::size_t offset = 0;
  Trajectory current;
  auto flush = [&] {
    if (!current.transitions.empty()) {
      ds.trajectories.push_back(std::move(current));
      current = Trajectory{};
    }
  };
  while (std::getline(lines, line)) {
    const std::size_t line_offset = offset;
    offset += line.size() + 1;
    const std::string body = trim(line);
    if (body.empty()) {
      flush();
      continue;
    }
    if (body.front() == '#') {
      continue;
    }
    std::vector<double> values;
    std::istringstream cells(body);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      const std::string c = trim(cell);
      try {
        std::size_t used = 0;
        values.push_back(std::stod(c, &used));
        if (used != c.size()) {
          throw FormatError("bad number \"" + c + "\"", line_offset);
        }
      } catch (const std::logic_error&) {
        throw FormatError("bad number \"" + c + "\"", line_offset);
      }
    }
    if (static_cast<Index>(values.size()) != fields) {
      throw FormatError("expected " + std::to_string(fields) + " fields, got " +
                            std::to_string(values.size()),
                        line_offset);
    }
    Vector s = Eigen::Map<const Vector>(values.data(), obs_dim);
    Vector a = Eigen::Map<const Vector>(values.data() + obs_dim, act_dim);
    const double done = values[static_cast<std::size_t>(obs_dim + act_dim + 1)];
    current.transitions.emplace_back(std::move(s), std::move(a),
                                     values[static_cast<std::size_t>(obs_dim + act_dim)], done != 0.0);
  }
  flush();
  ds.validate();
  return ds;
}

Dataset load_text_dataset(const std::string& path, Index obs_dim, Index act_dim) {
  const auto bytes = io::read_file(path);
  return parse_text_dataset(std::string(bytes.begin(), bytes.end()), obs_dim, act_dim);
}

// ---------------------------------------------------------------- selection

ReturnSplit split_by_return(const Dataset& ds, std::size_t k) {
  const std::size_t n = ds.trajectories.size();
  if (k < 1 || k >= n) {
    throw ArgumentError("split_by_return: k must satisfy 1 <= k < " + std::to_string(n));
  }
  std::vector<double> returns(n);
  for (std::size_t i = 0; i < n; ++i) {
    returns[i] = ds.trajectories[i].total_return();
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return returns[a] > returns[b]; });

  ReturnSplit split;
  split.expert_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  split.suboptimal_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
  std::sort(split.expert_indices.begin(), split.expert_indices.end());
  std::sort(split.suboptimal_indices.begin(), split.suboptimal_indices.end());

  for (Dataset* part : {&split.expert, &split.suboptimal}) {
    part->obs_dim = ds.obs_dim;
    part->act_dim = ds.act_dim;
    part->norm = ds.norm;
  }
  split.expert.role = Role::kExpert;
  split.suboptimal.role = Role::kSuboptimal;
  for (std::size_t i : split.expert_indices) {
    split.expert.trajectories.push_back(ds.trajectories[i]);
  }
  for (std::size_t i : split.suboptimal_indices) {
    split.suboptimal.trajectories.push_back(ds.trajectories[i]);
  }
  return split;
}

// ---------------------------------------------------------------- sampling

TransitionTable::TransitionTable(const Dataset& ds) {
  const auto n = static_cast<Index>(ds.transition_count());
  obs.resize(ds.obs_dim, n);
  act.resize(ds.act_dim, n);
  Index col = 0;
  for (const auto& traj : ds.trajectories) {
    for (const auto& t : traj.transitions) {
      obs.col(col) = t.s;
      act.col(col) = t.a;
      ++col;
    }
  }
}

Batch sample_batch(const TransitionTable& table, Rng& rng, Index b) {
  if (table.size() == 0) {
    throw ArgumentError("sample_batch: dataset is empty");
  }
  if (b < 1) {
    throw ArgumentError("sample_batch: batch size must be >= 1");
  }
  Batch batch;
  batch.obs.resize(table.obs.rows(), b);
  batch.act.resize(table.act.rows(), b);
  for (Index i = 0; i < b; ++i) {
    const auto j = static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(table.size())));
    batch.obs.col(i) = table.obs.col(j);
    batch.act.col(i) = table.act.col(j);
  }
  return batch;
}

Batch sample_batch(const Dataset& ds, Rng& rng, Index b) {
  return sample_batch(TransitionTable(ds), rng, b);
}

// ---------------------------------------------------------------- normalization

NormStats compute_norm_stats(const Dataset& ds) {
  const TransitionTable table(ds);
  if (table.size() == 0) {
    throw ArgumentError("normalize_obs: dataset is empty");
  }
  const auto n = static_cast<double>(table.size());
  NormStats stats;
  stats.mean = table.obs.rowwise().sum() / n;
  const Matrix centered = table.obs.colwise() - stats.mean;
  stats.std = (centered.array().square().rowwise().sum() / n).sqrt().matrix();
  stats.std = stats.std.cwiseMax(kStdFloor);
  return stats;
}

Dataset apply_normalization(const Dataset& ds, const NormStats& stats) {
  if (stats.mean.size() != ds.obs_dim || stats.std.size() != ds.obs_dim) {
    throw ConfigError("normalization stats do not match observation dim");
  }
  Dataset out = ds;
  for (auto& traj : out.trajectories) {
    for (auto& t : traj.transitions) {
      t.s = ((t.s - stats.mean).array() / stats.std.array()).matrix();
    }
  }
  out.norm = stats;
  return out;
}

Dataset normalize_obs(const Dataset& ds) {
  return apply_normalization(ds, compute_norm_stats(ds));
}

}  // namespace adrbc::data
