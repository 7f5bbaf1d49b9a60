#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include "adrbc/binary_io.h"
#include "adrbc/data.h"

using namespace adrbc;
using data::Dataset;
using data::Trajectory;
using data::Transition;

namespace {

Trajectory constant_return_trajectory(double ret, int length, Rng& rng, Index obs_dim = 2, Index act_dim = 1) {
  Trajectory t;
  for (int i = 0; i < length; ++i) {
    t.transitions.emplace_back(rng.normal_vector(obs_dim), rng.normal_vector(act_dim), ret / length, i == length - 1);
  }
  return t;
}

Dataset corpus_with_returns(const std::vector<double>& returns, Rng& rng) {
  Dataset ds;
  ds.obs_dim = 2;
  ds.act_dim = 1;
  for (double r : returns) {
    ds.trajectories.push_back(constant_return_trajectory(r, 1 + static_cast<int>(rng.uniform_index(3)), rng));
  }
  return ds;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("adrbc_test_" + name)).string();
}

}  // namespace

TEST_CASE("dataset files: header-only dataset round trips") {
  Dataset ds;
  ds.obs_dim = 3;
  ds.act_dim = 2;
  const auto bytes = data::encode_dataset(ds);
  CHECK(bytes.size() == 4 + 4 * 4);
  const Dataset back = data::decode_dataset(bytes);
  CHECK(back.obs_dim == 3);
  CHECK(back.act_dim == 2);
  CHECK(back.trajectories.empty());
}

TEST_CASE("dataset files: two trajectories round trip bit-exact through disk") {
  Rng rng(1);
  Dataset ds = corpus_with_returns({1.0 / 3.0, -2.5e-300}, rng);
  ds.trajectories[0].transitions[0].a[0] = -0.0;
  const std::string path = temp_path("roundtrip.adrb");
  data::save_dataset(ds, path);
  const Dataset back = data::load_dataset(path, data::Role::kExpert);
  CHECK(data::bitwise_equal(ds, back));
  CHECK(std::signbit(back.trajectories[0].transitions[0].a[0]));
  CHECK(back.role == data::Role::kExpert);
  std::remove(path.c_str());
}

TEST_CASE("dataset files: corruption is reported with a byte offset") {
  Rng rng(2);
  const auto bytes = data::encode_dataset(corpus_with_returns({1.0, 2.0}, rng));
  auto bad_magic = bytes;
  std::copy_n("XXXX", 4, bad_magic.begin());
  try {
    data::decode_dataset(bad_magic);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 0);
  }
  auto truncated = bytes;
  truncated.resize(bytes.size() - 5);
  CHECK_THROWS_AS(data::decode_dataset(truncated), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(data::decode_dataset(trailing), FormatError);
  auto zero_dim = bytes;
  zero_dim[8] = 0;  // obs_dim
  try {
    data::decode_dataset(zero_dim);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 8);
  }
  CHECK_THROWS_AS(data::load_dataset("/nonexistent/dir/x.adrb"), IoError);
}

TEST_CASE("text fixtures parse into trajectories") {
  const Dataset ds = data::parse_text_dataset(
      "# two trajectories\n"
      "0.5, 1, 0.25, 1.0, 0\n"
      "0.5, 2, -0.25, 2.0, 1\n"
      "\n"
      "1, 1, 0, 3.0, 1\n",
      2, 1);
  REQUIRE(ds.trajectories.size() == 2);
  CHECK(ds.trajectories[0].length() == 2);
  CHECK(ds.trajectories[0].total_return() == 3.0);
  CHECK(ds.trajectories[1].transitions[0].done);
  CHECK_THROWS_AS(data::parse_text_dataset("1, 2, 3\n", 2, 1), FormatError);
  CHECK_THROWS_AS(data::parse_text_dataset("1, x, 3, 4, 0\n", 2, 1), FormatError);
}

TEST_CASE("trajectory return is the sum of member rewards") {
  Trajectory t;
  t.transitions.emplace_back(Vector::Zero(1), Vector::Zero(1), 0.5, false);
  t.transitions.emplace_back(Vector::Zero(1), Vector::Zero(1), -2.0, true);
  CHECK(t.total_return() == -1.5);
}

TEST_CASE("rewards are unreadable inside a training scope") {
  Trajectory t;
  t.transitions.emplace_back(Vector::Zero(1), Vector::Zero(1), 0.5, true);
  {
    data::TrainingScope scope;
    CHECK(data::TrainingScope::active());
    CHECK_THROWS_AS(t.transitions[0].reward(), ContractError);
    CHECK_THROWS_AS(t.total_return(), ContractError);
  }
  CHECK_FALSE(data::TrainingScope::active());
  CHECK(t.transitions[0].reward() == 0.5);
}

TEST_CASE("split_by_return: argmax and ties") {
  Rng rng(3);
  const Dataset ds = corpus_with_returns({3, 9, 1}, rng);
  const auto s = data::split_by_return(ds, 1);
  CHECK(s.expert_indices == std::vector<std::size_t>{1});
  CHECK(s.suboptimal_indices == std::vector<std::size_t>{0, 2});
  CHECK(s.expert.role == data::Role::kExpert);
  CHECK(s.suboptimal.role == data::Role::kSuboptimal);

  const auto last = data::split_by_return(ds, 2);
  CHECK(last.suboptimal_indices == std::vector<std::size_t>{2});

  const Dataset tied = corpus_with_returns({5, 5, 5}, rng);
  CHECK(data::split_by_return(tied, 2).expert_indices == std::vector<std::size_t>{0, 1});

  CHECK_THROWS_AS(data::split_by_return(ds, 0), ArgumentError);
  CHECK_THROWS_AS(data::split_by_return(ds, 3), ArgumentError);
}

TEST_CASE("split_by_return: partition matches a full-sort oracle") {
  Rng rng(4);
  std::vector<double> returns(50);
  for (auto& r : returns) {
    r = std::round(rng.uniform(-10, 10));  // rounded so that ties occur
  }
  const Dataset ds = corpus_with_returns(returns, rng);
  for (std::size_t k : {1u, 5u, 25u, 49u}) {
    std::vector<std::size_t> order(returns.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return ds.trajectories[a].total_return() > ds.trajectories[b].total_return();
    });
    std::vector<std::size_t> expect(order.begin(), order.begin() + static_cast<long>(k));
    std::sort(expect.begin(), expect.end());
    const auto s = data::split_by_return(ds, k);
    CHECK(s.expert_indices == expect);
    CHECK(s.expert.trajectories.size() + s.suboptimal.trajectories.size() == ds.trajectories.size());
    std::vector<std::size_t> all = s.expert_indices;
    all.insert(all.end(), s.suboptimal_indices.begin(), s.suboptimal_indices.end());
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> iota(ds.trajectories.size());
    std::iota(iota.begin(), iota.end(), 0);
    CHECK(all == iota);
    for (std::size_t i = 0; i < k; ++i) {
      Dataset one;
      one.obs_dim = 2;
      one.act_dim = 1;
      one.trajectories = {s.expert.trajectories[i]};
      Dataset ref = one;
      ref.trajectories = {ds.trajectories[s.expert_indices[i]]};
      CHECK(data::bitwise_equal(one, ref));
    }
  }
}

TEST_CASE("sample_batch: single transition and determinism") {
  Rng rng(5);
  Dataset one = corpus_with_returns({1.0}, rng);
  one.trajectories[0].transitions.resize(1);
  Rng r(1);
  const auto b = data::sample_batch(one, r, 4);
  CHECK(b.size() == 4);
  for (Index i = 0; i < 4; ++i) {
    CHECK(b.obs.col(i) == one.trajectories[0].transitions[0].s);
    CHECK(b.act.col(i) == one.trajectories[0].transitions[0].a);
  }

  const Dataset ds = corpus_with_returns({1, 2, 3, 4}, rng);
  Rng a(9);
  Rng c = a;
  const auto b1 = data::sample_batch(ds, a, 16);
  const auto b2 = data::sample_batch(ds, c, 16);
  CHECK(b1.obs == b2.obs);
  CHECK(b1.act == b2.act);

  Dataset empty;
  empty.obs_dim = 2;
  empty.act_dim = 1;
  CHECK_THROWS_AS(data::sample_batch(empty, a, 4), ArgumentError);
  CHECK_THROWS_AS(data::sample_batch(ds, a, 0), ArgumentError);
}

TEST_CASE("sample_batch: frequencies are uniform over transitions") {
  Dataset ds;
  ds.obs_dim = 1;
  ds.act_dim = 1;
  // 10 transitions over trajectories of lengths 1, 3 and 6; obs holds the index.
  int index = 0;
  for (int len : {1, 3, 6}) {
    Trajectory t;
    for (int i = 0; i < len; ++i, ++index) {
      t.transitions.emplace_back(Vector::Constant(1, index), Vector::Zero(1), 0.0, i == len - 1);
    }
    ds.trajectories.push_back(t);
  }
  Rng rng(6);
  const int n = 100000;
  const auto b = data::sample_batch(ds, rng, n);
  std::vector<int> counts(10, 0);
  for (Index i = 0; i < n; ++i) {
    ++counts[static_cast<std::size_t>(b.obs(0, i))];
  }
  const double p = 0.1;
  const double sd = std::sqrt(n * p * (1 - p));
  for (int c : counts) {
    CHECK(std::abs(c - n * p) < 3.5 * sd);
  }
}

TEST_CASE("normalize_obs: constant columns, standardized data and random data") {
  Rng rng(7);
  Dataset ds;
  ds.obs_dim = 3;
  ds.act_dim = 1;
  Trajectory t;
  for (int i = 0; i < 200; ++i) {
    Vector s(3);
    s << 4.0, rng.uniform(-5, 5), 10.0 + 3.0 * rng.normal();
    t.transitions.emplace_back(s, Vector::Zero(1), 0.0, false);
  }
  ds.trajectories.push_back(t);
  const Dataset n = data::normalize_obs(ds);
  REQUIRE(n.norm.has_value());
  CHECK(n.norm->std[0] == data::kStdFloor);
  const data::TransitionTable table(n);
  CHECK(table.obs.row(0).cwiseAbs().maxCoeff() == 0.0);
  for (Index d = 1; d < 3; ++d) {
    const double mean = table.obs.row(d).mean();
    const double var = (table.obs.row(d).array() - mean).square().mean();
    CHECK(std::abs(mean) < 1e-10);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-10);
  }
  const Dataset again = data::normalize_obs(n);
  const data::TransitionTable t2(again);
  CHECK((t2.obs.bottomRows(2) - table.obs.bottomRows(2)).cwiseAbs().maxCoeff() < 1e-12);

  Dataset empty;
  empty.obs_dim = 1;
  empty.act_dim = 1;
  CHECK_THROWS_AS(data::normalize_obs(empty), ArgumentError);
}

TEST_CASE("validate rejects malformed datasets") {
  Rng rng(8);
  Dataset ds = corpus_with_returns({1.0, 2.0}, rng);
  CHECK_NOTHROW(ds.validate());
  Dataset wrong = ds;
  wrong.trajectories[1].transitions[0].s = Vector::Zero(5);
  CHECK_THROWS_AS(wrong.validate(), ConfigError);
  Dataset nan = ds;
  nan.trajectories[0].transitions[0].a[0] = std::nan("");
  CHECK_THROWS_AS(nan.validate(), ConfigError);
  Dataset hollow = ds;
  hollow.trajectories[0].transitions.clear();
  CHECK_THROWS_AS(hollow.validate(), ConfigError);
}
