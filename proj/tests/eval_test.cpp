// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rtrec/error.hpp"
#include "rtrec/eval.hpp"
#include "rtrec/synthetic.hpp"

namespace rtrec {
namespace {

DatasetTuple tuple(const std::string& user, const std::string& item) {
  return {user, item, {user, item, 20.0, 0, 0}};
}

Dataset numbered(std::size_t n) {
  Dataset d;
  for (std::size_t j = 0; j < n; ++j) d.tuples.push_back(tuple("u" + std::to_string(j % 17), "i" + std::to_string(j)));
  return d;
}

TEST(PrecisionAt10, HandPlacedHitsAverageToOneTenth) {
  const auto f = oracle::three_users();
  const oracle::ListRecommender rec(f.lists);
  const auto report = precision_at_10(rec, f.train, f.test);
  EXPECT_DOUBLE_EQ(report.precision_at_10, (0.1 + 0.0 + 0.2) / 3.0);
  EXPECT_NEAR(report.precision_at_10, 0.1, 1e-15);
  EXPECT_EQ(report.users_evaluated, 3u);
  EXPECT_EQ(report.fallback_users, 0u);
  EXPECT_DOUBLE_EQ(report.precision_at_10, oracle::brute_force_precision(rec, f.train, f.test));
}

TEST(PrecisionAt10, ClairvoyantScoresOneWithTenTestItems) {
  Dataset train, test;
  std::map<std::string, std::vector<std::string>> lists;
  for (int u = 0; u < 4; ++u) {
    const std::string user = "u" + std::to_string(u);
    train.tuples.push_back(tuple(user, "own" + std::to_string(u)));
    for (int j = 0; j < 12; ++j) {
      const std::string item = "x" + std::to_string(u * 12 + j);
      train.tuples.push_back(tuple("pool", item));
      if (j < 10) test.tuples.push_back(tuple(user, item));
      if (j < 10) lists[user].push_back(item);
    }
  }
  const oracle::ListRecommender rec(lists);
  EXPECT_DOUBLE_EQ(precision_at_10(rec, train, test).precision_at_10, 1.0);
}

TEST(PrecisionAt10, ClairvoyantScoresMOverTenWithFewerTestItems) {
  Dataset train, test;
  std::map<std::string, std::vector<std::string>> lists;
  for (int j = 0; j < 20; ++j) train.tuples.push_back(tuple("pool", "x" + std::to_string(j)));
  for (int m = 1; m <= 9; ++m) {
    const std::string user = "m" + std::to_string(m);
    train.tuples.push_back(tuple(user, "x19"));
    for (int j = 0; j < m; ++j) {
      test.tuples.push_back(tuple(user, "x" + std::to_string(j)));
      lists[user].push_back("x" + std::to_string(j));
    }
    Dataset one_test;
    for (const auto& t : test.tuples) {
      if (t.user_id == user) one_test.tuples.push_back(t);
    }
    EXPECT_DOUBLE_EQ(precision_at_10(oracle::ListRecommender(lists), train, one_test).precision_at_10,
                     m / 10.0);
  }
}

TEST(PrecisionAt10, OnlyTrainItemsScoresZero) {
  Dataset train, test;
  std::map<std::string, std::vector<std::string>> lists;
  for (int j = 0; j < 10; ++j) {
    train.tuples.push_back(tuple("u", "t" + std::to_string(j)));
    lists["u"].push_back("t" + std::to_string(j));
  }
  train.tuples.push_back(tuple("other", "z"));
  test.tuples.push_back(tuple("u", "z"));
  const auto report = precision_at_10(oracle::ListRecommender(lists), train, test);
  EXPECT_DOUBLE_EQ(report.precision_at_10, 0.0);
  EXPECT_EQ(report.users_evaluated, 1u);
}

TEST(PrecisionAt10, ItemsOutsideTrainCatalogDoNotCount) {
  Dataset train, test;
  train.tuples.push_back(tuple("u", "a"));
  train.tuples.push_back(tuple("v", "b"));
  test.tuples.push_back(tuple("u", "ghost"));
  test.tuples.push_back(tuple("u", "b"));
  const oracle::ListRecommender rec(std::map<std::string, std::vector<std::string>>{{"u", {"ghost", "b"}}});
  EXPECT_DOUBLE_EQ(precision_at_10(rec, train, test).precision_at_10, 0.1);
}

TEST(PrecisionAt10, FailuresFallBackToGlobalTopAndAreCounted) {
  Dataset train, test;
  train.tuples.push_back(tuple("a", "pop"));
  train.tuples.push_back(tuple("b", "pop"));
  train.tuples.push_back(tuple("a", "rare"));
  test.tuples.push_back(tuple("cold", "pop"));
  test.tuples.push_back(tuple("b", "rare"));
  const oracle::ListRecommender rec(std::map<std::string, std::vector<std::string>>{{"b", {"rare"}}});
  const auto report = precision_at_10(rec, train, test);
  EXPECT_EQ(report.fallback_users, 1u);
  EXPECT_EQ(report.users_evaluated, 2u);
  EXPECT_DOUBLE_EQ(report.precision_at_10, 0.1);
  EXPECT_DOUBLE_EQ(report.precision_at_10, oracle::brute_force_precision(rec, train, test));
}

TEST(PrecisionAt10, NormalizedVariantDividesByProduced) {
  Dataset train, test;
  train.tuples.push_back(tuple("v", "a"));
  train.tuples.push_back(tuple("v", "b"));
  test.tuples.push_back(tuple("u", "a"));
  const oracle::ListRecommender rec(std::map<std::string, std::vector<std::string>>{{"u", {"a", "b"}}});
  EXPECT_DOUBLE_EQ(precision_at_10(rec, train, test).precision_at_10, 0.1);
  EXPECT_DOUBLE_EQ(precision_at_10(rec, train, test, {10, true}).precision_at_10, 0.5);
  EXPECT_THROW(precision_at_10(rec, train, test, {0, false}), ValidationError);
}

TEST(PrecisionAt10, MatchesBruteForceOnRandomFixtures) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    Dataset data;
    std::set<std::pair<int, int>> seen;
    for (int j = 0; j < 200; ++j) {
      const int u = static_cast<int>(rng() % 12), i = static_cast<int>(rng() % 40);
      if (seen.emplace(u, i).second) data.tuples.push_back(tuple("u" + std::to_string(u), "i" + std::to_string(i)));
    }
    const auto [train, test] = split(data, 0.7, trial);
    const RandomRecommender rec(train, trial);
    EXPECT_DOUBLE_EQ(precision_at_10(rec, train, test).precision_at_10,
                     oracle::brute_force_precision(rec, train, test));
  }
}

TEST(Split, SizesFollowRoundedFraction) {
  const auto [train, test] = split(numbered(100), 0.8, 1);
  EXPECT_EQ(train.size(), 80u);
  EXPECT_EQ(test.size(), 20u);
  const auto [a, b] = split(numbered(2), 0.5, 3);
  EXPECT_EQ(a.size(), 1u);
  EXPECT_EQ(b.size(), 1u);
}

TEST(Split, SameSeedSamePartition) {
  const auto data = numbered(300);
  const auto [a1, b1] = split(data, 0.8, 42);
  const auto [a2, b2] = split(data, 0.8, 42);
  auto ids = [](const Dataset& d) {
    std::vector<std::string> out;
    for (const auto& t : d.tuples) out.push_back(t.item_id);
    return out;
  };
  EXPECT_EQ(ids(a1), ids(a2));
  EXPECT_EQ(ids(b1), ids(b2));
  EXPECT_NE(ids(a1), ids(split(data, 0.8, 43).first));
}

TEST(Split, IsAPartitionForManySeeds) {
  const auto data = numbered(57);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto [train, test] = split(data, 0.8, seed);
    std::multiset<std::string> all;
    for (const auto& t : train.tuples) all.insert(t.item_id);
    for (const auto& t : test.tuples) all.insert(t.item_id);
    ASSERT_EQ(all.size(), data.size());
    ASSERT_EQ(std::set<std::string>(all.begin(), all.end()).size(), data.size()) << seed;
  }
}

TEST(Split, RejectsFractionOutsideOpenInterval) {
  EXPECT_THROW(split(numbered(5), 0.0, 1), ValidationError);
  EXPECT_THROW(split(numbered(5), 1.0, 1), ValidationError);
}

TEST(GlobalTop, CountsUsers) {
  Dataset d;
  for (const char* u : {"x", "y", "z"}) d.tuples.push_back(tuple(u, "A"));
  d.tuples.push_back(tuple("x", "B"));
  const auto top = global_top(d, 10);
  ASSERT_EQ(top.size(), 2u);
  EXPECT_EQ(top[0].item_id, "A");
  EXPECT_DOUBLE_EQ(top[0].score, 3.0);
  EXPECT_EQ(top[1].item_id, "B");
  EXPECT_TRUE(global_top(Dataset{}, 10).empty());
}

TEST(GlobalTop, TiesGoByItemId) {
  Dataset d;
  for (const char* item : {"q", "c", "m", "a"}) d.tuples.push_back(tuple("u", item));
  const auto top = global_top(d, 3);
  ASSERT_EQ(top.size(), 3u);
  EXPECT_EQ(top[0].item_id, "a");
  EXPECT_EQ(top[1].item_id, "c");
  EXPECT_EQ(top[2].item_id, "m");
}

TEST(GlobalTop, MatchesBruteForceRecount) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    Dataset d;
    std::set<std::pair<int, int>> seen;
    for (int j = 0; j < 100; ++j) {
      const int u = static_cast<int>(rng() % 15), i = static_cast<int>(rng() % 20);
      if (seen.emplace(u, i).second) d.tuples.push_back(tuple("u" + std::to_string(u), "i" + std::to_string(i)));
    }
    const auto top = global_top(d, 100);
    for (std::size_t j = 0; j < top.size(); ++j) {
      const auto count = std::count_if(d.tuples.begin(), d.tuples.end(),
                                       [&](const DatasetTuple& t) { return t.item_id == top[j].item_id; });
      EXPECT_DOUBLE_EQ(top[j].score, static_cast<double>(count));
      if (j > 0) {
        EXPECT_TRUE(top[j - 1].score > top[j].score ||
                    (top[j - 1].score == top[j].score && top[j - 1].item_id < top[j].item_id));
      }
    }
    EXPECT_EQ(top.size(), d.items().size());
  }
}

TEST(RandomRank, SeededAndAPermutation) {
  const auto d = numbered(30);
  const auto a = random_rank(d, 100, 7), b = random_rank(d, 100, 7);
  ASSERT_EQ(a.size(), 30u);
  std::set<std::string> items;
  for (std::size_t j = 0; j < a.size(); ++j) {
    EXPECT_EQ(a[j].item_id, b[j].item_id);
    items.insert(a[j].item_id);
  }
  EXPECT_EQ(items, d.items());
  EXPECT_EQ(random_rank(d, 5, 7).size(), 5u);
}

TEST(RandomRank, FirstItemIsUniform) {
  Dataset d;
  for (const char* item : {"a", "b", "c"}) d.tuples.push_back(tuple("u", item));
  std::map<std::string, int> first;
  const int trials = 10000;
  for (int seed = 0; seed < trials; ++seed) ++first[random_rank(d, 1, seed)[0].item_id];
  for (const auto& [item, count] : first) EXPECT_NEAR(count / double(trials), 1.0 / 3.0, 0.02) << item;
  EXPECT_EQ(first.size(), 3u);
}

TEST(Dataset, RejectsDuplicatePairs) {
  Dataset d;
  d.tuples.push_back(tuple("u", "i"));
  d.tuples.push_back(tuple("u", "i"));
  EXPECT_THROW(d.validate(), ValidationError);
}

TrainerConfig sweep_config() {
  TrainerConfig cfg;
  cfg.als.k = 8;
  cfg.als.epochs = 3;
  cfg.als.alpha = 10.0;
  cfg.als.lambda = 1.0;
  cfg.min_batch_users = 1;
  return cfg;
}

Dataset small_synthetic() {
  SyntheticSpec spec;
  spec.n_users = 150;
  spec.n_items = 120;
  spec.actions_per_user = 12;
  return generate_synthetic(spec).dataset;
}

TEST(Sweep, EmptyInputsGiveEmptyTables) {
  const auto data = small_synthetic();
  EXPECT_TRUE(sweep_batch_size(data, {}, sweep_config(), 1).empty());
  EXPECT_TRUE(sweep_parallelism(data, {}, 100, sweep_config(), 1).empty());
}

TEST(Sweep, SingleBatchRowEqualsReference) {
  const auto data = small_synthetic();
  const std::size_t n = split(data, 0.8, 4).first.size();
  const std::vector<std::size_t> sizes{n};
  const auto rows = sweep_batch_size(data, sizes, sweep_config(), 4);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_TRUE(rows[1].reference);
  EXPECT_NEAR(rows[0].precision_at_10, rows[1].precision_at_10, 1e-12);
}

TEST(Sweep, RowsReproduceAndLevelOneMatchesSequential) {
  const auto data = small_synthetic();
  const std::vector<std::size_t> sizes{60, 240};
  const auto a = sweep_batch_size(data, sizes, sweep_config(), 2);
  const auto b = sweep_batch_size(data, sizes, sweep_config(), 2);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t j = 0; j < a.size(); ++j) EXPECT_EQ(a[j].precision_at_10, b[j].precision_at_10);

  const std::vector<unsigned> levels{1};
  const auto p = sweep_parallelism(data, levels, 60, sweep_config(), 2);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0].parameter, 1u);
  EXPECT_EQ(p[0].precision_at_10, a[0].precision_at_10);
}

TEST(Csv, ReportAndSweepFormats) {
  std::vector<EvalReport> reports(1);
  reports[0].system = "global_top";
  reports[0].precision_at_10 = 0.25;
  reports[0].users_evaluated = 4;
  std::ostringstream out;
  write_report_csv(out, reports);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "system,precision_at_10,users_evaluated");
  EXPECT_NE(out.str().find("global_top,0.25"), std::string::npos);
  EXPECT_NE(out.str().find(",4\n"), std::string::npos);

  std::vector<SweepRow> rows{{100, 0.5, 3, false}};
  std::ostringstream sweep;
  write_sweep_csv(sweep, "batch_size", rows);
  EXPECT_EQ(sweep.str().substr(0, sweep.str().find('\n')), "batch_size,precision_at_10");
  EXPECT_NE(sweep.str().find("100,0.5"), std::string::npos);
}

}  // namespace
}  // namespace rtrec
