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

#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "rtrec/error.hpp"
#include "rtrec/eval.hpp"
#include "rtrec/synthetic.hpp"

namespace rtrec {
namespace {

TEST(Synthetic, SameSeedSameData) {
  SyntheticSpec spec;
  spec.n_users = 200;
  spec.n_items = 100;
  const auto a = generate_synthetic(spec), b = generate_synthetic(spec);
  EXPECT_EQ(a.events, b.events);
  EXPECT_EQ(a.articles, b.articles);
  ASSERT_EQ(a.dataset.size(), b.dataset.size());
  spec.seed = 2;
  EXPECT_NE(generate_synthetic(spec).events, a.events);
}

TEST(Synthetic, EventsRecoverTheDataset) {
  SyntheticSpec spec;
  spec.n_users = 150;
  spec.n_items = 90;
  const auto data = generate_synthetic(spec);
  data.dataset.validate();
  const SignificanceRule rule;
  const auto rebuilt = Dataset::from_aggregates(aggregate(data.events, rule), rule);
  ASSERT_EQ(rebuilt.size(), data.dataset.size());
  std::set<std::pair<std::string, std::string>> want, got;
  for (const auto& t : data.dataset.tuples) want.emplace(t.user_id, t.item_id);
  for (const auto& t : rebuilt.tuples) got.emplace(t.user_id, t.item_id);
  EXPECT_EQ(want, got);
  EXPECT_EQ(data.articles.size(), spec.n_items);
  EXPECT_EQ(data.user_cluster.size(), spec.n_users);
}

TEST(Synthetic, OneClusterNoSkewIsUniform) {
  SyntheticSpec spec;
  spec.n_users = 3000;
  spec.n_items = 200;
  spec.n_clusters = 1;
  spec.popularity_skew = 0.0;
  spec.actions_per_user = 20;
  const auto data = generate_synthetic(spec);
  std::map<std::string, double> count;
  for (const auto& t : data.dataset.tuples) ++count[t.item_id];
  const double m = static_cast<double>(spec.n_items);
  const double n = static_cast<double>(data.dataset.size());
  const double expected = n / m;
  const double sigma = std::sqrt(expected * (1.0 - 1.0 / m));
  double chi2 = 0.0;
  std::size_t within = 0;
  for (std::size_t i = 0; i < spec.n_items; ++i) {
    const double c = count[synthetic_item_id(i)];
    chi2 += (c - expected) * (c - expected) / expected;
    if (std::abs(c - expected) <= 3.0 * sigma) ++within;
  }
  const double df = m - 1.0;
  EXPECT_LE(std::abs(chi2 - df), 3.0 * std::sqrt(2.0 * df)) << chi2;
  EXPECT_GE(static_cast<double>(within), 0.99 * m);
}

TEST(Synthetic, CollaborativeBeatsRandomByFiveTimes) {
  SyntheticSpec spec;
  spec.n_users = 600;
  spec.n_items = 300;
  const auto data = generate_synthetic(spec);
  const auto [train, test] = split(data.dataset, 0.8, 1);
  TrainerConfig cfg;
  cfg.batch_size = train.size();
  cfg.als.k = 20;
  cfg.als.alpha = 10.0;
  cfg.als.lambda = 1.0;
  cfg.als.epochs = 10;
  const auto state = train_collaborative(train, cfg);
  const auto collab = precision_at_10(CollaborativeRecommender(state, train.items()), train, test);
  const auto random = precision_at_10(RandomRecommender(train, 1), train, test);
  EXPECT_GT(collab.precision_at_10, 5.0 * random.precision_at_10)
      << collab.precision_at_10 << " vs " << random.precision_at_10;
}

TEST(Synthetic, RejectsBadSpecs) {
  SyntheticSpec spec;
  spec.n_clusters = 0;
  EXPECT_THROW(generate_synthetic(spec), ValidationError);
  spec = {};
  spec.cluster_affinity = 1.5;
  EXPECT_THROW(generate_synthetic(spec), ValidationError);
}

}  // namespace
}  // namespace rtrec
