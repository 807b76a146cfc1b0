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

#include "rtrec/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "rtrec/error.hpp"
#include "rtrec/random.hpp"

namespace rtrec {

void SyntheticSpec::validate() const {
  if (n_users == 0 || n_items == 0 || n_clusters == 0) {
    throw ValidationError("synthetic sizes must be positive");
  }
  if (n_clusters > n_items) throw ValidationError("more clusters than items");
  if (!(popularity_skew >= 0.0)) throw ValidationError("popularity skew must be non-negative");
  if (!(actions_per_user > 0.0)) throw ValidationError("actions_per_user must be positive");
  if (!(cluster_affinity >= 0.0 && cluster_affinity <= 1.0)) {
    throw ValidationError("cluster affinity must lie in [0, 1]");
  }
}

std::string synthetic_user_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "u%05zu", index);
  return buf;
}

std::string synthetic_item_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "i%05zu", index);
  return buf;
}

namespace {

/// Cumulative weights over a list of item indices.
struct WeightedPool {
  std::vector<std::size_t> items;
  std::vector<double> cumulative;

  std::size_t draw(Rng& rng) const {
    const double target = uniform01(rng) * cumulative.back();
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), target);
    const auto pos = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()),
                                           items.size() - 1);
    return items[pos];
  }
};

WeightedPool make_pool(const std::vector<std::size_t>& items, const std::vector<double>& weight) {
  WeightedPool pool;
  pool.items = items;
  double acc = 0.0;
  for (auto i : items) {
    acc += weight[i];
    pool.cumulative.push_back(acc);
  }
  return pool;
}

const char* const kSections[] = {"politics", "sport",   "business", "culture",
                                 "science",  "travel",  "health",   "money",
                                 "fashion",  "motoring"};

std::string pick_words(Rng& rng, std::size_t cluster, std::size_t count, double topical) {
  static constexpr const char* kFiller[] = {"the", "and", "of", "to", "with", "for", "on", "was"};
  std::string out;
  for (std::size_t w = 0; w < count; ++w) {
    if (!out.empty()) out += ' ';
    const double u = uniform01(rng);
    if (u < topical) {
      out += "topic" + std::to_string(cluster) + "w" + std::to_string(uniform_index(rng, 40));
    } else if (u < topical + 0.15) {
      out += kFiller[uniform_index(rng, std::size(kFiller))];
    } else {
      out += "common" + std::to_string(uniform_index(rng, 300));
    }
  }
  return out;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "synthetic"));
  SyntheticData out;

  std::vector<std::size_t> rank(spec.n_items);
  for (std::size_t i = 0; i < spec.n_items; ++i) rank[i] = i;
  for (std::size_t i = spec.n_items; i > 1; --i) std::swap(rank[i - 1], rank[uniform_index(rng, i)]);
  std::vector<double> weight(spec.n_items);
  for (std::size_t i = 0; i < spec.n_items; ++i) {
    weight[i] = std::pow(static_cast<double>(rank[i] + 1), -spec.popularity_skew);
  }

  out.item_cluster.resize(spec.n_items);
  std::vector<std::vector<std::size_t>> members(spec.n_clusters);
  std::vector<std::size_t> all(spec.n_items);
  for (std::size_t i = 0; i < spec.n_items; ++i) {
    out.item_cluster[i] = i % spec.n_clusters;
    members[i % spec.n_clusters].push_back(i);
    all[i] = i;
  }
  std::vector<WeightedPool> cluster_pool;
  for (const auto& m : members) cluster_pool.push_back(make_pool(m, weight));
  const auto global_pool = make_pool(all, weight);

  for (std::size_t i = 0; i < spec.n_items; ++i) {
    const auto c = out.item_cluster[i];
    ArticleDocument doc;
    doc.item_id = synthetic_item_id(i);
    doc.section = kSections[c % std::size(kSections)];
    doc.author = "writer" + std::to_string(c) + "x" + std::to_string(uniform_index(rng, 5)) + " " +
                 "desk" + std::to_string(uniform_index(rng, 20));
    doc.title = pick_words(rng, c, 6, 0.6);
    doc.body = pick_words(rng, c, 40, 0.35) + " story" + std::to_string(i);
    out.articles.push_back(std::move(doc));
  }

  const std::int64_t epoch = 1'500'000'000;
  std::poisson_distribution<int> extra(std::max(spec.actions_per_user - 1.0, 0.0));
  out.user_cluster.resize(spec.n_users);
  for (std::size_t u = 0; u < spec.n_users; ++u) {
    const auto c = uniform_index(rng, spec.n_clusters);
    out.user_cluster[u] = c;
    const auto want = std::min<std::size_t>(1 + static_cast<std::size_t>(extra(rng)), spec.n_items / 2);

    std::vector<std::size_t> chosen;
    std::set<std::size_t> taken;
    for (std::size_t attempt = 0; chosen.size() < want && attempt < want * 50; ++attempt) {
      const bool local = uniform01(rng) < spec.cluster_affinity;
      const auto item = local ? cluster_pool[c].draw(rng) : global_pool.draw(rng);
      if (taken.insert(item).second) chosen.push_back(item);
    }

    // Noise clicks go to items the user never rates, each at most once, so
    // their short dwell never adds up past the threshold.
    auto noise_item = [&]() {
      while (true) {
        const auto item = uniform_index(rng, spec.n_items);
        if (taken.insert(item).second) return item;
      }
    };
    const bool room_for_noise = spec.n_items >= 2 * want + 16;

    const std::string user = synthetic_user_id(u);
    std::int64_t t = epoch + static_cast<std::int64_t>(u) * 7 + static_cast<std::int64_t>(uniform_index(rng, 86400));
    auto emit = [&](std::size_t item, EventKind kind) {
      out.events.push_back({user, synthetic_item_id(item), kind, t});
    };
    auto end_session = [&]() {
      // The last click of a session never earns dwell, so it must not be
      // one of the sampled items.
      if (room_for_noise) {
        emit(noise_item(), EventKind::Click);
      }
      t += 7200 + static_cast<std::int64_t>(uniform_index(rng, 86400));
    };

    for (std::size_t j = 0; j < chosen.size(); ++j) {
      const auto item = chosen[j];
      const double mode = uniform01(rng);
      if (mode < 0.1 || !room_for_noise) {
        emit(item, EventKind::Click);
        t += 1 + static_cast<std::int64_t>(uniform_index(rng, 5));
        emit(item, mode < 0.05 || !room_for_noise ? EventKind::Share : EventKind::Comment);
        t += 1 + static_cast<std::int64_t>(uniform_index(rng, 3));
      } else {
        emit(item, EventKind::Click);
        t += 15 + static_cast<std::int64_t>(uniform_index(rng, 300));
      }
      if (room_for_noise && uniform01(rng) < 0.25) {
        emit(noise_item(), EventKind::Click);
        t += 2 + static_cast<std::int64_t>(uniform_index(rng, 7));
      }
      if ((j + 1) % 8 == 0) end_session();
    }
    end_session();
  }

  SignificanceRule rule;
  out.dataset = Dataset::from_aggregates(aggregate(out.events, rule), rule);
  return out;
}

}  // namespace rtrec
