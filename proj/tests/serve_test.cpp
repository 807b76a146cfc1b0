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

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <random>
#include <thread>
#include <vector>

#include <gtest/gtest.h>

#include "rtrec/error.hpp"
#include "rtrec/serve.hpp"

// After the rtrec headers: resolv.h, pulled in by httplib, defines _res.
#include <httplib.h>
#include <json.hpp>

namespace rtrec {
namespace {

namespace fs = std::filesystem;
using namespace std::chrono_literals;

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("rtrec_serve_" + std::to_string(rd()) + std::to_string(::getpid()));
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

ServeConfig test_config(const fs::path& dir) {
  ServeConfig cfg;
  cfg.store_dir = dir;
  cfg.durability = Durability::Buffered;
  cfg.trainer.batch_size = 100;
  cfg.trainer.min_batch_users = 1;
  cfg.trainer.als.k = 4;
  cfg.trainer.als.epochs = 3;
  cfg.trainer.als.alpha = 10.0;
  cfg.trainer.als.lambda = 1.0;
  cfg.flush_interval_seconds = 3600;
  cfg.train_content = false;
  return cfg;
}

InteractionEvent share(const std::string& user, const std::string& item, std::int64_t t) {
  return {user, item, EventKind::Share, t};
}

// Two taste groups over items a0..a5 and b0..b5.
void seed_groups(Engine& engine) {
  std::int64_t t = 1000;
  for (int u = 0; u < 6; ++u) {
    const std::string group = u < 3 ? "a" : "b";
    for (int i = 0; i < 6; ++i) {
      if ((u + i) % 3 == 0) continue;
      engine.ingest_event(share("u" + std::to_string(u), group + std::to_string(i), t++));
    }
  }
  engine.flush();
}

TEST(TtlCache, ServesUntilExpiry) {
  TtlCache<std::string, int> cache(std::chrono::duration<double>(0.15));
  EXPECT_FALSE(cache.get("x"));
  cache.put("x", 1);
  ASSERT_TRUE(cache.get("x"));
  EXPECT_EQ(*cache.get("x"), 1);
  EXPECT_EQ(cache.hits(), 2u);
  EXPECT_EQ(cache.misses(), 1u);
  std::this_thread::sleep_for(200ms);
  EXPECT_FALSE(cache.get("x"));
  cache.put("x", 2);
  cache.erase("x");
  EXPECT_FALSE(cache.get("x"));
}

TEST(Engine, AcksCarrySequenceNumbers) {
  TempDir dir;
  Engine engine(test_config(dir.path()));
  EXPECT_EQ(engine.ingest_event(share("u", "i", 1)), 0u);
  EXPECT_EQ(engine.ingest_event(share("u", "j", 2)), 1u);
  EXPECT_EQ(engine.ingest_event(share("v", "i", 1)), 2u);
  EXPECT_EQ(engine.store().size(Namespace::Events), 3u);
}

TEST(Engine, RejectsMalformedEvents) {
  TempDir dir;
  Engine engine(test_config(dir.path()));
  EXPECT_THROW(engine.ingest_event(share("", "i", 1)), ValidationError);
  EXPECT_THROW(engine.ingest_event(share("u", "", 1)), ValidationError);
  engine.ingest_event(share("u", "i", 10));
  EXPECT_THROW(engine.ingest_event(share("u", "i", 9)), OrderingError);
  EXPECT_THROW(engine.ingest_article({"", "s", "a", "t", "b"}), ValidationError);
}

TEST(Engine, QueueFullSignalsBackPressure) {
  TempDir dir;
  auto cfg = test_config(dir.path());
  cfg.queue_capacity = 0;
  EXPECT_THROW(Engine{cfg}, ValidationError);

  cfg.queue_capacity = 5;
  cfg.trainer.batch_size = 1;
  Engine engine(cfg);
  std::atomic<int> accepted{0}, rejected{0};
  std::vector<std::thread> producers;
  for (int p = 0; p < 4; ++p) {
    producers.emplace_back([&, p] {
      for (int j = 0; j < 2000; ++j) {
        try {
          engine.ingest_event(share("p" + std::to_string(p), "i" + std::to_string(j), j));
          ++accepted;
        } catch (const QueueFullError&) {
          ++rejected;
        }
      }
    });
  }
  for (auto& t : producers) t.join();
  EXPECT_GT(rejected.load(), 0);
  EXPECT_EQ(accepted + rejected, 8000);
  // Rejected events are neither stored nor counted.
  EXPECT_EQ(engine.store().size(Namespace::Events), static_cast<std::size_t>(accepted.load()));
  EXPECT_EQ(engine.metrics().events_ingested, static_cast<std::uint64_t>(accepted.load()));
}

TEST(Engine, DuplicateDeliveryLeavesModelUnchanged) {
  TempDir dir;
  Engine engine(test_config(dir.path()));
  seed_groups(engine);
  engine.ingest_event(share("u0", "a1", 5000));
  engine.flush();
  const auto before = engine.trainer().snapshot();
  engine.ingest_event(share("u0", "a1", 5000));
  engine.flush();
  const auto after = engine.trainer().snapshot();
  EXPECT_EQ(before.ratings, after.ratings);
  EXPECT_EQ(before.popularity, after.popularity);
  ASSERT_EQ(before.users.size(), after.users.size());
  for (const auto& [user, v] : before.users) EXPECT_EQ(v, after.users.at(user)) << user;
  for (const auto& [item, v] : before.items) EXPECT_EQ(v, after.items.at(item)) << item;
}

TEST(Engine, NewArticleIsEligibleForTopAtOnce) {
  TempDir dir;
  auto cfg = test_config(dir.path());
  cfg.top_ttl_seconds = 3600;
  Engine engine(cfg);
  seed_groups(engine);
  const auto first = engine.recommend({"nobody", 100, Algorithm::Top, {}});
  engine.ingest_article({"fresh", "news", "ann", "Brand new", "text about something new"});
  const auto second = engine.recommend({"nobody", 100, Algorithm::Top, {}});
  EXPECT_EQ(second.items.size(), first.items.size() + 1);
  EXPECT_TRUE(std::any_of(second.items.begin(), second.items.end(),
                          [](const ScoredItem& s) { return s.item_id == "fresh"; }));

  engine.ingest_article({"fresh", "news", "ann", "Rewritten", "different body"});
  const auto third = engine.recommend({"nobody", 100, Algorithm::Top, {}});
  EXPECT_EQ(std::count_if(third.items.begin(), third.items.end(),
                          [](const ScoredItem& s) { return s.item_id == "fresh"; }),
            1);
  EXPECT_EQ(engine.store().size(Namespace::Article), 1u);

  const auto windowed = engine.recommend({"nobody", 100, Algorithm::Top, 60.0});
  ASSERT_EQ(windowed.items.size(), 1u);
  EXPECT_EQ(windowed.items[0].item_id, "fresh");
}

TEST(Engine, TopHitWithinTtlSkipsTheStore) {
  TempDir dir;
  auto cfg = test_config(dir.path());
  cfg.top_ttl_seconds = 3600;
  Engine engine(cfg);
  seed_groups(engine);
  const auto first = engine.recommend({"u0", 5, Algorithm::Top, {}});
  const auto reads = engine.store().read_count();
  const auto hits = engine.metrics().cache_hits;
  const auto second = engine.recommend({"u0", 5, Algorithm::Top, {}});
  EXPECT_EQ(engine.store().read_count(), reads);
  EXPECT_EQ(engine.metrics().cache_hits, hits + 1);
  ASSERT_EQ(first.items.size(), second.items.size());
  for (std::size_t j = 0; j < first.items.size(); ++j) {
    EXPECT_EQ(first.items[j].item_id, second.items[j].item_id);
    EXPECT_EQ(first.items[j].score, second.items[j].score);
  }
}

TEST(Engine, UnknownUserFallsBackWithFlag) {
  TempDir dir;
  Engine engine(test_config(dir.path()));
  seed_groups(engine);
  for (auto algo : {Algorithm::Collab, Algorithm::Content}) {
    const auto r = engine.recommend({"stranger", 4, algo, {}});
    EXPECT_TRUE(r.fallback);
    EXPECT_EQ(r.served_by, Algorithm::Top);
    EXPECT_EQ(r.items.size(), 4u);
  }
  const auto top = engine.recommend({"stranger", 4, Algorithm::Top, {}});
  EXPECT_FALSE(top.fallback);
  EXPECT_THROW(engine.recommend({"u0", 0, Algorithm::Top, {}}), ValidationError);
}

TEST(Engine, NeverRecommendsSeenItems) {
  TempDir dir;
  Engine engine(test_config(dir.path()));
  seed_groups(engine);
  const auto ratings = engine.trainer().snapshot().ratings;
  for (const auto& [user, seen] : ratings) {
    for (auto algo : {Algorithm::Collab, Algorithm::Top}) {
      const auto r = engine.recommend({user, 100, algo, {}});
      EXPECT_FALSE(r.fallback);
      EXPECT_EQ(r.items.size(), 12u - seen.size()) << user;
      for (const auto& item : r.items) EXPECT_FALSE(seen.contains(item.item_id)) << user;
    }
  }
}

TEST(Engine, CollabPrefersOwnGroup) {
  TempDir dir;
  Engine engine(test_config(dir.path()));
  seed_groups(engine);
  const auto r = engine.recommend({"u0", 2, Algorithm::Collab, {}});
  ASSERT_EQ(r.items.size(), 2u);
  EXPECT_EQ(r.items[0].item_id[0], 'a');
}

TEST(Engine, UpdatedVectorShowsAfterTtl) {
  TempDir dir;
  auto cfg = test_config(dir.path());
  cfg.model_ttl_seconds = 0.3;
  Engine engine(cfg);
  seed_groups(engine);
  const auto old_state = engine.trainer().snapshot();
  engine.recommend({"u0", 12, Algorithm::Collab, {}});
  for (int i = 0; i < 3; ++i) engine.ingest_event(share("u0", "b" + std::to_string(i), 9000 + i));
  engine.flush();
  const auto new_state = engine.trainer().snapshot();
  ASSERT_NE(old_state.users.at("u0"), new_state.users.at("u0"));

  // Vectors go through the store as 32-bit floats. Within the TTL the
  // cached factors still answer.
  const auto stale = engine.recommend({"u0", 12, Algorithm::Collab, {}});
  ASSERT_FALSE(stale.items.empty());
  for (const auto& item : stale.items) {
    EXPECT_NEAR(item.score, old_state.users.at("u0").dot(old_state.items.at(item.item_id)), 1e-6);
    EXPECT_FALSE(new_state.ratings.at("u0").contains(item.item_id));
  }
  std::this_thread::sleep_for(400ms);
  const auto fresh = engine.recommend({"u0", 12, Algorithm::Collab, {}});
  ASSERT_FALSE(fresh.items.empty());
  for (const auto& item : fresh.items) {
    EXPECT_NEAR(item.score, new_state.users.at("u0").dot(new_state.items.at(item.item_id)), 1e-6);
  }
}

TEST(Engine, ContentAlgorithmServesTrainedUsers) {
  TempDir dir;
  auto cfg = test_config(dir.path());
  cfg.train_content = true;
  Engine engine(cfg);
  for (int i = 0; i < 6; ++i) {
    engine.ingest_article({"a" + std::to_string(i), "sport", "x", "football match " + std::to_string(i),
                           "goal striker league football"});
    engine.ingest_article({"b" + std::to_string(i), "arts", "y", "opera night " + std::to_string(i),
                           "soprano orchestra opera stage"});
  }
  seed_groups(engine);
  const auto r = engine.recommend({"u0", 3, Algorithm::Content, {}});
  EXPECT_FALSE(r.fallback);
  EXPECT_EQ(r.served_by, Algorithm::Content);
  ASSERT_FALSE(r.items.empty());
  EXPECT_EQ(r.items[0].item_id[0], 'a');
  EXPECT_TRUE(engine.store().get(Namespace::ContentModel, "u0"));
}

TEST(Metrics, FreshEngineIsZero) {
  TempDir dir;
  Engine engine(test_config(dir.path()));
  const auto m = engine.metrics();
  EXPECT_TRUE(m.endpoints.empty());
  EXPECT_EQ(m.cache_hits, 0u);
  EXPECT_EQ(m.cache_misses, 0u);
  EXPECT_EQ(m.cache_hit_ratio, 0.0);
  EXPECT_EQ(m.events_ingested, 0u);
  EXPECT_EQ(m.events_trained, 0u);
  EXPECT_EQ(m.trainer_lag, 0u);
}

TEST(Metrics, CountsRequestsAndLag) {
  TempDir dir;
  Engine engine(test_config(dir.path()));
  for (int j = 0; j < 5; ++j) engine.ingest_event(share("u", "i" + std::to_string(j), j));
  EXPECT_EQ(engine.metrics().events_ingested, 5u);
  EXPECT_EQ(engine.metrics().trainer_lag, 5u);
  engine.flush();
  EXPECT_EQ(engine.metrics().trainer_lag, 0u);
  EXPECT_EQ(engine.metrics().events_trained, 5u);
  for (int j = 0; j < 7; ++j) engine.recommend({"u", 3, Algorithm::Top, {}});
  const auto m = engine.metrics();
  EXPECT_EQ(m.endpoints.at("recommendations").count, 7u);
  EXPECT_EQ(m.endpoints.at("recommendations/top").count, 7u);
  EXPECT_EQ(m.endpoints.at("events").count, 5u);
}

TEST(Metrics, QuantilesUnderThirtyClients) {
  TempDir dir;
  Engine engine(test_config(dir.path()));
  seed_groups(engine);
  std::vector<std::thread> clients;
  for (int c = 0; c < 30; ++c) {
    clients.emplace_back([&engine, c] {
      for (int j = 0; j < 20; ++j) {
        const auto algo = j % 2 ? Algorithm::Collab : Algorithm::Top;
        engine.recommend({"u" + std::to_string((c + j) % 8), 5, algo, {}});
      }
    });
  }
  for (auto& t : clients) t.join();
  const auto m = engine.metrics();
  const auto& all = m.endpoints.at("recommendations");
  EXPECT_EQ(all.count, 600u);
  EXPECT_GT(all.p50_ms, 0.0);
  EXPECT_LE(all.p50_ms, all.p95_ms);
  EXPECT_LE(all.p95_ms, all.p99_ms);
  EXPECT_EQ(m.endpoints.at("recommendations/collab").count, 300u);
  EXPECT_GT(m.cache_hit_ratio, 0.5);
}

TEST(Engine, RestartReloadsModelAndQueue) {
  TempDir dir;
  RecommendationList before;
  {
    Engine engine(test_config(dir.path()));
    seed_groups(engine);
    engine.ingest_article({"art", "s", "a", "title", "body"});
    before = engine.recommend({"u0", 12, Algorithm::Collab, {}}).items;
  }
  Engine engine(test_config(dir.path()));
  const auto after = engine.recommend({"u0", 12, Algorithm::Collab, {}});
  EXPECT_FALSE(after.fallback);
  ASSERT_EQ(after.items.size(), before.size());
  // Reloaded item factors are float-rounded, so near-ties may swap.
  std::map<std::string, double> was;
  for (const auto& item : before) was[item.item_id] = item.score;
  for (const auto& item : after.items) {
    ASSERT_TRUE(was.contains(item.item_id)) << item.item_id;
    EXPECT_NEAR(item.score, was[item.item_id], 1e-6);
  }
  EXPECT_EQ(engine.metrics().trainer_lag, 0u);
  // Sequence numbers continue and earlier timestamps are still rejected.
  const auto ingested = engine.metrics().events_ingested;
  EXPECT_EQ(engine.ingest_event(share("u0", "a0", 99999)), ingested);
  EXPECT_THROW(engine.ingest_event(share("u0", "a0", 1)), OrderingError);
  const auto top = engine.recommend({"zz", 100, Algorithm::Top, {}}).items;
  EXPECT_TRUE(std::any_of(top.begin(), top.end(), [](const ScoredItem& s) { return s.item_id == "art"; }));
}

TEST(Http, EndpointsRoundTrip) {
  TempDir dir;
  Engine engine(test_config(dir.path()));
  HttpServer server(engine);
  const int port = server.start("127.0.0.1", 0);
  ASSERT_GT(port, 0);
  httplib::Client client("127.0.0.1", port);

  nlohmann::json events = nlohmann::json::array();
  std::int64_t t = 100;
  for (int u = 0; u < 4; ++u) {
    for (int i = 0; i < 6; ++i) {
      if ((u + i) % 2 == 0) events.push_back({{"user_id", "u" + std::to_string(u)}, {"item_id", "i" + std::to_string(i)},
                                    {"kind", "share"}, {"timestamp", t++}});
    }
  }
  auto res = client.Post("/events", events.dump(), "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(nlohmann::json::parse(res->body)["acks"].size(), events.size());

  res = client.Post("/events", R"({"user_id":"u","item_id":"i","kind":"like","timestamp":1})", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  res = client.Post("/events", R"({"user_id":"u","kind":"click","timestamp":1})", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  res = client.Post("/articles", R"({"title":"no id"})", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  res = client.Post("/articles", R"({"item_id":"i9","title":"hello","body":"world"})", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);

  engine.flush();
  res = client.Get("/recommendations?user=u0&n=2&algo=collab");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200);
  auto body = nlohmann::json::parse(res->body);
  EXPECT_EQ(body["fallback"], false);
  ASSERT_EQ(body["items"].size(), 2u);
  EXPECT_TRUE(body["items"][0].contains("item_id"));
  EXPECT_TRUE(body["items"][0].contains("score"));
  for (const auto& item : body["items"]) {
    EXPECT_TRUE(item["item_id"] == "i1" || item["item_id"] == "i3" || item["item_id"] == "i5") << item;
  }

  res = client.Get("/recommendations?user=ghost&algo=content");
  ASSERT_TRUE(res);
  EXPECT_EQ(nlohmann::json::parse(res->body)["fallback"], true);
  res = client.Get("/recommendations?user=u0&algo=psychic");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);

  res = client.Get("/metrics");
  ASSERT_TRUE(res);
  body = nlohmann::json::parse(res->body);
  EXPECT_EQ(body["events_ingested"], events.size());
  EXPECT_EQ(body["trainer_lag"], 0);
  EXPECT_EQ(body["endpoints"]["recommendations"]["count"], 2);
  server.stop();
}

}  // namespace
}  // namespace rtrec
