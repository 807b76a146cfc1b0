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

#include "rtrec/cli.hpp"

#include <pthread.h>
#include <signal.h>

#include <cmath>
#include <fstream>
#include <iostream>

#include "rtrec/codec.hpp"
#include "rtrec/error.hpp"
#include "rtrec/eval.hpp"
#include "rtrec/serve.hpp"
#include "rtrec/store.hpp"
#include "rtrec/synthetic.hpp"

// After Eigen: <resolv.h> defines a `_res` macro that clashes with it.
#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

namespace rtrec {

using json = nlohmann::json;

std::vector<ArticleDocument> read_articles(std::istream& in) {
  std::vector<ArticleDocument> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      ArticleDocument doc{j.at("item_id").get<std::string>(), j.value("section", ""),
                          j.value("author", ""), j.value("title", ""), j.value("body", "")};
      if (doc.item_id.empty()) throw ValidationError("empty item_id");
      out.push_back(std::move(doc));
    } catch (const json::exception& e) {
      throw ValidationError("article line " + std::to_string(number) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("article line " + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

void write_articles(std::ostream& out, const std::vector<ArticleDocument>& articles) {
  for (const auto& a : articles) {
    out << json{{"item_id", a.item_id}, {"section", a.section}, {"author", a.author},
                {"title", a.title},     {"body", a.body}}
               .dump()
        << '\n';
  }
}

namespace {

struct ModelFlags {
  std::size_t batch_size = TrainerConfig{}.batch_size;
  std::size_t min_batch_users = TrainerConfig{}.min_batch_users;
  unsigned parallelism = 1;
  int k = AlsParams{}.k;
  double alpha = AlsParams{}.alpha;
  double lambda = AlsParams{}.lambda;
  int cg_steps = AlsParams{}.cg_steps;
  int epochs = AlsParams{}.epochs;
  unsigned threads = 1;
  std::uint64_t seed = 0;

  TrainerConfig trainer() const {
    TrainerConfig cfg;
    cfg.batch_size = batch_size;
    cfg.min_batch_users = min_batch_users;
    cfg.parallelism = parallelism;
    cfg.als.k = k;
    cfg.als.alpha = alpha;
    cfg.als.lambda = lambda;
    cfg.als.cg_steps = cg_steps;
    cfg.als.epochs = epochs;
    cfg.als.threads = threads;
    cfg.als.seed = seed;
    cfg.validate();
    return cfg;
  }
};

std::string g_config_path;

void add_config(CLI::App* app) {
  app->add_option("--config", g_config_path, "flat key=value file mirroring the flags");
}

// CLI11 only reads config files at the root, so the subcommand's options
// are filled here after parsing. Flags given on the command line win and
// keys no option of the active command knows are ignored.
void apply_config_file(CLI::App& app) {
  if (g_config_path.empty()) return;
  std::ifstream in(g_config_path);
  if (!in) throw ValidationError("cannot open config file " + g_config_path);
  const auto items = CLI::ConfigTOML().from_config(in);
  std::vector<CLI::App*> chain;
  for (CLI::App* cur = &app;;) {
    chain.insert(chain.begin(), cur);
    auto subs = cur->get_subcommands();
    if (subs.empty()) break;
    cur = subs.front();
  }
  for (const auto& item : items) {
    if (item.name.empty() || item.name == "config" || item.inputs.empty()) continue;
    for (CLI::App* cmd : chain) {
      CLI::Option* opt = cmd->get_option_no_throw("--" + item.name);
      if (opt == nullptr) continue;
      if (opt->count() == 0) {
        opt->add_result(item.inputs);
        opt->run_callback();
      }
      break;
    }
  }
}

void add_model_flags(CLI::App* app, ModelFlags& f) {
  app->add_option("--batch-size", f.batch_size, "significant actions per batch")->capture_default_str();
  app->add_option("--min-batch-users", f.min_batch_users, "pad smaller batches with known users")
      ->capture_default_str();
  app->add_option("--parallelism", f.parallelism, "batches trained concurrently")->capture_default_str();
  app->add_option("--k", f.k, "latent dimensions")->capture_default_str();
  app->add_option("--alpha", f.alpha, "confidence scale")->capture_default_str();
  app->add_option("--lambda", f.lambda, "regularization")->capture_default_str();
  app->add_option("--cg-steps", f.cg_steps, "conjugate gradient iterations")->capture_default_str();
  app->add_option("--epochs", f.epochs, "ALS sweeps per batch")->capture_default_str();
  app->add_option("--threads", f.threads, "solver threads, 0 for all cores")->capture_default_str();
  app->add_option("--seed", f.seed, "random seed")->capture_default_str();
}

// "-" selects the standard stream.
class Input {
 public:
  explicit Input(const std::string& path) {
    if (path != "-") {
      file_.open(path);
      if (!file_) throw Error("cannot open " + path);
    }
  }
  std::istream& get() { return file_.is_open() ? static_cast<std::istream&>(file_) : std::cin; }

 private:
  std::ifstream file_;
};

class Output {
 public:
  explicit Output(const std::string& path) {
    if (path != "-") {
      file_.open(path);
      if (!file_) throw Error("cannot write " + path);
    }
  }
  std::ostream& get() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

 private:
  std::ofstream file_;
};

std::vector<ArticleDocument> load_articles(const std::string& path) {
  if (path.empty()) return {};
  Input in(path);
  return read_articles(in.get());
}

std::map<std::string, FeatureVector> featurize(const std::vector<ArticleDocument>& docs,
                                               const RankerConfig& cfg) {
  std::map<std::string, FeatureVector> out;
  for (const auto& d : docs) out.insert_or_assign(d.item_id, extract_features(d, cfg));
  return out;
}

Dataset dataset_from(std::span<const InteractionEvent> events) {
  SignificanceRule rule;
  return Dataset::from_aggregates(aggregate(events, rule), rule);
}

std::optional<Durability> parse_durability(const std::string& text) {
  if (text == "sync") return Durability::Sync;
  if (text == "buffered") return Durability::Buffered;
  return std::nullopt;
}

// --------------------------------------------------------------------------

struct GenFlags {
  SyntheticSpec spec;
  std::string out = "-";
  std::string articles;
};

void cmd_gen(const GenFlags& f) {
  const auto data = generate_synthetic(f.spec);
  Output out(f.out);
  write_events(out.get(), data.events);
  if (!f.articles.empty()) {
    Output articles(f.articles);
    write_articles(articles.get(), data.articles);
  }
}

struct StoreFlags {
  std::string store = "rtrec-store";
  std::string durability = "sync";
};

struct IngestFlags {
  StoreFlags store;
  std::string events = "-";
  std::string articles;
  ModelFlags model;
  bool train_content = true;
};

void cmd_ingest(const IngestFlags& f) {
  ServeConfig cfg;
  cfg.store_dir = f.store.store;
  cfg.durability = *parse_durability(f.store.durability);
  cfg.trainer = f.model.trainer();
  cfg.train_content = f.train_content;
  // Only explicit flushes train here.
  cfg.flush_interval_seconds = 1e9;
  Engine engine(cfg);
  for (const auto& doc : load_articles(f.articles)) engine.ingest_article(doc);
  std::size_t events = 0;
  if (!f.events.empty()) {
    Input in(f.events);
    for (const auto& e : read_events(in.get())) {
      engine.ingest_event(e);
      ++events;
    }
  }
  engine.flush();
  const auto m = engine.metrics();
  std::cerr << "ingested " << events << " events, " << m.batches_trained << " batches trained\n";
}

struct TrainFlags {
  std::string events = "-";
  std::string articles;
  std::string store;
  std::string durability = "buffered";
  ModelFlags model;
  bool quiet = false;
};

void cmd_train(const TrainFlags& f) {
  const auto cfg = f.model.trainer();
  Input in(f.events);
  const auto events = read_events(in.get());
  const auto data = dataset_from(events);

  std::unique_ptr<Store> store;
  if (!f.store.empty()) {
    const auto durability = parse_durability(f.durability);
    store = Store::recover(f.store, {*durability});
  }
  CommitSink sink;
  if (store) {
    sink = [&](const BatchCommit& c) {
      std::vector<Store::Write> writes;
      for (const auto& [id, v] : c.user_vectors) writes.push_back({Namespace::UserVec, id, codec::encode_vector(v)});
      for (const auto& [id, v] : c.item_vectors) writes.push_back({Namespace::ItemVec, id, codec::encode_vector(v)});
      for (const auto& [id, items] : c.ratings) writes.push_back({Namespace::Ratings, id, codec::encode_ratings(items)});
      for (const auto& [id, n] : c.popularity) writes.push_back({Namespace::Popularity, id, codec::encode_count(n)});
      writes.push_back({Namespace::Checkpoint, codec::sequence_key(c.sequence), codec::encode_count(c.actions)});
      store->put_batch(writes);
    };
  }
  ModelState state;
  const auto actions = data.actions();
  run_stream(actions, state, cfg, sink);

  if (store && !f.articles.empty()) {
    RankerConfig ranker;
    const auto docs = load_articles(f.articles);
    const auto features = featurize(docs, ranker);
    for (const auto& d : docs) {
      store->put(Namespace::Article, d.item_id,
                 json{{"section", d.section}, {"author", d.author}, {"title", d.title},
                      {"body", d.body}, {"ingested_at", 0}}
                     .dump());
    }
    for (auto& [user, model] : train_content_models(data, features, ranker, f.model.seed)) {
      store->put(Namespace::ContentModel, user, codec::encode_content_model(model));
    }
  }
  std::cerr << "trained " << actions.size() << " actions: " << state.users.size() << " users, "
            << state.items.size() << " items\n";
  if (!f.quiet) write_events(std::cout, events);
}

struct EvalFlags {
  std::string events = "-";
  std::string articles;
  std::string out = "-";
  double train_fraction = 0.8;
  ModelFlags model;
  std::vector<std::size_t> sizes;
  std::vector<unsigned> levels{1, 2, 4};
};

std::pair<Dataset, Dataset> eval_split(const EvalFlags& f, Dataset& data) {
  Input in(f.events);
  data = dataset_from(read_events(in.get()));
  if (data.empty()) throw ValidationError("no significant interactions in the input");
  return split(data, f.train_fraction, f.model.seed);
}

void cmd_eval_run(const EvalFlags& f) {
  Dataset data;
  const auto [train, test] = eval_split(f, data);
  const auto cfg = f.model.trainer();

  std::vector<EvalReport> reports;
  reports.push_back(precision_at_10(GlobalTopRecommender(train), train, test));
  reports.push_back(precision_at_10(RandomRecommender(train, f.model.seed), train, test));
  const auto state = train_collaborative(train, cfg);
  reports.push_back(precision_at_10(CollaborativeRecommender(state, train.items()), train, test));
  if (!f.articles.empty()) {
    RankerConfig ranker;
    auto features = featurize(load_articles(f.articles), ranker);
    auto models = train_content_models(train, features, ranker, f.model.seed);
    std::map<std::string, std::size_t> popularity;
    for (const auto& t : train.tuples) ++popularity[t.item_id];
    reports.push_back(precision_at_10(
        ContentRecommender(std::move(models), std::move(features), std::move(popularity), ranker.beta),
        train, test));
  }
  Output out(f.out);
  write_report_csv(out.get(), reports);
}

void cmd_sweep_batch(const EvalFlags& f) {
  Dataset data;
  Input in(f.events);
  data = dataset_from(read_events(in.get()));
  if (data.empty()) throw ValidationError("no significant interactions in the input");
  auto sizes = f.sizes;
  if (sizes.empty()) {
    const auto n = static_cast<std::size_t>(std::llround(f.train_fraction * static_cast<double>(data.size())));
    // Rounded up so no size leaves a tiny trailing batch.
    for (std::size_t d : {64, 16, 4, 1}) sizes.push_back(std::max<std::size_t>((n + d - 1) / d, 1));
  }
  auto rows = sweep_batch_size(data, sizes, f.model.trainer(), f.model.seed, f.train_fraction);
  // The reference row repeats the largest size when the sweep already covers it.
  if (rows.size() >= 2 && rows[rows.size() - 2].parameter == rows.back().parameter) rows.pop_back();
  Output out(f.out);
  write_sweep_csv(out.get(), "batch_size", rows);
}

void cmd_sweep_parallel(const EvalFlags& f) {
  Input in(f.events);
  const auto data = dataset_from(read_events(in.get()));
  if (data.empty()) throw ValidationError("no significant interactions in the input");
  const auto rows =
      sweep_parallelism(data, f.levels, f.model.batch_size, f.model.trainer(), f.model.seed, f.train_fraction);
  Output out(f.out);
  write_sweep_csv(out.get(), "parallelism", rows);
}

struct ServeFlags {
  StoreFlags store;
  std::string host = "127.0.0.1";
  int port = 8080;
  double flush_interval = 60.0;
  double model_ttl = 5.0;
  double top_ttl = 30.0;
  std::size_t queue_capacity = 100000;
  bool train_content = true;
  ModelFlags model;
  double beta = 10.0;
};

void cmd_serve(const ServeFlags& f) {
  // Block the stop signals before any thread starts so only sigwait sees them.
  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

  ServeConfig cfg;
  cfg.store_dir = f.store.store;
  cfg.durability = *parse_durability(f.store.durability);
  cfg.trainer = f.model.trainer();
  cfg.flush_interval_seconds = f.flush_interval;
  cfg.model_ttl_seconds = f.model_ttl;
  cfg.top_ttl_seconds = f.top_ttl;
  cfg.queue_capacity = f.queue_capacity;
  cfg.train_content = f.train_content;
  cfg.ranker.beta = f.beta;
  Engine engine(cfg);
  const auto& report = engine.store().recovery_report();
  for (const auto& cut : report.truncated) {
    std::cerr << "recovered " << cut.file.string() << ": dropped " << cut.dropped_bytes
              << " trailing bytes\n";
  }
  HttpServer server(engine);
  const int port = server.start(f.host, f.port);
  std::cerr << "listening on " << f.host << ':' << port << std::endl;
  int received = 0;
  sigwait(&stop_signals, &received);
  server.stop();
}

struct RecommendFlags {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string user;
  std::size_t n = 10;
  std::string algo = "collab";
  std::optional<double> window;
};

void cmd_recommend(const RecommendFlags& f) {
  if (f.user.empty()) throw ValidationError("--user is required");
  if (!parse_algorithm(f.algo)) throw ValidationError("--algo must be one of collab, content, top");
  httplib::Client client(f.host, f.port);
  client.set_connection_timeout(5);
  client.set_read_timeout(30);
  httplib::Params params{{"user", f.user}, {"n", std::to_string(f.n)}, {"algo", f.algo}};
  if (f.window) params.emplace("window", std::to_string(*f.window));
  const auto res = client.Get("/recommendations", params, httplib::Headers{});
  if (!res) throw Error("request failed: " + httplib::to_string(res.error()));
  const auto body = json::parse(res->body, nullptr, false);
  if (res->status != 200) {
    const auto message = body.is_object() ? body.value("error", res->body) : res->body;
    throw Error("server returned " + std::to_string(res->status) + ": " + message);
  }
  if (body.value("fallback", false)) std::cerr << "served by top articles (fallback)\n";
  for (const auto& item : body.at("items")) {
    std::cout << item.at("item_id").get<std::string>() << '\t' << item.at("score").get<double>() << '\n';
  }
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"rtrec: incremental collaborative filtering and content ranking for news articles", "rtrec"};
  app.require_subcommand(1);

  GenFlags gen;
  auto* gen_cmd = app.add_subcommand("gen", "write a synthetic event stream");
  add_config(gen_cmd);
  gen_cmd->add_option("--users", gen.spec.n_users)->capture_default_str();
  gen_cmd->add_option("--items", gen.spec.n_items)->capture_default_str();
  gen_cmd->add_option("--clusters", gen.spec.n_clusters)->capture_default_str();
  gen_cmd->add_option("--skew", gen.spec.popularity_skew, "popularity power-law exponent")->capture_default_str();
  gen_cmd->add_option("--actions", gen.spec.actions_per_user, "mean significant actions per user")
      ->capture_default_str();
  gen_cmd->add_option("--affinity", gen.spec.cluster_affinity)->capture_default_str();
  gen_cmd->add_option("--seed", gen.spec.seed)->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "event file, - for stdout")->capture_default_str();
  gen_cmd->add_option("--articles", gen.articles, "also write the article corpus here");

  IngestFlags ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "load events and articles into a store and train");
  add_config(ingest_cmd);
  ingest_cmd->add_option("--store", ingest.store.store)->capture_default_str();
  ingest_cmd->add_option("--durability", ingest.store.durability)
      ->check(CLI::IsMember({"sync", "buffered"}))
      ->capture_default_str();
  ingest_cmd->add_option("--events", ingest.events, "event file, - for stdin")->capture_default_str();
  ingest_cmd->add_option("--articles", ingest.articles, "article JSON lines");
  ingest_cmd->add_flag("!--no-content", ingest.train_content, "skip content models");
  add_model_flags(ingest_cmd, ingest.model);

  TrainFlags train;
  auto* train_cmd = app.add_subcommand("train", "train factors from events; echoes the events");
  add_config(train_cmd);
  train_cmd->add_option("--events", train.events, "event file, - for stdin")->capture_default_str();
  train_cmd->add_option("--articles", train.articles, "article JSON lines (content models)");
  train_cmd->add_option("--store", train.store, "persist the model here");
  train_cmd->add_option("--durability", train.durability)
      ->check(CLI::IsMember({"sync", "buffered"}))
      ->capture_default_str();
  train_cmd->add_flag("--quiet", train.quiet, "do not echo events");
  add_model_flags(train_cmd, train.model);

  EvalFlags eval;
  auto add_eval_flags = [&](CLI::App* cmd) {
    add_config(cmd);
    cmd->add_option("--events", eval.events, "event file, - for stdin")->capture_default_str();
    cmd->add_option("--out", eval.out, "CSV destination, - for stdout")->capture_default_str();
    cmd->add_option("--train-fraction", eval.train_fraction)->check(CLI::Range(0.0, 1.0))->capture_default_str();
    add_model_flags(cmd, eval.model);
  };
  auto add_sizes = [&](CLI::App* cmd) {
    cmd->add_option("--sizes", eval.sizes, "batch sizes (default n/64,n/16,n/4,n)")->delimiter(',');
  };
  auto add_levels = [&](CLI::App* cmd) {
    cmd->add_option("--levels", eval.levels, "parallelism levels")->delimiter(',')->capture_default_str();
  };
  auto* eval_cmd = app.add_subcommand("eval", "precision@10 of the recommenders on a seeded split");
  eval_cmd->require_subcommand(0, 1);
  add_eval_flags(eval_cmd);
  eval_cmd->add_option("--articles", eval.articles, "article JSON lines (adds the content system)");
  // Sweep options live on `eval` so a --config file can set them too.
  add_sizes(eval_cmd);
  add_levels(eval_cmd);
  auto* eval_run = eval_cmd->add_subcommand("run", "compare all systems (default)");
  auto* eval_sweep_batch = eval_cmd->add_subcommand("sweep-batch", "precision@10 per batch size");
  auto* eval_sweep_parallel = eval_cmd->add_subcommand("sweep-parallel", "precision@10 per parallelism");
  for (auto* sub : {eval_run, eval_sweep_batch, eval_sweep_parallel}) sub->fallthrough();

  auto* sweep_batch_cmd = app.add_subcommand("sweep-batch", "same as eval sweep-batch");
  add_eval_flags(sweep_batch_cmd);
  add_sizes(sweep_batch_cmd);
  auto* sweep_parallel_cmd = app.add_subcommand("sweep-parallel", "same as eval sweep-parallel");
  add_eval_flags(sweep_parallel_cmd);
  add_levels(sweep_parallel_cmd);

  ServeFlags serve;
  auto* serve_cmd = app.add_subcommand("serve", "run the HTTP server");
  add_config(serve_cmd);
  serve_cmd->add_option("--store", serve.store.store)->envname("RTREC_STORE")->capture_default_str();
  serve_cmd->add_option("--durability", serve.store.durability)
      ->check(CLI::IsMember({"sync", "buffered"}))
      ->capture_default_str();
  serve_cmd->add_option("--host", serve.host)->capture_default_str();
  serve_cmd->add_option("--port", serve.port)->envname("RTREC_PORT")->capture_default_str();
  serve_cmd->add_option("--flush-interval", serve.flush_interval, "seconds between trainer flushes")
      ->capture_default_str();
  serve_cmd->add_option("--model-ttl", serve.model_ttl, "model cache TTL in seconds")->capture_default_str();
  serve_cmd->add_option("--top-ttl", serve.top_ttl, "top-articles cache TTL in seconds")->capture_default_str();
  serve_cmd->add_option("--queue-capacity", serve.queue_capacity)->capture_default_str();
  serve_cmd->add_option("--beta", serve.beta, "popularity smoothing")->capture_default_str();
  serve_cmd->add_flag("!--no-content", serve.train_content, "skip content models");
  add_model_flags(serve_cmd, serve.model);

  RecommendFlags rec;
  auto* rec_cmd = app.add_subcommand("recommend", "query a running server");
  add_config(rec_cmd);
  rec_cmd->add_option("--host", rec.host)->capture_default_str();
  rec_cmd->add_option("--port", rec.port)->envname("RTREC_PORT")->capture_default_str();
  rec_cmd->add_option("--user", rec.user, "required");
  rec_cmd->add_option("--n", rec.n)->check(CLI::PositiveNumber)->capture_default_str();
  rec_cmd->add_option("--algo", rec.algo)->check(CLI::IsMember({"collab", "content", "top"}))->capture_default_str();
  rec_cmd->add_option("--window", rec.window, "only articles ingested within this many seconds");

  try {
    app.parse(argc, argv);
    apply_config_file(app);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "rtrec: " << e.what() << "\n\n" << app.help();
    return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
  }

  try {
    if (*gen_cmd) cmd_gen(gen);
    else if (*ingest_cmd) cmd_ingest(ingest);
    else if (*train_cmd) cmd_train(train);
    else if (*eval_sweep_batch || *sweep_batch_cmd) cmd_sweep_batch(eval);
    else if (*eval_sweep_parallel || *sweep_parallel_cmd) cmd_sweep_parallel(eval);
    else if (*eval_cmd) cmd_eval_run(eval);
    else if (*serve_cmd) cmd_serve(serve);
    else if (*rec_cmd) cmd_recommend(rec);
  } catch (const std::exception& e) {
    std::cerr << "rtrec: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace rtrec
