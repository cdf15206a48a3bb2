// wbrec: command-line pipeline for the within-basket recommender.
//
//   wbrec synth        planted-pair corpus CSV
//   wbrec ingest       CSV -> corpus cache (optionally split train/test)
//   wbrec train        corpus -> model file
//   wbrec build-index  model -> index file
//   wbrec eval         model + test corpus -> metrics CSV
//   wbrec bench        model -> latency CSV
//   wbrec serve        HTTP service
//   wbrec recommend    one-shot query

#include <pthread.h>

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "wbrec/corpus.hpp"
#include "wbrec/eval.hpp"
#include "wbrec/index.hpp"
#include "wbrec/service.hpp"
#include "wbrec/synthetic.hpp"
#include "wbrec/train.hpp"
#include "wbrec/triples.hpp"

namespace {

using namespace wbrec;
namespace fs = std::filesystem;

/// Raised for user mistakes that deserve a hint rather than a stack of context.
struct UsageError : Error {
  using Error::Error;
};

void require_file(const fs::path& path, std::string_view what, std::string_view hint) {
  if (path.empty()) throw UsageError(std::string(what) + " path is required; " + std::string(hint));
  if (!fs::exists(path)) {
    throw UsageError(std::string(what) + " not found at " + path.string() + "; " + std::string(hint));
  }
}

std::ostream& open_output(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path, std::ios::trunc);
  if (!file) throw Error("cannot write " + path);
  return file;
}

GraphParams graph_params(std::uint32_t m, std::uint32_t efc, std::uint32_t efs, std::uint64_t seed) {
  GraphParams p;
  p.M = m;
  p.ef_construction = efc;
  p.ef_search = efs;
  p.seed = seed;
  return p;
}

void add_graph_options(CLI::App* cmd, std::uint32_t& m, std::uint32_t& efc, std::uint32_t& efs) {
  cmd->add_option("--M", m, "graph links per node (2M on the base layer)")->capture_default_str();
  cmd->add_option("--ef-construction", efc, "graph build beam width")->capture_default_str();
  cmd->add_option("--ef-search", efs, "graph query beam width")->capture_default_str();
}

/// Maps a test split built over another vocabulary onto the model's ids by
/// external name. Unknown items are dropped; unknown users become anonymous.
EvalSplit remap_split(const EvalSplit& split, const Vocabulary& from, const Vocabulary& to) {
  EvalSplit out;
  out.skipped = split.skipped;
  auto map_items = [&](const std::vector<ItemId>& ids) {
    std::vector<ItemId> mapped;
    for (ItemId i : ids) {
      if (auto id = to.items.find(from.items.external(i))) mapped.push_back(*id);
    }
    std::sort(mapped.begin(), mapped.end());
    return mapped;
  };
  for (const auto& c : split.cases) {
    EvalCase m;
    if (c.user) {
      if (auto u = to.users.find(from.users.external(*c.user))) m.user = *u;
    }
    m.input = map_items(c.input);
    m.held_out = map_items(c.held_out);
    if (m.held_out.empty()) {
      ++out.skipped;
      continue;
    }
    out.cases.push_back(std::move(m));
  }
  return out;
}

bool same_vocabulary(const Vocabulary& a, const Vocabulary& b) {
  return a.items.names() == b.items.names() && a.users.names() == b.users.names();
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> sizes;
  std::stringstream in(text);
  std::string part;
  while (std::getline(in, part, ',')) {
    if (part.empty()) continue;
    sizes.push_back(static_cast<std::size_t>(std::stoul(part)));
  }
  if (sizes.empty()) throw UsageError("--sizes needs at least one basket size");
  return sizes;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Within-basket recommender: train dual item and user embeddings, index them, evaluate and serve."};
  app.set_config("--config", "", "TOML or INI file with option values; sections name subcommands");
  app.require_subcommand(1);
  app.fallthrough();
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  // synth
  auto* synth = app.add_subcommand("synth", "write a planted-pair corpus as CSV");
  PlantedCorpusConfig planted;
  std::string synth_out;
  synth->add_option("-o,--output", synth_out, "CSV path")->required();
  synth->add_option("--pairs", planted.pairs, "complementary item pairs")->capture_default_str();
  synth->add_option("--users", planted.users, "users")->capture_default_str();
  synth->add_option("--pairs-per-user", planted.preferred_pairs_per_user, "preferred pairs per user")
      ->capture_default_str();
  synth->add_option("--mate-probability", planted.full_pair_probability,
                    "probability a chosen pair appears with both mates")
      ->capture_default_str();
  synth->add_option("--seed", planted.seed, "random seed")->capture_default_str();

  // ingest
  auto* ingest = app.add_subcommand("ingest", "parse a basket CSV into a corpus cache");
  std::string ingest_in, ingest_out, ingest_test_out;
  double test_fraction = 0.0;
  std::uint64_t ingest_seed = 1;
  ingest->add_option("-i,--input", ingest_in, "CSV with header user_id,basket_id,item_id")->required();
  ingest->add_option("-o,--output", ingest_out, "corpus cache (training part when splitting)")->required();
  ingest->add_option("--test-fraction", test_fraction, "hold out this fraction of baskets")
      ->check(CLI::Range(0.0, 1.0));
  ingest->add_option("--test-output", ingest_test_out, "corpus cache for the held-out baskets");
  ingest->add_option("--seed", ingest_seed, "split seed")->capture_default_str();

  // train
  auto* train_cmd = app.add_subcommand("train", "train embeddings on a corpus");
  std::string train_corpus, train_out, train_triples_in, train_triples_out, train_loss_csv;
  TrainConfig tc;
  double init_scale = 0.0;
  bool no_user_term = false;
  train_cmd->add_option("-c,--corpus", train_corpus, "corpus CSV or cache")->required();
  train_cmd->add_option("-o,--output", train_out, "model file")->required();
  train_cmd->add_option("--dim", tc.dim, "embedding dimension")->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--learning-rate,--lr", tc.learning_rate, "Adam step size")->capture_default_str();
  train_cmd->add_option("--batch-size", tc.batch_size, "triples per batch")->capture_default_str();
  train_cmd->add_option("--epochs", tc.max_epochs, "passes over the triples")->capture_default_str();
  train_cmd->add_option("--negatives", tc.negatives, "noise draws per target")->capture_default_str();
  train_cmd->add_option("--triples", tc.triples, "triples sampled once per run")->capture_default_str();
  train_cmd->add_option("--init-scale", init_scale, "uniform init half-width (default 0.5/dim)");
  train_cmd->add_flag("--no-user-term", no_user_term, "drop the user-prediction NCE term");
  train_cmd->add_option("--threads", tc.threads, "gradient shards per batch")->capture_default_str();
  train_cmd->add_option("--triples-in", train_triples_in, "read triples from this cache instead of sampling");
  train_cmd->add_option("--triples-out", train_triples_out, "write the sampled triples to this cache");
  train_cmd->add_option("--loss-csv", train_loss_csv, "write epoch,loss,seconds rows here");
  train_cmd->add_option("--seed", tc.seed, "random seed")->capture_default_str();

  // build-index
  auto* index_cmd = app.add_subcommand("build-index", "build a catalog index from a model");
  std::string index_model, index_out, index_backend = "approximate", index_layout = "symmetric";
  std::uint32_t gm = 16, gefc = 200, gefs = 100;
  std::uint64_t index_seed = 42;
  index_cmd->add_option("-m,--model", index_model, "model file")->required();
  index_cmd->add_option("-o,--output", index_out, "index file")->required();
  index_cmd->add_option("--backend", index_backend, "exact or approximate")->capture_default_str();
  index_cmd->add_option("--layout", index_layout, "symmetric or asymmetric")->capture_default_str();
  add_graph_options(index_cmd, gm, gefc, gefs);
  index_cmd->add_option("--seed", index_seed, "graph level seed")->capture_default_str();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Recall@K and NDCG@K on held-out baskets");
  std::string eval_model, eval_test, eval_out, eval_backend = "exact", eval_strategies;
  EvalOptions eo;
  double input_fraction = 0.8;
  std::uint64_t eval_seed = 1;
  std::uint32_t em = 16, eefc = 200, eefs = 200;
  eval_cmd->add_option("-m,--model", eval_model, "model file");
  eval_cmd->add_option("-t,--test", eval_test, "test corpus CSV or cache")->required();
  eval_cmd->add_option("-o,--output", eval_out, "metrics CSV (stdout when omitted)");
  eval_cmd->add_option("-k,--k", eo.k, "cutoff K")->capture_default_str();
  eval_cmd->add_option("--input-fraction", input_fraction, "share of each basket given as input")
      ->capture_default_str();
  eval_cmd->add_option("--backend", eval_backend, "exact or approximate")->capture_default_str();
  add_graph_options(eval_cmd, em, eefc, eefs);
  eval_cmd->add_option("--anchor-threshold", eo.recommend.anchor_threshold, "sample anchors above this size")
      ->capture_default_str();
  eval_cmd->add_option("--strategies", eval_strategies, "comma-separated subset of the built-in strategies");
  eval_cmd->add_option("--threads", eo.threads, "evaluation workers")->capture_default_str();
  eval_cmd->add_option("--seed", eval_seed, "split and anchor seed")->capture_default_str();

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "recommend() latency per backend and basket size");
  std::string bench_model, bench_out, bench_sizes = "1,5,10,20", bench_backends = "exact,approximate";
  std::size_t bench_reps = 200, bench_k = 10;
  std::uint64_t bench_seed = 1;
  bool bench_sequential = false;
  std::uint32_t bm = 16, befc = 200, befs = 100;
  bench_cmd->add_option("-m,--model", bench_model, "model file")->required();
  bench_cmd->add_option("-o,--output", bench_out, "latency CSV (stdout when omitted)");
  bench_cmd->add_option("--sizes", bench_sizes, "comma-separated basket sizes")->capture_default_str();
  bench_cmd->add_option("--backends", bench_backends, "comma-separated backends")->capture_default_str();
  bench_cmd->add_option("--repetitions", bench_reps, "requests per size")->capture_default_str();
  bench_cmd->add_option("-k,--k", bench_k, "recommendations per request")->capture_default_str();
  bench_cmd->add_flag("--sequential", bench_sequential, "one topk call per anchor instead of a batch");
  add_graph_options(bench_cmd, bm, befc, befs);
  bench_cmd->add_option("--seed", bench_seed, "basket seed")->capture_default_str();

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "HTTP recommendation service");
  ServiceConfig sc;
  std::string serve_post, seed_mode = "fixed";
  long long timeout_ms = 5000;
  std::uint32_t serve_efs = 0;
  serve_cmd->add_option("-m,--model", sc.model_path, "model file (env WBREC_MODEL)");
  serve_cmd->add_option("-x,--index", sc.index_path, "symmetric index file (env WBREC_INDEX)");
  serve_cmd->add_option("--post-process", serve_post, "post-processing JSON (env WBREC_POSTPROCESS)");
  serve_cmd->add_option("--host", sc.host, "listen address (env WBREC_HOST)")->capture_default_str();
  serve_cmd->add_option("--port", sc.port, "listen port, 0 for any (env WBREC_PORT)")->capture_default_str();
  serve_cmd->add_option("--default-k", sc.default_k, "k when the request omits it")->capture_default_str();
  serve_cmd->add_option("--anchor-threshold", sc.anchor_threshold, "sample anchors above this size")
      ->capture_default_str();
  serve_cmd->add_option("--seed-mode", seed_mode, "fixed or per-request anchor seeds")
      ->check(CLI::IsMember({"fixed", "per-request"}))
      ->capture_default_str();
  serve_cmd->add_option("--timeout-ms", timeout_ms, "socket read/write timeout")->capture_default_str();
  serve_cmd->add_option("--ef-search", serve_efs, "override the index search beam width");
  serve_cmd->add_option("--seed", sc.seed, "anchor sampling seed")->capture_default_str();

  // recommend
  auto* rec_cmd = app.add_subcommand("recommend", "one recommendation request, printed as JSON");
  std::string rec_model, rec_index, rec_user, rec_basket, rec_post;
  std::size_t rec_k = 10;
  std::uint64_t rec_seed = 7;
  rec_cmd->add_option("-m,--model", rec_model, "model file")->required();
  rec_cmd->add_option("-x,--index", rec_index, "symmetric index file")->required();
  rec_cmd->add_option("-u,--user", rec_user, "external user id");
  rec_cmd->add_option("-b,--basket", rec_basket, "comma-separated external item ids");
  rec_cmd->add_option("-k,--k", rec_k, "recommendations")->capture_default_str();
  rec_cmd->add_option("--post-process", rec_post, "post-processing JSON");
  rec_cmd->add_option("--seed", rec_seed, "anchor sampling seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
  }

  try {
    if (*synth) {
      const auto log = make_planted_corpus(planted);
      write_baskets_csv(log, synth_out);
      std::cerr << "wrote " << log.baskets.size() << " baskets, " << log.vocabulary.item_count() << " items, "
                << log.vocabulary.user_count() << " users to " << synth_out << "\n";
    } else if (*ingest) {
      const auto log = load_baskets(fs::path(ingest_in));
      if (test_fraction > 0.0) {
        if (ingest_test_out.empty()) throw UsageError("--test-fraction needs --test-output");
        const auto split = split_holdout(log, test_fraction, ingest_seed);
        save_corpus(split.train, ingest_out);
        save_corpus(split.test, ingest_test_out);
        std::cerr << "train " << split.train.baskets.size() << " baskets -> " << ingest_out << ", test "
                  << split.test.baskets.size() << " baskets -> " << ingest_test_out << "\n";
      } else {
        save_corpus(log, ingest_out);
        std::cerr << log.baskets.size() << " baskets, " << log.vocabulary.item_count() << " items, "
                  << log.vocabulary.user_count() << " users -> " << ingest_out << "\n";
      }
    } else if (*train_cmd) {
      require_file(train_corpus, "corpus", "create one with `wbrec ingest` or pass a CSV");
      if (init_scale > 0.0) tc.init_scale = init_scale;
      tc.user_term = !no_user_term;
      const auto log = load_corpus_any(train_corpus);
      std::ofstream loss_file;
      if (!train_loss_csv.empty()) {
        loss_file.open(train_loss_csv, std::ios::trunc);
        if (!loss_file) throw Error("cannot write " + train_loss_csv);
        loss_file << "epoch,loss,seconds\n";
      }
      auto report = [&](const EpochStats& s) {
        std::cerr << "epoch " << s.epoch + 1 << "/" << tc.max_epochs << " loss " << s.mean_loss << " ("
                  << s.seconds << "s)\n";
        if (loss_file) loss_file << s.epoch + 1 << ',' << s.mean_loss << ',' << s.seconds << '\n';
      };
      std::vector<Triple> triples;
      if (!train_triples_in.empty()) {
        require_file(train_triples_in, "triple cache", "write one with --triples-out");
        triples = load_triples(train_triples_in);
      } else {
        tc.validate();
        triples = sample_triples(log, tc.triples, derive_train_seeds(tc.seed).triples);
      }
      if (!train_triples_out.empty()) save_triples(triples, train_triples_out);
      const auto model = train(log, std::move(triples), tc, report);
      save_model(model, train_out);
      std::cerr << "model n=" << model.item_count() << " m=" << model.user_count() << " d=" << model.dim()
                << " -> " << train_out << "\n";
    } else if (*index_cmd) {
      require_file(index_model, "model", "train one with `wbrec train`");
      const auto model = load_model(index_model);
      CatalogLayout layout;
      if (index_layout == "symmetric") {
        layout = CatalogLayout::symmetric;
      } else if (index_layout == "asymmetric") {
        layout = CatalogLayout::asymmetric;
      } else {
        throw UsageError("--layout must be symmetric or asymmetric");
      }
      const auto idx =
          CatalogIndex::build(model, parse_backend(index_backend), layout, graph_params(gm, gefc, gefs, index_seed));
      idx.save(index_out);
      std::cerr << to_string(idx.backend()) << " " << to_string(idx.layout()) << " index, " << idx.size()
                << " entries of dimension " << idx.dim() << " -> " << index_out << "\n";
    } else if (*eval_cmd) {
      require_file(eval_model, "model", "train one first with `wbrec train --corpus <train> --output <model>`");
      require_file(eval_test, "test corpus", "create one with `wbrec ingest --test-fraction`");
      const auto model = load_model(eval_model);
      const auto test = load_corpus_any(eval_test);
      auto split = make_eval_split(test, input_fraction, eval_seed);
      if (!same_vocabulary(test.vocabulary, model.vocabulary)) {
        split = remap_split(split, test.vocabulary, model.vocabulary);
      }
      eo.backend = parse_backend(eval_backend);
      eo.graph = graph_params(em, eefc, eefs, 42);
      eo.recommend.seed = eval_seed;
      if (!eval_strategies.empty()) {
        std::stringstream in(eval_strategies);
        std::string name;
        while (std::getline(in, name, ',')) {
          if (!name.empty()) eo.strategies.push_back(name);
        }
      }
      const auto report = evaluate_model(model, split, eo);
      std::ofstream file;
      report.write_csv(open_output(eval_out, file));
      report.write_table(std::cerr);
    } else if (*bench_cmd) {
      require_file(bench_model, "model", "train one with `wbrec train`");
      const auto model = load_model(bench_model);
      const auto sizes = parse_sizes(bench_sizes);
      std::vector<std::unique_ptr<CatalogIndex>> indexes;
      std::vector<std::unique_ptr<Recommender>> recs;
      std::vector<NamedRecommender> named;
      std::stringstream in(bench_backends);
      std::string name;
      while (std::getline(in, name, ',')) {
        if (name.empty()) continue;
        const auto backend = parse_backend(name);
        indexes.push_back(std::make_unique<CatalogIndex>(
            CatalogIndex::build(model, backend, CatalogLayout::symmetric, graph_params(bm, befc, befs, 42))));
        RecommendConfig rc;
        rc.batch_lookup = !bench_sequential;
        rc.seed = bench_seed;
        recs.push_back(std::make_unique<Recommender>(model, *indexes.back(), rc));
        named.push_back({std::string(to_string(backend)), recs.back().get()});
      }
      const auto rows = benchmark_latency(named, sizes, bench_reps, bench_k, bench_seed);
      std::ofstream file;
      write_latency_csv(rows, open_output(bench_out, file));
      for (const auto& exact : rows) {
        if (exact.backend != "exact") continue;
        for (const auto& approx : rows) {
          if (approx.backend == "approximate" && approx.basket_size == exact.basket_size && approx.mean_ms > 0) {
            std::cerr << "basket " << exact.basket_size << ": approximate is " << exact.mean_ms / approx.mean_ms
                      << "x faster than exact (mean)\n";
          }
        }
      }
    } else if (*serve_cmd) {
      sc.apply_env_overrides();
      if (!serve_post.empty()) sc.post_process_path = serve_post;
      sc.seed_mode = seed_mode == "fixed" ? SeedMode::fixed : SeedMode::per_request;
      sc.request_timeout = std::chrono::milliseconds(timeout_ms);
      if (serve_efs > 0) sc.ef_search = serve_efs;
      // Block the shutdown signals in every thread and take them synchronously here.
      sigset_t signals;
      sigemptyset(&signals);
      sigaddset(&signals, SIGINT);
      sigaddset(&signals, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &signals, nullptr);
      RecommendationService service(sc);
      service.start();
      std::cerr << "serving on " << sc.host << ":" << service.port() << " (GET /v1/health, POST /v1/recommendations)"
                << std::endl;
      int received = 0;
      sigwait(&signals, &received);
      std::cerr << "shutting down\n";
      service.stop();
    } else if (*rec_cmd) {
      ServiceConfig cfg;
      cfg.model_path = rec_model;
      cfg.index_path = rec_index;
      if (!rec_post.empty()) cfg.post_process_path = rec_post;
      cfg.seed = rec_seed;
      cfg.max_k = std::max<std::size_t>(cfg.max_k, rec_k);
      RecommendationService service(cfg);
      service.load();
      nlohmann::json request;
      request["basket"] = nlohmann::json::array();
      std::stringstream in(rec_basket);
      std::string item;
      while (std::getline(in, item, ',')) {
        if (!item.empty()) request["basket"].push_back(item);
      }
      if (!rec_user.empty()) request["user_id"] = rec_user;
      request["k"] = rec_k;
      const auto result = service.handle_recommend(request.dump());
      std::cout << nlohmann::json::parse(result.body).dump(2) << "\n";
      if (result.status != 200) return 1;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
