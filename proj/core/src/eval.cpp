#include "wbrec/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <memory>
#include <numeric>
#include <ostream>

#include "wbrec/parallel.hpp"

namespace wbrec {

EvalSplit make_eval_split(const TransactionLog& test, double input_fraction, std::uint64_t seed) {
  if (!(input_fraction > 0.0 && input_fraction < 1.0)) throw InvalidArgument("input fraction must lie in (0, 1)");
  EvalSplit split;
  Rng rng(seed);
  for (const auto& basket : test.baskets) {
    const std::size_t s = basket.items.size();
    if (s < 2) {
      ++split.skipped;
      continue;
    }
    std::size_t keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(input_fraction * static_cast<double>(s))));
    if (keep >= s) keep = s - 1;
    std::vector<ItemId> items = basket.items;
    for (std::size_t i = 0; i < keep; ++i) std::swap(items[i], items[i + rng.uniform_index(s - i)]);
    EvalCase c;
    c.user = basket.user;
    c.input.assign(items.begin(), items.begin() + static_cast<long>(keep));
    c.held_out.assign(items.begin() + static_cast<long>(keep), items.end());
    std::sort(c.input.begin(), c.input.end());
    std::sort(c.held_out.begin(), c.held_out.end());
    split.cases.push_back(std::move(c));
  }
  return split;
}

namespace {

bool contains(std::span<const ItemId> set, ItemId id) { return std::find(set.begin(), set.end(), id) != set.end(); }

}  // namespace

double recall_at_k(std::span<const ItemId> recommended, std::span<const ItemId> relevant, std::size_t k) {
  if (k < 1) throw InvalidArgument("K must be >= 1");
  if (relevant.empty()) throw InvalidArgument("Recall@K is undefined for an empty relevant set");
  const std::size_t top = std::min(k, recommended.size());
  std::vector<ItemId> seen;
  std::size_t hits = 0;
  for (std::size_t p = 0; p < top; ++p) {
    const ItemId id = recommended[p];
    if (contains(seen, id)) continue;
    seen.push_back(id);
    if (contains(relevant, id)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double ndcg_at_k(std::span<const ItemId> recommended, std::span<const ItemId> relevant, std::size_t k,
                 NdcgMode mode) {
  if (k < 1) throw InvalidArgument("K must be >= 1");
  const std::size_t top = std::min(k, recommended.size());
  double dcg = 0.0;
  std::vector<ItemId> seen;
  for (std::size_t p = 1; p <= top; ++p) {
    const ItemId id = recommended[p - 1];
    if (contains(seen, id)) continue;
    seen.push_back(id);
    if (contains(relevant, id)) dcg += 1.0 / std::log2(static_cast<double>(p) + 1.0);
  }
  if (mode == NdcgMode::literal) return dcg;
  const std::size_t ideal_hits = std::min(k, relevant.size());
  double ideal = 0.0;
  for (std::size_t p = 1; p <= ideal_hits; ++p) ideal += 1.0 / std::log2(static_cast<double>(p) + 1.0);
  return ideal > 0.0 ? dcg / ideal : 0.0;
}

const MetricsRow& MetricsReport::row(std::string_view strategy) const {
  for (const auto& r : rows) {
    if (r.strategy == strategy) return r;
  }
  throw InvalidArgument("no metrics row for strategy " + std::string(strategy));
}

void MetricsReport::write_csv(std::ostream& out) const {
  out << "strategy,recall_at_" << k << ",ndcg_literal_at_" << k << ",ndcg_norm_at_" << k << ",baskets,skipped\n";
  const auto old_precision = out.precision(6);
  const auto old_flags = out.flags();
  out << std::fixed;
  for (const auto& r : rows) {
    out << r.strategy << ',' << r.recall << ',' << r.ndcg_literal << ',' << r.ndcg_normalized << ',' << r.baskets
        << ',' << r.skipped << '\n';
  }
  out.precision(old_precision);
  out.flags(old_flags);
}

void MetricsReport::write_table(std::ostream& out) const {
  const auto old_flags = out.flags();
  out << std::left << std::setw(16) << "strategy" << std::right << std::setw(12) << ("Recall@" + std::to_string(k))
      << std::setw(14) << ("DCG@" + std::to_string(k)) << std::setw(14) << ("NDCG@" + std::to_string(k))
      << std::setw(10) << "baskets" << std::setw(10) << "skipped" << '\n';
  out << std::fixed << std::setprecision(4);
  for (const auto& r : rows) {
    out << std::left << std::setw(16) << r.strategy << std::right << std::setw(12) << r.recall << std::setw(14)
        << r.ndcg_literal << std::setw(14) << r.ndcg_normalized << std::setw(10) << r.baskets << std::setw(10)
        << r.skipped << '\n';
  }
  out.flags(old_flags);
}

MetricsReport evaluate(std::span<const Strategy> strategies, const EvalSplit& split, std::size_t k,
                       std::size_t threads) {
  if (k < 1) throw InvalidArgument("K must be >= 1");
  if (split.cases.empty()) throw InvalidArgument("no evaluable baskets in the split");
  MetricsReport report;
  report.k = k;
  const std::size_t n = split.cases.size();
  for (const auto& strategy : strategies) {
    struct CaseMetrics {
      double recall, literal, normalized;
    };
    std::vector<CaseMetrics> per_case(n);
    parallel_chunks(n, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
      for (std::size_t c = begin; c < end; ++c) {
        const auto& ec = split.cases[c];
        const auto recs = strategy.run(ec, k, c);
        per_case[c] = {recall_at_k(recs, ec.held_out, k), ndcg_at_k(recs, ec.held_out, k, NdcgMode::literal),
                       ndcg_at_k(recs, ec.held_out, k, NdcgMode::normalized)};
      }
    });
    MetricsRow row;
    row.strategy = strategy.name;
    for (const auto& m : per_case) {
      row.recall += m.recall;
      row.ndcg_literal += m.literal;
      row.ndcg_normalized += m.normalized;
    }
    row.recall /= static_cast<double>(n);
    row.ndcg_literal /= static_cast<double>(n);
    row.ndcg_normalized /= static_cast<double>(n);
    row.baskets = n;
    row.skipped = split.skipped;
    report.rows.push_back(std::move(row));
  }
  return report;
}

const std::vector<std::string>& standard_strategy_names() {
  static const std::vector<std::string> names = {"itempop",        "triple2vec_np", "triple2vec",
                                                 "triple2vec_avg", "rtt2vec",       "rtt2vec_avg"};
  return names;
}

namespace {

std::vector<ItemId> item_ids(const RecommendationSet& set) {
  std::vector<ItemId> out;
  out.reserve(set.entries.size());
  for (const auto& e : set.entries) out.push_back(e.item);
  return out;
}

std::uint64_t case_seed(std::uint64_t base, std::size_t case_index) {
  return base + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(case_index) + 1);
}

}  // namespace

MetricsReport evaluate_model(const TripleModel& model, const EvalSplit& split, const EvalOptions& options) {
  std::vector<std::string> wanted = options.strategies.empty() ? standard_strategy_names() : options.strategies;
  for (const auto& name : wanted) {
    const auto& known = standard_strategy_names();
    if (std::find(known.begin(), known.end(), name) == known.end()) {
      throw InvalidArgument("unknown strategy \"" + name + "\"");
    }
  }
  auto needs = [&](std::initializer_list<const char*> names) {
    return std::any_of(names.begin(), names.end(), [&](const char* n) {
      return std::find(wanted.begin(), wanted.end(), n) != wanted.end();
    });
  };

  std::unique_ptr<CatalogIndex> symmetric, asymmetric;
  if (needs({"rtt2vec", "rtt2vec_avg"})) {
    symmetric = std::make_unique<CatalogIndex>(
        CatalogIndex::build(model, options.backend, CatalogLayout::symmetric, options.graph));
  }
  if (needs({"triple2vec", "triple2vec_np", "triple2vec_avg"})) {
    asymmetric = std::make_unique<CatalogIndex>(
        CatalogIndex::build(model, options.backend, CatalogLayout::asymmetric, options.graph));
  }

  RecommendConfig per_anchor = options.recommend;
  per_anchor.mode = AnchorMode::per_anchor;
  per_anchor.threads = 1;
  RecommendConfig averaged = per_anchor;
  averaged.mode = AnchorMode::basket_average;

  std::vector<std::unique_ptr<Recommender>> owned;
  auto recommender = [&](const CatalogIndex& index, const RecommendConfig& cfg) {
    owned.push_back(std::make_unique<Recommender>(model, index, cfg));
    return owned.back().get();
  };
  auto pipeline = [&](const Recommender* r, bool personalized) {
    return [r, personalized, seed = options.recommend.seed](const EvalCase& c, std::size_t k, std::size_t idx) {
      BasketContext ctx;
      if (personalized) ctx.user = c.user;
      ctx.items = c.input;
      ctx.k = k;
      return item_ids(r->recommend(ctx, case_seed(seed, idx)));
    };
  };

  const FrequencyTable popularity = model.popularity();
  std::vector<Strategy> strategies;
  for (const auto& name : wanted) {
    if (name == "itempop") {
      strategies.push_back({name, [&popularity](const EvalCase& c, std::size_t k, std::size_t) {
                              std::vector<ItemId> out;
                              for (const auto& e : item_pop_recommend(popularity, k, c.input)) out.push_back(e.item);
                              return out;
                            }});
    } else if (name == "triple2vec_np") {
      strategies.push_back({name, pipeline(recommender(*asymmetric, per_anchor), false)});
    } else if (name == "triple2vec") {
      strategies.push_back({name, pipeline(recommender(*asymmetric, per_anchor), true)});
    } else if (name == "triple2vec_avg") {
      strategies.push_back({name, pipeline(recommender(*asymmetric, averaged), true)});
    } else if (name == "rtt2vec") {
      strategies.push_back({name, pipeline(recommender(*symmetric, per_anchor), true)});
    } else if (name == "rtt2vec_avg") {
      strategies.push_back({name, pipeline(recommender(*symmetric, averaged), true)});
    }
  }
  return evaluate(strategies, split, options.k, options.threads);
}

double percentile(std::vector<double> samples, double q) {
  if (samples.empty()) return 0.0;
  std::sort(samples.begin(), samples.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(samples.size())));
  return samples[std::clamp<std::size_t>(rank, 1, samples.size()) - 1];
}

std::vector<LatencyRow> benchmark_latency(std::span<const NamedRecommender> recommenders,
                                          std::span<const std::size_t> basket_sizes, std::size_t repetitions,
                                          std::size_t k, std::uint64_t seed) {
  std::vector<LatencyRow> rows;
  if (repetitions == 0) return rows;
  for (const auto& named : recommenders) {
    const Recommender& rec = *named.recommender;
    const std::size_t n = rec.model().item_count();
    const std::size_t m = rec.model().user_count();
    for (std::size_t size : basket_sizes) {
      if (size == 0 || size > n) throw InvalidArgument("basket size must lie in [1, item count]");
      Rng rng(seed + size);
      std::vector<double> samples;
      samples.reserve(repetitions);
      for (std::size_t r = 0; r < repetitions; ++r) {
        BasketContext ctx;
        ctx.k = k;
        if (m > 0) ctx.user = static_cast<UserId>(rng.uniform_index(m));
        while (ctx.items.size() < size) {
          const auto id = static_cast<ItemId>(rng.uniform_index(n));
          if (std::find(ctx.items.begin(), ctx.items.end(), id) == ctx.items.end()) ctx.items.push_back(id);
        }
        const auto started = std::chrono::steady_clock::now();
        const auto result = rec.recommend(ctx, seed + r);
        const std::chrono::duration<double, std::milli> took = std::chrono::steady_clock::now() - started;
        if (result.k != k) throw Error("unexpected recommendation size");
        samples.push_back(took.count());
      }
      LatencyRow row;
      row.backend = named.backend;
      row.basket_size = size;
      row.mean_ms = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
      row.p50_ms = percentile(samples, 0.50);
      row.p99_ms = percentile(samples, 0.99);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void write_latency_csv(std::span<const LatencyRow> rows, std::ostream& out) {
  out << "backend,basket_size,mean_ms,p50_ms,p99_ms\n";
  const auto old_flags = out.flags();
  const auto old_precision = out.precision(4);
  out << std::fixed;
  for (const auto& r : rows) {
    out << r.backend << ',' << r.basket_size << ',' << r.mean_ms << ',' << r.p50_ms << ',' << r.p99_ms << '\n';
  }
  out.flags(old_flags);
  out.precision(old_precision);
}

}  // namespace wbrec
