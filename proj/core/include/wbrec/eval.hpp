#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wbrec/corpus.hpp"
#include "wbrec/index.hpp"
#include "wbrec/model.hpp"
#include "wbrec/recommend.hpp"

namespace wbrec {

/// One test basket divided into the inference subset and the held-out items.
struct EvalCase {
  std::optional<UserId> user;
  std::vector<ItemId> input;     ///< sorted
  std::vector<ItemId> held_out;  ///< sorted, disjoint from input
};

struct EvalSplit {
  std::vector<EvalCase> cases;
  std::size_t skipped = 0;  ///< baskets with a single item
};

/// Per basket of size s >= 2: |input| = max(1, floor(fraction * s)), reduced
/// to s - 1 if that would leave nothing held out. Size-1 baskets are skipped.
EvalSplit make_eval_split(const TransactionLog& test, double input_fraction, std::uint64_t seed);

/// |S_K intersect relevant| / |relevant| over the first K recommendations.
double recall_at_k(std::span<const ItemId> recommended, std::span<const ItemId> relevant, std::size_t k);

enum class NdcgMode {
  literal,     ///< sum_p 1[l_p relevant] / log2(p + 1), unnormalized
  normalized,  ///< literal divided by the ideal DCG over min(K, |relevant|) hits
};

double ndcg_at_k(std::span<const ItemId> recommended, std::span<const ItemId> relevant, std::size_t k,
                 NdcgMode mode);

struct MetricsRow {
  std::string strategy;
  double recall = 0.0;
  double ndcg_literal = 0.0;
  double ndcg_normalized = 0.0;
  std::size_t baskets = 0;
  std::size_t skipped = 0;
};

struct MetricsReport {
  std::size_t k = 20;
  std::vector<MetricsRow> rows;

  const MetricsRow& row(std::string_view strategy) const;
  /// strategy,recall_at_K,ndcg_literal_at_K,ndcg_norm_at_K,baskets,skipped
  void write_csv(std::ostream& out) const;
  void write_table(std::ostream& out) const;
};

/// A named recommendation strategy: maps a test case (and K) to a ranked
/// item list. `case_index` lets strategies derive per-basket seeds.
struct Strategy {
  std::string name;
  std::function<std::vector<ItemId>(const EvalCase&, std::size_t k, std::size_t case_index)> run;
};

/// Averages Recall@K and both NDCG variants for every strategy. Baskets are
/// spread over `threads` workers; sums are reduced in case order.
MetricsReport evaluate(std::span<const Strategy> strategies, const EvalSplit& split, std::size_t k,
                       std::size_t threads = 1);

struct EvalOptions {
  std::size_t k = 20;
  Backend backend = Backend::exact;
  GraphParams graph;
  RecommendConfig recommend;
  std::size_t threads = 1;
  /// Subset of standard strategy names; empty means all.
  std::vector<std::string> strategies;
};

/// Names of the built-in strategies, in report order:
///   itempop, triple2vec_np, triple2vec, triple2vec_avg, rtt2vec, rtt2vec_avg
const std::vector<std::string>& standard_strategy_names();

/// Builds the catalogs each strategy needs and evaluates them. Popularity
/// comes from the model's stored training counts.
MetricsReport evaluate_model(const TripleModel& model, const EvalSplit& split, const EvalOptions& options);

struct LatencyRow {
  std::string backend;
  std::size_t basket_size = 0;
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p99_ms = 0.0;
};

struct NamedRecommender {
  std::string backend;
  const Recommender* recommender = nullptr;
};

/// Times Recommender::recommend on random baskets of each size
/// (`repetitions` per size, random known user). Empty when repetitions is 0.
std::vector<LatencyRow> benchmark_latency(std::span<const NamedRecommender> recommenders,
                                          std::span<const std::size_t> basket_sizes, std::size_t repetitions,
                                          std::size_t k, std::uint64_t seed);

/// backend,basket_size,mean_ms,p50_ms,p99_ms
void write_latency_csv(std::span<const LatencyRow> rows, std::ostream& out);

/// Nearest-rank percentile of unsorted samples; q in (0, 1].
double percentile(std::vector<double> samples, double q);

}  // namespace wbrec
