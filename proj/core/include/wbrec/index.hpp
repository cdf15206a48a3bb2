#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "wbrec/common.hpp"
#include "wbrec/model.hpp"

namespace wbrec {

enum class Backend : std::uint32_t { exact = 0, approximate = 1 };

/// Catalog entry layout. symmetric: [q_j q_j p_j p_j] scored against
/// [p_i h_u q_i h_u]. asymmetric: [q_j q_j] scored against [p_i h_u].
enum class CatalogLayout : std::uint32_t { symmetric = 0, asymmetric = 1 };

std::string_view to_string(Backend backend);
Backend parse_backend(std::string_view name);
std::string_view to_string(CatalogLayout layout);

/// Navigable small-world graph parameters.
struct GraphParams {
  std::uint32_t M = 16;                 ///< links per node on upper layers (2M on the base layer)
  std::uint32_t ef_construction = 200;  ///< build beam width
  std::uint32_t ef_search = 100;        ///< default query beam width
  std::uint64_t seed = 42;              ///< level assignment
};

struct QueryVector {
  std::vector<float> values;
  std::optional<UserId> user;  ///< empty for anonymous queries
  ItemId anchor = kNoId;       ///< kNoId for basket-average queries
  CatalogLayout layout = CatalogLayout::symmetric;
};

/// [p_i h_u q_i h_u]
QueryVector make_query_vector(const TripleModel& model, UserId u, ItemId i);
/// [p_i 0 q_i 0]
QueryVector make_query_vector_anonymous(const TripleModel& model, ItemId i);
/// [p_i h_u], for the [q_j q_j] catalog.
QueryVector make_query_vector_asymmetric(const TripleModel& model, UserId u, ItemId i);
/// [p_i 0], for the [q_j q_j] catalog: ranks by p_i.q_j alone.
QueryVector make_query_vector_asymmetric_anonymous(const TripleModel& model, ItemId i);
/// Query built from the mean p and mean q over `items` instead of one anchor.
QueryVector make_basket_average_query(const TripleModel& model, std::optional<UserId> u,
                                      std::span<const ItemId> items, CatalogLayout layout);

struct ScoredItem {
  ItemId item = 0;
  float score = 0.0f;

  friend bool operator==(const ScoredItem&, const ScoredItem&) = default;
};
using RankedList = std::vector<ScoredItem>;

/// Ranking order used everywhere: descending score, then ascending id.
inline bool ranks_before(const ScoredItem& a, const ScoredItem& b) {
  return a.score > b.score || (a.score == b.score && a.item < b.item);
}

/// Inner product with a fixed summation order shared by every backend.
float inner_product(const float* a, const float* b, std::size_t dim);

class InnerProductGraph;

/// Per-item catalog vectors with exact or approximate top-k inner-product
/// retrieval. Immutable after build; const member functions are safe to call
/// from many threads.
class CatalogIndex {
 public:
  CatalogIndex();
  ~CatalogIndex();
  CatalogIndex(CatalogIndex&&) noexcept;
  CatalogIndex& operator=(CatalogIndex&&) noexcept;

  /// Entry j is [q_j q_j p_j p_j] (symmetric) or [q_j q_j] (asymmetric).
  static CatalogIndex build(const TripleModel& model, Backend backend,
                            CatalogLayout layout = CatalogLayout::symmetric, GraphParams params = {});

  /// Index over arbitrary row-major vectors; entry j is item j.
  static CatalogIndex from_vectors(std::size_t count, std::size_t dim, std::vector<float> vectors,
                                   Backend backend, GraphParams params = {},
                                   CatalogLayout layout = CatalogLayout::symmetric);

  /// Up to k items outside `exclude` (sorted ascending), best first.
  /// `ef_search` overrides the default beam width of the approximate backend.
  RankedList topk(std::span<const float> query, std::size_t k, std::span<const ItemId> exclude = {},
                  std::optional<std::uint32_t> ef_search = std::nullopt) const;
  RankedList topk(const QueryVector& query, std::size_t k, std::span<const ItemId> exclude = {},
                  std::optional<std::uint32_t> ef_search = std::nullopt) const;

  /// Same results as mapping topk over `queries`. The exact backend scores
  /// all queries per cache block of the catalog; the approximate backend
  /// fans queries out to `threads` workers.
  std::vector<RankedList> batch_topk(std::span<const QueryVector> queries, std::size_t k,
                                     std::span<const ItemId> exclude = {}, std::size_t threads = 1,
                                     std::optional<std::uint32_t> ef_search = std::nullopt) const;

  std::size_t size() const { return count_; }
  std::size_t dim() const { return dim_; }
  Backend backend() const { return backend_; }
  CatalogLayout layout() const { return layout_; }
  const GraphParams& params() const { return params_; }
  std::span<const float> entry(ItemId j) const { return {vectors_.data() + std::size_t{j} * dim_, dim_}; }
  const std::vector<float>& vectors() const { return vectors_; }

  /// Index file: magic "T2VI", version u32, backend u32, layout u32, n u64,
  /// dim u32, M u32, efc u32, efs u32, seed u64, vectors f32, then graph
  /// adjacency for the approximate backend.
  void save(const std::filesystem::path& path) const;
  static CatalogIndex load(const std::filesystem::path& path);

 private:
  RankedList exact_topk(std::span<const float> query, std::size_t k, std::span<const ItemId> exclude) const;
  std::vector<RankedList> exact_batch(std::span<const QueryVector> queries, std::size_t k,
                                      std::span<const ItemId> exclude) const;

  std::size_t count_ = 0;
  std::size_t dim_ = 0;
  Backend backend_ = Backend::exact;
  CatalogLayout layout_ = CatalogLayout::symmetric;
  GraphParams params_;
  std::vector<float> vectors_;
  std::unique_ptr<InnerProductGraph> graph_;
};

/// Concatenated catalog vectors for `model` without building an index.
std::vector<float> catalog_vectors(const TripleModel& model, CatalogLayout layout);

}  // namespace wbrec
