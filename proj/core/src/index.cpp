#include "wbrec/index.hpp"

#include <algorithm>
#include <fstream>
#include <queue>

#include "ip_graph.hpp"
#include "wbrec/binary_io.hpp"
#include "wbrec/parallel.hpp"

namespace wbrec {

std::string_view to_string(Backend backend) {
  return backend == Backend::exact ? "exact" : "approximate";
}

Backend parse_backend(std::string_view name) {
  if (name == "exact") return Backend::exact;
  if (name == "approximate" || name == "approx" || name == "hnsw") return Backend::approximate;
  throw InvalidArgument("unknown backend \"" + std::string(name) + "\" (expected exact or approximate)");
}

std::string_view to_string(CatalogLayout layout) {
  return layout == CatalogLayout::symmetric ? "symmetric" : "asymmetric";
}

float inner_product(const float* a, const float* b, std::size_t dim) {
  // Sixteen independent lanes so the compiler can vectorize without
  // reassociating; the summation order is fixed.
  constexpr std::size_t kLanes = 16;
  float lanes[kLanes] = {};
  std::size_t k = 0;
  for (; k + kLanes <= dim; k += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += a[k + l] * b[k + l];
  }
  for (std::size_t l = 0; k < dim; ++k, ++l) lanes[l] += a[k] * b[k];
  float acc = 0.0f;
  for (float v : lanes) acc += v;
  return acc;
}

namespace {

void append(std::vector<float>& out, std::span<const float> block) { out.insert(out.end(), block.begin(), block.end()); }

void append_zeros(std::vector<float>& out, std::size_t count) { out.insert(out.end(), count, 0.0f); }

}  // namespace

QueryVector make_query_vector(const TripleModel& model, UserId u, ItemId i) {
  check_user(model, u);
  check_item(model, i);
  const auto& t = model.tables;
  QueryVector q;
  q.values.reserve(4 * t.dim);
  append(q.values, t.p(i));
  append(q.values, t.h(u));
  append(q.values, t.q(i));
  append(q.values, t.h(u));
  q.user = u;
  q.anchor = i;
  return q;
}

QueryVector make_query_vector_anonymous(const TripleModel& model, ItemId i) {
  check_item(model, i);
  const auto& t = model.tables;
  QueryVector q;
  q.values.reserve(4 * t.dim);
  append(q.values, t.p(i));
  append_zeros(q.values, t.dim);
  append(q.values, t.q(i));
  append_zeros(q.values, t.dim);
  q.anchor = i;
  return q;
}

QueryVector make_query_vector_asymmetric(const TripleModel& model, UserId u, ItemId i) {
  check_user(model, u);
  check_item(model, i);
  const auto& t = model.tables;
  QueryVector q;
  q.values.reserve(2 * t.dim);
  append(q.values, t.p(i));
  append(q.values, t.h(u));
  q.user = u;
  q.anchor = i;
  q.layout = CatalogLayout::asymmetric;
  return q;
}

QueryVector make_query_vector_asymmetric_anonymous(const TripleModel& model, ItemId i) {
  check_item(model, i);
  const auto& t = model.tables;
  QueryVector q;
  q.values.reserve(2 * t.dim);
  append(q.values, t.p(i));
  append_zeros(q.values, t.dim);
  q.anchor = i;
  q.layout = CatalogLayout::asymmetric;
  return q;
}

QueryVector make_basket_average_query(const TripleModel& model, std::optional<UserId> u,
                                      std::span<const ItemId> items, CatalogLayout layout) {
  if (items.empty()) throw InvalidArgument("basket-average query needs at least one item");
  if (u) check_user(model, *u);
  const auto& t = model.tables;
  const std::size_t d = t.dim;
  std::vector<double> mean_p(d, 0.0), mean_q(d, 0.0);
  for (ItemId i : items) {
    check_item(model, i);
    const auto p = t.p(i);
    const auto q = t.q(i);
    for (std::size_t k = 0; k < d; ++k) {
      mean_p[k] += p[k];
      mean_q[k] += q[k];
    }
  }
  const double inv = 1.0 / static_cast<double>(items.size());
  std::vector<float> p(d), q(d), h(d, 0.0f);
  for (std::size_t k = 0; k < d; ++k) {
    p[k] = static_cast<float>(mean_p[k] * inv);
    q[k] = static_cast<float>(mean_q[k] * inv);
  }
  if (u) h.assign(t.h(*u).begin(), t.h(*u).end());

  QueryVector out;
  out.user = u;
  out.layout = layout;
  append(out.values, p);
  append(out.values, h);
  if (layout == CatalogLayout::symmetric) {
    append(out.values, q);
    append(out.values, h);
  }
  return out;
}

std::vector<float> catalog_vectors(const TripleModel& model, CatalogLayout layout) {
  const auto& t = model.tables;
  const std::size_t blocks = layout == CatalogLayout::symmetric ? 4 : 2;
  std::vector<float> out;
  out.reserve(t.items * blocks * t.dim);
  for (ItemId j = 0; j < t.items; ++j) {
    append(out, t.q(j));
    append(out, t.q(j));
    if (layout == CatalogLayout::symmetric) {
      append(out, t.p(j));
      append(out, t.p(j));
    }
  }
  return out;
}

CatalogIndex::CatalogIndex() = default;
CatalogIndex::~CatalogIndex() = default;
CatalogIndex::CatalogIndex(CatalogIndex&&) noexcept = default;
CatalogIndex& CatalogIndex::operator=(CatalogIndex&&) noexcept = default;

CatalogIndex CatalogIndex::build(const TripleModel& model, Backend backend, CatalogLayout layout,
                                 GraphParams params) {
  const std::size_t blocks = layout == CatalogLayout::symmetric ? 4 : 2;
  return from_vectors(model.item_count(), blocks * model.dim(), catalog_vectors(model, layout), backend, params,
                      layout);
}

CatalogIndex CatalogIndex::from_vectors(std::size_t count, std::size_t dim, std::vector<float> vectors,
                                        Backend backend, GraphParams params, CatalogLayout layout) {
  if (count == 0) throw InvalidArgument("cannot build an index over an empty catalog");
  if (dim == 0 || vectors.size() != count * dim) throw InvalidArgument("catalog vector buffer has the wrong size");
  CatalogIndex index;
  index.count_ = count;
  index.dim_ = dim;
  index.backend_ = backend;
  index.layout_ = layout;
  index.params_ = params;
  index.vectors_ = std::move(vectors);
  if (backend == Backend::approximate) {
    index.graph_ = std::make_unique<InnerProductGraph>(index.vectors_.data(), count, dim, params);
    index.graph_->build();
  }
  return index;
}

namespace {

bool excluded(std::span<const ItemId> exclude, ItemId id) {
  return !exclude.empty() && std::binary_search(exclude.begin(), exclude.end(), id);
}

/// Bounded selection of the k best items under ranks_before.
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) { heap_.reserve(k + 1); }

  void offer(ItemId id, float score) {
    const ScoredItem cand{id, score};
    if (heap_.size() < k_) {
      heap_.push_back(cand);
      std::push_heap(heap_.begin(), heap_.end(), ranks_before);
    } else if (k_ > 0 && ranks_before(cand, heap_.front())) {
      std::pop_heap(heap_.begin(), heap_.end(), ranks_before);
      heap_.back() = cand;
      std::push_heap(heap_.begin(), heap_.end(), ranks_before);
    }
  }

  RankedList take() {
    std::sort_heap(heap_.begin(), heap_.end(), ranks_before);
    return std::move(heap_);
  }

 private:
  std::size_t k_;
  std::vector<ScoredItem> heap_;  // worst on top
};

std::vector<ItemId> sorted_unique(std::span<const ItemId> ids) {
  std::vector<ItemId> out(ids.begin(), ids.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

RankedList CatalogIndex::exact_topk(std::span<const float> query, std::size_t k,
                                    std::span<const ItemId> exclude) const {
  TopK best(std::min(k, count_));
  const float* q = query.data();
  for (std::size_t j = 0; j < count_; ++j) {
    const auto id = static_cast<ItemId>(j);
    if (excluded(exclude, id)) continue;
    best.offer(id, inner_product(q, vectors_.data() + j * dim_, dim_));
  }
  return best.take();
}

std::vector<RankedList> CatalogIndex::exact_batch(std::span<const QueryVector> queries, std::size_t k,
                                                  std::span<const ItemId> exclude) const {
  // Blocks of catalog rows sized to stay cache-resident while every query
  // in the batch is scored against them.
  constexpr std::size_t kBlockBytes = 256 * 1024;
  const std::size_t block = std::max<std::size_t>(16, kBlockBytes / (dim_ * sizeof(float)));
  std::vector<TopK> best;
  best.reserve(queries.size());
  for (std::size_t b = 0; b < queries.size(); ++b) best.emplace_back(std::min(k, count_));
  for (std::size_t start = 0; start < count_; start += block) {
    const std::size_t stop = std::min(count_, start + block);
    for (std::size_t b = 0; b < queries.size(); ++b) {
      const float* q = queries[b].values.data();
      for (std::size_t j = start; j < stop; ++j) {
        const auto id = static_cast<ItemId>(j);
        if (excluded(exclude, id)) continue;
        best[b].offer(id, inner_product(q, vectors_.data() + j * dim_, dim_));
      }
    }
  }
  std::vector<RankedList> out;
  out.reserve(queries.size());
  for (auto& b : best) out.push_back(b.take());
  return out;
}

RankedList CatalogIndex::topk(std::span<const float> query, std::size_t k, std::span<const ItemId> exclude,
                              std::optional<std::uint32_t> ef_search) const {
  if (k < 1) throw InvalidArgument("k must be >= 1");
  if (query.size() != dim_) {
    throw InvalidArgument("query has dimension " + std::to_string(query.size()) + ", index expects " +
                          std::to_string(dim_));
  }
  const auto skip = sorted_unique(exclude);
  if (backend_ == Backend::exact) return exact_topk(query, k, skip);

  const std::size_t want = std::min(count_, k + skip.size());
  auto found = graph_->search(query.data(), want, ef_search.value_or(params_.ef_search));
  RankedList out;
  out.reserve(std::min(k, found.size()));
  for (const auto& c : found) {
    if (excluded(skip, c.item)) continue;
    out.push_back(c);
    if (out.size() == k) break;
  }
  return out;
}

RankedList CatalogIndex::topk(const QueryVector& query, std::size_t k, std::span<const ItemId> exclude,
                              std::optional<std::uint32_t> ef_search) const {
  if (query.layout != layout_) throw InvalidArgument("query layout does not match the catalog layout");
  return topk(std::span<const float>(query.values), k, exclude, ef_search);
}

std::vector<RankedList> CatalogIndex::batch_topk(std::span<const QueryVector> queries, std::size_t k,
                                                 std::span<const ItemId> exclude, std::size_t threads,
                                                 std::optional<std::uint32_t> ef_search) const {
  if (k < 1) throw InvalidArgument("k must be >= 1");
  for (const auto& q : queries) {
    if (q.layout != layout_ || q.values.size() != dim_) {
      throw InvalidArgument("query does not match the catalog layout or dimension");
    }
  }
  if (backend_ == Backend::exact) return exact_batch(queries, k, sorted_unique(exclude));

  std::vector<RankedList> out(queries.size());
  parallel_chunks(queries.size(), threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t b = begin; b < end; ++b) out[b] = topk(queries[b], k, exclude, ef_search);
  });
  return out;
}

namespace {
constexpr std::string_view kIndexMagic = "T2VI";
constexpr std::uint32_t kIndexVersion = 1;
}  // namespace

void CatalogIndex::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  io::write_magic(out, kIndexMagic);
  io::write_le(out, kIndexVersion);
  io::write_le(out, static_cast<std::uint32_t>(backend_));
  io::write_le(out, static_cast<std::uint32_t>(layout_));
  io::write_le<std::uint64_t>(out, count_);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(dim_));
  io::write_le(out, params_.M);
  io::write_le(out, params_.ef_construction);
  io::write_le(out, params_.ef_search);
  io::write_le(out, params_.seed);
  io::write_floats(out, vectors_);
  if (graph_) graph_->save(out);
  if (!out) throw Error("write failed for " + path.string());
}

CatalogIndex CatalogIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  io::expect_magic(in, kIndexMagic);
  const auto version = io::read_le<std::uint32_t>(in, "index version");
  if (version != kIndexVersion) throw FormatError("unsupported index version " + std::to_string(version));
  const auto backend = io::read_le<std::uint32_t>(in, "backend tag");
  const auto layout = io::read_le<std::uint32_t>(in, "layout tag");
  if (backend > 1 || layout > 1) throw FormatError("unknown backend or layout tag in index file");

  CatalogIndex index;
  index.backend_ = static_cast<Backend>(backend);
  index.layout_ = static_cast<CatalogLayout>(layout);
  index.count_ = io::read_le<std::uint64_t>(in, "entry count");
  index.dim_ = io::read_le<std::uint32_t>(in, "dimension");
  index.params_.M = io::read_le<std::uint32_t>(in, "M");
  index.params_.ef_construction = io::read_le<std::uint32_t>(in, "ef_construction");
  index.params_.ef_search = io::read_le<std::uint32_t>(in, "ef_search");
  index.params_.seed = io::read_le<std::uint64_t>(in, "seed");
  if (index.count_ == 0 || index.dim_ == 0) throw FormatError("index file describes an empty catalog");
  index.vectors_.resize(index.count_ * index.dim_);
  io::read_floats(in, index.vectors_, "catalog vectors");
  if (index.backend_ == Backend::approximate) {
    index.graph_ = std::make_unique<InnerProductGraph>(
        InnerProductGraph::load(in, index.vectors_.data(), index.count_, index.dim_, index.params_));
  }
  return index;
}

}  // namespace wbrec
