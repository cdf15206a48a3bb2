#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "wbrec/index.hpp"

namespace wbrec {

/// Hierarchical navigable small-world graph searched by raw inner product.
/// Construction works in a lifted space where every vector gets an extra
/// coordinate sqrt(R^2 - |x|^2), R the largest norm. All lifted vectors share
/// one norm, so link similarity there is a proper metric, and queries (lifted
/// with 0) keep their inner-product scores. Nodes are item ids; vectors live
/// in the owning CatalogIndex.
class InnerProductGraph {
 public:
  InnerProductGraph(const float* vectors, std::size_t count, std::size_t dim, const GraphParams& params);

  /// Inserts every vector in id order. Single-threaded and deterministic.
  void build();

  /// The `want` best candidates found with beam width max(ef, want), best
  /// first. Caller filters exclusions.
  RankedList search(const float* query, std::size_t want, std::size_t ef) const;

  void save(std::ostream& out) const;
  static InnerProductGraph load(std::istream& in, const float* vectors, std::size_t count, std::size_t dim,
                                const GraphParams& params);

  /// Test hook: neighbours of `node` on `level`.
  std::span<const std::uint32_t> neighbours(std::uint32_t node, std::uint32_t level) const;
  std::uint32_t level_of(std::uint32_t node) const { return levels_[node]; }
  std::uint32_t entry_point() const { return entry_; }

 private:
  struct Candidate {
    float score;
    std::uint32_t id;
  };

  float score(const float* query, std::uint32_t id) const { return inner_product(query, vector(id), dim_); }
  float link_score(std::uint32_t a, std::uint32_t b) const {
    return inner_product(vector(a), vector(b), dim_) + lift_[a] * lift_[b];
  }
  const float* vector(std::uint32_t id) const { return vectors_ + std::size_t{id} * dim_; }
  std::size_t max_links(std::uint32_t level) const { return level == 0 ? 2 * params_.M : params_.M; }
  std::vector<std::uint32_t>& links(std::uint32_t node, std::uint32_t level);
  const std::vector<std::uint32_t>& links(std::uint32_t node, std::uint32_t level) const;

  template <typename Score>
  std::uint32_t greedy_descend(const Score& score_of, std::uint32_t start, std::uint32_t from_level,
                               std::uint32_t to_level) const;
  template <typename Score>
  std::vector<Candidate> beam_search(const Score& score_of, std::uint32_t start, std::size_t ef,
                                     std::uint32_t level) const;
  /// Diverse subset of `candidates` (best first by link score to the base):
  /// a candidate is kept when it is closer to the base than to every kept
  /// one; pruned candidates then fill any remaining slots.
  std::vector<std::uint32_t> diverse_links(const std::vector<Candidate>& candidates, std::size_t cap) const;
  /// Half the slots from diverse_links, the rest by raw inner product with
  /// `base`. The raw links reach the high-norm items that win most queries.
  std::vector<std::uint32_t> select_links(std::uint32_t base, const std::vector<Candidate>& candidates,
                                          std::size_t cap) const;
  void insert(std::uint32_t node);
  void connect(std::uint32_t node, std::uint32_t neighbour, std::uint32_t level);

  const float* vectors_;
  std::size_t count_;
  std::size_t dim_;
  GraphParams params_;
  std::vector<float> lift_;
  std::vector<std::uint32_t> levels_;
  // links_[node][level]
  std::vector<std::vector<std::vector<std::uint32_t>>> links_;
  std::uint32_t entry_ = 0;
  std::uint32_t top_level_ = 0;
  bool empty_ = true;
};

}  // namespace wbrec
