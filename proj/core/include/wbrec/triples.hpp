#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "wbrec/common.hpp"
#include "wbrec/corpus.hpp"

namespace wbrec {

/// Two distinct items bought together by one user in one basket.
struct Triple {
  UserId user = 0;
  ItemId item_a = 0;
  ItemId item_b = 0;

  friend bool operator==(const Triple&, const Triple&) = default;
};

/// Draws `count` triples: a basket uniformly among those with >= 2 items,
/// then an ordered pair of distinct items uniformly within it.
std::vector<Triple> sample_triples(const TransactionLog& log, std::size_t count, std::uint64_t seed);

/// Log-uniform (Zipf) distribution over frequency ranks:
///   P(r) = (log(r + 2) - log(r + 1)) / log(N + 1),  r in [0, N).
/// Rank 0 is the most frequent id of the FrequencyTable it was built from.
class ZipfSampler {
 public:
  explicit ZipfSampler(const FrequencyTable& freq);

  std::size_t size() const { return rank_to_id_.size(); }

  /// Probability of the id at frequency rank `rank`.
  double rank_probability(std::size_t rank) const;
  /// Probability of drawing dense id `id`.
  double probability(std::uint32_t id) const { return rank_probability(id_to_rank_.at(id)); }

  std::uint32_t sample(Rng& rng) const;
  std::uint32_t id_at_rank(std::size_t rank) const { return rank_to_id_[rank]; }

 private:
  std::vector<std::uint32_t> rank_to_id_;
  std::vector<std::uint32_t> id_to_rank_;
  double log_n_plus_1_ = 0.0;
};

ZipfSampler make_zipf_sampler(const FrequencyTable& freq);

/// k draws from `sampler`, redrawing any draw equal to `exclude` (pass kNoId
/// to disable). Duplicates among the k draws are allowed.
std::vector<std::uint32_t> sample_negatives(const ZipfSampler& sampler, std::size_t k,
                                            std::uint32_t exclude, Rng& rng);

/// Triple cache: magic "T2VT", version u32, count u64, then count records of
/// three u32 (user, item_a, item_b), little-endian.
void save_triples(std::span<const Triple> triples, const std::filesystem::path& path);
std::vector<Triple> load_triples(const std::filesystem::path& path);

}  // namespace wbrec
