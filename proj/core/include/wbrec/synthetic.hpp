#pragma once

#include <cstdint>
#include <filesystem>

#include "wbrec/corpus.hpp"

namespace wbrec {

/// Corpus with planted complementary pairs: items 2p and 2p + 1 are mates.
/// Each user prefers a few pairs; each basket draws some of the user's pairs
/// and includes both mates with probability `full_pair_probability`,
/// otherwise one mate at random. Dense ids equal the planted indices.
struct PlantedCorpusConfig {
  std::size_t pairs = 250;
  std::size_t users = 2000;
  std::size_t preferred_pairs_per_user = 8;
  std::size_t min_baskets_per_user = 3;
  std::size_t max_baskets_per_user = 6;
  std::size_t min_pairs_per_basket = 2;
  std::size_t max_pairs_per_basket = 4;
  double full_pair_probability = 0.9;
  std::uint64_t seed = 2024;
};

TransactionLog make_planted_corpus(const PlantedCorpusConfig& config);

inline ItemId planted_mate(ItemId item) { return item ^ 1u; }

/// Writes the canonical `user_id,basket_id,item_id` CSV.
void write_baskets_csv(const TransactionLog& log, const std::filesystem::path& path);

}  // namespace wbrec
