#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "wbrec/common.hpp"

namespace wbrec {

/// Interning table for one id namespace (users or items).
class IdTable {
 public:
  /// Returns the dense id for `external`, registering it if new.
  std::uint32_t intern(std::string_view external);
  std::optional<std::uint32_t> find(std::string_view external) const;
  const std::string& external(std::uint32_t dense) const;
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

struct Vocabulary {
  IdTable users;
  IdTable items;

  std::size_t user_count() const { return users.size(); }
  std::size_t item_count() const { return items.size(); }
};

struct Basket {
  UserId user = 0;
  std::string basket_id;
  std::vector<ItemId> items;  // sorted ascending, unique, non-empty
};

struct TransactionLog {
  std::vector<Basket> baskets;
  Vocabulary vocabulary;
};

struct FrequencyTable {
  std::vector<std::uint64_t> count;  // indexed by dense id
  std::vector<std::uint32_t> rank;   // rank -> dense id, by descending count then ascending id

  std::size_t size() const { return count.size(); }
  std::uint64_t total() const;
};

/// Parses the canonical `user_id,basket_id,item_id` CSV.
///
/// Rows sharing (user, basket_id) merge into one basket, in order of first
/// appearance. Duplicate items within a basket are dropped. Throws
/// FormatError naming the offending line.
TransactionLog load_baskets(std::istream& in);
TransactionLog load_baskets(const std::filesystem::path& path);

/// Shuffled basket order used by split_holdout. Exposed so tests can replay
/// the rebalancing rule independently.
std::vector<std::size_t> shuffled_basket_order(std::size_t basket_count, std::uint64_t seed);

struct HoldoutSplit {
  TransactionLog train;
  TransactionLog test;
};

/// Seeded random basket-level split. Users whose every basket landed in test
/// are rebalanced: with >= 2 baskets they keep exactly one in test (the first
/// in shuffled order), otherwise the basket moves to train. Both sides carry
/// the full vocabulary.
HoldoutSplit split_holdout(const TransactionLog& log, double test_fraction, std::uint64_t seed);

/// Basket-level occurrence counts per item.
FrequencyTable item_frequencies(const TransactionLog& log);

/// Number of baskets per user, ranked like item_frequencies.
FrequencyTable user_frequencies(const TransactionLog& log);

/// Builds a FrequencyTable from raw counts (ranks derived).
FrequencyTable frequency_table_from_counts(std::vector<std::uint64_t> counts);

/// Binary corpus cache written by `wbrec ingest`: magic "T2VC", version u32,
/// user and item name tables, then baskets.
void save_corpus(const TransactionLog& log, const std::filesystem::path& path);
TransactionLog load_corpus(const std::filesystem::path& path);

/// Loads either a CSV or a binary cache, chosen by the file's leading bytes.
TransactionLog load_corpus_any(const std::filesystem::path& path);

}  // namespace wbrec
