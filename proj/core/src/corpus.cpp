#include "wbrec/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "wbrec/binary_io.hpp"

namespace wbrec {

std::uint32_t IdTable::intern(std::string_view external) {
  auto it = index_.find(std::string(external));
  if (it != index_.end()) return it->second;
  const auto id = static_cast<std::uint32_t>(names_.size());
  names_.emplace_back(external);
  index_.emplace(names_.back(), id);
  return id;
}

std::optional<std::uint32_t> IdTable::find(std::string_view external) const {
  auto it = index_.find(std::string(external));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& IdTable::external(std::uint32_t dense) const {
  if (dense >= names_.size()) {
    throw InvalidArgument("dense id " + std::to_string(dense) + " out of range");
  }
  return names_[dense];
}

std::uint64_t FrequencyTable::total() const {
  return std::accumulate(count.begin(), count.end(), std::uint64_t{0});
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(trim(line.substr(start)));
      break;
    }
    fields.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return fields;
}

std::string line_error(std::size_t line_no, std::string_view message) {
  return "line " + std::to_string(line_no) + ": " + std::string(message);
}

void finalize_baskets(std::vector<Basket>& baskets) {
  for (auto& b : baskets) {
    std::sort(b.items.begin(), b.items.end());
    b.items.erase(std::unique(b.items.begin(), b.items.end()), b.items.end());
  }
}

}  // namespace

TransactionLog load_baskets(std::istream& in) {
  TransactionLog log;
  std::string line;
  std::size_t line_no = 0;
  bool saw_header = false;

  struct KeyHash {
    std::size_t operator()(const std::pair<UserId, std::string>& k) const {
      return std::hash<std::string>{}(k.second) * 31 + k.first;
    }
  };
  std::unordered_map<std::pair<UserId, std::string>, std::size_t, KeyHash> basket_index;

  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = trim(line);
    if (line_no == 1 && view.size() >= 3 && static_cast<unsigned char>(view[0]) == 0xEF &&
        static_cast<unsigned char>(view[1]) == 0xBB && static_cast<unsigned char>(view[2]) == 0xBF) {
      view.remove_prefix(3);  // UTF-8 BOM
    }
    if (view.empty()) continue;
    const auto fields = split_fields(view);
    if (!saw_header) {
      if (fields.size() != 3 || fields[0] != "user_id" || fields[1] != "basket_id" ||
          fields[2] != "item_id") {
        throw FormatError(line_error(line_no, "expected header user_id,basket_id,item_id"));
      }
      saw_header = true;
      continue;
    }
    if (fields.size() != 3) {
      throw FormatError(line_error(line_no, "expected 3 fields, got " + std::to_string(fields.size())));
    }
    for (std::size_t f = 0; f < 3; ++f) {
      if (fields[f].empty()) {
        static constexpr const char* kNames[] = {"user_id", "basket_id", "item_id"};
        throw FormatError(line_error(line_no, std::string("empty ") + kNames[f]));
      }
    }
    const UserId user = log.vocabulary.users.intern(fields[0]);
    const ItemId item = log.vocabulary.items.intern(fields[2]);
    auto key = std::make_pair(user, std::string(fields[1]));
    auto it = basket_index.find(key);
    if (it == basket_index.end()) {
      it = basket_index.emplace(std::move(key), log.baskets.size()).first;
      log.baskets.push_back(Basket{user, std::string(fields[1]), {}});
    }
    log.baskets[it->second].items.push_back(item);
  }
  if (!saw_header) throw FormatError("empty file: missing header");
  if (log.baskets.empty()) throw FormatError("file contains a header but no rows");
  finalize_baskets(log.baskets);
  return log;
}

TransactionLog load_baskets(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return load_baskets(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<std::size_t> shuffled_basket_order(std::size_t basket_count, std::uint64_t seed) {
  std::vector<std::size_t> order(basket_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = basket_count; i > 1; --i) {
    const auto j = rng.uniform_index(i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

HoldoutSplit split_holdout(const TransactionLog& log, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw InvalidArgument("test_fraction must lie in (0, 1)");
  }
  const std::size_t n = log.baskets.size();
  if (n < 2) throw InvalidArgument("split_holdout needs at least 2 baskets");

  const auto order = shuffled_basket_order(n, seed);
  const auto test_target = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  std::vector<bool> in_test(n, false);
  for (std::size_t r = 0; r < test_target && r < n; ++r) in_test[order[r]] = true;

  // Per user: baskets in shuffled order, and how many stayed in train.
  const std::size_t users = log.vocabulary.user_count();
  std::vector<std::vector<std::size_t>> by_user(users);
  for (std::size_t idx : order) by_user[log.baskets[idx].user].push_back(idx);
  for (const auto& baskets : by_user) {
    if (baskets.empty()) continue;
    const bool all_test = std::all_of(baskets.begin(), baskets.end(), [&](std::size_t b) { return in_test[b]; });
    if (!all_test) continue;
    // Keep the first (in shuffled order) in test only when the user has >= 2 baskets.
    const std::size_t keep = baskets.size() >= 2 ? 1 : 0;
    for (std::size_t r = keep; r < baskets.size(); ++r) in_test[baskets[r]] = false;
  }

  HoldoutSplit split;
  split.train.vocabulary = log.vocabulary;
  split.test.vocabulary = log.vocabulary;
  for (std::size_t b = 0; b < n; ++b) {
    (in_test[b] ? split.test : split.train).baskets.push_back(log.baskets[b]);
  }
  if (split.test.baskets.empty() || split.train.baskets.empty()) {
    throw InvalidArgument("test_fraction " + std::to_string(test_fraction) +
                          " leaves one side of the split empty");
  }
  return split;
}

FrequencyTable frequency_table_from_counts(std::vector<std::uint64_t> counts) {
  FrequencyTable table;
  table.count = std::move(counts);
  table.rank.resize(table.count.size());
  std::iota(table.rank.begin(), table.rank.end(), std::uint32_t{0});
  std::stable_sort(table.rank.begin(), table.rank.end(), [&](std::uint32_t a, std::uint32_t b) {
    return table.count[a] > table.count[b];
  });
  return table;
}

FrequencyTable item_frequencies(const TransactionLog& log) {
  std::vector<std::uint64_t> counts(log.vocabulary.item_count(), 0);
  for (const auto& b : log.baskets) {
    for (ItemId i : b.items) ++counts[i];
  }
  return frequency_table_from_counts(std::move(counts));
}

FrequencyTable user_frequencies(const TransactionLog& log) {
  std::vector<std::uint64_t> counts(log.vocabulary.user_count(), 0);
  for (const auto& b : log.baskets) ++counts[b.user];
  return frequency_table_from_counts(std::move(counts));
}

namespace {
constexpr std::string_view kCorpusMagic = "T2VC";
constexpr std::uint32_t kCorpusVersion = 1;

void write_names(std::ostream& out, const IdTable& table) {
  io::write_le<std::uint64_t>(out, table.size());
  for (const auto& name : table.names()) io::write_string(out, name);
}

void read_names(std::istream& in, IdTable& table, std::string_view what) {
  const auto count = io::read_le<std::uint64_t>(in, what);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name = io::read_string(in, what);
    if (table.intern(name) != i) throw FormatError("duplicate name in " + std::string(what));
  }
}
}  // namespace

void save_corpus(const TransactionLog& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  io::write_magic(out, kCorpusMagic);
  io::write_le(out, kCorpusVersion);
  write_names(out, log.vocabulary.users);
  write_names(out, log.vocabulary.items);
  io::write_le<std::uint64_t>(out, log.baskets.size());
  for (const auto& b : log.baskets) {
    io::write_le<std::uint32_t>(out, b.user);
    io::write_string(out, b.basket_id);
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(b.items.size()));
    for (ItemId i : b.items) io::write_le<std::uint32_t>(out, i);
  }
  if (!out) throw Error("write failed for " + path.string());
}

TransactionLog load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  io::expect_magic(in, kCorpusMagic);
  const auto version = io::read_le<std::uint32_t>(in, "corpus version");
  if (version != kCorpusVersion) {
    throw FormatError("unsupported corpus cache version " + std::to_string(version));
  }
  TransactionLog log;
  read_names(in, log.vocabulary.users, "user names");
  read_names(in, log.vocabulary.items, "item names");
  const auto basket_count = io::read_le<std::uint64_t>(in, "basket count");
  log.baskets.reserve(basket_count);
  for (std::uint64_t b = 0; b < basket_count; ++b) {
    Basket basket;
    basket.user = io::read_le<std::uint32_t>(in, "basket user");
    basket.basket_id = io::read_string(in, "basket id");
    const auto size = io::read_le<std::uint32_t>(in, "basket size");
    if (basket.user >= log.vocabulary.user_count() || size == 0) {
      throw FormatError("corrupt basket record " + std::to_string(b));
    }
    basket.items.resize(size);
    for (auto& item : basket.items) {
      item = io::read_le<std::uint32_t>(in, "basket item");
      if (item >= log.vocabulary.item_count()) throw FormatError("item id out of range in basket record");
    }
    log.baskets.push_back(std::move(basket));
  }
  finalize_baskets(log.baskets);
  return log;
}

TransactionLog load_corpus_any(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw Error("cannot open " + path.string());
  std::string head(kCorpusMagic.size(), '\0');
  probe.read(head.data(), static_cast<std::streamsize>(head.size()));
  if (probe && head == kCorpusMagic) return load_corpus(path);
  return load_baskets(path);
}

}  // namespace wbrec
