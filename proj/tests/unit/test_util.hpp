#pragma once

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <random>
#include <string>
#include <vector>

#include "wbrec/corpus.hpp"

namespace wbrec::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("wbrec_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::filesystem::path file(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream(path, std::ios::binary | std::ios::trunc) << text;
}

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Log with users/items named "u<k>" / "i<k>"; ids equal k.
inline TransactionLog make_log(std::size_t users, std::size_t items,
                               std::initializer_list<std::pair<UserId, std::vector<ItemId>>> baskets) {
  TransactionLog log;
  for (std::size_t u = 0; u < users; ++u) log.vocabulary.users.intern("u" + std::to_string(u));
  for (std::size_t i = 0; i < items; ++i) log.vocabulary.items.intern("i" + std::to_string(i));
  std::size_t b = 0;
  for (const auto& [user, ids] : baskets) {
    Basket basket{user, "b" + std::to_string(b++), ids};
    std::sort(basket.items.begin(), basket.items.end());
    log.baskets.push_back(std::move(basket));
  }
  return log;
}

/// Random log: every basket has between 1 and max_size distinct items.
inline TransactionLog random_log(std::size_t users, std::size_t items, std::size_t baskets, std::size_t max_size,
                                 std::uint64_t seed) {
  TransactionLog log;
  for (std::size_t u = 0; u < users; ++u) log.vocabulary.users.intern("u" + std::to_string(u));
  for (std::size_t i = 0; i < items; ++i) log.vocabulary.items.intern("i" + std::to_string(i));
  std::mt19937_64 gen(seed);
  for (std::size_t b = 0; b < baskets; ++b) {
    Basket basket;
    basket.user = static_cast<UserId>(gen() % users);
    basket.basket_id = "b" + std::to_string(b);
    const std::size_t size = 1 + gen() % max_size;
    while (basket.items.size() < std::min(size, items)) {
      const auto id = static_cast<ItemId>(gen() % items);
      if (std::find(basket.items.begin(), basket.items.end(), id) == basket.items.end()) basket.items.push_back(id);
    }
    std::sort(basket.items.begin(), basket.items.end());
    log.baskets.push_back(std::move(basket));
  }
  return log;
}

}  // namespace wbrec::testing
