#include "wbrec/synthetic.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

namespace wbrec {

TransactionLog make_planted_corpus(const PlantedCorpusConfig& config) {
  if (config.pairs == 0 || config.users == 0) throw InvalidArgument("planted corpus needs pairs and users");
  if (config.preferred_pairs_per_user > config.pairs || config.min_pairs_per_basket < 1 ||
      config.max_pairs_per_basket < config.min_pairs_per_basket ||
      config.max_pairs_per_basket > config.preferred_pairs_per_user || config.min_baskets_per_user < 1 ||
      config.max_baskets_per_user < config.min_baskets_per_user) {
    throw InvalidArgument("inconsistent planted corpus configuration");
  }

  TransactionLog log;
  for (std::size_t u = 0; u < config.users; ++u) log.vocabulary.users.intern("user" + std::to_string(u));
  for (std::size_t i = 0; i < 2 * config.pairs; ++i) log.vocabulary.items.intern("item" + std::to_string(i));

  Rng rng(config.seed);
  std::vector<std::size_t> pairs(config.pairs);
  std::iota(pairs.begin(), pairs.end(), std::size_t{0});
  auto draw_subset = [&](std::vector<std::size_t>& pool, std::size_t take) {
    for (std::size_t i = 0; i < take; ++i) std::swap(pool[i], pool[i + rng.uniform_index(pool.size() - i)]);
    return std::vector<std::size_t>(pool.begin(), pool.begin() + static_cast<long>(take));
  };

  for (UserId u = 0; u < config.users; ++u) {
    auto preferred = draw_subset(pairs, config.preferred_pairs_per_user);
    const std::size_t baskets =
        config.min_baskets_per_user + rng.uniform_index(config.max_baskets_per_user - config.min_baskets_per_user + 1);
    for (std::size_t b = 0; b < baskets; ++b) {
      const std::size_t count =
          config.min_pairs_per_basket + rng.uniform_index(config.max_pairs_per_basket - config.min_pairs_per_basket + 1);
      Basket basket;
      basket.user = u;
      basket.basket_id = "b" + std::to_string(u) + "_" + std::to_string(b);
      for (std::size_t pair : draw_subset(preferred, count)) {
        const auto first = static_cast<ItemId>(2 * pair);
        if (rng.uniform01() < config.full_pair_probability) {
          basket.items.push_back(first);
          basket.items.push_back(first + 1);
        } else {
          basket.items.push_back(first + static_cast<ItemId>(rng.uniform_index(2)));
        }
      }
      std::sort(basket.items.begin(), basket.items.end());
      log.baskets.push_back(std::move(basket));
    }
  }
  return log;
}

void write_baskets_csv(const TransactionLog& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "user_id,basket_id,item_id\n";
  for (const auto& b : log.baskets) {
    const auto& user = log.vocabulary.users.external(b.user);
    for (ItemId i : b.items) out << user << ',' << b.basket_id << ',' << log.vocabulary.items.external(i) << '\n';
  }
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace wbrec
