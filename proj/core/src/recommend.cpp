#include "wbrec/recommend.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

namespace wbrec {

void PostProcessConfig::validate() const {
  if (max_per_category && *max_per_category < 1) throw InvalidArgument("max_per_category must be >= 1");
}

PostProcessConfig parse_post_process_config(std::string_view json_text, const IdTable& items) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("post-process config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw FormatError("post-process config must be a JSON object");

  PostProcessConfig config;
  std::map<std::string, std::uint32_t> categories;
  auto category_id = [&](const std::string& name) {
    auto [it, inserted] = categories.emplace(name, static_cast<std::uint32_t>(config.category_names.size()));
    if (inserted) config.category_names.push_back(name);
    return it->second;
  };

  try {
    if (doc.contains("item_categories")) {
      config.item_category.assign(items.size(), kNoId);
      for (const auto& [item, category] : doc.at("item_categories").items()) {
        const auto id = items.find(item);
        const auto cat = category_id(category.get<std::string>());
        if (id) config.item_category[*id] = cat;
      }
    }
    if (doc.contains("blacklist_items")) {
      for (const auto& item : doc.at("blacklist_items")) {
        if (auto id = items.find(item.get<std::string>())) config.blacklisted_items.push_back(*id);
      }
    }
    if (doc.contains("blacklist_categories")) {
      for (const auto& cat : doc.at("blacklist_categories")) {
        config.blacklisted_categories.push_back(category_id(cat.get<std::string>()));
      }
    }
    if (doc.contains("max_per_category") && !doc.at("max_per_category").is_null()) {
      const auto cap = doc.at("max_per_category").get<long long>();
      if (cap < 1) throw InvalidArgument("max_per_category must be >= 1");
      config.max_per_category = static_cast<std::size_t>(cap);
    }
    if (doc.contains("deny_category_pairs")) {
      for (const auto& pair : doc.at("deny_category_pairs")) {
        if (!pair.is_array() || pair.size() != 2) throw FormatError("deny_category_pairs entries must be [a, b]");
        config.denied_pairs.emplace_back(category_id(pair[0].get<std::string>()),
                                         category_id(pair[1].get<std::string>()));
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("post-process config has a field of the wrong type: ") + e.what());
  }
  std::sort(config.blacklisted_items.begin(), config.blacklisted_items.end());
  std::sort(config.blacklisted_categories.begin(), config.blacklisted_categories.end());
  config.validate();
  return config;
}

PostProcessConfig load_post_process_config(const std::filesystem::path& path, const IdTable& items) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_post_process_config(text.str(), items);
}

std::vector<ItemId> select_anchor_set(std::span<const ItemId> basket, std::size_t threshold, std::uint64_t seed) {
  if (basket.empty()) throw InvalidArgument("cannot select anchors from an empty basket");
  std::vector<ItemId> items(basket.begin(), basket.end());
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  if (items.size() <= threshold) return items;

  const std::size_t take = (items.size() + 1) / 2;
  Rng rng(seed);
  for (std::size_t i = 0; i < take; ++i) {
    const auto j = i + rng.uniform_index(items.size() - i);
    std::swap(items[i], items[j]);
  }
  items.resize(take);
  std::sort(items.begin(), items.end());
  return items;
}

RankedList recommend_for_anchor(const TripleModel& model, const CatalogIndex& index, std::optional<UserId> user,
                                ItemId anchor, std::size_t k, std::span<const ItemId> exclude,
                                std::optional<std::uint32_t> ef_search) {
  if (anchor >= model.item_count()) throw InvalidArgument("unknown anchor item " + std::to_string(anchor));
  const bool known_user = user && *user < model.user_count();
  QueryVector q;
  if (index.layout() == CatalogLayout::symmetric) {
    q = known_user ? make_query_vector(model, *user, anchor) : make_query_vector_anonymous(model, anchor);
  } else {
    q = known_user ? make_query_vector_asymmetric(model, *user, anchor)
                   : make_query_vector_asymmetric_anonymous(model, anchor);
  }
  return index.topk(q, k, exclude, ef_search);
}

RecommendationSet aggregate(std::span<const AnchorList> per_anchor, std::size_t k, std::size_t buffer_depth) {
  struct Accum {
    double score = 0.0;
    std::vector<ItemId> anchors;
    std::size_t lists = 0;
  };
  std::unordered_map<ItemId, Accum> totals;
  for (const auto& list : per_anchor) {
    if (list.items.empty()) continue;
    auto [lo, hi] = std::minmax_element(list.items.begin(), list.items.end(),
                                        [](const ScoredItem& a, const ScoredItem& b) { return a.score < b.score; });
    const double min = lo->score;
    const double range = static_cast<double>(hi->score) - min;
    for (const auto& e : list.items) {
      auto& acc = totals[e.item];
      acc.score += range > 0.0 ? (static_cast<double>(e.score) - min) / range : 1.0;
      ++acc.lists;
      if (list.anchor != kNoId) acc.anchors.push_back(list.anchor);
    }
  }

  std::vector<RecommendationEntry> ranked;
  std::vector<std::size_t> list_counts;
  ranked.reserve(totals.size());
  for (auto& [item, acc] : totals) {
    std::sort(acc.anchors.begin(), acc.anchors.end());
    acc.anchors.erase(std::unique(acc.anchors.begin(), acc.anchors.end()), acc.anchors.end());
    ranked.push_back({item, acc.score, std::move(acc.anchors)});
  }
  std::sort(ranked.begin(), ranked.end(), [&](const RecommendationEntry& a, const RecommendationEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    const auto ca = totals.at(a.item).lists;
    const auto cb = totals.at(b.item).lists;
    if (ca != cb) return ca > cb;
    return a.item < b.item;
  });

  RecommendationSet set;
  set.k = k;
  const std::size_t keep = std::min(ranked.size(), std::max(buffer_depth, k));
  for (std::size_t r = 0; r < keep; ++r) {
    (r < k ? set.entries : set.overflow).push_back(std::move(ranked[r]));
  }
  set.short_list = set.entries.size() < k;
  return set;
}

RecommendationSet aggregate(std::span<const AnchorList> per_anchor, std::size_t k) {
  return aggregate(per_anchor, k, 3 * k);
}

RecommendationSet post_process(const RecommendationSet& set, const PostProcessConfig& config, std::size_t k) {
  RecommendationSet out;
  out.k = k;
  out.fallback = set.fallback;
  out.anchors_sampled = set.anchors_sampled;

  std::unordered_map<std::uint32_t, std::size_t> per_category;
  std::vector<std::uint32_t> present;
  auto admit = [&](const RecommendationEntry& e) {
    if (std::binary_search(config.blacklisted_items.begin(), config.blacklisted_items.end(), e.item)) return false;
    const auto cat = config.category_of(e.item);
    if (cat == kNoId) return true;
    if (std::binary_search(config.blacklisted_categories.begin(), config.blacklisted_categories.end(), cat)) {
      return false;
    }
    if (config.max_per_category && per_category[cat] >= *config.max_per_category) return false;
    for (const auto& [a, b] : config.denied_pairs) {
      const bool has_a = std::find(present.begin(), present.end(), a) != present.end();
      const bool has_b = std::find(present.begin(), present.end(), b) != present.end();
      if ((cat == a && has_b) || (cat == b && has_a)) return false;
    }
    ++per_category[cat];
    if (std::find(present.begin(), present.end(), cat) == present.end()) present.push_back(cat);
    return true;
  };

  for (const auto* source : {&set.entries, &set.overflow}) {
    for (const auto& e : *source) {
      if (!admit(e)) continue;
      (out.entries.size() < k ? out.entries : out.overflow).push_back(e);
    }
  }
  out.short_list = out.entries.size() < k;
  return out;
}

RankedList item_pop_recommend(const FrequencyTable& freq, std::size_t k, std::span<const ItemId> exclude) {
  std::vector<ItemId> skip(exclude.begin(), exclude.end());
  std::sort(skip.begin(), skip.end());
  RankedList out;
  for (std::uint32_t id : freq.rank) {
    if (out.size() >= k) break;
    if (std::binary_search(skip.begin(), skip.end(), id)) continue;
    out.push_back({id, static_cast<float>(freq.count[id])});
  }
  return out;
}

Recommender::Recommender(const TripleModel& model, const CatalogIndex& index, RecommendConfig config,
                         PostProcessConfig post)
    : model_(model), index_(index), config_(config), post_(std::move(post)), popularity_(model.popularity()) {
  if (index_.size() != model_.item_count()) {
    throw InvalidArgument("index has " + std::to_string(index_.size()) + " entries but the model has " +
                          std::to_string(model_.item_count()) + " items");
  }
  const std::size_t blocks = index_.layout() == CatalogLayout::symmetric ? 4 : 2;
  if (index_.dim() != blocks * model_.dim()) throw InvalidArgument("index dimension does not match the model");
  if (config_.depth_multiplier < 1) throw InvalidArgument("depth multiplier must be >= 1");
  post_.validate();
}

RecommendationSet Recommender::recommend(const BasketContext& ctx) const { return recommend(ctx, config_.seed); }

QueryVector Recommender::query_for(std::optional<UserId> user, ItemId anchor) const {
  if (index_.layout() == CatalogLayout::symmetric) {
    return user ? make_query_vector(model_, *user, anchor) : make_query_vector_anonymous(model_, anchor);
  }
  return user ? make_query_vector_asymmetric(model_, *user, anchor)
              : make_query_vector_asymmetric_anonymous(model_, anchor);
}

RecommendationSet Recommender::fallback(std::span<const ItemId> basket, std::size_t k) const {
  const auto popular = item_pop_recommend(popularity_, config_.depth_multiplier * k, basket);
  RecommendationSet set;
  set.k = k;
  for (std::size_t r = 0; r < popular.size(); ++r) {
    RecommendationEntry e{popular[r].item, popular[r].score, {}};
    (r < k ? set.entries : set.overflow).push_back(std::move(e));
  }
  auto out = post_process(set, post_, k);
  out.fallback = true;
  return out;
}

RecommendationSet Recommender::recommend(const BasketContext& ctx, std::uint64_t seed) const {
  if (ctx.k < 1) throw InvalidArgument("k must be >= 1");
  std::vector<ItemId> basket;
  basket.reserve(ctx.items.size());
  for (ItemId i : ctx.items) {
    if (i < model_.item_count()) basket.push_back(i);
  }
  std::sort(basket.begin(), basket.end());
  basket.erase(std::unique(basket.begin(), basket.end()), basket.end());
  if (basket.empty()) return fallback(basket, ctx.k);

  const std::optional<UserId> user =
      ctx.user && *ctx.user < model_.user_count() ? ctx.user : std::optional<UserId>{};
  const std::size_t depth = config_.depth_multiplier * ctx.k;

  std::vector<AnchorList> lists;
  bool sampled = false;
  if (config_.mode == AnchorMode::basket_average) {
    const auto q = make_basket_average_query(model_, user, basket, index_.layout());
    lists.push_back({kNoId, index_.topk(q, depth, basket, config_.ef_search)});
  } else {
    const auto anchors = select_anchor_set(basket, config_.anchor_threshold, seed);
    sampled = anchors.size() < basket.size();
    std::vector<QueryVector> queries;
    queries.reserve(anchors.size());
    for (ItemId a : anchors) queries.push_back(query_for(user, a));
    std::vector<RankedList> results;
    if (config_.batch_lookup) {
      results = index_.batch_topk(queries, depth, basket, config_.threads, config_.ef_search);
    } else {
      for (const auto& q : queries) results.push_back(index_.topk(q, depth, basket, config_.ef_search));
    }
    for (std::size_t a = 0; a < anchors.size(); ++a) lists.push_back({anchors[a], std::move(results[a])});
  }

  auto out = post_process(aggregate(lists, ctx.k, depth), post_, ctx.k);
  out.anchors_sampled = sampled;
  return out;
}

}  // namespace wbrec
