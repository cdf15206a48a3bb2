#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wbrec/corpus.hpp"
#include "wbrec/index.hpp"
#include "wbrec/model.hpp"

namespace wbrec {

struct BasketContext {
  std::optional<UserId> user;
  std::vector<ItemId> items;
  std::size_t k = 10;
};

struct RecommendationEntry {
  ItemId item = 0;
  double score = 0.0;
  std::vector<ItemId> anchors;  ///< anchors whose lists contained the item, ascending

  friend bool operator==(const RecommendationEntry&, const RecommendationEntry&) = default;
};

struct RecommendationSet {
  std::vector<RecommendationEntry> entries;   ///< final ranking, at most k
  std::vector<RecommendationEntry> overflow;  ///< ranked backfill candidates after `entries`
  std::size_t k = 0;
  bool fallback = false;        ///< popularity fallback was used
  bool anchors_sampled = false; ///< the anchor set is a strict subset of the basket
  bool short_list = false;      ///< fewer than k entries survived post-processing

  friend bool operator==(const RecommendationSet&, const RecommendationSet&) = default;
};

/// One per-anchor retrieval result.
struct AnchorList {
  ItemId anchor = kNoId;
  RankedList items;
};

/// Business filters applied after aggregation. Category ids are dense
/// indices into `category_names`; items without a category use kNoId.
struct PostProcessConfig {
  std::vector<ItemId> blacklisted_items;        ///< sorted
  std::vector<std::uint32_t> blacklisted_categories;  ///< sorted
  std::vector<std::uint32_t> item_category;     ///< item -> category, may be empty
  std::vector<std::string> category_names;
  std::optional<std::size_t> max_per_category;  ///< diversity cap, >= 1
  /// Category pairs that must not both appear; the lower-ranked item is dropped.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> denied_pairs;

  bool empty() const {
    return blacklisted_items.empty() && blacklisted_categories.empty() && !max_per_category && denied_pairs.empty();
  }
  std::uint32_t category_of(ItemId item) const {
    return item < item_category.size() ? item_category[item] : kNoId;
  }
  void validate() const;
};

/// Reads the JSON post-processing document, resolving external item ids
/// through `items`. Unknown item ids are ignored.
PostProcessConfig load_post_process_config(const std::filesystem::path& path, const IdTable& items);
PostProcessConfig parse_post_process_config(std::string_view json_text, const IdTable& items);

enum class AnchorMode { per_anchor, basket_average };

struct RecommendConfig {
  std::size_t anchor_threshold = 6;  ///< baskets larger than this are sampled to half
  std::size_t depth_multiplier = 3;  ///< per-anchor retrieval depth = multiplier * k
  AnchorMode mode = AnchorMode::per_anchor;
  bool batch_lookup = true;          ///< one batch_topk call instead of sequential topk
  std::size_t threads = 1;
  std::optional<std::uint32_t> ef_search;
  std::uint64_t seed = 7;            ///< anchor sampling
};

/// Whole basket when |basket| <= threshold, else ceil(|basket| / 2) items
/// sampled uniformly without replacement. Result sorted ascending.
std::vector<ItemId> select_anchor_set(std::span<const ItemId> basket, std::size_t threshold, std::uint64_t seed);

/// Top-k for one anchor under the symmetric query; anonymous query when the
/// user is absent or unknown to the model.
RankedList recommend_for_anchor(const TripleModel& model, const CatalogIndex& index, std::optional<UserId> user,
                                ItemId anchor, std::size_t k, std::span<const ItemId> exclude,
                                std::optional<std::uint32_t> ef_search = std::nullopt);

/// Min-max normalizes each list to [0, 1] (a constant list maps to 1), sums
/// per item, ranks by sum desc, contributing anchors desc, id asc. The first
/// k go to `entries`, the next up to `buffer_depth - k` to `overflow`.
RecommendationSet aggregate(std::span<const AnchorList> per_anchor, std::size_t k, std::size_t buffer_depth);
RecommendationSet aggregate(std::span<const AnchorList> per_anchor, std::size_t k);

/// Drops blacklisted items and categories, applies the per-category cap and
/// deny rules in rank order, then refills to k from the overflow buffer.
RecommendationSet post_process(const RecommendationSet& set, const PostProcessConfig& config, std::size_t k);

/// Popularity ranking minus exclusions.
RankedList item_pop_recommend(const FrequencyTable& freq, std::size_t k, std::span<const ItemId> exclude);

/// Full serving pipeline over an immutable model and index.
class Recommender {
 public:
  Recommender(const TripleModel& model, const CatalogIndex& index, RecommendConfig config = {},
              PostProcessConfig post = {});

  RecommendationSet recommend(const BasketContext& ctx) const;
  RecommendationSet recommend(const BasketContext& ctx, std::uint64_t seed) const;

  const RecommendConfig& config() const { return config_; }
  const TripleModel& model() const { return model_; }
  const CatalogIndex& index() const { return index_; }
  const FrequencyTable& popularity() const { return popularity_; }

 private:
  RecommendationSet fallback(std::span<const ItemId> basket, std::size_t k) const;
  QueryVector query_for(std::optional<UserId> user, ItemId anchor) const;

  const TripleModel& model_;
  const CatalogIndex& index_;
  RecommendConfig config_;
  PostProcessConfig post_;
  FrequencyTable popularity_;
};

}  // namespace wbrec
