#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "wbrec/common.hpp"
#include "wbrec/corpus.hpp"

namespace wbrec {

/// The three row-major embedding matrices: anchor-item P (n x d), dual-item
/// Q (n x d) and user H (m x d). Templated on the scalar so gradient checks
/// can run in double precision against the same code path.
template <typename T>
struct EmbeddingTables {
  std::size_t items = 0;
  std::size_t users = 0;
  std::size_t dim = 0;
  std::vector<T> P;
  std::vector<T> Q;
  std::vector<T> H;

  EmbeddingTables() = default;
  EmbeddingTables(std::size_t n_items, std::size_t n_users, std::size_t d)
      : items(n_items), users(n_users), dim(d), P(n_items * d), Q(n_items * d), H(n_users * d) {}

  std::span<const T> p(ItemId i) const { return {P.data() + std::size_t{i} * dim, dim}; }
  std::span<const T> q(ItemId j) const { return {Q.data() + std::size_t{j} * dim, dim}; }
  std::span<const T> h(UserId u) const { return {H.data() + std::size_t{u} * dim, dim}; }
  std::span<T> p(ItemId i) { return {P.data() + std::size_t{i} * dim, dim}; }
  std::span<T> q(ItemId j) { return {Q.data() + std::size_t{j} * dim, dim}; }
  std::span<T> h(UserId u) { return {H.data() + std::size_t{u} * dim, dim}; }

  template <typename U>
  EmbeddingTables<U> cast() const {
    EmbeddingTables<U> out;
    out.items = items;
    out.users = users;
    out.dim = dim;
    out.P.assign(P.begin(), P.end());
    out.Q.assign(Q.begin(), Q.end());
    out.H.assign(H.begin(), H.end());
    return out;
  }

  friend bool operator==(const EmbeddingTables&, const EmbeddingTables&) = default;
};

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  T acc{};
  for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
  return acc;
}

/// Float inputs, double accumulation.
inline double dot_double(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += static_cast<double>(a[k]) * static_cast<double>(b[k]);
  return acc;
}

/// Trained user and dual-item embeddings with their vocabulary.
struct TripleModel {
  EmbeddingTables<float> tables;
  Vocabulary vocabulary;
  /// Basket-level item counts from the training corpus; drives the
  /// popularity fallback. Empty when unknown.
  std::vector<std::uint64_t> item_popularity;

  std::size_t item_count() const { return tables.items; }
  std::size_t user_count() const { return tables.users; }
  std::size_t dim() const { return tables.dim; }

  FrequencyTable popularity() const;
};

/// s(u, i, j) = p_i.q_j + p_i.h_u + q_j.h_u, accumulated in double.
double cohesion_score(const TripleModel& model, UserId u, ItemId i, ItemId j);

/// (s(u, i, j) + s(u, j, i)) / 2
double symmetric_score(const TripleModel& model, UserId u, ItemId i, ItemId j);

template <typename T>
T cohesion_score(const EmbeddingTables<T>& t, UserId u, ItemId i, ItemId j) {
  const auto p = t.p(i);
  const auto q = t.q(j);
  const auto h = t.h(u);
  return dot(p, q) + dot(p, h) + dot(q, h);
}

/// Model with every entry uniform in [-scale, scale]. Vocabulary names are
/// synthesized as "u<k>" / "i<k>".
TripleModel random_model(std::size_t items, std::size_t users, std::size_t dim, double scale,
                         std::uint64_t seed);

/// Synthesized names for models built without a corpus.
Vocabulary synthetic_vocabulary(std::size_t items, std::size_t users);

/// Model file: magic "T2VM", version u32, m u64, n u64, d u32, then H, P, Q
/// as row-major f32, then user and item names (u32 length + UTF-8), then an
/// optional popularity section ("POP1", n x u64).
void save_model(const TripleModel& model, const std::filesystem::path& path);
TripleModel load_model(const std::filesystem::path& path);

struct ModelHeader {
  std::uint64_t users = 0;
  std::uint64_t items = 0;
  std::uint32_t dim = 0;
};

/// Reads only the header of a model file.
ModelHeader read_model_header(const std::filesystem::path& path);

void check_item(const TripleModel& model, ItemId i);
void check_user(const TripleModel& model, UserId u);

}  // namespace wbrec
