#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "wbrec/model.hpp"
#include "wbrec/triples.hpp"

namespace wbrec {

/// Noise draws for a batch of triples, k per prediction term, laid out
/// triple-major: entries [t*k, (t+1)*k) belong to triple t. `for_user` is
/// unused when the user-prediction term is disabled.
struct NoiseDraws {
  std::size_t k = 0;
  std::vector<ItemId> for_anchor;  // replace item_a when predicting i given (j, u)
  std::vector<ItemId> for_target;  // replace item_b when predicting j given (i, u)
  std::vector<UserId> for_user;    // replace user when predicting u given (i, j)
  bool user_term = true;
};

/// Draws k noise targets per term. Each draw excludes the true target.
/// Pass `users == nullptr` to drop the user-prediction term.
NoiseDraws draw_noise(std::span<const Triple> batch, std::size_t k, const ZipfSampler& items,
                      const ZipfSampler* users, Rng& rng);

/// Row-sparse gradient for one embedding matrix. Rows are kept in first-touch
/// order, which makes reductions and optimizer updates deterministic.
template <typename T>
class SparseRows {
 public:
  SparseRows() = default;
  SparseRows(std::size_t row_count, std::size_t dim) : dim_(dim), slot_(row_count, -1) {}

  std::span<T> row(std::uint32_t id) {
    auto& slot = slot_[id];
    if (slot < 0) {
      slot = static_cast<std::int64_t>(rows_.size());
      rows_.push_back(id);
      values_.resize(values_.size() + dim_, T{});
    }
    return {values_.data() + static_cast<std::size_t>(slot) * dim_, dim_};
  }

  /// Gradient row for `id`, or an empty span when the row was never touched.
  std::span<const T> find(std::uint32_t id) const {
    if (id >= slot_.size() || slot_[id] < 0) return {};
    return {values_.data() + static_cast<std::size_t>(slot_[id]) * dim_, dim_};
  }

  const std::vector<std::uint32_t>& rows() const { return rows_; }
  std::span<const T> values_at(std::size_t slot) const { return {values_.data() + slot * dim_, dim_}; }
  std::size_t dim() const { return dim_; }

  void clear() {
    for (auto id : rows_) slot_[id] = -1;
    rows_.clear();
    values_.clear();
  }

  void add(const SparseRows& other) {
    for (std::size_t s = 0; s < other.rows_.size(); ++s) {
      auto dst = row(other.rows_[s]);
      const auto src = other.values_at(s);
      for (std::size_t k = 0; k < dim_; ++k) dst[k] += src[k];
    }
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::int64_t> slot_;
  std::vector<std::uint32_t> rows_;
  std::vector<T> values_;
};

template <typename T>
struct SparseGradients {
  SparseRows<T> P;
  SparseRows<T> Q;
  SparseRows<T> H;

  SparseGradients() = default;
  explicit SparseGradients(const EmbeddingTables<T>& t)
      : P(t.items, t.dim), Q(t.items, t.dim), H(t.users, t.dim) {}
  template <typename U>
  explicit SparseGradients(const EmbeddingTables<U>& t)
      : P(t.items, t.dim), Q(t.items, t.dim), H(t.users, t.dim) {}

  void clear() {
    P.clear();
    Q.clear();
    H.clear();
  }
  void add(const SparseGradients& other) {
    P.add(other.P);
    Q.add(other.Q);
    H.add(other.H);
  }
};

namespace detail {

template <typename T>
T log_sigmoid(T x) {
  return x >= T{0} ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

template <typename T>
T sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

/// Adds coeff * d s(u, i, j) / d(theta) into the gradient rows.
template <typename T>
void add_score_gradient(const EmbeddingTables<T>& t, UserId u, ItemId i, ItemId j, T coeff,
                        SparseGradients<T>& g) {
  const auto p = t.p(i);
  const auto q = t.q(j);
  const auto h = t.h(u);
  auto gp = g.P.row(i);
  auto gq = g.Q.row(j);
  auto gh = g.H.row(u);
  for (std::size_t k = 0; k < t.dim; ++k) {
    gp[k] += coeff * (q[k] + h[k]);
    gq[k] += coeff * (p[k] + h[k]);
    gh[k] += coeff * (p[k] + q[k]);
  }
}

}  // namespace detail

/// Number of NCE terms contributed by each triple (2 or 3).
inline std::size_t nce_terms_per_triple(const NoiseDraws& noise) { return noise.user_term ? 3 : 2; }

/// Accumulates the NCE log-likelihood of `batch` (triples [offset, offset +
/// batch.size()) of `noise`) and adds `grad_scale` times its gradient into
/// `grads`. Returns the summed log-likelihood.
///
/// Each triple contributes up to three binary discrimination terms: predict
/// item_a given (item_b, user), item_b given (item_a, user) and user given
/// (item_a, item_b). For a true target t with score s and noise probability
/// Pn(t) a term adds
///   log sigmoid(s - log(k Pn(t))) + sum over noise t' of log sigmoid(-(s' - log(k Pn(t'))))
/// where s' is the cohesion score with t' substituted for the target.
template <typename T>
T nce_accumulate(const EmbeddingTables<T>& t, std::span<const Triple> batch, const NoiseDraws& noise,
                 std::size_t offset, const ZipfSampler& items, const ZipfSampler* users, T grad_scale,
                 SparseGradients<T>& grads) {
  const std::size_t k = noise.k;
  const T log_k = std::log(static_cast<T>(k == 0 ? 1 : k));
  const bool user_term = noise.user_term;
  if (user_term && users == nullptr) throw InvalidArgument("user-prediction term needs a user sampler");
  T total{0};

  // One scored (u, i, j) triple either as the positive or as a noise sample.
  auto term = [&](UserId u, ItemId i, ItemId j, double pn, bool positive) {
    const T s = cohesion_score(t, u, i, j);
    const T x = s - (log_k + static_cast<T>(std::log(pn)));
    if (positive) {
      total += detail::log_sigmoid(x);
      detail::add_score_gradient(t, u, i, j, grad_scale * detail::sigmoid(-x), grads);
    } else {
      total += detail::log_sigmoid(-x);
      detail::add_score_gradient(t, u, i, j, -grad_scale * detail::sigmoid(x), grads);
    }
  };

  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Triple& tr = batch[b];
    const std::size_t base = (offset + b) * k;

    term(tr.user, tr.item_a, tr.item_b, items.probability(tr.item_a), true);
    for (std::size_t n = 0; n < k; ++n) {
      const ItemId a = noise.for_anchor[base + n];
      term(tr.user, a, tr.item_b, items.probability(a), false);
    }

    term(tr.user, tr.item_a, tr.item_b, items.probability(tr.item_b), true);
    for (std::size_t n = 0; n < k; ++n) {
      const ItemId b2 = noise.for_target[base + n];
      term(tr.user, tr.item_a, b2, items.probability(b2), false);
    }

    if (user_term) {
      term(tr.user, tr.item_a, tr.item_b, users->probability(tr.user), true);
      for (std::size_t n = 0; n < k; ++n) {
        const UserId u = noise.for_user[base + n];
        term(u, tr.item_a, tr.item_b, users->probability(u), false);
      }
    }
  }
  return total;
}

/// Mean negated NCE log-likelihood over all terms of the batch, with its
/// gradient written into `grads` (cleared first). Only rows referenced by the
/// batch or its noise draws receive entries.
template <typename T>
T nce_objective_and_gradients(const EmbeddingTables<T>& t, std::span<const Triple> batch,
                              const NoiseDraws& noise, const ZipfSampler& items, const ZipfSampler* users,
                              SparseGradients<T>& grads) {
  if (batch.empty()) throw InvalidArgument("NCE objective needs a non-empty batch");
  grads.clear();
  const T terms = static_cast<T>(batch.size() * nce_terms_per_triple(noise));
  const T loglik = nce_accumulate(t, batch, noise, 0, items, users, -T{1} / terms, grads);
  return -loglik / terms;
}

}  // namespace wbrec
