#include "wbrec/nce.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <set>

#include "test_util.hpp"

namespace wbrec {
namespace {

FrequencyTable counts_table(std::vector<std::uint64_t> counts) { return frequency_table_from_counts(std::move(counts)); }

// Zipf probability from the rank formula, written out independently.
double zipf(std::size_t rank, std::size_t n) {
  return (std::log(rank + 2.0) - std::log(rank + 1.0)) / std::log(n + 1.0);
}

double oracle_log_sigmoid(double x) { return -std::log(1.0 + std::exp(-x)); }

struct Fixture {
  ZipfSampler items;
  ZipfSampler users;
  std::vector<Triple> batch;
  NoiseDraws noise;
};

Fixture small_fixture(std::size_t k, std::uint64_t seed) {
  // Items ranked 0..5 by count, users ranked 0..2.
  Fixture f{make_zipf_sampler(counts_table({9, 8, 7, 6, 5, 4})), make_zipf_sampler(counts_table({3, 2, 1})),
            {{0, 1, 2}, {2, 4, 0}},
            {}};
  Rng rng(seed);
  f.noise = draw_noise(f.batch, k, f.items, &f.users, rng);
  return f;
}

TEST(DrawNoise, ShapesAndExclusion) {
  const auto f = small_fixture(4, 3);
  ASSERT_EQ(f.noise.for_anchor.size(), 8u);
  ASSERT_EQ(f.noise.for_target.size(), 8u);
  ASSERT_EQ(f.noise.for_user.size(), 8u);
  for (std::size_t t = 0; t < f.batch.size(); ++t) {
    for (std::size_t n = 0; n < 4; ++n) {
      EXPECT_NE(f.noise.for_anchor[t * 4 + n], f.batch[t].item_a);
      EXPECT_NE(f.noise.for_target[t * 4 + n], f.batch[t].item_b);
      EXPECT_NE(f.noise.for_user[t * 4 + n], f.batch[t].user);
    }
  }
}

TEST(NceObjective, ZeroModelClosedForm) {
  const std::size_t k = 1;
  const auto f = small_fixture(k, 11);
  EmbeddingTables<double> zero(6, 3, 4);
  SparseGradients<double> grads(zero);
  const double loss = nce_objective_and_gradients(zero, std::span<const Triple>(f.batch), f.noise, f.items, &f.users, grads);

  // Every score is 0, so a positive contributes log sigmoid(-log Pn(t)) and a
  // noise draw log sigmoid(log Pn(t')). Item id r has rank r, user id r rank r.
  double total = 0.0;
  for (std::size_t t = 0; t < f.batch.size(); ++t) {
    const auto& tr = f.batch[t];
    total += oracle_log_sigmoid(-std::log(zipf(tr.item_a, 6))) + oracle_log_sigmoid(std::log(zipf(f.noise.for_anchor[t], 6)));
    total += oracle_log_sigmoid(-std::log(zipf(tr.item_b, 6))) + oracle_log_sigmoid(std::log(zipf(f.noise.for_target[t], 6)));
    total += oracle_log_sigmoid(-std::log(zipf(tr.user, 3))) + oracle_log_sigmoid(std::log(zipf(f.noise.for_user[t], 3)));
  }
  EXPECT_NEAR(loss, -total / 6.0, 1e-12);
}

TEST(NceObjective, ZeroModelWithoutUserTerm) {
  const auto items = make_zipf_sampler(counts_table({5, 4, 3}));
  const std::vector<Triple> batch{{0, 0, 1}};
  Rng rng(2);
  const auto noise = draw_noise(batch, 1, items, nullptr, rng);
  EXPECT_FALSE(noise.user_term);
  EXPECT_TRUE(noise.for_user.empty());
  EmbeddingTables<double> zero(3, 1, 2);
  SparseGradients<double> grads(zero);
  const double loss = nce_objective_and_gradients(zero, std::span<const Triple>(batch), noise, items, nullptr, grads);
  const double expected = -(oracle_log_sigmoid(-std::log(zipf(0, 3))) + oracle_log_sigmoid(std::log(zipf(noise.for_anchor[0], 3))) +
                            oracle_log_sigmoid(-std::log(zipf(1, 3))) + oracle_log_sigmoid(std::log(zipf(noise.for_target[0], 3)))) /
                          2.0;
  EXPECT_NEAR(loss, expected, 1e-12);
}

TEST(NceObjective, UserTermNeedsSampler) {
  const auto f = small_fixture(2, 1);
  EmbeddingTables<double> zero(6, 3, 2);
  SparseGradients<double> grads(zero);
  EXPECT_THROW(nce_objective_and_gradients(zero, std::span<const Triple>(f.batch), f.noise, f.items, nullptr, grads),
               InvalidArgument);
  EXPECT_THROW(nce_objective_and_gradients(zero, std::span<const Triple>(), f.noise, f.items, &f.users, grads),
               InvalidArgument);
}

EmbeddingTables<double> random_tables(std::size_t n, std::size_t m, std::size_t d, std::uint64_t seed) {
  EmbeddingTables<double> t(n, m, d);
  Rng rng(seed);
  for (auto* mat : {&t.P, &t.Q, &t.H}) {
    for (double& v : *mat) v = rng.uniform(-0.8, 0.8);
  }
  return t;
}

TEST(NceObjective, UntouchedRowsAreExactlyZero) {
  // 20 items with a heavy head: the noise for two triples cannot touch all rows.
  std::vector<std::uint64_t> counts(20);
  for (std::size_t i = 0; i < 20; ++i) counts[i] = 100 - i;
  const auto items = make_zipf_sampler(counts_table(counts));
  const auto users = make_zipf_sampler(counts_table({4, 3, 2, 1}));
  const std::vector<Triple> batch{{0, 0, 1}, {1, 2, 3}};
  Rng rng(5);
  const auto noise = draw_noise(batch, 2, items, &users, rng);
  const auto t = random_tables(20, 4, 3, 8);
  SparseGradients<double> grads(t);
  nce_objective_and_gradients(t, std::span<const Triple>(batch), noise, items, &users, grads);

  std::set<ItemId> p_rows, q_rows;
  std::set<UserId> h_rows;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    p_rows.insert(batch[b].item_a);
    q_rows.insert(batch[b].item_b);
    h_rows.insert(batch[b].user);
    for (std::size_t n = 0; n < 2; ++n) {
      p_rows.insert(noise.for_anchor[b * 2 + n]);
      q_rows.insert(noise.for_target[b * 2 + n]);
      h_rows.insert(noise.for_user[b * 2 + n]);
    }
  }
  std::size_t untouched = 0;
  for (ItemId i = 0; i < 20; ++i) {
    if (!p_rows.count(i)) {
      EXPECT_TRUE(grads.P.find(i).empty());
      ++untouched;
    }
    if (!q_rows.count(i)) EXPECT_TRUE(grads.Q.find(i).empty());
  }
  for (UserId u = 0; u < 4; ++u) {
    if (!h_rows.count(u)) EXPECT_TRUE(grads.H.find(u).empty());
  }
  EXPECT_GT(untouched, 0u);
  EXPECT_EQ(grads.P.rows().size(), p_rows.size());
  EXPECT_EQ(grads.Q.rows().size(), q_rows.size());
  EXPECT_EQ(grads.H.rows().size(), h_rows.size());
}

// Dense copy of a sparse gradient.
std::vector<double> densify(const SparseRows<double>& g, std::size_t rows, std::size_t d) {
  std::vector<double> out(rows * d, 0.0);
  for (std::size_t s = 0; s < g.rows().size(); ++s) {
    const auto v = g.values_at(s);
    for (std::size_t k = 0; k < d; ++k) out[g.rows()[s] * d + k] = v[k];
  }
  return out;
}

struct FdResult {
  double worst_relative = 0.0;
  std::size_t checked = 0;
};

// Compares `analytic` for every parameter against central differences of the
// double-precision loss.
template <typename Analytic>
FdResult finite_difference_check(EmbeddingTables<double> t, const Fixture& f, Analytic analytic, double step) {
  auto loss_at = [&](const EmbeddingTables<double>& tables) {
    SparseGradients<double> scratch(tables);
    return nce_objective_and_gradients(tables, std::span<const Triple>(f.batch), f.noise, f.items, &f.users, scratch);
  };
  FdResult result;
  const auto dense = analytic(t);
  const std::vector<double>* grads[] = {&dense[0], &dense[1], &dense[2]};
  std::vector<double>* params[] = {&t.P, &t.Q, &t.H};
  for (int mat = 0; mat < 3; ++mat) {
    auto& param = *params[mat];
    for (std::size_t e = 0; e < param.size(); ++e) {
      const double saved = param[e];
      param[e] = saved + step;
      const double up = loss_at(t);
      param[e] = saved - step;
      const double down = loss_at(t);
      param[e] = saved;
      const double fd = (up - down) / (2 * step);
      const double a = (*grads[mat])[e];
      const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-3});
      result.worst_relative = std::max(result.worst_relative, rel);
      ++result.checked;
    }
  }
  return result;
}

std::array<std::vector<double>, 3> double_gradients(const EmbeddingTables<double>& t, const Fixture& f) {
  SparseGradients<double> g(t);
  nce_objective_and_gradients(t, std::span<const Triple>(f.batch), f.noise, f.items, &f.users, g);
  return {densify(g.P, t.items, t.dim), densify(g.Q, t.items, t.dim), densify(g.H, t.users, t.dim)};
}

TEST(NceGradient, MatchesCentralDifferencesInDouble) {
  const auto f = small_fixture(2, 42);
  const auto t = random_tables(6, 3, 3, 99);
  const auto r = finite_difference_check(t, f, [&](const auto& tables) { return double_gradients(tables, f); }, 1e-5);
  EXPECT_EQ(r.checked, 3u * (6 + 6 + 3));
  EXPECT_LT(r.worst_relative, 1e-6);
}

TEST(NceGradient, PropertyRandomSmallModels) {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    Rng pick(seed);
    const std::size_t n = 2 + pick.uniform_index(9);  // 2..10 items
    const std::size_t m = 2 + pick.uniform_index(3);
    const std::size_t d = 1 + pick.uniform_index(4);  // 1..4
    const std::size_t k = 1 + pick.uniform_index(4);
    std::vector<std::uint64_t> ic(n), uc(m);
    for (auto& c : ic) c = pick.uniform_index(50);
    for (auto& c : uc) c = pick.uniform_index(50);
    Fixture f{make_zipf_sampler(counts_table(ic)), make_zipf_sampler(counts_table(uc)), {}, {}};
    for (int b = 0; b < 3; ++b) {
      const auto a = static_cast<ItemId>(pick.uniform_index(n));
      auto c = static_cast<ItemId>(pick.uniform_index(n - 1));
      if (c >= a) ++c;
      f.batch.push_back({static_cast<UserId>(pick.uniform_index(m)), a, c});
    }
    f.noise = draw_noise(f.batch, k, f.items, &f.users, pick);
    const auto t = random_tables(n, m, d, seed + 1000);

    const auto dbl = finite_difference_check(t, f, [&](const auto& tables) { return double_gradients(tables, f); }, 1e-5);
    EXPECT_LT(dbl.worst_relative, 1e-6) << "seed " << seed;

    // Single-precision analytic gradient against the same differences.
    const auto single = finite_difference_check(
        t, f,
        [&](const auto& tables) {
          const auto tf = tables.template cast<float>();
          SparseGradients<float> g(tf);
          nce_objective_and_gradients(tf, std::span<const Triple>(f.batch), f.noise, f.items, &f.users, g);
          std::array<std::vector<double>, 3> out;
          const SparseRows<float>* rows[] = {&g.P, &g.Q, &g.H};
          const std::size_t counts[] = {tf.items, tf.items, tf.users};
          for (int mat = 0; mat < 3; ++mat) {
            out[mat].assign(counts[mat] * tf.dim, 0.0);
            for (std::size_t s = 0; s < rows[mat]->rows().size(); ++s) {
              const auto v = rows[mat]->values_at(s);
              for (std::size_t kk = 0; kk < tf.dim; ++kk) out[mat][rows[mat]->rows()[s] * tf.dim + kk] = v[kk];
            }
          }
          return out;
        },
        1e-5);
    EXPECT_LT(single.worst_relative, 1e-4) << "seed " << seed;
  }
}

}  // namespace
}  // namespace wbrec
