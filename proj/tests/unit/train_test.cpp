#include "wbrec/train.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "wbrec/synthetic.hpp"

namespace wbrec {
namespace {

PlantedCorpusConfig small_planted() {
  PlantedCorpusConfig c;
  c.pairs = 60;
  c.users = 300;
  c.preferred_pairs_per_user = 6;
  c.seed = 5;
  return c;
}

TrainConfig small_config() {
  TrainConfig c;
  c.dim = 16;
  c.learning_rate = 0.02;
  c.batch_size = 256;
  c.max_epochs = 20;
  c.triples = 20000;
  c.seed = 3;
  return c;
}

bool finite(const EmbeddingTables<float>& t) {
  for (auto* mat : {&t.P, &t.Q, &t.H}) {
    for (float v : *mat) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_DOUBLE_EQ(c.resolved_init_scale(), 0.5 / 64);
  auto bad = c;
  bad.dim = 0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = c;
  bad.learning_rate = 0.0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = c;
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = c;
  bad.negatives = 0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
}

TEST(Train, ZeroEpochsEqualsInitialization) {
  const auto log = make_planted_corpus(small_planted());
  auto config = small_config();
  config.max_epochs = 0;
  const auto model = train(log, config);
  const auto seeds = derive_train_seeds(config.seed);
  const auto init = initialize_tables(log.vocabulary.item_count(), log.vocabulary.user_count(), config, seeds.init);
  EXPECT_EQ(model.tables, init);
  const float scale = 0.5f / 16;
  for (float v : init.P) EXPECT_LE(std::abs(v), scale);
}

TEST(Train, SameSeedIsBitwiseReproducible) {
  const auto log = make_planted_corpus(small_planted());
  auto config = small_config();
  config.max_epochs = 3;
  const auto a = train(log, config);
  const auto b = train(log, config);
  EXPECT_EQ(a.tables, b.tables);
  config.seed = 4;
  EXPECT_NE(train(log, config).tables, a.tables);
}

TEST(Train, ShardedGradientsReproducibleForFixedThreads) {
  const auto log = make_planted_corpus(small_planted());
  auto config = small_config();
  config.max_epochs = 2;
  config.threads = 3;
  EXPECT_EQ(train(log, config).tables, train(log, config).tables);
}

TEST(Train, CallerSuppliedTriplesMatchInternalSampling) {
  const auto log = make_planted_corpus(small_planted());
  auto config = small_config();
  config.max_epochs = 2;
  const auto triples = sample_triples(log, config.triples, derive_train_seeds(config.seed).triples);
  EXPECT_EQ(train(log, triples, config).tables, train(log, config).tables);
}

TEST(Train, RejectsTriplesOutsideVocabulary) {
  const auto log = testing::make_log(1, 2, {{0, {0, 1}}});
  EXPECT_THROW(train(log, {{0, 0, 5}}, small_config()), InvalidArgument);
  EXPECT_THROW(train(log, {{0, 1, 1}}, small_config()), InvalidArgument);
  EXPECT_THROW(train(log, std::vector<Triple>{}, small_config()), InvalidArgument);
}

TEST(Train, PlantedPairsOutscoreRandomPairsAndLossSettles) {
  const auto log = make_planted_corpus(small_planted());
  const auto config = small_config();
  std::vector<double> losses;
  const auto model = train(log, config, [&](const EpochStats& s) {
    EXPECT_EQ(s.epoch, losses.size());
    losses.push_back(s.mean_loss);
  });
  ASSERT_EQ(losses.size(), 20u);
  EXPECT_TRUE(finite(model.tables));
  for (std::size_t e = 4; e < losses.size(); ++e) {
    EXPECT_LE(losses[e], losses[e - 1] * 1.05) << "epoch " << e;
  }
  EXPECT_LT(losses.back(), losses.front());

  const std::size_t n = model.item_count();
  Rng rng(17);
  double planted = 0.0, random = 0.0;
  const int samples = 2000;
  for (int s = 0; s < samples; ++s) {
    const auto u = static_cast<UserId>(rng.uniform_index(model.user_count()));
    const auto i = static_cast<ItemId>(rng.uniform_index(n));
    planted += symmetric_score(model, u, i, planted_mate(i));
    auto j = static_cast<ItemId>(rng.uniform_index(n));
    while (j == i) j = static_cast<ItemId>(rng.uniform_index(n));
    random += symmetric_score(model, u, i, j);
  }
  EXPECT_GT(planted / samples, random / samples + 1.0);
  EXPECT_EQ(model.item_popularity, item_frequencies(log).count);
}

TEST(Train, SingleUserDropsUserTerm) {
  const auto log = testing::make_log(1, 4, {{0, {0, 1}}, {0, {2, 3}}, {0, {0, 2}}});
  auto config = small_config();
  config.triples = 100;
  config.max_epochs = 3;
  const auto model = train(log, config);
  EXPECT_TRUE(finite(model.tables));
}

TEST(Train, DivergenceIsReported) {
  const auto log = make_planted_corpus(small_planted());
  auto config = small_config();
  config.learning_rate = 1e30;
  config.max_epochs = 5;
  try {
    train(log, config);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(SparseAdam, FirstStepMovesByLearningRate) {
  // With bias correction the first Adam step is lr * sign(g) up to epsilon.
  EmbeddingTables<float> params(2, 1, 2);
  SparseAdam adam(params, 0.1, 0.9, 0.999, 1e-8);
  SparseGradients<float> g(params);
  auto row = g.P.row(1);
  row[0] = 3.0f;
  row[1] = -0.5f;
  adam.step(params, g);
  EXPECT_NEAR(params.P[2], -0.1f, 1e-6);
  EXPECT_NEAR(params.P[3], 0.1f, 1e-6);
  EXPECT_EQ(params.P[0], 0.0f);
  EXPECT_EQ(params.Q, std::vector<float>(4, 0.0f));
  EXPECT_EQ(adam.steps(), 1u);
}

}  // namespace
}  // namespace wbrec
