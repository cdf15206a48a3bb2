#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "wbrec/corpus.hpp"
#include "wbrec/model.hpp"
#include "wbrec/nce.hpp"
#include "wbrec/triples.hpp"

namespace wbrec {

struct TrainConfig {
  std::size_t dim = 64;
  double learning_rate = 1.0;
  std::size_t batch_size = 1000;
  std::size_t max_epochs = 100;
  std::size_t negatives = 5;
  std::size_t triples = 5'000'000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Uniform init half-width; defaults to 0.5 / dim.
  std::optional<double> init_scale;
  /// Include the user-prediction term P(u | i, j).
  bool user_term = true;
  std::uint64_t seed = 1;
  /// Gradient shards per batch. Results depend on (seed, threads) only.
  std::size_t threads = 1;

  void validate() const;
  double resolved_init_scale() const { return init_scale.value_or(0.5 / static_cast<double>(dim)); }
};

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double seconds = 0.0;
};

class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

/// Lazy (row-sparse) Adam: moments and parameters of a row change only when
/// the row has a gradient in the current step; bias correction uses the
/// global step count.
class SparseAdam {
 public:
  SparseAdam(const EmbeddingTables<float>& shape, double learning_rate, double beta1, double beta2,
             double epsilon);

  void step(EmbeddingTables<float>& params, const SparseGradients<float>& grads);
  std::uint64_t steps() const { return step_; }

 private:
  void update(std::vector<float>& param, std::vector<float>& m, std::vector<float>& v,
              const SparseRows<float>& grad, std::size_t dim, double lr_t);

  double lr_, beta1_, beta2_, epsilon_;
  std::uint64_t step_ = 0;
  EmbeddingTables<float> m_;
  EmbeddingTables<float> v_;
};

/// Uniform init in [-scale, scale] for all three matrices.
EmbeddingTables<float> initialize_tables(std::size_t items, std::size_t users, const TrainConfig& config,
                                         std::uint64_t seed);

using EpochCallback = std::function<void(const EpochStats&)>;

/// Samples `config.triples` triples once, then runs `max_epochs` epochs of
/// shuffled mini-batches. Deterministic for a fixed (seed, threads).
TripleModel train(const TransactionLog& log, const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Same, with caller-supplied triples (e.g. from a triple cache).
TripleModel train(const TransactionLog& log, std::vector<Triple> triples, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Seed streams derived from TrainConfig::seed.
struct TrainSeeds {
  std::uint64_t init;
  std::uint64_t triples;
  std::uint64_t epochs;
};
TrainSeeds derive_train_seeds(std::uint64_t seed);

}  // namespace wbrec
