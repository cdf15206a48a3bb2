#include "wbrec/train.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "wbrec/parallel.hpp"

namespace wbrec {

void TrainConfig::validate() const {
  if (dim < 1) throw InvalidArgument("dimension must be >= 1");
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be > 0");
  if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
  if (negatives < 1) throw InvalidArgument("negatives per target must be >= 1");
  if (triples < 1) throw InvalidArgument("triple count must be >= 1");
  if (threads < 1) throw InvalidArgument("thread count must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidArgument("Adam decay rates must lie in [0, 1)");
  }
  if (!(resolved_init_scale() >= 0.0)) throw InvalidArgument("init scale must be >= 0");
}

TrainSeeds derive_train_seeds(std::uint64_t seed) {
  Rng master(seed);
  TrainSeeds s{};
  s.init = master.fork();
  s.triples = master.fork();
  s.epochs = master.fork();
  return s;
}

SparseAdam::SparseAdam(const EmbeddingTables<float>& shape, double learning_rate, double beta1, double beta2,
                       double epsilon)
    : lr_(learning_rate),
      beta1_(beta1),
      beta2_(beta2),
      epsilon_(epsilon),
      m_(shape.items, shape.users, shape.dim),
      v_(shape.items, shape.users, shape.dim) {}

void SparseAdam::update(std::vector<float>& param, std::vector<float>& m, std::vector<float>& v,
                        const SparseRows<float>& grad, std::size_t dim, double lr_t) {
  const auto b1 = static_cast<float>(beta1_);
  const auto b2 = static_cast<float>(beta2_);
  const auto eps = static_cast<float>(epsilon_);
  const auto lr = static_cast<float>(lr_t);
  const auto& rows = grad.rows();
  for (std::size_t s = 0; s < rows.size(); ++s) {
    const auto g = grad.values_at(s);
    const std::size_t base = std::size_t{rows[s]} * dim;
    for (std::size_t k = 0; k < dim; ++k) {
      float& mk = m[base + k];
      float& vk = v[base + k];
      mk = b1 * mk + (1.0f - b1) * g[k];
      vk = b2 * vk + (1.0f - b2) * g[k] * g[k];
      param[base + k] -= lr * mk / (std::sqrt(vk) + eps);
    }
  }
}

void SparseAdam::step(EmbeddingTables<float>& params, const SparseGradients<float>& grads) {
  ++step_;
  const double t = static_cast<double>(step_);
  const double lr_t = lr_ * std::sqrt(1.0 - std::pow(beta2_, t)) / (1.0 - std::pow(beta1_, t));
  update(params.P, m_.P, v_.P, grads.P, params.dim, lr_t);
  update(params.Q, m_.Q, v_.Q, grads.Q, params.dim, lr_t);
  update(params.H, m_.H, v_.H, grads.H, params.dim, lr_t);
}

EmbeddingTables<float> initialize_tables(std::size_t items, std::size_t users, const TrainConfig& config,
                                         std::uint64_t seed) {
  EmbeddingTables<float> t(items, users, config.dim);
  const double scale = config.resolved_init_scale();
  Rng rng(seed);
  for (auto* matrix : {&t.P, &t.Q, &t.H}) {
    for (float& v : *matrix) v = static_cast<float>(rng.uniform(-scale, scale));
  }
  return t;
}

TripleModel train(const TransactionLog& log, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  const auto seeds = derive_train_seeds(config.seed);
  return train(log, sample_triples(log, config.triples, seeds.triples), config, on_epoch);
}

namespace {

bool all_finite(const EmbeddingTables<float>& t, const SparseGradients<float>& touched) {
  auto check = [&](const std::vector<float>& m, const SparseRows<float>& rows) {
    for (auto r : rows.rows()) {
      for (std::size_t k = 0; k < t.dim; ++k) {
        if (!std::isfinite(m[std::size_t{r} * t.dim + k])) return false;
      }
    }
    return true;
  };
  return check(t.P, touched.P) && check(t.Q, touched.Q) && check(t.H, touched.H);
}

}  // namespace

TripleModel train(const TransactionLog& log, std::vector<Triple> triples, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  const std::size_t n = log.vocabulary.item_count();
  const std::size_t m = log.vocabulary.user_count();
  if (triples.empty()) throw InvalidArgument("training needs at least one triple");
  for (const auto& t : triples) {
    if (t.user >= m || t.item_a >= n || t.item_b >= n || t.item_a == t.item_b) {
      throw InvalidArgument("triple references ids outside the vocabulary");
    }
  }

  const auto seeds = derive_train_seeds(config.seed);
  const FrequencyTable item_freq = item_frequencies(log);
  const ZipfSampler item_sampler(item_freq);
  const FrequencyTable user_freq = user_frequencies(log);
  std::optional<ZipfSampler> user_sampler;
  if (config.user_term && m >= 2) user_sampler.emplace(user_freq);
  const ZipfSampler* users = user_sampler ? &*user_sampler : nullptr;

  TripleModel model;
  model.vocabulary = log.vocabulary;
  model.item_popularity = item_freq.count;
  model.tables = initialize_tables(n, m, config, seeds.init);
  auto& tables = model.tables;

  SparseAdam adam(tables, config.learning_rate, config.beta1, config.beta2, config.epsilon);
  const std::size_t shards = std::min(config.threads, config.batch_size);
  std::vector<SparseGradients<float>> shard_grads;
  for (std::size_t s = 0; s < shards; ++s) shard_grads.emplace_back(tables);
  SparseGradients<float> total(tables);
  std::vector<double> shard_loglik(shards);

  Rng rng(seeds.epochs);
  std::vector<std::size_t> order(triples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Triple> batch;
  batch.reserve(config.batch_size);

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);

    double loss_sum = 0.0;
    std::size_t term_count = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t b = start; b < end; ++b) batch.push_back(triples[order[b]]);

      const NoiseDraws noise = draw_noise(batch, config.negatives, item_sampler, users, rng);
      const std::size_t terms = batch.size() * nce_terms_per_triple(noise);
      const float scale = -1.0f / static_cast<float>(terms);

      for (std::size_t s = 0; s < shards; ++s) {
        shard_grads[s].clear();
        shard_loglik[s] = 0.0;
      }
      parallel_chunks(batch.size(), shards, [&](std::size_t shard, std::size_t begin, std::size_t stop) {
        shard_loglik[shard] = nce_accumulate<float>(tables, std::span<const Triple>(batch).subspan(begin, stop - begin),
                                                    noise, begin, item_sampler, users, scale, shard_grads[shard]);
      });
      const SparseGradients<float>* grads = &shard_grads[0];
      if (shards > 1) {
        total.clear();
        for (const auto& g : shard_grads) total.add(g);
        grads = &total;
      }
      const double loglik = std::accumulate(shard_loglik.begin(), shard_loglik.end(), 0.0);
      if (!std::isfinite(loglik)) {
        std::ostringstream msg;
        msg << "non-finite NCE loss at epoch " << epoch << ", batch starting at triple " << start
            << " (learning rate " << config.learning_rate << "); try a smaller learning rate";
        throw TrainingDiverged(msg.str());
      }
      loss_sum += -loglik;
      term_count += terms;

      adam.step(tables, *grads);
      if (!all_finite(tables, *grads)) {
        std::ostringstream msg;
        msg << "non-finite embedding after update at epoch " << epoch << ", batch starting at triple " << start;
        throw TrainingDiverged(msg.str());
      }
    }
    if (on_epoch) {
      const std::chrono::duration<double> took = std::chrono::steady_clock::now() - started;
      on_epoch(EpochStats{epoch, loss_sum / static_cast<double>(term_count), took.count()});
    }
  }
  return model;
}

}  // namespace wbrec
