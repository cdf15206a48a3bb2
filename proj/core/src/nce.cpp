#include "wbrec/nce.hpp"

namespace wbrec {

NoiseDraws draw_noise(std::span<const Triple> batch, std::size_t k, const ZipfSampler& items,
                      const ZipfSampler* users, Rng& rng) {
  NoiseDraws noise;
  noise.k = k;
  noise.user_term = users != nullptr;
  noise.for_anchor.reserve(batch.size() * k);
  noise.for_target.reserve(batch.size() * k);
  if (noise.user_term) noise.for_user.reserve(batch.size() * k);
  for (const Triple& tr : batch) {
    for (auto id : sample_negatives(items, k, tr.item_a, rng)) noise.for_anchor.push_back(id);
    for (auto id : sample_negatives(items, k, tr.item_b, rng)) noise.for_target.push_back(id);
    if (noise.user_term) {
      for (auto id : sample_negatives(*users, k, tr.user, rng)) noise.for_user.push_back(id);
    }
  }
  return noise;
}

}  // namespace wbrec
