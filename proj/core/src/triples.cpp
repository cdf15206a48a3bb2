#include "wbrec/triples.hpp"

#include <cmath>
#include <fstream>

#include "wbrec/binary_io.hpp"

namespace wbrec {

std::vector<Triple> sample_triples(const TransactionLog& log, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> eligible;
  for (std::size_t b = 0; b < log.baskets.size(); ++b) {
    if (log.baskets[b].items.size() >= 2) eligible.push_back(b);
  }
  if (eligible.empty()) throw InvalidArgument("no basket with at least 2 items to draw triples from");

  Rng rng(seed);
  std::vector<Triple> triples;
  triples.reserve(count);
  for (std::size_t t = 0; t < count; ++t) {
    const Basket& basket = log.baskets[eligible[rng.uniform_index(eligible.size())]];
    const std::size_t size = basket.items.size();
    const auto a = rng.uniform_index(size);
    auto b = rng.uniform_index(size - 1);
    if (b >= a) ++b;
    triples.push_back(Triple{basket.user, basket.items[a], basket.items[b]});
  }
  return triples;
}

ZipfSampler::ZipfSampler(const FrequencyTable& freq)
    : rank_to_id_(freq.rank), id_to_rank_(freq.rank.size()) {
  if (rank_to_id_.empty()) throw InvalidArgument("cannot build a Zipf sampler over an empty vocabulary");
  for (std::size_t r = 0; r < rank_to_id_.size(); ++r) id_to_rank_[rank_to_id_[r]] = static_cast<std::uint32_t>(r);
  log_n_plus_1_ = std::log(static_cast<double>(rank_to_id_.size()) + 1.0);
}

double ZipfSampler::rank_probability(std::size_t rank) const {
  const double r = static_cast<double>(rank);
  return std::log1p(1.0 / (r + 1.0)) / log_n_plus_1_;
}

std::uint32_t ZipfSampler::sample(Rng& rng) const {
  // Inverse CDF: CDF(r) = log(r + 2) / log(N + 1).
  const double u = rng.uniform01();
  const auto r = static_cast<std::size_t>(std::exp(u * log_n_plus_1_)) - 1;
  return rank_to_id_[std::min(r, rank_to_id_.size() - 1)];
}

ZipfSampler make_zipf_sampler(const FrequencyTable& freq) { return ZipfSampler(freq); }

std::vector<std::uint32_t> sample_negatives(const ZipfSampler& sampler, std::size_t k,
                                            std::uint32_t exclude, Rng& rng) {
  std::vector<std::uint32_t> out;
  if (k == 0) return out;
  if (exclude != kNoId && sampler.size() < 2) {
    throw InvalidArgument("cannot exclude an id from a single-element sampler");
  }
  out.reserve(k);
  while (out.size() < k) {
    const auto id = sampler.sample(rng);
    if (id != exclude) out.push_back(id);
  }
  return out;
}

namespace {
constexpr std::string_view kTripleMagic = "T2VT";
constexpr std::uint32_t kTripleVersion = 1;
}  // namespace

void save_triples(std::span<const Triple> triples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  io::write_magic(out, kTripleMagic);
  io::write_le(out, kTripleVersion);
  io::write_le<std::uint64_t>(out, triples.size());
  for (const auto& t : triples) {
    io::write_le<std::uint32_t>(out, t.user);
    io::write_le<std::uint32_t>(out, t.item_a);
    io::write_le<std::uint32_t>(out, t.item_b);
  }
  if (!out) throw Error("write failed for " + path.string());
}

std::vector<Triple> load_triples(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  io::expect_magic(in, kTripleMagic);
  const auto version = io::read_le<std::uint32_t>(in, "triple cache version");
  if (version != kTripleVersion) throw FormatError("unsupported triple cache version " + std::to_string(version));
  const auto count = io::read_le<std::uint64_t>(in, "triple count");
  std::vector<Triple> triples;
  triples.reserve(count);
  for (std::uint64_t t = 0; t < count; ++t) {
    Triple tr;
    tr.user = io::read_le<std::uint32_t>(in, "triple");
    tr.item_a = io::read_le<std::uint32_t>(in, "triple");
    tr.item_b = io::read_le<std::uint32_t>(in, "triple");
    triples.push_back(tr);
  }
  return triples;
}

}  // namespace wbrec
