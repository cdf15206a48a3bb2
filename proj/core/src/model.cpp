#include "wbrec/model.hpp"

#include <fstream>

#include "wbrec/binary_io.hpp"

namespace wbrec {

FrequencyTable TripleModel::popularity() const {
  if (item_popularity.size() == item_count()) return frequency_table_from_counts(item_popularity);
  return frequency_table_from_counts(std::vector<std::uint64_t>(item_count(), 0));
}

void check_item(const TripleModel& model, ItemId i) {
  if (i >= model.item_count()) {
    throw InvalidArgument("item id " + std::to_string(i) + " out of range [0, " +
                          std::to_string(model.item_count()) + ")");
  }
}

void check_user(const TripleModel& model, UserId u) {
  if (u >= model.user_count()) {
    throw InvalidArgument("user id " + std::to_string(u) + " out of range [0, " +
                          std::to_string(model.user_count()) + ")");
  }
}

double cohesion_score(const TripleModel& model, UserId u, ItemId i, ItemId j) {
  check_user(model, u);
  check_item(model, i);
  check_item(model, j);
  const auto& t = model.tables;
  const auto p = t.p(i);
  const auto q = t.q(j);
  const auto h = t.h(u);
  // The user terms are grouped so swapping i and j with tied duals is exact.
  return dot_double(p, q) + (dot_double(p, h) + dot_double(q, h));
}

double symmetric_score(const TripleModel& model, UserId u, ItemId i, ItemId j) {
  check_user(model, u);
  check_item(model, i);
  check_item(model, j);
  return (cohesion_score(model, u, i, j) + cohesion_score(model, u, j, i)) / 2.0;
}

Vocabulary synthetic_vocabulary(std::size_t items, std::size_t users) {
  Vocabulary vocab;
  for (std::size_t u = 0; u < users; ++u) vocab.users.intern("u" + std::to_string(u));
  for (std::size_t i = 0; i < items; ++i) vocab.items.intern("i" + std::to_string(i));
  return vocab;
}

TripleModel random_model(std::size_t items, std::size_t users, std::size_t dim, double scale,
                         std::uint64_t seed) {
  TripleModel model;
  model.tables = EmbeddingTables<float>(items, users, dim);
  Rng rng(seed);
  for (auto* matrix : {&model.tables.H, &model.tables.P, &model.tables.Q}) {
    for (float& v : *matrix) v = static_cast<float>(rng.uniform(-scale, scale));
  }
  model.vocabulary = synthetic_vocabulary(items, users);
  return model;
}

namespace {
constexpr std::string_view kModelMagic = "T2VM";
constexpr std::string_view kPopularityMagic = "POP1";
constexpr std::uint32_t kModelVersion = 1;

ModelHeader read_header(std::istream& in) {
  io::expect_magic(in, kModelMagic);
  const auto version = io::read_le<std::uint32_t>(in, "model version");
  if (version != kModelVersion) throw FormatError("unsupported model version " + std::to_string(version));
  ModelHeader header;
  header.users = io::read_le<std::uint64_t>(in, "user count");
  header.items = io::read_le<std::uint64_t>(in, "item count");
  header.dim = io::read_le<std::uint32_t>(in, "dimension");
  if (header.dim == 0) throw FormatError("model dimension is zero");
  return header;
}
}  // namespace

void save_model(const TripleModel& model, const std::filesystem::path& path) {
  const auto& t = model.tables;
  if (model.vocabulary.user_count() != t.users || model.vocabulary.item_count() != t.items) {
    throw InvalidArgument("vocabulary size does not match embedding tables");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  io::write_magic(out, kModelMagic);
  io::write_le(out, kModelVersion);
  io::write_le<std::uint64_t>(out, t.users);
  io::write_le<std::uint64_t>(out, t.items);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim));
  io::write_floats(out, t.H);
  io::write_floats(out, t.P);
  io::write_floats(out, t.Q);
  for (const auto& name : model.vocabulary.users.names()) io::write_string(out, name);
  for (const auto& name : model.vocabulary.items.names()) io::write_string(out, name);
  if (model.item_popularity.size() == t.items) {
    io::write_magic(out, kPopularityMagic);
    for (auto c : model.item_popularity) io::write_le<std::uint64_t>(out, c);
  }
  if (!out) throw Error("write failed for " + path.string());
}

ModelHeader read_model_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_header(in);
}

TripleModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  const auto header = read_header(in);
  TripleModel model;
  model.tables = EmbeddingTables<float>(header.items, header.users, header.dim);
  io::read_floats(in, model.tables.H, "user embeddings");
  io::read_floats(in, model.tables.P, "anchor-item embeddings");
  io::read_floats(in, model.tables.Q, "dual-item embeddings");
  for (std::uint64_t u = 0; u < header.users; ++u) {
    if (model.vocabulary.users.intern(io::read_string(in, "user names")) != u) {
      throw FormatError("duplicate user name in model file");
    }
  }
  for (std::uint64_t i = 0; i < header.items; ++i) {
    if (model.vocabulary.items.intern(io::read_string(in, "item names")) != i) {
      throw FormatError("duplicate item name in model file");
    }
  }
  std::string tag(kPopularityMagic.size(), '\0');
  if (in.read(tag.data(), static_cast<std::streamsize>(tag.size()))) {
    if (tag != kPopularityMagic) throw FormatError("unexpected trailing section in model file");
    model.item_popularity.resize(header.items);
    for (auto& c : model.item_popularity) c = io::read_le<std::uint64_t>(in, "popularity");
  } else if (in.gcount() != 0) {
    throw FormatError("truncated popularity section in model file");
  }
  return model;
}

}  // namespace wbrec
