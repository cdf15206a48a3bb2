#include "ip_graph.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <queue>

#include "wbrec/binary_io.hpp"

namespace wbrec {

namespace {

/// Per-thread visited marks; a generation counter avoids clearing per query.
struct VisitedMarks {
  std::vector<std::uint32_t> marks;
  std::uint32_t generation = 0;

  void reset(std::size_t count) {
    if (marks.size() < count) marks.assign(count, 0);
    if (++generation == 0) {
      std::fill(marks.begin(), marks.end(), 0);
      generation = 1;
    }
  }
  bool visit(std::uint32_t id) {
    if (marks[id] == generation) return false;
    marks[id] = generation;
    return true;
  }
};

VisitedMarks& visited_marks() {
  thread_local VisitedMarks marks;
  return marks;
}

}  // namespace

InnerProductGraph::InnerProductGraph(const float* vectors, std::size_t count, std::size_t dim,
                                     const GraphParams& params)
    : vectors_(vectors), count_(count), dim_(dim), params_(params) {
  if (params_.M < 2) throw InvalidArgument("graph degree M must be >= 2");
  if (params_.ef_construction < 1) throw InvalidArgument("ef_construction must be >= 1");
  std::vector<double> norms(count_);
  double largest = 0.0;
  for (std::size_t i = 0; i < count_; ++i) {
    const float* v = vector(static_cast<std::uint32_t>(i));
    double sq = 0.0;
    for (std::size_t k = 0; k < dim_; ++k) sq += static_cast<double>(v[k]) * v[k];
    norms[i] = sq;
    largest = std::max(largest, sq);
  }
  lift_.resize(count_);
  for (std::size_t i = 0; i < count_; ++i) lift_[i] = static_cast<float>(std::sqrt(largest - norms[i]));
}

std::vector<std::uint32_t>& InnerProductGraph::links(std::uint32_t node, std::uint32_t level) {
  return links_[node][level];
}

const std::vector<std::uint32_t>& InnerProductGraph::links(std::uint32_t node, std::uint32_t level) const {
  return links_[node][level];
}

std::span<const std::uint32_t> InnerProductGraph::neighbours(std::uint32_t node, std::uint32_t level) const {
  if (node >= count_ || level > levels_[node]) return {};
  return links(node, level);
}

void InnerProductGraph::build() {
  levels_.resize(count_);
  links_.assign(count_, {});
  Rng rng(params_.seed);
  const double level_mult = 1.0 / std::log(static_cast<double>(params_.M));
  for (std::size_t i = 0; i < count_; ++i) {
    const double u = 1.0 - rng.uniform01();  // (0, 1]
    levels_[i] = static_cast<std::uint32_t>(std::floor(-std::log(u) * level_mult));
    links_[i].resize(levels_[i] + 1);
  }
  empty_ = true;
  for (std::uint32_t i = 0; i < count_; ++i) insert(i);
}

template <typename Score>
std::uint32_t InnerProductGraph::greedy_descend(const Score& score_of, std::uint32_t start, std::uint32_t from_level,
                                                std::uint32_t to_level) const {
  std::uint32_t current = start;
  float best = score_of(current);
  for (std::uint32_t level = from_level + 1; level-- > to_level;) {
    bool improved = true;
    while (improved) {
      improved = false;
      for (std::uint32_t nb : links(current, level)) {
        const float s = score_of(nb);
        if (s > best || (s == best && nb < current)) {
          best = s;
          current = nb;
          improved = true;
        }
      }
    }
  }
  return current;
}

template <typename Score>
std::vector<InnerProductGraph::Candidate> InnerProductGraph::beam_search(const Score& score_of, std::uint32_t start,
                                                                         std::size_t ef, std::uint32_t level) const {
  auto better = [](const Candidate& a, const Candidate& b) {
    return a.score > b.score || (a.score == b.score && a.id < b.id);
  };
  auto worse = [&](const Candidate& a, const Candidate& b) { return better(b, a); };
  // frontier: best on top; results: worst on top.
  std::priority_queue<Candidate, std::vector<Candidate>, decltype(worse)> frontier(worse);
  std::priority_queue<Candidate, std::vector<Candidate>, decltype(better)> results(better);

  auto& visited = visited_marks();
  visited.reset(count_);
  visited.visit(start);
  const Candidate first{score_of(start), start};
  frontier.push(first);
  results.push(first);

  while (!frontier.empty()) {
    const Candidate c = frontier.top();
    if (results.size() >= ef && better(results.top(), c)) break;
    frontier.pop();
    for (std::uint32_t nb : links(c.id, level)) {
      if (!visited.visit(nb)) continue;
      const Candidate cand{score_of(nb), nb};
      if (results.size() < ef || better(cand, results.top())) {
        frontier.push(cand);
        results.push(cand);
        if (results.size() > ef) results.pop();
      }
    }
  }

  std::vector<Candidate> out;
  out.reserve(results.size());
  while (!results.empty()) {
    out.push_back(results.top());
    results.pop();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::vector<std::uint32_t> InnerProductGraph::diverse_links(const std::vector<Candidate>& candidates,
                                                           std::size_t cap) const {
  std::vector<std::uint32_t> kept;
  std::vector<std::uint32_t> pruned;
  for (const auto& c : candidates) {
    if (kept.size() >= cap) break;
    bool diverse = true;
    for (std::uint32_t s : kept) {
      if (link_score(c.id, s) >= c.score) {
        diverse = false;
        break;
      }
    }
    (diverse ? kept : pruned).push_back(c.id);
  }
  for (std::size_t p = 0; p < pruned.size() && kept.size() < cap; ++p) kept.push_back(pruned[p]);
  return kept;
}

std::vector<std::uint32_t> InnerProductGraph::select_links(std::uint32_t base, const std::vector<Candidate>& candidates,
                                                          std::size_t cap) const {
  auto kept = diverse_links(candidates, std::max<std::size_t>(1, cap / 2));
  std::vector<Candidate> raw;
  for (const auto& c : candidates) {
    if (std::find(kept.begin(), kept.end(), c.id) == kept.end()) raw.push_back({score(vector(base), c.id), c.id});
  }
  std::sort(raw.begin(), raw.end(), [](const Candidate& a, const Candidate& b) {
    return a.score > b.score || (a.score == b.score && a.id < b.id);
  });
  for (std::size_t r = 0; r < raw.size() && kept.size() < cap; ++r) kept.push_back(raw[r].id);
  return kept;
}

void InnerProductGraph::connect(std::uint32_t node, std::uint32_t neighbour, std::uint32_t level) {
  auto& list = links(node, level);
  list.push_back(neighbour);
  const std::size_t cap = max_links(level);
  if (list.size() <= cap) return;
  std::vector<Candidate> ranked;
  ranked.reserve(list.size());
  for (std::uint32_t id : list) ranked.push_back({link_score(node, id), id});
  std::sort(ranked.begin(), ranked.end(), [](const Candidate& a, const Candidate& b) {
    return a.score > b.score || (a.score == b.score && a.id < b.id);
  });
  list = select_links(node, ranked, cap);
}

void InnerProductGraph::insert(std::uint32_t node) {
  const std::uint32_t level = levels_[node];
  if (empty_) {
    entry_ = node;
    top_level_ = level;
    empty_ = false;
    return;
  }
  const auto score_of = [this, node](std::uint32_t id) { return link_score(node, id); };
  std::uint32_t current = entry_;
  if (level < top_level_) current = greedy_descend(score_of, entry_, top_level_, level + 1);
  for (std::uint32_t l = std::min(level, top_level_) + 1; l-- > 0;) {
    const auto found = beam_search(score_of, current, params_.ef_construction, l);
    auto& mine = links(node, l);
    mine = select_links(node, found, params_.M);
    for (std::uint32_t nb : mine) connect(nb, node, l);
    current = found.front().id;
  }
  if (level > top_level_) {
    entry_ = node;
    top_level_ = level;
  }
}

RankedList InnerProductGraph::search(const float* query, std::size_t want, std::size_t ef) const {
  RankedList out;
  if (empty_ || want == 0) return out;
  const auto score_of = [this, query](std::uint32_t id) { return score(query, id); };
  std::uint32_t start = entry_;
  if (top_level_ > 0) start = greedy_descend(score_of, entry_, top_level_, 1);
  const auto found = beam_search(score_of, start, std::max(ef, want), 0);
  const std::size_t take = std::min(want, found.size());
  out.reserve(take);
  for (std::size_t r = 0; r < take; ++r) out.push_back({found[r].id, found[r].score});
  return out;
}

void InnerProductGraph::save(std::ostream& out) const {
  io::write_le<std::uint32_t>(out, entry_);
  io::write_le<std::uint32_t>(out, top_level_);
  for (std::size_t node = 0; node < count_; ++node) {
    io::write_le<std::uint32_t>(out, levels_[node]);
    for (const auto& list : links_[node]) {
      io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(list.size()));
      for (std::uint32_t id : list) io::write_le<std::uint32_t>(out, id);
    }
  }
}

InnerProductGraph InnerProductGraph::load(std::istream& in, const float* vectors, std::size_t count,
                                          std::size_t dim, const GraphParams& params) {
  InnerProductGraph graph(vectors, count, dim, params);
  graph.entry_ = io::read_le<std::uint32_t>(in, "graph entry point");
  graph.top_level_ = io::read_le<std::uint32_t>(in, "graph top level");
  graph.levels_.resize(count);
  graph.links_.resize(count);
  for (std::size_t node = 0; node < count; ++node) {
    const auto level = io::read_le<std::uint32_t>(in, "node level");
    if (level > graph.top_level_) throw FormatError("node level above graph top level");
    graph.levels_[node] = level;
    graph.links_[node].resize(level + 1);
    for (auto& list : graph.links_[node]) {
      const auto size = io::read_le<std::uint32_t>(in, "adjacency size");
      if (size > 2 * params.M) throw FormatError("adjacency list exceeds graph degree");
      list.resize(size);
      for (auto& id : list) {
        id = io::read_le<std::uint32_t>(in, "adjacency");
        if (id >= count) throw FormatError("adjacency id out of range");
      }
    }
  }
  for (std::size_t node = 0; node < count; ++node) {
    for (std::uint32_t l = 0; l < graph.links_[node].size(); ++l) {
      for (auto id : graph.links_[node][l]) {
        if (graph.levels_[id] < l) throw FormatError("adjacency references a node below its level");
      }
    }
  }
  if (count > 0 && (graph.entry_ >= count || graph.levels_[graph.entry_] != graph.top_level_)) {
    throw FormatError("invalid graph entry point");
  }
  graph.empty_ = count == 0;
  return graph;
}

}  // namespace wbrec
