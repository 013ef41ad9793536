#include "opsig/matcher.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace opsig {

namespace {

struct Adjacency {
  std::vector<std::vector<int>> out;
  std::vector<std::vector<int>> in;

  explicit Adjacency(const ControlFlowGraph& g) : out(g.successors()), in(g.predecessors()) {
    for (auto& v : out) std::sort(v.begin(), v.end());
    for (auto& v : in) std::sort(v.begin(), v.end());
  }

  bool has_edge(int from, int to) const {
    const auto& s = out[static_cast<std::size_t>(from)];
    return std::binary_search(s.begin(), s.end(), to);
  }
};

bool ranks_before(const Mapping& a, const Mapping& b) {
  if (a.agreeing != b.agreeing) return a.agreeing > b.agreeing;
  return a.target_of < b.target_of;
}

class Search {
 public:
  Search(const ControlFlowGraph& pattern, const ControlFlowGraph& target,
         const MatchOptions& options)
      : pattern_(pattern),
        target_(target),
        options_(options),
        p_adj_(pattern),
        t_adj_(target),
        target_of_(pattern.size(), -1),
        used_(target.size(), false) {
    plan_order();
  }

  MonomorphismResult run() {
    extend(0, 0);
    std::sort(result_.mappings.begin(), result_.mappings.end(), ranks_before);
    return std::move(result_);
  }

 private:
  // Pattern nodes in an order where each node (after the first of its
  // component) touches an already placed node.
  void plan_order() {
    const auto n = pattern_.size();
    std::vector<bool> placed(n, false);
    std::vector<int> links(n, 0);
    auto degree = [&](std::size_t u) { return p_adj_.out[u].size() + p_adj_.in[u].size(); };
    for (std::size_t step = 0; step < n; ++step) {
      std::size_t best = n;
      for (std::size_t u = 0; u < n; ++u) {
        if (placed[u]) continue;
        if (best == n || links[u] > links[best] ||
            (links[u] == links[best] && degree(u) > degree(best))) {
          best = u;
        }
      }
      placed[best] = true;
      order_.push_back(static_cast<int>(best));
      for (int w : p_adj_.out[best]) ++links[static_cast<std::size_t>(w)];
      for (int w : p_adj_.in[best]) ++links[static_cast<std::size_t>(w)];
    }
  }

  bool feasible(int u, int t) const {
    const auto pu = static_cast<std::size_t>(u);
    const auto tt = static_cast<std::size_t>(t);
    if (used_[tt]) return false;
    if (options_.require_equal_hashes && pattern_.nodes[pu].hash != target_.nodes[tt].hash) {
      return false;
    }
    if (p_adj_.out[pu].size() > t_adj_.out[tt].size() ||
        p_adj_.in[pu].size() > t_adj_.in[tt].size()) {
      return false;
    }
    for (int w : p_adj_.out[pu]) {
      int image = w == u ? t : target_of_[static_cast<std::size_t>(w)];
      if (image >= 0 && !t_adj_.has_edge(t, image)) return false;
    }
    for (int w : p_adj_.in[pu]) {
      int image = w == u ? t : target_of_[static_cast<std::size_t>(w)];
      if (image >= 0 && !t_adj_.has_edge(image, t)) return false;
    }
    return true;
  }

  std::vector<int> candidates(int u) const {
    const auto pu = static_cast<std::size_t>(u);
    std::vector<int> out;
    bool anchored = false;
    for (int w : p_adj_.in[pu]) {
      int image = target_of_[static_cast<std::size_t>(w)];
      if (w != u && image >= 0) {
        out = t_adj_.out[static_cast<std::size_t>(image)];
        anchored = true;
        break;
      }
    }
    if (!anchored) {
      for (int w : p_adj_.out[pu]) {
        int image = target_of_[static_cast<std::size_t>(w)];
        if (w != u && image >= 0) {
          out = t_adj_.in[static_cast<std::size_t>(image)];
          anchored = true;
          break;
        }
      }
    }
    if (!anchored) {
      out.resize(target_.size());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<int>(i);
    }
    const auto hash = pattern_.nodes[pu].hash;
    std::stable_partition(out.begin(), out.end(), [&](int t) {
      return target_.nodes[static_cast<std::size_t>(t)].hash == hash;
    });
    return out;
  }

  bool full() const {
    return options_.max_maps > 0 && result_.mappings.size() >= options_.max_maps;
  }

  // Whether a branch whose best possible agreement is `bound` can still
  // produce a mapping that would be kept.
  bool promising(std::size_t bound) const {
    if (bound < options_.min_agreeing) return false;
    return !full() || bound > worst().agreeing;
  }

  // Lowest-ranked kept mapping; only meaningful when full().
  const Mapping& worst() const { return result_.mappings.front(); }

  void record(std::size_t agreeing) {
    Mapping m{target_of_, agreeing};
    auto& kept = result_.mappings;
    // Kept as a heap whose front is the worst-ranked mapping.
    auto cmp = [](const Mapping& a, const Mapping& b) { return ranks_before(a, b); };
    if (!full()) {
      kept.push_back(std::move(m));
      if (options_.max_maps > 0) std::push_heap(kept.begin(), kept.end(), cmp);
      return;
    }
    if (m.agreeing > worst().agreeing) {
      std::pop_heap(kept.begin(), kept.end(), cmp);
      kept.back() = std::move(m);
      std::push_heap(kept.begin(), kept.end(), cmp);
    }
  }

  void extend(std::size_t depth, std::size_t agreeing) {
    if (result_.budget_exhausted) return;
    if (depth == order_.size()) {
      record(agreeing);
      return;
    }
    const std::size_t remaining = order_.size() - depth;
    if (!promising(agreeing + remaining)) return;

    const int u = order_[depth];
    const auto hash = pattern_.nodes[static_cast<std::size_t>(u)].hash;
    for (int t : candidates(u)) {
      if (++result_.states > options_.budget) {
        result_.budget_exhausted = true;
        return;
      }
      if (!feasible(u, t)) continue;
      const std::size_t gain =
          target_.nodes[static_cast<std::size_t>(t)].hash == hash ? 1 : 0;
      if (!promising(agreeing + gain + remaining - 1)) continue;
      target_of_[static_cast<std::size_t>(u)] = t;
      used_[static_cast<std::size_t>(t)] = true;
      extend(depth + 1, agreeing + gain);
      used_[static_cast<std::size_t>(t)] = false;
      target_of_[static_cast<std::size_t>(u)] = -1;
      if (result_.budget_exhausted) return;
    }
  }

  const ControlFlowGraph& pattern_;
  const ControlFlowGraph& target_;
  const MatchOptions& options_;
  Adjacency p_adj_;
  Adjacency t_adj_;
  std::vector<int> order_;
  std::vector<int> target_of_;
  std::vector<bool> used_;
  MonomorphismResult result_;
};

}  // namespace

MonomorphismResult find_monomorphisms(const ControlFlowGraph& pattern,
                                      const ControlFlowGraph& target,
                                      const MatchOptions& options) {
  if (pattern.size() > options.max_pattern_nodes) {
    throw std::invalid_argument("pattern has " + std::to_string(pattern.size()) +
                                " nodes, more than the limit of " +
                                std::to_string(options.max_pattern_nodes));
  }
  if (pattern.size() == 0 || pattern.size() > target.size() ||
      pattern.edges.size() > target.edges.size()) {
    return {};
  }
  return Search(pattern, target, options).run();
}

bool is_monomorphism(const ControlFlowGraph& pattern, const ControlFlowGraph& target,
                     const std::vector<int>& target_of) {
  if (target_of.size() != pattern.size()) return false;
  std::set<int> images;
  for (int t : target_of) {
    if (t < 0 || t >= static_cast<int>(target.size())) return false;
    if (!images.insert(t).second) return false;
  }
  std::set<CfgEdge> target_edges(target.edges.begin(), target.edges.end());
  for (const auto& e : pattern.edges) {
    CfgEdge image{target_of[static_cast<std::size_t>(e.from)],
                  target_of[static_cast<std::size_t>(e.to)]};
    if (!target_edges.count(image)) return false;
  }
  return true;
}

double hash_agreement(const ControlFlowGraph& pattern, const ControlFlowGraph& target,
                      const std::vector<int>& target_of) {
  if (!is_monomorphism(pattern, target, target_of)) {
    throw std::invalid_argument("mapping is not a monomorphism");
  }
  std::size_t agree = 0;
  for (std::size_t p = 0; p < pattern.size(); ++p) {
    if (pattern.nodes[p].hash == target.nodes[static_cast<std::size_t>(target_of[p])].hash) {
      ++agree;
    }
  }
  return static_cast<double>(agree) / static_cast<double>(pattern.size());
}

double cfg_distance(const ControlFlowGraph& pattern, const ControlFlowGraph& target,
                    const std::vector<int>& target_of) {
  return 1.0 - hash_agreement(pattern, target, target_of);
}

bool is_exact_match(const ControlFlowGraph& pattern, const ControlFlowGraph& target,
                    const std::vector<int>& target_of) {
  return pattern.size() == target.size() && pattern.edges.size() == target.edges.size() &&
         hash_agreement(pattern, target, target_of) == 1.0;
}

bool hash_isomorphic(const ControlFlowGraph& a, const ControlFlowGraph& b) {
  if (a.size() != b.size() || a.edges.size() != b.edges.size()) return false;
  std::multiset<BlockHash> ha;
  std::multiset<BlockHash> hb;
  for (const auto& n : a.nodes) ha.insert(n.hash);
  for (const auto& n : b.nodes) hb.insert(n.hash);
  if (ha != hb) return false;
  MatchOptions options;
  options.max_maps = 1;
  options.require_equal_hashes = true;
  options.max_pattern_nodes = a.size();
  return !find_monomorphisms(a, b, options).mappings.empty();
}

}  // namespace opsig
