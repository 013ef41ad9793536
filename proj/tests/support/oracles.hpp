#pragma once

// Independent reference computations used as test oracles. They share no code
// with the library beyond its plain data types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "opsig/cfg.hpp"

namespace oracle {

// Byte-at-a-time FNV-1a 64 with the published offset basis and prime.
inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string join_lines(const std::vector<std::string>& ops) {
  std::string out;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    if (i) out += '\n';
    out += ops[i];
  }
  return out;
}

// Counts every window of length n by rescanning the whole sequence.
inline std::size_t window_count(const std::vector<std::string>& seq,
                                const std::vector<std::string>& gram) {
  if (gram.empty() || seq.size() < gram.size()) return 0;
  std::size_t c = 0;
  for (std::size_t i = 0; i + gram.size() <= seq.size(); ++i) {
    bool eq = true;
    for (std::size_t j = 0; j < gram.size(); ++j) eq = eq && seq[i + j] == gram[j];
    c += eq ? 1 : 0;
  }
  return c;
}

inline double tfidf(const std::vector<std::string>& seq, const std::vector<std::string>& gram,
                    double idf) {
  if (seq.size() < gram.size()) return 0.0;
  const double windows = static_cast<double>(seq.size() - gram.size() + 1);
  return static_cast<double>(window_count(seq, gram)) / windows * idf;
}

inline double idf(std::size_t n_docs, std::size_t df) {
  return std::log((1.0 + static_cast<double>(n_docs)) / (1.0 + static_cast<double>(df))) + 1.0;
}

struct BruteMapping {
  std::vector<int> target_of;
  std::size_t agreeing = 0;
  bool operator<(const BruteMapping& o) const {
    return std::tie(target_of, agreeing) < std::tie(o.target_of, o.agreeing);
  }
};

// Tries every injective assignment of pattern nodes to target nodes.
inline std::vector<BruteMapping> all_monomorphisms(const opsig::ControlFlowGraph& p,
                                                   const opsig::ControlFlowGraph& t) {
  std::vector<BruteMapping> out;
  const int k = static_cast<int>(p.size());
  const int m = static_cast<int>(t.size());
  if (k > m) return out;
  std::set<std::pair<int, int>> tedges;
  for (const auto& e : t.edges) tedges.insert({e.from, e.to});
  std::vector<int> assign(k, -1);
  std::vector<bool> used(m, false);
  auto rec = [&](auto&& self, int i) -> void {
    if (i == k) {
      for (const auto& e : p.edges) {
        if (!tedges.count({assign[e.from], assign[e.to]})) return;
      }
      BruteMapping bm{assign, 0};
      for (int q = 0; q < k; ++q) {
        if (p.nodes[q].hash == t.nodes[assign[q]].hash) ++bm.agreeing;
      }
      out.push_back(std::move(bm));
      return;
    }
    for (int v = 0; v < m; ++v) {
      if (used[v]) continue;
      used[v] = true;
      assign[i] = v;
      self(self, i + 1);
      used[v] = false;
    }
  };
  rec(rec, 0);
  return out;
}

inline double f1(double precision, double recall) {
  return precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
}

}  // namespace oracle
