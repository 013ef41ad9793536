#pragma once

#include <cstddef>
#include <vector>

#include "opsig/cfg.hpp"

namespace opsig {

struct MatchOptions {
  std::size_t budget = 1'000'000;  // search states per (pattern, target) pair
  std::size_t max_maps = 32;       // 0: keep every mapping
  std::size_t max_pattern_nodes = 20;
  // Turns hash agreement from a score into a hard constraint.
  bool require_equal_hashes = false;
  // Mappings with fewer agreeing nodes are neither kept nor explored.
  std::size_t min_agreeing = 0;
};

// target_of[p] is the target node mapped to pattern node p.
struct Mapping {
  std::vector<int> target_of;
  std::size_t agreeing = 0;  // pattern nodes whose hash equals their image's

  friend bool operator==(const Mapping&, const Mapping&) = default;
};

struct MonomorphismResult {
  // Best agreement first, then lexicographic. With a max_maps cap, ties at
  // the cut are resolved in favour of the mapping found first.
  std::vector<Mapping> mappings;
  bool budget_exhausted = false;
  std::size_t states = 0;
};

// Injective, edge-preserving (non-induced) maps of `pattern` into `target`.
// Throws std::invalid_argument when the pattern exceeds max_pattern_nodes.
MonomorphismResult find_monomorphisms(const ControlFlowGraph& pattern,
                                      const ControlFlowGraph& target,
                                      const MatchOptions& options = {});

// Checks injectivity and edge preservation directly against the edge lists.
bool is_monomorphism(const ControlFlowGraph& pattern, const ControlFlowGraph& target,
                     const std::vector<int>& target_of);

// Fraction of pattern nodes whose hash matches their image. Throws
// std::invalid_argument for a mapping that is not a monomorphism.
double hash_agreement(const ControlFlowGraph& pattern, const ControlFlowGraph& target,
                      const std::vector<int>& target_of);

// 1 - hash_agreement.
double cfg_distance(const ControlFlowGraph& pattern, const ControlFlowGraph& target,
                    const std::vector<int>& target_of);

// Full agreement, equal node counts and equal edge counts (so the edge map is
// a bijection).
bool is_exact_match(const ControlFlowGraph& pattern, const ControlFlowGraph& target,
                    const std::vector<int>& target_of);

// Hash-preserving isomorphism test.
bool hash_isomorphic(const ControlFlowGraph& a, const ControlFlowGraph& b);

}  // namespace opsig
