#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "../support/oracles.hpp"
#include "opsig/matcher.hpp"

using namespace opsig;

namespace {

ControlFlowGraph graph(std::vector<std::uint64_t> labels, std::vector<CfgEdge> edges) {
  ControlFlowGraph g;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    g.nodes.push_back({static_cast<int>(i), BlockHash{labels[i]}, 1, true});
  }
  std::sort(edges.begin(), edges.end());
  g.edges = std::move(edges);
  return g;
}

ControlFlowGraph random_graph(std::mt19937_64& rng, int nodes, double density, int labels) {
  std::vector<std::uint64_t> l(nodes);
  for (auto& x : l) x = rng() % labels;
  std::vector<CfgEdge> e;
  std::bernoulli_distribution coin(density);
  for (int a = 0; a < nodes; ++a)
    for (int b = 0; b < nodes; ++b)
      if (coin(rng)) e.push_back({a, b});
  return graph(l, e);
}

MatchOptions keep_all() {
  MatchOptions o;
  o.max_maps = 0;
  return o;
}

}  // namespace

TEST(Monomorphism, Reflexive) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    auto g = random_graph(rng, 1 + i % 6, 0.3, 4);
    auto r = find_monomorphisms(g, g);
    ASSERT_FALSE(r.mappings.empty());
    EXPECT_EQ(r.mappings.front().agreeing, g.size());
    std::vector<int> id(g.size());
    for (std::size_t k = 0; k < id.size(); ++k) id[k] = static_cast<int>(k);
    EXPECT_DOUBLE_EQ(hash_agreement(g, g, id), 1.0);
    EXPECT_TRUE(is_exact_match(g, g, id));
  }
}

TEST(Monomorphism, EdgeIntoTriangle) {
  auto edge = graph({1, 2}, {{0, 1}});
  auto tri = graph({5, 5, 5}, {{0, 1}, {1, 2}, {2, 0}});
  auto r = find_monomorphisms(edge, tri, keep_all());
  EXPECT_EQ(r.mappings.size(), 3u);
  EXPECT_EQ(r.mappings.size(), oracle::all_monomorphisms(edge, tri).size());
  for (const auto& m : r.mappings) EXPECT_TRUE(is_monomorphism(edge, tri, m.target_of));
}

TEST(Monomorphism, Pigeonhole) {
  auto p = graph({1, 1, 1, 1}, {});
  auto t = graph({1, 1, 1}, {});
  EXPECT_TRUE(find_monomorphisms(p, t).mappings.empty());
}

TEST(Monomorphism, MatchesBruteForce) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 60; ++trial) {
    auto p = random_graph(rng, 1 + trial % 4, 0.35, 3);
    auto t = random_graph(rng, 1 + trial % 7, 0.4, 3);
    auto r = find_monomorphisms(p, t, keep_all());
    auto want = oracle::all_monomorphisms(p, t);
    std::set<std::pair<std::vector<int>, std::size_t>> got_set, want_set;
    for (const auto& m : r.mappings) got_set.insert({m.target_of, m.agreeing});
    for (const auto& m : want) want_set.insert({m.target_of, m.agreeing});
    EXPECT_EQ(got_set, want_set) << "trial " << trial;
    EXPECT_FALSE(r.budget_exhausted);
  }
}

TEST(Monomorphism, OrderedByAgreement) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    auto p = random_graph(rng, 3, 0.3, 2);
    auto t = random_graph(rng, 6, 0.4, 2);
    auto r = find_monomorphisms(p, t, keep_all());
    for (std::size_t i = 1; i < r.mappings.size(); ++i) {
      const auto& a = r.mappings[i - 1];
      const auto& b = r.mappings[i];
      EXPECT_TRUE(a.agreeing > b.agreeing ||
                  (a.agreeing == b.agreeing && a.target_of < b.target_of));
    }
  }
}

TEST(Monomorphism, CappedKeepsBestAgreement) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 40; ++trial) {
    auto p = random_graph(rng, 3, 0.3, 3);
    auto t = random_graph(rng, 7, 0.4, 3);
    auto want = oracle::all_monomorphisms(p, t);
    MatchOptions o;
    o.max_maps = 1;
    auto r = find_monomorphisms(p, t, o);
    if (want.empty()) {
      EXPECT_TRUE(r.mappings.empty());
      continue;
    }
    std::size_t best = 0;
    for (const auto& m : want) best = std::max(best, m.agreeing);
    ASSERT_EQ(r.mappings.size(), 1u);
    EXPECT_EQ(r.mappings[0].agreeing, best);
  }
}

TEST(Monomorphism, MinAgreeingFilters) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    auto p = random_graph(rng, 4, 0.3, 2);
    auto t = random_graph(rng, 6, 0.4, 2);
    MatchOptions o = keep_all();
    o.min_agreeing = 2;
    auto r = find_monomorphisms(p, t, o);
    std::size_t want = 0;
    for (const auto& m : oracle::all_monomorphisms(p, t)) want += m.agreeing >= 2 ? 1 : 0;
    EXPECT_EQ(r.mappings.size(), want);
  }
}

TEST(Monomorphism, RequireEqualHashes) {
  auto p = graph({1, 2}, {{0, 1}});
  auto t = graph({1, 2, 1, 3}, {{0, 1}, {2, 3}});
  MatchOptions o = keep_all();
  o.require_equal_hashes = true;
  auto r = find_monomorphisms(p, t, o);
  ASSERT_EQ(r.mappings.size(), 1u);
  EXPECT_EQ(r.mappings[0].target_of, (std::vector<int>{0, 1}));
}

TEST(Monomorphism, BudgetExhaustion) {
  std::vector<CfgEdge> none;
  auto p = graph(std::vector<std::uint64_t>(6, 1), none);
  auto t = graph(std::vector<std::uint64_t>(12, 2), none);
  MatchOptions o = keep_all();
  o.budget = 50;
  auto r = find_monomorphisms(p, t, o);
  EXPECT_TRUE(r.budget_exhausted);
  EXPECT_LE(r.states, 51u);
}

TEST(Monomorphism, PatternTooLarge) {
  MatchOptions o;
  o.max_pattern_nodes = 2;
  auto p = graph({1, 1, 1}, {});
  EXPECT_THROW(find_monomorphisms(p, p, o), std::invalid_argument);
}

TEST(Agreement, Fractions) {
  auto p = graph({1, 2, 3, 4}, {{0, 1}, {1, 2}, {2, 3}});
  auto same = graph({1, 2, 3, 4}, {{0, 1}, {1, 2}, {2, 3}});
  auto half = graph({1, 2, 9, 9}, {{0, 1}, {1, 2}, {2, 3}});
  auto none = graph({7, 7, 7, 7}, {{0, 1}, {1, 2}, {2, 3}});
  const std::vector<int> id{0, 1, 2, 3};
  EXPECT_DOUBLE_EQ(hash_agreement(p, same, id), 1.0);
  EXPECT_DOUBLE_EQ(hash_agreement(p, half, id), 0.5);
  EXPECT_DOUBLE_EQ(hash_agreement(p, none, id), 0.0);
  EXPECT_DOUBLE_EQ(cfg_distance(p, same, id), 0.0);
  EXPECT_DOUBLE_EQ(cfg_distance(p, half, id), 0.5);
  EXPECT_FALSE(is_exact_match(p, half, id));
}

TEST(Agreement, RejectsNonMonomorphism) {
  auto p = graph({1, 2}, {{0, 1}});
  auto t = graph({1, 2}, {{1, 0}});
  EXPECT_FALSE(is_monomorphism(p, t, {0, 1}));
  EXPECT_THROW(hash_agreement(p, t, {0, 1}), std::invalid_argument);
  EXPECT_FALSE(is_monomorphism(p, t, {0, 0}));
}

TEST(Isomorphism, HashPreserving) {
  auto a = graph({1, 2, 3}, {{0, 1}, {1, 2}});
  auto b = graph({3, 2, 1}, {{2, 1}, {1, 0}});
  auto c = graph({1, 2, 4}, {{0, 1}, {1, 2}});
  EXPECT_TRUE(hash_isomorphic(a, b));
  EXPECT_FALSE(hash_isomorphic(a, c));
}
