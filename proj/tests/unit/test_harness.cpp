#include <gtest/gtest.h>

#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "opsig/harness.hpp"
#include "opsig/matcher.hpp"

using namespace opsig;

namespace {

std::multiset<BlockHash> hashes(const std::vector<MethodListing>& methods) {
  std::multiset<BlockHash> out;
  for (const auto& m : methods)
    for (const auto& n : build_cfg(m).nodes) out.insert(n.hash);
  return out;
}

MethodListing ten_substitutable() {
  return parse_oplist(
             "method m\n  add-int\n  sub-int\n  mul-int\n  xor-int\n  or-int\n  and-int\n  "
             "move/16\n  add-int/2addr\n  sub-int/2addr\n  mul-int/2addr\n  return-void\nend\n")
      .methods[0];
}

}  // namespace

TEST(Synth, Deterministic) {
  auto a = synthesize_benign(10, {}, 7);
  auto b = synthesize_benign(10, {}, 7);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, synthesize_benign(10, {}, 8));
}

TEST(Synth, ZeroCountIsError) {
  EXPECT_THROW(synthesize_benign(0, {}, 7), std::invalid_argument);
}

TEST(Synth, ProgramsRoundTripThroughTheParser) {
  for (const auto& p : synthesize_benign(10, {}, 7)) {
    validate(p);
    EXPECT_EQ(parse_oplist(serialize_oplist(p)), p);
  }
}

TEST(Synth, PayloadRespectsBlockLimit) {
  PayloadParams pp;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (const auto& m : synthesize_payload("fam", pp, seed)) {
      EXPECT_LE(build_cfg(m).size(), pp.max_blocks);
    }
  }
}

TEST(Transform, ParseAndPrint) {
  auto p = parse_pipeline("substitution(0.2), reorder,padding(0.1),split");
  ASSERT_EQ(p.size(), 4u);
  EXPECT_EQ(to_string(p), "substitution(0.2),reorder,padding(0.1),split");
  EXPECT_TRUE(parse_pipeline("identity").empty());
  EXPECT_ANY_THROW(parse_pipeline("shuffle"));
  EXPECT_ANY_THROW(parse_pipeline("substitution(1.5)"));
}

TEST(Transform, SubstitutionCountIsExact) {
  auto m = ten_substitutable();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    std::size_t changed = 0;
    auto out = substitute_opcodes(m, 0.5, rng, &changed);
    EXPECT_EQ(changed, 5u);
    std::size_t differ = 0;
    for (std::size_t i = 0; i < m.instructions.size(); ++i) {
      differ += m.instructions[i].opcode.mnemonic != out.instructions[i].opcode.mnemonic;
    }
    EXPECT_EQ(differ, 5u);
    std::mt19937_64 again(seed);
    EXPECT_EQ(substitute_opcodes(m, 0.5, again), out);
  }
}

TEST(Transform, PaddingAddsNops) {
  auto m = ten_substitutable();
  std::mt19937_64 rng(3);
  std::size_t inserted = 0;
  auto out = pad_nops(m, 0.2, rng, &inserted);
  EXPECT_EQ(inserted, 2u);
  EXPECT_EQ(out.instructions.size(), m.instructions.size() + 2);
}

TEST(Transform, ReorderKeepsGraphAndHashes) {
  auto payload = synthesize_payload("fam", {}, 11);
  bool moved = false;
  for (const auto& m : payload) {
    std::mt19937_64 rng(4);
    auto r = reorder_blocks(m, rng);
    validate(r);
    auto a = build_cfg(m);
    auto b = build_cfg(r);
    EXPECT_TRUE(hash_isomorphic(a, b));
    std::multiset<BlockHash> ha, hb;
    for (const auto& n : a.nodes) ha.insert(n.hash);
    for (const auto& n : b.nodes) hb.insert(n.hash);
    EXPECT_EQ(ha, hb);
    moved |= a.edges != b.edges;
    auto found = find_monomorphisms(a, b);
    ASSERT_FALSE(found.mappings.empty());
    EXPECT_GE(hash_agreement(a, b, found.mappings[0].target_of), 0.5);
  }
  EXPECT_TRUE(moved);
}

TEST(Transform, SplitProducesValidMethods) {
  auto payload = synthesize_payload("fam", {}, 12);
  for (const auto& m : payload) {
    std::mt19937_64 rng(5);
    auto parts = split_method(m, rng);
    ASSERT_GE(parts.size(), 1u);
    for (const auto& p : parts) EXPECT_NO_THROW(validate(p));
  }
}

TEST(Inject, IdentityKeepsPayloadBlocks) {
  auto host = synthesize_benign(1, {}, 1)[0];
  auto payload = synthesize_payload("fam", {}, 2);
  auto infected = inject(host, payload, "fam", "x", 3);
  EXPECT_EQ(infected.label, ProgramLabel::malware("fam"));
  validate(infected);
  auto got = hashes(infected.methods);
  for (const auto& h : hashes(payload)) EXPECT_TRUE(got.count(h));
  EXPECT_EQ(infected.methods.size(), host.methods.size() + payload.size());
}

TEST(Inject, NeedsPayload) {
  auto host = synthesize_benign(1, {}, 1)[0];
  EXPECT_ANY_THROW(inject(host, {}, "fam", "x", 3));
}

TEST(Manifest, JsonRoundTrip) {
  LabOptions lo;
  lo.hosts = 3;
  lo.extras = 2;
  auto corpus = make_lab_corpus(lo);
  EXPECT_EQ(CorpusManifest::from_json(corpus.manifest.to_json()), corpus.manifest);
  EXPECT_EQ(corpus.programs.size(), 3u + 9u + 2u);
  EXPECT_EQ(corpus.manifest.entries.size(), corpus.programs.size());
  EXPECT_ANY_THROW(CorpusManifest::from_json(nlohmann::json{{"format", "other"}}));
}

TEST(Lab, EmptyVariantListIsError) {
  LabOptions lo;
  lo.variants.clear();
  EXPECT_THROW(make_lab_corpus(lo), std::invalid_argument);
}

TEST(Lab, SmallRunIsPerfectAndRecountAgrees) {
  LabOptions lo;
  lo.hosts = 4;
  lo.extras = 10;
  auto corpus = make_lab_corpus(lo);
  auto table = run_laboratory(corpus, PipelineOptions{});
  ASSERT_EQ(table.rows.size(), 3u);
  for (const auto& row : table.rows) {
    EXPECT_EQ(row.metrics.f1, 1.0) << row.name;
    // Independent recount straight from the verdicts.
    std::size_t tp = 0, fp = 0, fn = 0;
    for (const auto& r : row.reports) {
      const bool positive = corpus.manifest.find(r.program_id)->role == Role::kInfected;
      tp += positive && r.verdict.detected();
      fp += !positive && r.verdict.detected();
      fn += positive && !r.verdict.detected();
    }
    EXPECT_EQ(row.metrics.tp, tp);
    EXPECT_EQ(row.metrics.fp, fp);
    EXPECT_EQ(row.metrics.fn, fn);
    EXPECT_EQ(recount_metrics(row.reports, corpus.manifest, {lo.family}), row.metrics);
  }
  std::ostringstream csv;
  table.write_csv(csv);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), ",Precision,Recall,F-measure");
}

TEST(RealStyle, EmptyMalwareIsError) {
  RealStyleOptions ro;
  ro.clean = 5;
  ro.families = {FamilySpec{"x", "X", {}, 0}};
  EXPECT_ANY_THROW(make_realstyle_corpus(ro));
}

TEST(RealStyle, AttributionStaysInFamily) {
  RealStyleOptions ro;
  ro.families = default_families();
  ro.seed = 5;
  auto corpus = make_realstyle_corpus(ro);
  auto table = run_realstyle(corpus, default_dictionaries(corpus, ro.families), PipelineOptions{});
  ASSERT_EQ(table.rows.size(), ro.families.size() + 1);
  for (const auto& row : table.rows) EXPECT_EQ(row.off_diagonal, 0u) << row.name;
  const auto& all = table.rows.back();
  EXPECT_EQ(all.name, "Set of malware");
  EXPECT_EQ(all.metrics.precision, 1.0);
  EXPECT_EQ(all.metrics.recall, 1.0);
}

TEST(Format, Metric) {
  EXPECT_EQ(format_metric(1.0), "1");
  EXPECT_EQ(format_metric(0.98), "0.98");
  EXPECT_EQ(format_metric(0.98765), "0.988");
  EXPECT_EQ(format_metric(0.0), "0");
}
