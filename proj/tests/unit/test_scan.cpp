#include <gtest/gtest.h>

#include <nlohmann/json.hpp>
#include <sstream>

#include "../support/oracles.hpp"
#include "opsig/scan.hpp"

using namespace opsig;

namespace {

// Four-block method: a diamond whose blocks all carry distinct opcodes.
const char* kPayload =
    "program src label=malware:fam\n"
    "method m\n"
    "  sget-object\n  const-string\n  if-eqz -> A\n"
    "  aput-object\n  iget-wide\n  goto -> B\n"
    "A:\n  sput-boolean\n  shl-long\n  nop\n"
    "B:\n  monitor-enter\n  ushr-int\n  return-void\n"
    "end\n";

SignatureDatabase whole_method_db(const ProgramListing& src, bool covers) {
  auto cfg = build_cfg(src.methods[0]);
  Signature s;
  s.id = "fam-0001";
  s.family = "fam";
  s.fragment = cfg;
  s.source_program = src.program_id;
  s.source_method = src.methods[0].method_id;
  for (std::size_t i = 0; i < cfg.size(); ++i) s.source_blocks.push_back(static_cast<int>(i));
  s.score = 0.9;
  s.covers_source_cfg = covers;
  SignatureDatabase db;
  db.signatures.push_back(s);
  return db;
}

ProgramListing with_body(const std::string& text) { return parse_oplist(text); }

}  // namespace

TEST(Scan, SourceIsKnownMalware) {
  auto src = with_body(kPayload);
  auto r = scan(src, whole_method_db(src, true));
  EXPECT_EQ(r.verdict.kind, VerdictKind::kKnownMalware);
  EXPECT_EQ(r.verdict.family, "fam");
  ASSERT_TRUE(r.best_distance());
  EXPECT_DOUBLE_EQ(*r.best_distance(), 0.0);
  EXPECT_EQ(r.verdict.to_string(), "known_malware(fam)");
}

TEST(Scan, PartialFragmentIsVariant) {
  auto src = with_body(kPayload);
  auto r = scan(src, whole_method_db(src, false));
  EXPECT_EQ(r.verdict.kind, VerdictKind::kVariant);
  EXPECT_TRUE(r.evidence.front().exact);
  EXPECT_FALSE(r.evidence.front().known);
}

TEST(Scan, HalfMutatedIsVariantAtBoundary) {
  auto src = with_body(kPayload);
  auto db = whole_method_db(src, true);
  // Two of the four blocks change opcodes; the shape stays.
  std::string text = kPayload;
  text.replace(text.find("aput-object"), 11, "aput-wide");
  text.replace(text.find("shl-long"), 8, "shr-long");
  auto mutated = with_body(text);
  auto r = scan(mutated, db);
  EXPECT_EQ(r.verdict, (Verdict{VerdictKind::kVariant, "fam"}));
  ASSERT_EQ(r.evidence.size(), 1u);
  EXPECT_DOUBLE_EQ(r.evidence[0].hash_match_fraction, 0.5);
  // The best mapping agrees with the brute-force maximum.
  auto target = build_cfg(mutated.methods[0]);
  std::size_t best = 0;
  for (const auto& m : oracle::all_monomorphisms(db.signatures[0].fragment, target)) {
    best = std::max(best, m.agreeing);
  }
  EXPECT_EQ(best, 2u);

  ScanOptions strict;
  strict.theta = 0.75;
  EXPECT_EQ(scan(mutated, db, strict).verdict.kind, VerdictKind::kClean);
}

TEST(Scan, CleanProgram) {
  auto src = with_body(kPayload);
  auto clean = with_body("program c label=clean\nmethod x\n  const\n  return\nend\n");
  auto r = scan(clean, whole_method_db(src, true));
  EXPECT_EQ(r.verdict.kind, VerdictKind::kClean);
  EXPECT_TRUE(r.evidence.empty());
  EXPECT_FALSE(r.best_distance());
  EXPECT_EQ(r.verdict.to_string(), "clean");
}

TEST(Scan, Errors) {
  auto src = with_body(kPayload);
  EXPECT_THROW(scan(src, SignatureDatabase{}), EmptyDatabaseError);
  ScanOptions bad;
  bad.theta = 0.0;
  EXPECT_THROW(scan(src, whole_method_db(src, true), bad), std::invalid_argument);
  bad.theta = 1.5;
  EXPECT_THROW(scan(src, whole_method_db(src, true), bad), std::invalid_argument);
}

TEST(Scan, ScanAllParallelMatchesSerial) {
  auto src = with_body(kPayload);
  auto db = whole_method_db(src, true);
  std::vector<ProgramListing> programs(6, src);
  programs[2] = with_body("program c label=clean\nmethod x\n  const\n  return\nend\n");
  ScanOptions par;
  par.jobs = 3;
  auto a = scan_all(programs, db);
  auto b = scan_all(programs, db, par);
  EXPECT_EQ(reports_to_json(a).dump(), reports_to_json(b).dump());
}

TEST(Reports, JsonAndTable) {
  auto src = with_body(kPayload);
  auto reports = std::vector<DetectionReport>{scan(src, whole_method_db(src, true))};
  auto doc = reports_to_json(reports);
  EXPECT_EQ(doc["format"], "opsig-scan-report");
  std::ostringstream table;
  write_report_table(table, reports);
  EXPECT_NE(table.str().find("known_malware(fam)"), std::string::npos);
}
