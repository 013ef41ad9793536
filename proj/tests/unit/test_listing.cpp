#include <gtest/gtest.h>

#include "opsig/listing.hpp"

using namespace opsig;

TEST(Oplist, MinimalMethod) {
  auto p = parse_oplist("method m\n  const\n  return\nend");
  ASSERT_EQ(p.methods.size(), 1u);
  const auto& m = p.methods[0];
  ASSERT_EQ(m.instructions.size(), 2u);
  for (const auto& ins : m.instructions) EXPECT_TRUE(ins.branch_targets.empty());
  EXPECT_EQ(m.instructions[1].opcode.kind, OpKind::kReturn);
  EXPECT_EQ(p.program_id, "program");
}

TEST(Oplist, LabelResolvesToInstructionIndex) {
  auto p = parse_oplist("method m\n  if-eq -> L1\n  const\nL1:\n  return\nend");
  const auto& ins = p.methods[0].instructions;
  ASSERT_EQ(ins.size(), 3u);
  EXPECT_EQ(ins[0].opcode.kind, OpKind::kCondBranch);
  EXPECT_EQ(ins[0].branch_targets, std::vector<std::size_t>{2});
}

TEST(Oplist, EmptyMethodIsRejected) {
  EXPECT_THROW(parse_oplist("method m\nend"), ParseError);
}

TEST(Oplist, ErrorsCarryLocation) {
  try {
    parse_oplist("method m\n  goto -> Lmissing\nend");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_GT(e.column(), 0u);
  }
}

TEST(Oplist, OperandsAreStrippedAndLowercased) {
  auto p = parse_oplist("method m\n  CONST v0, 1\n  return-void\nend");
  EXPECT_EQ(p.methods[0].mnemonics(), (std::vector<std::string>{"const", "return-void"}));
}

TEST(Oplist, ProgramHeaderAndLabel) {
  auto p = parse_oplist("program app1 label=malware:opfake\nmethod a\n  return\nend\n");
  EXPECT_EQ(p.program_id, "app1");
  EXPECT_EQ(p.label, ProgramLabel::malware("opfake"));
}

TEST(Oplist, RoundTrip) {
  const char* text =
      "program x label=clean\n"
      "method a\n  if-eqz -> L2\n  const\n  goto -> L3\nL2:\n  add-int\nL3:\n  return-void\nend\n"
      "method b\n  invoke-static\n  return\nend\n";
  auto p = parse_oplist(text);
  auto again = parse_oplist(serialize_oplist(p));
  EXPECT_EQ(p, again);
}

TEST(Oplist, CorpusWithSeveralPrograms) {
  auto v = parse_oplist_corpus(
      "program a\nmethod m\n  return\nend\nprogram b label=clean\nmethod m\n  return\nend\n");
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v[1].program_id, "b");
  EXPECT_THROW(parse_oplist_corpus("program a\nmethod m\n  return\nend\nprogram a\nmethod m\n  "
                                   "return\nend\n"),
               ParseError);
}

TEST(Oplist, DuplicateMethodRejected) {
  EXPECT_THROW(parse_oplist("method m\n  return\nend\nmethod m\n  return\nend\n"), ParseError);
}

TEST(Oplist, UnterminatedMethod) {
  EXPECT_THROW(parse_oplist("method m\n  return\n"), ParseError);
}

TEST(Label, ParseAndFormat) {
  EXPECT_EQ(ProgramLabel::parse("clean"), ProgramLabel::clean());
  EXPECT_EQ(ProgramLabel::parse("unknown"), ProgramLabel::unknown());
  EXPECT_EQ(ProgramLabel::parse("malware:droidjack").to_string(), "malware:droidjack");
  EXPECT_ANY_THROW(ProgramLabel::parse("malware:"));
}

TEST(Smali, SingleReturn) {
  auto p = parse_smali_subset(".method a()V\n  return-void\n.end method\n");
  ASSERT_EQ(p.methods.size(), 1u);
  ASSERT_EQ(p.methods[0].instructions.size(), 1u);
  EXPECT_EQ(p.methods[0].instructions[0].opcode.mnemonic, "return-void");
  EXPECT_EQ(p.methods[0].instructions[0].opcode.kind, OpKind::kReturn);
}

TEST(Smali, ConditionalBranchResolves) {
  auto p = parse_smali_subset(
      ".method a()V\n  if-eqz v0, :b\n  const/4 v0, 0x1\n  :b\n  return-void\n.end method\n");
  const auto& ins = p.methods[0].instructions;
  ASSERT_EQ(ins.size(), 3u);
  EXPECT_EQ(ins[0].opcode.kind, OpKind::kCondBranch);
  EXPECT_EQ(ins[0].branch_targets, std::vector<std::size_t>{2});
}

TEST(Smali, AnnotationStrictVersusLenient) {
  const char* text =
      ".method a()V\n  .annotation runtime Lx;\n  .end annotation\n  return-void\n.end method\n";
  EXPECT_THROW(parse_smali_subset(text, SmaliMode::kStrict), ParseError);
  std::vector<SmaliWarning> warnings;
  auto p = parse_smali_subset(text, SmaliMode::kLenient, "x", &warnings);
  EXPECT_EQ(p.methods[0].instructions.size(), 1u);
  EXPECT_FALSE(warnings.empty());
}

TEST(OpcodeStream, Projection) {
  auto p = parse_oplist("method a\n  const\n  return\nend\nmethod b\n  nop\n  return-void\nend\n");
  auto s = opcode_stream(p);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0], (std::vector<std::string>{"const", "return"}));
  EXPECT_EQ(s[1], (std::vector<std::string>{"nop", "return-void"}));
  EXPECT_TRUE(opcode_stream(ProgramListing{}).empty());
}

TEST(Validate, RejectsBadTargets) {
  MethodListing m{"p", "m", {}};
  m.instructions.push_back({0, Opcode::from_mnemonic("goto"), {5}});
  EXPECT_THROW(validate(m), ListingError);
  m.instructions[0].branch_targets = {0};
  EXPECT_NO_THROW(validate(m));
}

TEST(Classify, KindTable) {
  EXPECT_EQ(classify_mnemonic("invoke-virtual"), OpKind::kInvoke);
  EXPECT_EQ(classify_mnemonic("packed-switch"), OpKind::kSwitch);
  EXPECT_EQ(classify_mnemonic("throw"), OpKind::kThrow);
  EXPECT_EQ(classify_mnemonic("mul-int"), OpKind::kPlain);
  EXPECT_TRUE(ends_block(OpKind::kReturn));
  EXPECT_FALSE(ends_block(OpKind::kPlain));
}
