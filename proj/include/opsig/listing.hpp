#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace opsig {

enum class OpKind {
  kPlain,
  kCondBranch,
  kUncondBranch,
  kSwitch,
  kReturn,
  kThrow,
  kInvoke,
};

std::string_view to_string(OpKind kind);

// Looks the mnemonic up in the shipped classification table. Unknown
// mnemonics are plain.
OpKind classify_mnemonic(std::string_view mnemonic);

// True for kinds that end a basic block.
bool ends_block(OpKind kind);

// True for kinds that carry explicit branch targets.
bool has_targets(OpKind kind);

struct Opcode {
  std::string mnemonic;
  OpKind kind = OpKind::kPlain;

  // Lowercases and classifies. Throws std::invalid_argument when the result
  // is not a valid mnemonic token.
  static Opcode from_mnemonic(std::string_view text);

  friend bool operator==(const Opcode&, const Opcode&) = default;
};

bool is_valid_mnemonic(std::string_view mnemonic);

struct Instruction {
  std::size_t index = 0;
  Opcode opcode;
  std::vector<std::size_t> branch_targets;

  friend bool operator==(const Instruction&, const Instruction&) = default;
};

struct MethodListing {
  std::string program_id;
  std::string method_id;
  std::vector<Instruction> instructions;

  std::vector<std::string> mnemonics() const;

  friend bool operator==(const MethodListing&, const MethodListing&) = default;
};

struct ProgramLabel {
  enum class Kind { kUnknown, kClean, kMalware };

  Kind kind = Kind::kUnknown;
  std::string family;  // non-empty iff kind == kMalware

  static ProgramLabel unknown() { return {}; }
  static ProgramLabel clean() { return {Kind::kClean, {}}; }
  static ProgramLabel malware(std::string family) {
    return {Kind::kMalware, std::move(family)};
  }

  bool is_malware() const { return kind == Kind::kMalware; }
  bool is_clean() const { return kind == Kind::kClean; }

  // "clean", "malware:<family>" or "unknown".
  std::string to_string() const;
  static ProgramLabel parse(std::string_view text);

  friend bool operator==(const ProgramLabel&, const ProgramLabel&) = default;
};

struct ProgramListing {
  std::string program_id;
  ProgramLabel label;
  std::vector<MethodListing> methods;

  friend bool operator==(const ProgramListing&, const ProgramListing&) = default;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, std::size_t column, const std::string& message);

  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }
  // Message without the location prefix.
  const std::string& detail() const { return detail_; }

 private:
  std::size_t line_;
  std::size_t column_;
  std::string detail_;
};

// Thrown by validate() and by constructors of listings built in code.
class ListingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checks every MethodListing/ProgramListing invariant. Throws ListingError.
void validate(const MethodListing& method);
void validate(const ProgramListing& program);

// .oplist format. A document without a `program` line gets `default_id`.
ProgramListing parse_oplist(std::string_view text,
                            std::string_view default_id = "program");

// Several `program` sections in one document.
std::vector<ProgramListing> parse_oplist_corpus(std::string_view text);

std::string serialize_oplist(const ProgramListing& program);

enum class SmaliMode { kStrict, kLenient };

struct SmaliWarning {
  std::size_t line = 0;
  std::string message;
};

ProgramListing parse_smali_subset(std::string_view text,
                                  SmaliMode mode = SmaliMode::kStrict,
                                  std::string_view program_id = {},
                                  std::vector<SmaliWarning>* warnings = nullptr);

// Per method, the mnemonic sequence in instruction order.
std::vector<std::vector<std::string>> opcode_stream(const ProgramListing& program);

}  // namespace opsig
