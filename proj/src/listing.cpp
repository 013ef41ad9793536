#include "opsig/listing.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <unordered_map>
#include <utility>

namespace opsig {

namespace {

struct KindRule {
  std::string_view text;
  OpKind kind;
};

// Exact mnemonics, checked before the prefix rules. Dalvik names first, then
// generic tokens accepted by the .oplist format.
constexpr std::array kExactKinds = {
    KindRule{"goto", OpKind::kUncondBranch},
    KindRule{"goto/16", OpKind::kUncondBranch},
    KindRule{"goto/32", OpKind::kUncondBranch},
    KindRule{"packed-switch", OpKind::kSwitch},
    KindRule{"sparse-switch", OpKind::kSwitch},
    KindRule{"throw", OpKind::kThrow},
    KindRule{"jmp", OpKind::kUncondBranch},
    KindRule{"br", OpKind::kUncondBranch},
    KindRule{"br-if", OpKind::kCondBranch},
    KindRule{"jz", OpKind::kCondBranch},
    KindRule{"jnz", OpKind::kCondBranch},
    KindRule{"switch", OpKind::kSwitch},
    KindRule{"tableswitch", OpKind::kSwitch},
    KindRule{"lookupswitch", OpKind::kSwitch},
    KindRule{"ret", OpKind::kReturn},
    KindRule{"athrow", OpKind::kThrow},
    KindRule{"call", OpKind::kInvoke},
};

constexpr std::array kPrefixKinds = {
    KindRule{"if-", OpKind::kCondBranch},
    KindRule{"return", OpKind::kReturn},
    KindRule{"invoke-", OpKind::kInvoke},
};

std::string lowercase(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r'; }

struct Token {
  std::string_view text;
  std::size_t column = 0;  // 1-based
};

std::vector<Token> tokenize(std::string_view line) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    if (i >= line.size()) break;
    std::size_t start = i;
    while (i < line.size() && !is_space(line[i])) ++i;
    tokens.push_back({line.substr(start, i - start), start + 1});
  }
  return tokens;
}

std::string_view strip_comment(std::string_view line) {
  auto pos = line.find('#');
  return pos == std::string_view::npos ? line : line.substr(0, pos);
}

// Quote-aware variant for smali, where string operands may contain '#'.
std::string_view strip_smali_comment(std::string_view line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
    } else if (c == '"') {
      in_string = true;
    } else if (c == '#') {
      return line.substr(0, i);
    }
  }
  return line;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) {
      if (start < text.size()) lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

bool is_valid_id(std::string_view id) {
  if (id.empty()) return false;
  return std::none_of(id.begin(), id.end(), [](char c) {
    return is_space(c) || c == '\n' || c == '#';
  });
}

bool is_valid_label_name(std::string_view name) {
  if (name.empty()) return false;
  return std::all_of(name.begin(), name.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '_' || c == '.' || c == '$' || c == '-';
  });
}

// Shared label bookkeeping for both parsers.
class MethodBuilder {
 public:
  MethodBuilder(std::string program_id, std::string method_id, std::size_t line)
      : line_(line) {
    method_.program_id = std::move(program_id);
    method_.method_id = std::move(method_id);
  }

  void bind_label(const std::string& name, std::size_t line, std::size_t column) {
    if (labels_.count(name) || pending_set_.count(name)) {
      throw ParseError(line, column, "duplicate label '" + name + "'");
    }
    pending_.push_back(name);
    pending_set_.insert(name);
  }

  // Pending labels that were claimed by something other than an instruction
  // (smali switch payloads).
  std::vector<std::string> take_pending() {
    std::vector<std::string> out;
    out.swap(pending_);
    pending_set_.clear();
    return out;
  }

  void add(Opcode opcode, std::vector<std::string> targets, std::size_t line,
           std::size_t column) {
    std::size_t index = method_.instructions.size();
    for (auto& name : pending_) labels_[name] = index;
    pending_.clear();
    pending_set_.clear();
    method_.instructions.push_back({index, std::move(opcode), {}});
    refs_.push_back({std::move(targets), line, column});
  }

  void add_alias(const std::string& name, std::vector<std::string> targets) {
    aliases_[name] = std::move(targets);
  }

  MethodListing finish(std::size_t end_line) {
    if (method_.instructions.empty()) {
      throw ParseError(line_, 1, "empty method '" + method_.method_id + "'");
    }
    for (std::size_t i = 0; i < refs_.size(); ++i) {
      auto& ref = refs_[i];
      auto& insn = method_.instructions[i];
      std::vector<std::string> names;
      for (auto& name : ref.targets) {
        auto alias = aliases_.find(name);
        if (alias != aliases_.end()) {
          names.insert(names.end(), alias->second.begin(), alias->second.end());
        } else {
          names.push_back(name);
        }
      }
      for (auto& name : names) {
        auto it = labels_.find(name);
        if (it == labels_.end()) {
          throw ParseError(ref.line, ref.column, "unresolved label '" + name + "'");
        }
        insn.branch_targets.push_back(it->second);
      }
      check_arity(insn, ref.line, ref.column);
    }
    (void)end_line;
    return std::move(method_);
  }

  const std::string& method_id() const { return method_.method_id; }

 private:
  static void check_arity(const Instruction& insn, std::size_t line,
                          std::size_t column) {
    const auto count = insn.branch_targets.size();
    const auto& op = insn.opcode;
    switch (op.kind) {
      case OpKind::kCondBranch:
      case OpKind::kUncondBranch:
        if (count != 1) {
          throw ParseError(line, column,
                           "'" + op.mnemonic + "' needs exactly one branch target");
        }
        break;
      case OpKind::kSwitch:
        if (count == 0) {
          throw ParseError(line, column,
                           "'" + op.mnemonic + "' needs at least one branch target");
        }
        break;
      default:
        if (count != 0) {
          throw ParseError(line, column,
                           "'" + op.mnemonic + "' cannot carry branch targets");
        }
    }
  }

  struct Ref {
    std::vector<std::string> targets;
    std::size_t line;
    std::size_t column;
  };

  MethodListing method_;
  std::size_t line_;
  std::map<std::string, std::size_t> labels_;
  std::map<std::string, std::vector<std::string>> aliases_;
  std::vector<std::string> pending_;
  std::set<std::string> pending_set_;
  std::vector<Ref> refs_;
};

Opcode opcode_at(std::string_view text, std::size_t line, std::size_t column) {
  try {
    return Opcode::from_mnemonic(text);
  } catch (const std::invalid_argument& e) {
    throw ParseError(line, column, e.what());
  }
}

struct Section {
  ProgramListing program;
  bool has_header = false;
  std::set<std::string> method_ids;
};

std::vector<ProgramListing> parse_oplist_sections(std::string_view text,
                                                  std::string_view default_id) {
  std::vector<Section> sections;
  std::optional<MethodBuilder> method;
  std::size_t line_no = 0;

  auto current = [&]() -> Section& {
    if (sections.empty()) {
      sections.emplace_back();
      sections.back().program.program_id = std::string(default_id);
    }
    return sections.back();
  };

  for (auto raw : split_lines(text)) {
    ++line_no;
    auto tokens = tokenize(strip_comment(raw));
    if (tokens.empty()) continue;
    const auto& head = tokens.front();

    if (!method) {
      if (head.text == "program") {
        if (tokens.size() < 2 || tokens.size() > 3) {
          throw ParseError(line_no, head.column,
                           "expected 'program <id> [label=...]'");
        }
        if (!is_valid_id(tokens[1].text)) {
          throw ParseError(line_no, tokens[1].column, "invalid program id");
        }
        if (!sections.empty() && !sections.back().has_header &&
            !sections.back().program.methods.empty()) {
          throw ParseError(line_no, head.column,
                           "methods appear before the first program header");
        }
        if (sections.empty() || sections.back().has_header) sections.emplace_back();
        auto& section = sections.back();
        section.has_header = true;
        section.program.program_id = std::string(tokens[1].text);
        if (tokens.size() == 3) {
          auto label = tokens[2].text;
          if (label.substr(0, 6) != "label=") {
            throw ParseError(line_no, tokens[2].column, "expected label=...");
          }
          try {
            section.program.label = ProgramLabel::parse(label.substr(6));
          } catch (const std::invalid_argument& e) {
            throw ParseError(line_no, tokens[2].column + 6, e.what());
          }
        }
      } else if (head.text == "method") {
        if (tokens.size() != 2 || !is_valid_id(tokens[1].text)) {
          throw ParseError(line_no, head.column, "expected 'method <id>'");
        }
        auto& section = current();
        std::string id(tokens[1].text);
        if (section.method_ids.count(id)) {
          throw ParseError(line_no, tokens[1].column, "duplicate method id '" + id + "'");
        }
        method.emplace(section.program.program_id, id, line_no);
      } else {
        throw ParseError(line_no, head.column,
                         "unexpected '" + std::string(head.text) + "' outside a method");
      }
      continue;
    }

    if (head.text == "end" && tokens.size() == 1) {
      auto& section = current();
      section.method_ids.insert(method->method_id());
      section.program.methods.push_back(method->finish(line_no));
      method.reset();
      continue;
    }

    if (tokens.size() == 1 && head.text.size() > 1 && head.text.back() == ':') {
      auto name = head.text.substr(0, head.text.size() - 1);
      if (!is_valid_label_name(name)) {
        throw ParseError(line_no, head.column, "invalid label name");
      }
      method->bind_label(std::string(name), line_no, head.column);
      continue;
    }

    auto opcode = opcode_at(head.text, line_no, head.column);
    std::vector<std::string> targets;
    auto arrow = std::find_if(tokens.begin() + 1, tokens.end(),
                              [](const Token& t) { return t.text == "->"; });
    if (arrow != tokens.end()) {
      std::size_t column = arrow->column;
      for (auto it = arrow + 1; it != tokens.end(); ++it) {
        std::string_view rest = it->text;
        std::size_t offset = 0;
        while (offset <= rest.size()) {
          auto comma = rest.find(',', offset);
          auto piece = rest.substr(offset, comma == std::string_view::npos
                                               ? std::string_view::npos
                                               : comma - offset);
          if (!piece.empty()) {
            if (!is_valid_label_name(piece)) {
              throw ParseError(line_no, it->column + offset, "invalid label name");
            }
            targets.emplace_back(piece);
          }
          if (comma == std::string_view::npos) break;
          offset = comma + 1;
        }
      }
      if (targets.empty()) {
        throw ParseError(line_no, column, "'->' must be followed by a label");
      }
    }
    method->add(std::move(opcode), std::move(targets), line_no, head.column);
  }

  if (method) {
    throw ParseError(line_no + 1, 1, "unterminated method '" + method->method_id() + "'");
  }

  std::vector<ProgramListing> out;
  std::set<std::string> ids;
  for (auto& section : sections) {
    if (!ids.insert(section.program.program_id).second) {
      throw ParseError(0, 0, "duplicate program id '" + section.program.program_id + "'");
    }
    out.push_back(std::move(section.program));
  }
  return out;
}

const std::set<std::string_view>& ignored_smali_directives() {
  static const std::set<std::string_view> kIgnored = {
      ".registers", ".locals",    ".line",      ".prologue", ".epilogue",
      ".local",     ".restart",   ".source",    ".super",    ".implements",
      ".field",     ".param",     ".end field", ".end param", ".end local",
  };
  return kIgnored;
}

// Directives whose body runs until a matching `.end <name>` line.
std::optional<std::string> block_end_for(std::string_view directive) {
  static const std::map<std::string_view, std::string> kBlocks = {
      {".annotation", ".end annotation"},
      {".subannotation", ".end subannotation"},
      {".array-data", ".end array-data"},
  };
  auto it = kBlocks.find(directive);
  if (it == kBlocks.end()) return std::nullopt;
  return it->second;
}

}  // namespace

std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::kPlain: return "plain";
    case OpKind::kCondBranch: return "cond-branch";
    case OpKind::kUncondBranch: return "uncond-branch";
    case OpKind::kSwitch: return "switch";
    case OpKind::kReturn: return "return";
    case OpKind::kThrow: return "throw";
    case OpKind::kInvoke: return "invoke";
  }
  return "plain";
}

OpKind classify_mnemonic(std::string_view mnemonic) {
  for (const auto& rule : kExactKinds) {
    if (rule.text == mnemonic) return rule.kind;
  }
  for (const auto& rule : kPrefixKinds) {
    if (mnemonic.substr(0, rule.text.size()) == rule.text) return rule.kind;
  }
  return OpKind::kPlain;
}

bool ends_block(OpKind kind) {
  switch (kind) {
    case OpKind::kCondBranch:
    case OpKind::kUncondBranch:
    case OpKind::kSwitch:
    case OpKind::kReturn:
    case OpKind::kThrow:
      return true;
    default:
      return false;
  }
}

bool has_targets(OpKind kind) {
  return kind == OpKind::kCondBranch || kind == OpKind::kUncondBranch ||
         kind == OpKind::kSwitch;
}

bool is_valid_mnemonic(std::string_view mnemonic) {
  if (mnemonic.empty()) return false;
  return std::all_of(mnemonic.begin(), mnemonic.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '/' ||
           c == '_' || c == '-';
  });
}

Opcode Opcode::from_mnemonic(std::string_view text) {
  auto mnemonic = lowercase(text);
  if (!is_valid_mnemonic(mnemonic)) {
    throw std::invalid_argument("invalid mnemonic '" + std::string(text) + "'");
  }
  auto kind = classify_mnemonic(mnemonic);
  return {std::move(mnemonic), kind};
}

std::vector<std::string> MethodListing::mnemonics() const {
  std::vector<std::string> out;
  out.reserve(instructions.size());
  for (const auto& insn : instructions) out.push_back(insn.opcode.mnemonic);
  return out;
}

std::string ProgramLabel::to_string() const {
  switch (kind) {
    case Kind::kClean: return "clean";
    case Kind::kMalware: return "malware:" + family;
    case Kind::kUnknown: break;
  }
  return "unknown";
}

ProgramLabel ProgramLabel::parse(std::string_view text) {
  if (text == "clean") return clean();
  if (text == "unknown") return unknown();
  if (text.substr(0, 8) == "malware:" && text.size() > 8) {
    auto family = text.substr(8);
    if (!is_valid_id(family)) throw std::invalid_argument("invalid family name");
    return malware(std::string(family));
  }
  throw std::invalid_argument("label must be clean, unknown or malware:<family>");
}

ParseError::ParseError(std::size_t line, std::size_t column, const std::string& message)
    : std::runtime_error("line " + std::to_string(line) + ", column " +
                         std::to_string(column) + ": " + message),
      line_(line),
      column_(column),
      detail_(message) {}

void validate(const MethodListing& method) {
  const auto where = method.program_id + "/" + method.method_id;
  if (!is_valid_id(method.method_id)) throw ListingError("invalid method id in " + where);
  if (method.instructions.empty()) throw ListingError("empty method " + where);
  const auto size = method.instructions.size();
  for (std::size_t i = 0; i < size; ++i) {
    const auto& insn = method.instructions[i];
    if (insn.index != i) throw ListingError("non-contiguous index in " + where);
    if (!is_valid_mnemonic(insn.opcode.mnemonic) ||
        classify_mnemonic(insn.opcode.mnemonic) != insn.opcode.kind) {
      throw ListingError("bad opcode at " + where + ":" + std::to_string(i));
    }
    const auto count = insn.branch_targets.size();
    const auto kind = insn.opcode.kind;
    bool arity_ok = has_targets(kind) ? (kind == OpKind::kSwitch ? count >= 1 : count == 1)
                                      : count == 0;
    if (!arity_ok) throw ListingError("bad branch arity at " + where + ":" + std::to_string(i));
    for (auto t : insn.branch_targets) {
      if (t >= size) throw ListingError("branch target out of range in " + where);
    }
  }
}

void validate(const ProgramListing& program) {
  if (!is_valid_id(program.program_id)) throw ListingError("invalid program id");
  if (program.label.is_malware() && !is_valid_id(program.label.family)) {
    throw ListingError("malware label without family");
  }
  std::set<std::string> ids;
  for (const auto& m : program.methods) {
    if (!ids.insert(m.method_id).second) {
      throw ListingError("duplicate method id " + m.method_id);
    }
    validate(m);
  }
}

ProgramListing parse_oplist(std::string_view text, std::string_view default_id) {
  auto programs = parse_oplist_sections(text, default_id);
  if (programs.empty()) {
    ProgramListing empty;
    empty.program_id = std::string(default_id);
    return empty;
  }
  if (programs.size() > 1) {
    throw ParseError(0, 0, "document holds several programs; parse it as a corpus");
  }
  return std::move(programs.front());
}

std::vector<ProgramListing> parse_oplist_corpus(std::string_view text) {
  return parse_oplist_sections(text, "program");
}

std::string serialize_oplist(const ProgramListing& program) {
  std::ostringstream out;
  out << "program " << program.program_id;
  if (program.label.kind != ProgramLabel::Kind::kUnknown) {
    out << " label=" << program.label.to_string();
  }
  out << '\n';
  for (const auto& method : program.methods) {
    std::set<std::size_t> targets;
    for (const auto& insn : method.instructions) {
      targets.insert(insn.branch_targets.begin(), insn.branch_targets.end());
    }
    out << "method " << method.method_id << '\n';
    for (const auto& insn : method.instructions) {
      if (targets.count(insn.index)) out << "  L" << insn.index << ":\n";
      out << "  " << insn.opcode.mnemonic;
      if (!insn.branch_targets.empty()) {
        out << " ->";
        for (std::size_t i = 0; i < insn.branch_targets.size(); ++i) {
          out << (i == 0 ? " L" : ",L") << insn.branch_targets[i];
        }
      }
      out << '\n';
    }
    out << "end\n";
  }
  return out.str();
}

ProgramListing parse_smali_subset(std::string_view text, SmaliMode mode,
                                  std::string_view program_id,
                                  std::vector<SmaliWarning>* warnings) {
  ProgramListing program;
  program.program_id = std::string(program_id);
  std::string class_name;
  std::set<std::string> method_ids;
  std::optional<MethodBuilder> method;
  std::optional<std::string> skip_until;
  // Open switch payload: labels it is bound to, targets collected so far.
  std::optional<std::pair<std::vector<std::string>, std::vector<std::string>>> payload;
  std::string payload_end;
  std::size_t line_no = 0;

  auto unsupported = [&](std::string_view directive, std::size_t column) {
    if (mode == SmaliMode::kStrict) {
      throw ParseError(line_no, column,
                       "unsupported directive " + std::string(directive));
    }
    if (warnings) {
      warnings->push_back({line_no, "skipped unsupported directive " +
                                        std::string(directive)});
    }
  };

  for (auto raw : split_lines(text)) {
    ++line_no;
    auto line = trim(strip_smali_comment(raw));
    if (line.empty()) continue;
    auto tokens = tokenize(line);
    auto head = tokens.front().text;
    auto column = static_cast<std::size_t>(line.data() - raw.data()) + 1;

    if (skip_until) {
      if (line == *skip_until) skip_until.reset();
      continue;
    }

    if (payload) {
      if (line == payload_end) {
        if (payload->second.empty()) {
          throw ParseError(line_no, column, "switch payload without targets");
        }
        for (auto& name : payload->first) method->add_alias(name, payload->second);
        payload.reset();
        continue;
      }
      for (const auto& tok : tokens) {
        if (tok.text.size() > 1 && tok.text.front() == ':') {
          payload->second.emplace_back(tok.text.substr(1));
        }
      }
      continue;
    }

    if (head == ".class") {
      class_name = std::string(tokens.back().text);
      if (program.program_id.empty()) program.program_id = class_name;
      continue;
    }
    if (head == ".method") {
      if (method) throw ParseError(line_no, column, "nested .method");
      if (tokens.size() < 2) throw ParseError(line_no, column, "method name missing");
      std::string id(tokens.back().text);
      if (!class_name.empty()) id = class_name + "->" + id;
      if (!method_ids.insert(id).second) {
        throw ParseError(line_no, column, "duplicate method id '" + id + "'");
      }
      method.emplace(program.program_id, id, line_no);
      continue;
    }
    if (line == ".end method") {
      if (!method) throw ParseError(line_no, column, ".end method outside a method");
      program.methods.push_back(method->finish(line_no));
      method.reset();
      continue;
    }
    if (head == ".packed-switch" || head == ".sparse-switch") {
      if (!method) throw ParseError(line_no, column, "switch payload outside a method");
      payload.emplace(method->take_pending(), std::vector<std::string>{});
      payload_end = ".end " + std::string(head.substr(1));
      continue;
    }
    if (head.front() == '.') {
      auto key = head;
      if (head == ".end" && tokens.size() > 1) {
        auto joined = std::string(".end ") + std::string(tokens[1].text);
        if (ignored_smali_directives().count(joined)) continue;
        unsupported(joined, column);
        continue;
      }
      if (ignored_smali_directives().count(key)) continue;
      unsupported(key, column);
      if (auto end = block_end_for(key)) skip_until = *end;
      continue;
    }
    if (!method) {
      throw ParseError(line_no, column, "instruction outside a method");
    }
    if (head.front() == ':') {
      if (tokens.size() != 1 || head.size() < 2) {
        throw ParseError(line_no, column, "malformed label line");
      }
      method->bind_label(std::string(head.substr(1)), line_no, column);
      continue;
    }

    auto opcode = opcode_at(head, line_no, column);
    std::vector<std::string> targets;
    if (has_targets(opcode.kind)) {
      for (std::size_t i = 1; i < tokens.size(); ++i) {
        auto tok = tokens[i].text;
        if (!tok.empty() && tok.back() == ',') tok.remove_suffix(1);
        if (tok.size() > 1 && tok.front() == ':') targets.emplace_back(tok.substr(1));
      }
    }
    method->add(std::move(opcode), std::move(targets), line_no, column);
  }

  if (method) {
    throw ParseError(line_no + 1, 1, "unterminated method '" + method->method_id() + "'");
  }
  if (program.program_id.empty()) program.program_id = "smali";
  return program;
}

std::vector<std::vector<std::string>> opcode_stream(const ProgramListing& program) {
  std::vector<std::vector<std::string>> out;
  out.reserve(program.methods.size());
  for (const auto& m : program.methods) out.push_back(m.mnemonics());
  return out;
}

}  // namespace opsig
