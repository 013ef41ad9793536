#include "opsig/harness.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "opsig/cfg.hpp"
#include "opsig/rng.hpp"

namespace opsig {

namespace {

using Body = std::vector<std::string_view>;

const std::vector<Body> kBenignBodies = {
    {"iget-object", "invoke-virtual", "move-result-object"},
    {"const-string", "invoke-static"},
    {"new-instance", "invoke-direct"},
    {"sget-object", "const-string", "invoke-virtual"},
    {"iget", "add-int/lit8", "iput"},
    {"const/4", "iput-boolean"},
    {"invoke-interface", "move-result"},
    {"check-cast", "invoke-virtual"},
    {"aget-object", "invoke-virtual", "move-result"},
    {"move-object", "iget-object"},
    {"const/16", "new-array"},
    {"invoke-static", "move-result-object", "check-cast"},
    {"iget-boolean", "const/4"},
    {"array-length", "add-int/lit8"},
    {"const-string", "const-string", "invoke-static"},
    {"invoke-virtual", "move-result-object"},
    {"sget", "mul-int/lit8", "sput"},
    {"iget-object", "const/4", "invoke-virtual"},
    {"instance-of", "move"},
    {"aget", "aput"},
};

// Never produced by the benign generator.
constexpr std::array<std::string_view, 20> kPayloadOnly = {
    "aget-byte",     "aput-byte",   "int-to-byte",       "xor-int/lit8", "ushr-int/lit8",
    "shl-long",      "rem-int/lit16", "long-to-int",     "and-long",     "or-long/2addr",
    "filled-new-array", "cmp-long", "double-to-int",     "int-to-char",  "neg-long",
    "rsub-int",      "shr-int/lit8", "xor-long",         "add-long/2addr", "div-int/lit16",
};

constexpr std::array<std::string_view, 4> kPayloadFiller = {"const/4", "move-result", "iget",
                                                            "invoke-static"};

// Interchangeable opcodes; substitution swaps within a class.
const std::vector<std::vector<std::string_view>> kSubstitutionClasses = {
    {"add-int", "add-int/2addr", "add-int/lit16"},
    {"sub-int", "sub-int/2addr", "rsub-int/lit8"},
    {"mul-int", "mul-int/2addr", "mul-int/lit16"},
    {"xor-int", "xor-int/2addr", "xor-int/lit16"},
    {"or-int", "or-int/2addr", "or-int/lit16"},
    {"and-int", "and-int/2addr", "and-int/lit16"},
    {"move/from16", "move/16", "move-wide"},
};

constexpr std::array<std::string_view, 8> kCondBranches = {
    "if-eqz", "if-nez", "if-lez", "if-gez", "if-ne", "if-eq", "if-lt", "if-ge"};
constexpr std::array<std::string_view, 2> kGotos = {"goto", "goto/16"};
constexpr std::array<std::string_view, 2> kSwitches = {"packed-switch", "sparse-switch"};
constexpr std::array<std::string_view, 3> kReturns = {"return-void", "return", "return-object"};

template <typename C>
std::string_view pick(const C& items, std::mt19937_64& rng) {
  return items[uniform_index(rng, items.size())];
}

std::size_t pick_between(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return lo + uniform_index(rng, hi - lo + 1);
}

const std::vector<std::string_view>* substitution_class(std::string_view mnemonic) {
  for (const auto& c : kSubstitutionClasses) {
    if (std::find(c.begin(), c.end(), mnemonic) != c.end()) return &c;
  }
  return nullptr;
}

// Emits structured code as labeled instructions. Every body becomes exactly
// one basic block together with the control opcode that follows it.
class Emitter {
 public:
  using BodyFn = std::function<void(Emitter&)>;

  Emitter(std::mt19937_64& rng, BodyFn body, int max_depth, std::size_t min_stmts,
          std::size_t max_stmts)
      : rng_(rng), body_(std::move(body)), max_depth_(max_depth),
        min_stmts_(min_stmts), max_stmts_(max_stmts) {}

  void op(std::string_view mnemonic, std::vector<int> labels = {}) {
    ops_.push_back({std::string(mnemonic), std::move(labels)});
  }

  MethodListing method(const std::string& program_id, const std::string& method_id) {
    int ret = label();
    seq(0, pick_between(rng_, min_stmts_, max_stmts_), ret);
    bind(ret);
    body_(*this);
    op(pick(kReturns, rng_));
    return finish(program_id, method_id);
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  struct PendingOp {
    std::string mnemonic;
    std::vector<int> labels;
  };

  int label() {
    positions_.emplace_back();
    return static_cast<int>(positions_.size() - 1);
  }
  void bind(int l) { positions_[static_cast<std::size_t>(l)] = ops_.size(); }

  void seq(int depth, std::size_t count, int cont) {
    std::vector<int> starts;
    for (std::size_t i = 0; i < count; ++i) starts.push_back(label());
    for (std::size_t i = 0; i < count; ++i) {
      bind(starts[i]);
      stmt(depth, i + 1 < count ? starts[i + 1] : cont);
    }
  }

  std::size_t nested_count() { return pick_between(rng_, 1, std::max<std::size_t>(1, min_stmts_)); }

  void stmt(int depth, int cont) {
    auto roll = uniform_index(rng_, 100);
    if (depth >= max_depth_) roll = 0;
    if (roll < 40) {  // plain
      body_(*this);
      op(pick(kGotos, rng_), {cont});
    } else if (roll < 60) {  // if
      body_(*this);
      op(pick(kCondBranches, rng_), {cont});
      seq(depth + 1, nested_count(), cont);
    } else if (roll < 75) {  // if / else
      int other = label();
      body_(*this);
      op(pick(kCondBranches, rng_), {other});
      seq(depth + 1, nested_count(), cont);
      bind(other);
      seq(depth + 1, nested_count(), cont);
    } else if (roll < 90) {  // loop
      int head = label();
      bind(head);
      body_(*this);
      op(pick(kCondBranches, rng_), {cont});
      seq(depth + 1, nested_count(), head);
    } else {  // switch
      std::vector<int> cases(pick_between(rng_, 2, 3));
      for (auto& c : cases) c = label();
      body_(*this);
      op(pick(kSwitches, rng_), cases);
      seq(depth + 1, 1, cont);
      for (int c : cases) {
        bind(c);
        seq(depth + 1, 1, cont);
      }
    }
  }

  MethodListing finish(const std::string& program_id, const std::string& method_id) {
    MethodListing m;
    m.program_id = program_id;
    m.method_id = method_id;
    for (std::size_t i = 0; i < ops_.size(); ++i) {
      Instruction insn;
      insn.index = i;
      insn.opcode = Opcode::from_mnemonic(ops_[i].mnemonic);
      for (int l : ops_[i].labels) insn.branch_targets.push_back(*positions_[static_cast<std::size_t>(l)]);
      m.instructions.push_back(std::move(insn));
    }
    return m;
  }

  std::mt19937_64& rng_;
  BodyFn body_;
  int max_depth_;
  std::size_t min_stmts_;
  std::size_t max_stmts_;
  std::vector<PendingOp> ops_;
  std::vector<std::optional<std::size_t>> positions_;
};

// Instructions addressed by stable ids, so code can be moved and inserted
// without breaking branch targets.
struct Code {
  struct Op {
    std::string mnemonic;
    std::vector<std::size_t> targets;  // uids
    std::size_t uid = 0;
  };
  std::string program_id;
  std::string method_id;
  std::vector<Op> ops;
  std::size_t next_uid = 0;

  static Code from(const MethodListing& m) {
    Code c{m.program_id, m.method_id, {}, m.instructions.size()};
    for (const auto& insn : m.instructions) {
      c.ops.push_back({insn.opcode.mnemonic, insn.branch_targets, insn.index});
    }
    return c;
  }

  Op fresh(std::string_view mnemonic) { return {std::string(mnemonic), {}, next_uid++}; }

  MethodListing to_listing() const {
    std::map<std::size_t, std::size_t> where;
    for (std::size_t i = 0; i < ops.size(); ++i) where[ops[i].uid] = i;
    MethodListing m;
    m.program_id = program_id;
    m.method_id = method_id;
    for (std::size_t i = 0; i < ops.size(); ++i) {
      Instruction insn;
      insn.index = i;
      insn.opcode = Opcode::from_mnemonic(ops[i].mnemonic);
      for (auto t : ops[i].targets) insn.branch_targets.push_back(where.at(t));
      m.instructions.push_back(std::move(insn));
    }
    validate(m);
    return m;
  }

  // Maximal runs that fall through from one op to the next.
  std::vector<std::vector<Op>> chains() const {
    std::vector<std::vector<Op>> out(1);
    for (const auto& op : ops) {
      out.back().push_back(op);
      auto kind = classify_mnemonic(op.mnemonic);
      if (kind == OpKind::kUncondBranch || kind == OpKind::kReturn || kind == OpKind::kThrow) {
        out.emplace_back();
      }
    }
    if (out.back().empty()) out.pop_back();
    return out;
  }
};

std::size_t rate_count(double rate, std::size_t eligible) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw std::invalid_argument("transform rate must be in [0, 1]");
  return static_cast<std::size_t>(std::llround(rate * static_cast<double>(eligible)));
}

// Positions (method, op) chosen without replacement.
std::vector<std::pair<std::size_t, std::size_t>> choose(
    std::vector<std::pair<std::size_t, std::size_t>> eligible, std::size_t k,
    std::mt19937_64& rng) {
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(eligible[i], eligible[i + uniform_index(rng, eligible.size() - i)]);
  }
  eligible.resize(k);
  std::sort(eligible.begin(), eligible.end());
  return eligible;
}

std::size_t substitute_all(std::vector<Code>& code, double rate, std::mt19937_64& rng) {
  std::vector<std::pair<std::size_t, std::size_t>> eligible;
  for (std::size_t m = 0; m < code.size(); ++m) {
    for (std::size_t i = 0; i < code[m].ops.size(); ++i) {
      if (substitution_class(code[m].ops[i].mnemonic)) eligible.emplace_back(m, i);
    }
  }
  auto chosen = choose(eligible, rate_count(rate, eligible.size()), rng);
  for (auto [m, i] : chosen) {
    auto& op = code[m].ops[i];
    const auto& cls = *substitution_class(op.mnemonic);
    std::vector<std::string_view> others;
    for (auto alt : cls) {
      if (alt != op.mnemonic) others.push_back(alt);
    }
    op.mnemonic = std::string(pick(others, rng));
  }
  return chosen.size();
}

std::size_t pad_all(std::vector<Code>& code, double rate, std::mt19937_64& rng) {
  std::vector<std::pair<std::size_t, std::size_t>> eligible;
  for (std::size_t m = 0; m < code.size(); ++m) {
    for (std::size_t i = 0; i < code[m].ops.size(); ++i) {
      auto kind = classify_mnemonic(code[m].ops[i].mnemonic);
      if (kind == OpKind::kPlain || kind == OpKind::kInvoke) eligible.emplace_back(m, i);
    }
  }
  auto chosen = choose(eligible, rate_count(rate, eligible.size()), rng);
  // Back to front so earlier positions stay valid.
  for (auto it = chosen.rbegin(); it != chosen.rend(); ++it) {
    auto& c = code[it->first];
    auto nop = c.fresh("nop");
    c.ops.insert(c.ops.begin() + static_cast<std::ptrdiff_t>(it->second + 1), std::move(nop));
  }
  return chosen.size();
}

void reorder(Code& code, std::mt19937_64& rng) {
  auto chains = code.chains();
  if (chains.size() < 3) return;
  auto last_kind = classify_mnemonic(chains.back().back().mnemonic);
  const bool last_falls = last_kind != OpKind::kUncondBranch && last_kind != OpKind::kReturn &&
                          last_kind != OpKind::kThrow;
  auto end = chains.end() - (last_falls ? 1 : 0);
  portable_shuffle(chains.begin() + 1, end, rng);
  code.ops.clear();
  for (auto& ch : chains) {
    for (auto& op : ch) code.ops.push_back(std::move(op));
  }
}

std::vector<Code> split(const Code& code, std::mt19937_64& rng) {
  auto chains = code.chains();
  if (chains.size() < 2) return {code};
  const std::size_t cut = 1 + uniform_index(rng, chains.size() - 1);
  Code a{code.program_id, code.method_id, {}, code.next_uid};
  Code b{code.program_id, code.method_id + "$split", {}, code.next_uid};
  for (std::size_t c = 0; c < chains.size(); ++c) {
    auto& dst = c < cut ? a : b;
    for (const auto& op : chains[c]) dst.ops.push_back(op);
  }
  auto redirect = [](Code& part) {
    std::set<std::size_t> local;
    for (const auto& op : part.ops) local.insert(op.uid);
    std::optional<std::size_t> stub;
    for (auto& op : part.ops) {
      for (auto& t : op.targets) {
        if (local.count(t)) continue;
        if (!stub) stub = part.next_uid;
        t = *stub;
      }
    }
    if (stub) {
      part.ops.push_back(part.fresh("invoke-static"));
      part.ops.push_back(part.fresh("return-void"));
    }
  };
  redirect(a);
  redirect(b);
  return {a, b};
}

nlohmann::json entry_to_json(const ManifestEntry& e) {
  return {{"program_id", e.program_id},
          {"role", std::string(to_string(e.role))},
          {"family", e.family},
          {"variant", e.variant},
          {"transforms", e.transforms}};
}

ManifestEntry benign_entry(const ProgramListing& p, Role role) {
  return {p.program_id, role, "", 0, ""};
}

}  // namespace

std::vector<ProgramListing> synthesize_benign(std::size_t count, const BenignParams& params,
                                              std::uint64_t seed, const std::string& id_prefix) {
  if (count == 0) throw std::invalid_argument("synthesize_benign needs count >= 1");
  if (params.min_methods == 0 || params.min_methods > params.max_methods ||
      params.min_statements == 0 || params.min_statements > params.max_statements) {
    throw std::invalid_argument("bad benign generator size parameters");
  }
  std::mt19937_64 rng(seed);
  auto body = [](Emitter& e) {
    for (auto op : kBenignBodies[uniform_index(e.rng(), kBenignBodies.size())]) e.op(op);
  };
  std::vector<ProgramListing> out;
  for (std::size_t p = 0; p < count; ++p) {
    char id[64];
    std::snprintf(id, sizeof id, "%s-%03zu", id_prefix.c_str(), p);
    ProgramListing program{id, ProgramLabel::clean(), {}};
    const auto methods = pick_between(rng, params.min_methods, params.max_methods);
    for (std::size_t m = 0; m < methods; ++m) {
      Emitter e(rng, body, params.max_depth, params.min_statements, params.max_statements);
      program.methods.push_back(e.method(program.program_id, "app.C" + std::to_string(m / 3) +
                                                                 ".m" + std::to_string(m)));
    }
    out.push_back(std::move(program));
  }
  return out;
}

std::vector<MethodListing> synthesize_payload(const std::string& family,
                                              const PayloadParams& params, std::uint64_t seed) {
  if (family.empty()) throw std::invalid_argument("payload family must be named");
  if (params.methods == 0 || params.min_statements == 0 ||
      params.min_statements > params.max_statements || params.max_blocks == 0) {
    throw std::invalid_argument("bad payload generator size parameters");
  }
  std::mt19937_64 rng(seed);
  auto body = [](Emitter& e) {
    auto& r = e.rng();
    std::vector<std::string_view> ops;
    const auto special = pick_between(r, 1, 2);
    for (std::size_t i = 0; i < special; ++i) ops.push_back(pick(kPayloadOnly, r));
    if (uniform_index(r, 2) == 0) {
      ops.push_back(pick(kSubstitutionClasses[uniform_index(r, kSubstitutionClasses.size())], r));
    }
    if (uniform_index(r, 2) == 0) ops.push_back(pick(kPayloadFiller, r));
    portable_shuffle(ops.begin(), ops.end(), r);
    for (auto op : ops) e.op(op);
  };
  std::vector<MethodListing> out;
  for (std::size_t m = 0; m < params.methods; ++m) {
    for (int attempt = 0;; ++attempt) {
      if (attempt == 1000) throw std::runtime_error("payload method does not fit max_blocks");
      Emitter e(rng, body, params.max_depth, params.min_statements, params.max_statements);
      auto method = e.method("payload", family + ".core.m" + std::to_string(m));
      if (partition_blocks(method).size() <= params.max_blocks) {
        out.push_back(std::move(method));
        break;
      }
    }
  }
  return out;
}

std::string Transform::to_string() const {
  char buf[48];
  switch (kind) {
    case TransformKind::kSubstitution:
      std::snprintf(buf, sizeof buf, "substitution(%s)", format_metric(rate).c_str());
      return buf;
    case TransformKind::kPadding:
      std::snprintf(buf, sizeof buf, "padding(%s)", format_metric(rate).c_str());
      return buf;
    case TransformKind::kReorder:
      return "reorder";
    case TransformKind::kSplit:
      return "split";
  }
  return "";
}

Transform Transform::parse(std::string_view text) {
  auto rate_of = [&](std::string_view name) -> std::optional<double> {
    if (text.substr(0, name.size()) != name) return std::nullopt;
    auto rest = text.substr(name.size());
    if (rest.size() < 3 || rest.front() != '(' || rest.back() != ')') {
      throw std::invalid_argument("transform '" + std::string(text) + "' needs a rate");
    }
    std::string number(rest.substr(1, rest.size() - 2));
    std::size_t used = 0;
    double r = std::stod(number, &used);
    if (used != number.size() || !(r >= 0.0 && r <= 1.0)) {
      throw std::invalid_argument("bad transform rate in '" + std::string(text) + "'");
    }
    return r;
  };
  if (text == "reorder") return {TransformKind::kReorder, 0.0};
  if (text == "split") return {TransformKind::kSplit, 0.0};
  if (auto r = rate_of("substitution")) return {TransformKind::kSubstitution, *r};
  if (auto r = rate_of("padding")) return {TransformKind::kPadding, *r};
  throw std::invalid_argument("unknown transform '" + std::string(text) + "'");
}

std::string to_string(const TransformPipeline& pipeline) {
  if (pipeline.empty()) return "identity";
  std::string out;
  for (const auto& t : pipeline) {
    if (!out.empty()) out += ",";
    out += t.to_string();
  }
  return out;
}

TransformPipeline parse_pipeline(std::string_view text) {
  TransformPipeline out;
  if (text.empty() || text == "identity") return out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto comma = text.find(',', start);
    // Rates contain no commas, so a plain split is enough.
    auto item = text.substr(start, comma == std::string_view::npos ? text.npos : comma - start);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    out.push_back(Transform::parse(item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

MethodListing substitute_opcodes(const MethodListing& method, double rate, std::mt19937_64& rng,
                                 std::size_t* changed) {
  std::vector<Code> code{Code::from(method)};
  auto n = substitute_all(code, rate, rng);
  if (changed) *changed = n;
  return code[0].to_listing();
}

MethodListing pad_nops(const MethodListing& method, double rate, std::mt19937_64& rng,
                       std::size_t* inserted) {
  std::vector<Code> code{Code::from(method)};
  auto n = pad_all(code, rate, rng);
  if (inserted) *inserted = n;
  return code[0].to_listing();
}

MethodListing reorder_blocks(const MethodListing& method, std::mt19937_64& rng) {
  auto code = Code::from(method);
  reorder(code, rng);
  return code.to_listing();
}

std::vector<MethodListing> split_method(const MethodListing& method, std::mt19937_64& rng) {
  std::vector<MethodListing> out;
  for (const auto& part : split(Code::from(method), rng)) out.push_back(part.to_listing());
  return out;
}

std::vector<MethodListing> apply_transforms(const std::vector<MethodListing>& payload,
                                            const TransformPipeline& pipeline,
                                            std::uint64_t seed) {
  if (payload.empty()) throw std::invalid_argument("payload is empty");
  std::mt19937_64 rng(seed);
  std::vector<Code> code;
  for (const auto& m : payload) code.push_back(Code::from(m));
  for (const auto& t : pipeline) {
    switch (t.kind) {
      case TransformKind::kSubstitution:
        substitute_all(code, t.rate, rng);
        break;
      case TransformKind::kPadding:
        pad_all(code, t.rate, rng);
        break;
      case TransformKind::kReorder:
        for (auto& c : code) reorder(c, rng);
        break;
      case TransformKind::kSplit: {
        std::vector<Code> next;
        for (const auto& c : code) {
          for (auto& part : split(c, rng)) next.push_back(std::move(part));
        }
        code = std::move(next);
        break;
      }
    }
  }
  std::vector<MethodListing> out;
  for (const auto& c : code) out.push_back(c.to_listing());
  return out;
}

ProgramListing inject(const ProgramListing& host, const std::vector<MethodListing>& payload,
                      const std::string& family, const std::string& program_id,
                      std::uint64_t seed, const std::string& hook) {
  if (payload.empty()) throw std::invalid_argument("payload is empty");
  if (host.methods.empty()) throw std::invalid_argument("host has no methods");
  std::mt19937_64 rng(seed);
  ProgramListing out = host;
  out.program_id = program_id;
  out.label = ProgramLabel::malware(family);
  for (auto& m : out.methods) m.program_id = program_id;

  auto& site = out.methods[uniform_index(rng, out.methods.size())];
  const auto at = uniform_index(rng, site.instructions.size());
  for (auto& insn : site.instructions) {
    for (auto& t : insn.branch_targets) {
      if (t > at) ++t;
    }
  }
  Instruction call;
  call.index = at;
  call.opcode = Opcode::from_mnemonic(hook);
  if (call.opcode.kind != OpKind::kInvoke) throw std::invalid_argument("hook must be an invoke");
  site.instructions.insert(site.instructions.begin() + static_cast<std::ptrdiff_t>(at), call);
  for (std::size_t i = 0; i < site.instructions.size(); ++i) site.instructions[i].index = i;

  for (auto m : payload) {
    m.program_id = program_id;
    out.methods.push_back(std::move(m));
  }
  validate(out);
  return out;
}

std::string_view to_string(Role role) {
  switch (role) {
    case Role::kBenignOriginal:
      return "benign-original";
    case Role::kBenignExtra:
      return "benign-extra";
    case Role::kInfected:
      return "infected";
  }
  return "benign-extra";
}

Role parse_role(std::string_view text) {
  if (text == "benign-original") return Role::kBenignOriginal;
  if (text == "benign-extra") return Role::kBenignExtra;
  if (text == "infected") return Role::kInfected;
  throw std::invalid_argument("unknown role '" + std::string(text) + "'");
}

const ManifestEntry* CorpusManifest::find(const std::string& program_id) const {
  for (const auto& e : entries) {
    if (e.program_id == program_id) return &e;
  }
  return nullptr;
}

nlohmann::json CorpusManifest::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : entries) rows.push_back(entry_to_json(e));
  return {{"format", "opsig-manifest"}, {"seed", seed}, {"entries", rows}};
}

CorpusManifest CorpusManifest::from_json(const nlohmann::json& doc) {
  if (doc.value("format", "") != "opsig-manifest") {
    throw std::invalid_argument("not a corpus manifest");
  }
  CorpusManifest m;
  m.seed = doc.at("seed").get<std::uint64_t>();
  std::set<std::string> ids;
  for (const auto& row : doc.at("entries")) {
    ManifestEntry e{row.at("program_id").get<std::string>(),
                    parse_role(row.at("role").get<std::string>()),
                    row.at("family").get<std::string>(), row.at("variant").get<int>(),
                    row.at("transforms").get<std::string>()};
    if ((e.role == Role::kInfected) == e.family.empty()) {
      throw std::invalid_argument("manifest entry " + e.program_id +
                                  " has an inconsistent role and family");
    }
    if (!ids.insert(e.program_id).second) {
      throw std::invalid_argument("duplicate manifest entry " + e.program_id);
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

std::vector<ProgramListing> infect_all(const InjectionSpec& spec,
                                       std::vector<ManifestEntry>* entries) {
  if (spec.variants.empty()) throw std::invalid_argument("no payload variants given");
  if (spec.hosts.empty()) throw std::invalid_argument("no host programs given");
  std::vector<ProgramListing> out;
  for (std::size_t v = 0; v < spec.variants.size(); ++v) {
    auto code = apply_transforms(spec.payload, spec.variants[v], splitmix64(spec.seed + v));
    for (std::size_t h = 0; h < spec.hosts.size(); ++h) {
      const auto& host = spec.hosts[h];
      auto id = host.program_id + "-v" + std::to_string(v + 1);
      out.push_back(inject(host, code, spec.family, id,
                           splitmix64(spec.seed ^ (0x1000 * (v + 1) + h)), spec.hook));
      if (entries) {
        entries->push_back({id, Role::kInfected, spec.family, static_cast<int>(v + 1),
                            to_string(spec.variants[v])});
      }
    }
  }
  return out;
}

std::vector<TransformPipeline> mild_variants() {
  return {
      {{TransformKind::kSubstitution, 0.2}},
      {{TransformKind::kReorder, 0.0}, {TransformKind::kPadding, 0.1}},
      {{TransformKind::kSubstitution, 0.1}, {TransformKind::kReorder, 0.0},
       {TransformKind::kPadding, 0.05}},
  };
}

Corpus make_lab_corpus(const LabOptions& options) {
  if (options.variants.empty()) throw std::invalid_argument("laboratory needs variants");
  if (options.hosts == 0) throw std::invalid_argument("laboratory needs hosts");
  Corpus corpus;
  corpus.manifest.seed = options.seed;
  auto hosts = synthesize_benign(options.hosts, options.benign, splitmix64(options.seed), "host");
  InjectionSpec spec{options.family,
                     synthesize_payload(options.family, options.payload,
                                        splitmix64(options.seed + 1)),
                     options.variants, hosts, splitmix64(options.seed + 2)};
  for (const auto& h : hosts) {
    corpus.manifest.entries.push_back(benign_entry(h, Role::kBenignOriginal));
    corpus.programs.push_back(h);
  }
  for (auto& p : infect_all(spec, &corpus.manifest.entries)) corpus.programs.push_back(std::move(p));
  if (options.extras > 0) {
    for (auto& p : synthesize_benign(options.extras, options.benign,
                                     splitmix64(options.seed + 3), "extra")) {
      corpus.manifest.entries.push_back(benign_entry(p, Role::kBenignExtra));
      corpus.programs.push_back(std::move(p));
    }
  }
  return corpus;
}

std::vector<FamilySpec> default_families() {
  auto variants = [](std::size_t count) {
    std::vector<TransformPipeline> out;
    auto mild = mild_variants();
    for (std::size_t i = 0; i < count; ++i) {
      auto p = mild[i % mild.size()];
      if (i >= mild.size()) p.push_back({TransformKind::kReorder, 0.0});
      out.push_back(std::move(p));
    }
    return out;
  };
  return {{"droidjack", "DroidJack", variants(6), 10, "invoke-static/range"},
          {"opfake", "Opfake", variants(4), 10, "invoke-direct/range"}};
}

Corpus make_realstyle_corpus(const RealStyleOptions& options) {
  auto families = options.families.empty() ? default_families() : options.families;
  if (families.empty()) throw std::invalid_argument("real-style corpus needs malware families");
  Corpus corpus;
  corpus.manifest.seed = options.seed;
  if (options.clean > 0) {
    for (auto& p : synthesize_benign(options.clean, options.benign,
                                     splitmix64(options.seed), "clean")) {
      corpus.manifest.entries.push_back(benign_entry(p, Role::kBenignExtra));
      corpus.programs.push_back(std::move(p));
    }
  }
  for (std::size_t f = 0; f < families.size(); ++f) {
    const auto& fam = families[f];
    if (fam.per_variant == 0 || fam.variants.empty()) {
      throw std::invalid_argument("family " + fam.name + " has no samples");
    }
    const auto base = splitmix64(options.seed + 0x100 * (f + 1));
    auto payload = synthesize_payload(fam.name, options.payload, base);
    for (std::size_t v = 0; v < fam.variants.size(); ++v) {
      // Every sample has its own host; the variant's code is shared.
      auto hosts = synthesize_benign(fam.per_variant, options.benign, splitmix64(base + v + 1),
                                     fam.name + "-v" + std::to_string(v + 1));
      auto code = apply_transforms(payload, fam.variants[v], splitmix64(base + 0x77 + v));
      for (std::size_t h = 0; h < hosts.size(); ++h) {
        const auto& id = hosts[h].program_id;
        corpus.programs.push_back(
            inject(hosts[h], code, fam.name, id, splitmix64(base ^ (0x1000 * (v + 1) + h)),
                   fam.hook));
        corpus.manifest.entries.push_back({id, Role::kInfected, fam.name,
                                           static_cast<int>(v + 1),
                                           to_string(fam.variants[v])});
      }
    }
  }
  return corpus;
}

TrainedPipeline train_pipeline(std::span<const ProgramListing> programs,
                               const PipelineOptions& options, Diagnostics* diagnostics) {
  check_ngram_size(options.n);
  auto docs = options.unit == DocumentUnit::kBlock ? block_documents(programs, options.n)
                                                   : program_documents(programs, options.n);
  std::erase_if(docs, [](const Document& d) { return d.ngrams.empty(); });
  if (docs.empty()) throw std::invalid_argument("training corpus yields no n-grams");
  auto vocabulary = build_vocabulary(docs, options.n, options.capacity, diagnostics);
  auto vectors = vectorize_all(docs, vocabulary);
  auto params = options.params;
  params.jobs = options.jobs;
  auto model = train(options.classifier, vectors, params);
  return {std::move(vocabulary), std::move(model)};
}

Metrics recount_metrics(std::span<const DetectionReport> reports, const CorpusManifest& manifest,
                        const std::vector<std::string>& positive_families) {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (const auto& r : reports) {
    const auto* e = manifest.find(r.program_id);
    if (!e) throw std::invalid_argument("program " + r.program_id + " is not in the manifest");
    const bool positive = std::count(positive_families.begin(), positive_families.end(),
                                     e->family) > 0;
    const bool flagged = r.verdict.kind != VerdictKind::kClean &&
                         std::count(positive_families.begin(), positive_families.end(),
                                    r.verdict.family) > 0;
    if (positive && flagged) ++tp;
    if (!positive && flagged) ++fp;
    if (!positive && !flagged) ++tn;
    if (positive && !flagged) ++fn;
  }
  return Metrics::from_counts(tp, fp, tn, fn);
}

namespace {

DictionaryResult evaluate_dictionary(const Corpus& corpus, const DictionarySpec& dict,
                                     const std::vector<ProgramListing>& training,
                                     const PipelineOptions& options, Diagnostics* diagnostics) {
  std::vector<ProgramListing> sources;
  for (const auto& id : dict.source_ids) {
    auto it = std::find_if(corpus.programs.begin(), corpus.programs.end(),
                           [&](const ProgramListing& p) { return p.program_id == id; });
    if (it == corpus.programs.end()) throw std::invalid_argument("unknown source program " + id);
    sources.push_back(*it);
  }
  if (sources.empty()) throw std::invalid_argument("dictionary " + dict.name + " has no sources");

  auto trained = train_pipeline(training, options, diagnostics);
  auto db = build_database(sources, trained.model, trained.vocabulary, options.extraction,
                           options.created, diagnostics, options.jobs);
  auto scan_options = options.scan;
  scan_options.jobs = options.jobs;

  DictionaryResult result;
  result.name = dict.name;
  result.source_programs = sources.size();
  result.signatures = db.signatures.size();
  result.reports = scan_all(corpus.programs, db, scan_options);
  for (std::size_t i = 0; i < corpus.programs.size(); ++i) {
    const auto& e = corpus.manifest.entries[i];
    const auto& r = result.reports[i];
    const bool positive =
        std::count(dict.families.begin(), dict.families.end(), e.family) > 0;
    const bool flagged = r.verdict.detected() && std::count(dict.families.begin(),
                                                            dict.families.end(),
                                                            r.verdict.family) > 0;
    result.metrics.add(positive, flagged);
    const std::string truth = e.family.empty() ? "clean" : e.family;
    const std::string said = r.verdict.detected() ? r.verdict.family : "clean";
    ++result.attribution[{truth, said}];
    if (said != "clean" && said != truth) ++result.off_diagonal;
  }
  result.metrics.finalize();
  return result;
}

std::vector<ProgramListing> select(const Corpus& corpus,
                                   const std::function<bool(const ManifestEntry&)>& keep) {
  std::vector<ProgramListing> out;
  for (std::size_t i = 0; i < corpus.programs.size(); ++i) {
    if (keep(corpus.manifest.entries[i])) out.push_back(corpus.programs[i]);
  }
  return out;
}

}  // namespace

void MetricsTable::write_csv(std::ostream& out) const {
  out << corner << ",Precision,Recall,F-measure\n";
  for (const auto& r : rows) {
    out << r.name << "," << format_metric(r.metrics.precision) << ","
        << format_metric(r.metrics.recall) << "," << format_metric(r.metrics.f1) << "\n";
  }
}

MetricsTable run_laboratory(const Corpus& corpus, const PipelineOptions& options,
                            Diagnostics* diagnostics) {
  if (corpus.programs.size() != corpus.manifest.entries.size()) {
    throw std::invalid_argument("corpus and manifest differ in size");
  }
  int variants = 0;
  std::string family;
  for (const auto& e : corpus.manifest.entries) {
    variants = std::max(variants, e.variant);
    if (e.role == Role::kInfected) family = e.family;
  }
  if (variants == 0) throw std::invalid_argument("laboratory corpus has no infected variants");

  auto originals = select(corpus, [](const ManifestEntry& e) {
    return e.role == Role::kBenignOriginal;
  });
  MetricsTable table;
  for (int v = 1; v <= variants; ++v) {
    auto infected = select(corpus, [&](const ManifestEntry& e) {
      return e.role == Role::kInfected && e.variant == v;
    });
    DictionarySpec dict{"Variant " + std::to_string(v), {family}, {}};
    for (const auto& p : infected) dict.source_ids.push_back(p.program_id);
    auto training = infected;
    training.insert(training.end(), originals.begin(), originals.end());
    table.rows.push_back(evaluate_dictionary(corpus, dict, training, options, diagnostics));
  }
  return table;
}

std::vector<DictionarySpec> default_dictionaries(const Corpus& corpus,
                                                 const std::vector<FamilySpec>& families) {
  std::vector<DictionarySpec> out;
  DictionarySpec all{"Set of malware", {}, {}};
  for (const auto& fam : families) {
    DictionarySpec d{fam.display.empty() ? fam.name : fam.display, {fam.name}, {}};
    for (const auto& e : corpus.manifest.entries) {
      if (e.family == fam.name && e.variant == 1) d.source_ids.push_back(e.program_id);
    }
    out.push_back(std::move(d));
    all.families.push_back(fam.name);
  }
  for (const auto& e : corpus.manifest.entries) {
    if (e.role == Role::kInfected) all.source_ids.push_back(e.program_id);
  }
  out.push_back(std::move(all));
  return out;
}

MetricsTable run_realstyle(const Corpus& corpus, const std::vector<DictionarySpec>& dictionaries,
                           const PipelineOptions& options, Diagnostics* diagnostics) {
  if (corpus.programs.size() != corpus.manifest.entries.size()) {
    throw std::invalid_argument("corpus and manifest differ in size");
  }
  auto clean = select(corpus, [](const ManifestEntry& e) { return e.role != Role::kInfected; });
  auto malware = select(corpus, [](const ManifestEntry& e) { return e.role == Role::kInfected; });
  if (malware.empty()) throw std::invalid_argument("real-style corpus has no malware");
  if (dictionaries.empty()) throw std::invalid_argument("no dictionaries requested");
  MetricsTable table;
  table.corner = "Dictionary based on";
  for (const auto& dict : dictionaries) {
    std::set<std::string> ids(dict.source_ids.begin(), dict.source_ids.end());
    auto training = select(corpus, [&](const ManifestEntry& e) { return ids.count(e.program_id) > 0; });
    training.insert(training.end(), clean.begin(), clean.end());
    table.rows.push_back(evaluate_dictionary(corpus, dict, training, options, diagnostics));
  }
  return table;
}

Corpus make_benchmark_corpus(std::size_t per_class, std::uint64_t seed) {
  if (per_class == 0) throw std::invalid_argument("benchmark corpus needs samples");
  RealStyleOptions options;
  options.clean = per_class;
  options.seed = seed;
  // Small hosts and a larger payload keep payload n-grams in the top of the
  // vocabulary ranking.
  options.benign.min_methods = 2;
  options.benign.max_methods = 3;
  options.payload.methods = 5;
  auto families = default_families();
  std::size_t remaining = per_class;
  for (std::size_t f = 0; f < families.size(); ++f) {
    auto& fam = families[f];
    const auto share = f + 1 == families.size() ? remaining : per_class / families.size();
    remaining -= share;
    fam.variants.resize(std::max<std::size_t>(1, std::min(fam.variants.size(), share)));
    fam.per_variant = (share + fam.variants.size() - 1) / fam.variants.size();
  }
  options.families = families;
  auto corpus = make_realstyle_corpus(options);
  // Trim rounding overshoot so both classes have exactly per_class samples.
  std::size_t infected = 0;
  Corpus out;
  out.manifest.seed = seed;
  for (std::size_t i = 0; i < corpus.programs.size(); ++i) {
    const auto& e = corpus.manifest.entries[i];
    if (e.role == Role::kInfected && infected++ >= per_class) continue;
    out.manifest.entries.push_back(e);
    out.programs.push_back(corpus.programs[i]);
  }
  return out;
}

std::string format_metric(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", value);
  std::string s = buf;
  while (s.size() > 1 && s.back() == '0') s.pop_back();
  if (s.back() == '.') s.pop_back();
  return s;
}

}  // namespace opsig
