#include "opsig/cfg.hpp"

#include <algorithm>
#include <charconv>
#include <deque>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace opsig {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  constexpr std::uint64_t kPrime = 0x100000001b3ULL;
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kPrime;
  }
  return h;
}

std::string BlockHash::hex() const {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[(value >> ((15 - i) * 4)) & 0xf];
  }
  return out;
}

BlockHash BlockHash::from_hex(std::string_view text) {
  if (text.size() != 16) throw std::invalid_argument("block hash must be 16 hex digits");
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v, 16);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw std::invalid_argument("malformed block hash '" + std::string(text) + "'");
  }
  return {v};
}

std::vector<std::vector<int>> ControlFlowGraph::successors() const {
  std::vector<std::vector<int>> out(nodes.size());
  for (const auto& e : edges) out[static_cast<std::size_t>(e.from)].push_back(e.to);
  return out;
}

std::vector<std::vector<int>> ControlFlowGraph::predecessors() const {
  std::vector<std::vector<int>> out(nodes.size());
  for (const auto& e : edges) out[static_cast<std::size_t>(e.to)].push_back(e.from);
  return out;
}

void validate(const ControlFlowGraph& cfg) {
  if (cfg.nodes.empty()) throw std::invalid_argument("graph has no nodes");
  const int n = static_cast<int>(cfg.nodes.size());
  for (int i = 0; i < n; ++i) {
    if (cfg.nodes[static_cast<std::size_t>(i)].block_id != i) {
      throw std::invalid_argument("node ids must be 0..n-1 in order");
    }
  }
  std::set<CfgEdge> seen;
  for (const auto& e : cfg.edges) {
    if (e.from < 0 || e.from >= n || e.to < 0 || e.to >= n) {
      throw std::invalid_argument("edge endpoint out of range");
    }
    if (!seen.insert(e).second) throw std::invalid_argument("duplicate edge");
  }
}

std::vector<BasicBlock> partition_blocks(const MethodListing& method) {
  const auto& insns = method.instructions;
  const auto size = insns.size();
  std::vector<bool> leader(size, false);
  if (size == 0) return {};
  leader[0] = true;
  for (const auto& insn : insns) {
    for (auto t : insn.branch_targets) leader[t] = true;
    if (ends_block(insn.opcode.kind) && insn.index + 1 < size) leader[insn.index + 1] = true;
  }

  std::vector<BasicBlock> blocks;
  for (std::size_t i = 0; i < size; ++i) {
    if (leader[i]) {
      BasicBlock block;
      block.block_id = static_cast<int>(blocks.size());
      block.first_index = i;
      blocks.push_back(std::move(block));
    }
    auto& block = blocks.back();
    block.opcodes.push_back(insns[i].opcode.mnemonic);
    block.last_index = i;
  }
  return blocks;
}

BlockHash hash_block(std::span<const std::string> opcodes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < opcodes.size(); ++i) {
    if (i > 0) h = fnv1a64("\n", h);
    h = fnv1a64(opcodes[i], h);
  }
  return {h};
}

ControlFlowGraph build_cfg(const MethodListing& method, std::vector<BasicBlock>& blocks) {
  blocks = partition_blocks(method);
  ControlFlowGraph cfg;
  cfg.graph_id = method.program_id + "/" + method.method_id;

  std::vector<int> block_of(method.instructions.size(), 0);
  for (const auto& b : blocks) {
    for (auto i = b.first_index; i <= b.last_index; ++i) block_of[i] = b.block_id;
    cfg.nodes.push_back({b.block_id, hash_block(b), b.opcodes.size(), true});
  }

  std::set<CfgEdge> edges;
  const int count = static_cast<int>(blocks.size());
  for (const auto& b : blocks) {
    const auto& last = method.instructions[b.last_index];
    const int next = b.block_id + 1;
    auto add_targets = [&] {
      for (auto t : last.branch_targets) edges.insert({b.block_id, block_of[t]});
    };
    switch (last.opcode.kind) {
      case OpKind::kCondBranch:
      case OpKind::kSwitch:
        add_targets();
        if (next < count) edges.insert({b.block_id, next});
        break;
      case OpKind::kUncondBranch:
        add_targets();
        break;
      case OpKind::kReturn:
      case OpKind::kThrow:
        break;
      default:
        if (next < count) edges.insert({b.block_id, next});
    }
  }
  cfg.edges.assign(edges.begin(), edges.end());

  // Unreachable blocks stay in the graph, flagged.
  std::vector<bool> seen(blocks.size(), false);
  auto succ = cfg.successors();
  std::deque<int> queue{0};
  seen[0] = true;
  while (!queue.empty()) {
    int v = queue.front();
    queue.pop_front();
    for (int w : succ[static_cast<std::size_t>(v)]) {
      if (!seen[static_cast<std::size_t>(w)]) {
        seen[static_cast<std::size_t>(w)] = true;
        queue.push_back(w);
      }
    }
  }
  for (std::size_t i = 0; i < seen.size(); ++i) cfg.nodes[i].reachable = seen[i];
  return cfg;
}

ControlFlowGraph build_cfg(const MethodListing& method) {
  std::vector<BasicBlock> blocks;
  return build_cfg(method, blocks);
}

std::vector<ControlFlowGraph> build_program_cfgs(const ProgramListing& program) {
  std::vector<ControlFlowGraph> out;
  out.reserve(program.methods.size());
  for (const auto& m : program.methods) out.push_back(build_cfg(m));
  return out;
}

nlohmann::json cfg_to_json(const ControlFlowGraph& cfg) {
  nlohmann::json nodes = nlohmann::json::array();
  nlohmann::json unreachable = nlohmann::json::array();
  for (const auto& n : cfg.nodes) {
    nodes.push_back({n.block_id, n.hash.hex(), n.size});
    if (!n.reachable) unreachable.push_back(n.block_id);
  }
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : cfg.edges) edges.push_back({e.from, e.to});
  nlohmann::json doc = {{"id", cfg.graph_id}, {"nodes", nodes}, {"edges", edges}};
  if (!unreachable.empty()) doc["unreachable"] = unreachable;
  return doc;
}

ControlFlowGraph cfg_from_json(const nlohmann::json& doc) {
  ControlFlowGraph cfg;
  cfg.graph_id = doc.at("id").get<std::string>();
  for (const auto& n : doc.at("nodes")) {
    cfg.nodes.push_back({n.at(0).get<int>(), BlockHash::from_hex(n.at(1).get<std::string>()),
                         n.at(2).get<std::size_t>(), true});
  }
  for (const auto& e : doc.at("edges")) {
    cfg.edges.push_back({e.at(0).get<int>(), e.at(1).get<int>()});
  }
  if (doc.contains("unreachable")) {
    for (const auto& id : doc.at("unreachable")) {
      auto i = id.get<int>();
      if (i < 0 || i >= static_cast<int>(cfg.nodes.size())) {
        throw std::invalid_argument("unreachable id out of range");
      }
      cfg.nodes[static_cast<std::size_t>(i)].reachable = false;
    }
  }
  std::sort(cfg.edges.begin(), cfg.edges.end());
  validate(cfg);
  return cfg;
}

nlohmann::json cfgs_to_json(const std::string& program_id,
                            const std::vector<ControlFlowGraph>& graphs) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& g : graphs) list.push_back(cfg_to_json(g));
  return {{"program", program_id}, {"graphs", list}};
}

}  // namespace opsig
