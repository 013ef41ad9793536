#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "opsig/listing.hpp"

namespace opsig {

// FNV-1a, 64-bit.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

struct BlockHash {
  std::uint64_t value = 0;

  // 16 lowercase hex digits.
  std::string hex() const;
  static BlockHash from_hex(std::string_view text);

  friend auto operator<=>(const BlockHash&, const BlockHash&) = default;
};

struct BasicBlock {
  int block_id = 0;
  std::vector<std::string> opcodes;
  std::size_t first_index = 0;
  std::size_t last_index = 0;
};

struct CfgNode {
  int block_id = 0;
  BlockHash hash;
  std::size_t size = 0;  // opcode count
  bool reachable = true;

  friend bool operator==(const CfgNode&, const CfgNode&) = default;
};

struct CfgEdge {
  int from = 0;
  int to = 0;

  friend auto operator<=>(const CfgEdge&, const CfgEdge&) = default;
};

// Nodes are stored in block_id order and block ids are 0..size-1, so a node's
// position in `nodes` is its block id.
struct ControlFlowGraph {
  std::string graph_id;
  std::vector<CfgNode> nodes;
  std::vector<CfgEdge> edges;  // sorted, unique

  std::size_t size() const { return nodes.size(); }
  std::vector<std::vector<int>> successors() const;
  std::vector<std::vector<int>> predecessors() const;

  friend bool operator==(const ControlFlowGraph&, const ControlFlowGraph&) = default;
};

// Throws std::invalid_argument when ids are not 0..n-1, edges reference
// missing nodes, or edges are duplicated.
void validate(const ControlFlowGraph& cfg);

std::vector<BasicBlock> partition_blocks(const MethodListing& method);

BlockHash hash_block(std::span<const std::string> opcodes);
inline BlockHash hash_block(const BasicBlock& block) { return hash_block(block.opcodes); }

ControlFlowGraph build_cfg(const MethodListing& method);

// Same as build_cfg, also handing back the blocks it partitioned.
ControlFlowGraph build_cfg(const MethodListing& method, std::vector<BasicBlock>& blocks);

std::vector<ControlFlowGraph> build_program_cfgs(const ProgramListing& program);

// Per-program CFG document.
nlohmann::json cfgs_to_json(const std::string& program_id,
                            const std::vector<ControlFlowGraph>& graphs);
nlohmann::json cfg_to_json(const ControlFlowGraph& cfg);
ControlFlowGraph cfg_from_json(const nlohmann::json& doc);

}  // namespace opsig
