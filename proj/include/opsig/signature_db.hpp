#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "opsig/cfg.hpp"
#include "opsig/classifier.hpp"
#include "opsig/listing.hpp"
#include "opsig/ngram.hpp"

namespace opsig {

inline constexpr int kDatabaseVersion = 1;

struct Signature {
  std::string id;
  std::string family;
  ControlFlowGraph fragment;  // local ids 0..k-1
  std::string source_program;
  std::string source_method;
  std::vector<int> source_blocks;  // source block id of each fragment node
  double score = 0.0;              // mean infected score of its blocks
  bool covers_source_cfg = false;  // fragment is its whole source method CFG

  friend bool operator==(const Signature&, const Signature&) = default;
};

struct Provenance {
  std::uint64_t vocabulary_fingerprint = 0;
  std::uint64_t model_fingerprint = 0;
  std::string model_kind;
  int n = 0;
  std::size_t capacity = 0;
  double tau = 0.0;
  std::size_t max_nodes = 0;
  std::size_t min_block_ops = 0;
  std::string created;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct SignatureDatabase {
  int version = kDatabaseVersion;
  Provenance provenance;
  std::vector<Signature> signatures;

  const Signature* find(const std::string& id) const;

  friend bool operator==(const SignatureDatabase&, const SignatureDatabase&) = default;
};

class DatabaseFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DatabaseVersionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyDatabaseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExtractionOptions {
  double tau = 0.8;
  std::size_t max_nodes = 20;
  std::size_t min_block_ops = 3;
};

struct BlockScores {
  std::string method_id;
  ControlFlowGraph cfg;
  std::vector<double> scores;   // per block id
  std::vector<bool> too_short;  // block shorter than n, scored 0
};

// Vectorizes every basic block as its own document and scores it. Throws
// std::invalid_argument unless the program is labeled malware(family), and
// FingerprintMismatch when model and vocabulary disagree.
std::vector<BlockScores> score_blocks(const ProgramListing& malware, const Model& model,
                                      const Vocabulary& vocabulary);

// Weakly connected components of the blocks scoring >= tau, one signature
// each. Ids are left empty; build_database assigns them.
std::vector<Signature> extract_signature(const ControlFlowGraph& cfg,
                                         std::span<const double> scores,
                                         const ExtractionOptions& options,
                                         const std::string& family,
                                         const std::string& source_program,
                                         const std::string& source_method,
                                         Diagnostics* diagnostics = nullptr);

// Same family and hash-preserving isomorphic fragments.
bool fragments_equivalent(const Signature& a, const Signature& b);

// Every signature must embed in its source CFG with full hash agreement.
// Returns the ids of the ones that do not.
std::vector<std::string> unsound_signatures(const SignatureDatabase& db,
                                            std::span<const ProgramListing> sources);

struct BuildStats {
  std::size_t extracted = 0;   // fragments before deduplication
  std::size_t duplicates = 0;  // fragments merged into an equivalent one
};

// Scores, extracts, checks every fragment against its source CFG and
// deduplicates. Throws EmptyDatabaseError when nothing is extracted.
SignatureDatabase build_database(std::span<const ProgramListing> malware, const Model& model,
                                 const Vocabulary& vocabulary,
                                 const ExtractionOptions& options = {},
                                 const std::string& created = "",
                                 Diagnostics* diagnostics = nullptr, std::size_t jobs = 1,
                                 BuildStats* stats = nullptr);

std::string database_to_string(const SignatureDatabase& db);
SignatureDatabase database_from_string(const std::string& text);

void save_database(const SignatureDatabase& db, const std::filesystem::path& path);
SignatureDatabase load_database(const std::filesystem::path& path);

}  // namespace opsig
