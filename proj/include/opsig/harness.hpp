#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "opsig/classifier.hpp"
#include "opsig/listing.hpp"
#include "opsig/ngram.hpp"
#include "opsig/scan.hpp"
#include "opsig/signature_db.hpp"

namespace opsig {

struct BenignParams {
  std::size_t min_methods = 4;
  std::size_t max_methods = 8;
  std::size_t min_statements = 2;  // top-level statements per method
  std::size_t max_statements = 5;
  int max_depth = 2;
};

// Throws std::invalid_argument when count is 0.
std::vector<ProgramListing> synthesize_benign(std::size_t count, const BenignParams& params,
                                              std::uint64_t seed,
                                              const std::string& id_prefix = "benign");

struct PayloadParams {
  std::size_t methods = 3;
  std::size_t min_statements = 2;
  std::size_t max_statements = 4;
  int max_depth = 1;
  std::size_t max_blocks = 20;  // per method
};

// Infected code of one family. Every block holds an opcode that benign code
// never uses, and every method fits in max_blocks blocks.
std::vector<MethodListing> synthesize_payload(const std::string& family,
                                              const PayloadParams& params, std::uint64_t seed);

enum class TransformKind { kSubstitution, kReorder, kPadding, kSplit };

struct Transform {
  TransformKind kind = TransformKind::kSubstitution;
  double rate = 0.0;  // substitution and padding only

  // "substitution(0.2)", "reorder", "padding(0.1)", "split".
  std::string to_string() const;
  static Transform parse(std::string_view text);

  friend bool operator==(const Transform&, const Transform&) = default;
};

using TransformPipeline = std::vector<Transform>;

std::string to_string(const TransformPipeline& pipeline);
// Comma-separated list; "identity" or empty for no transforms.
TransformPipeline parse_pipeline(std::string_view text);

// Replaces round(rate * eligible) substitutable opcodes with a different
// member of their equivalence class. `changed` receives that count.
MethodListing substitute_opcodes(const MethodListing& method, double rate,
                                 std::mt19937_64& rng, std::size_t* changed = nullptr);

// Inserts round(rate * eligible) nops, each after a plain or invoke opcode.
MethodListing pad_nops(const MethodListing& method, double rate, std::mt19937_64& rng,
                       std::size_t* inserted = nullptr);

// Permutes fall-through chains, keeping the entry chain first. The CFG is
// isomorphic to the original's.
MethodListing reorder_blocks(const MethodListing& method, std::mt19937_64& rng);

// Splits at a chain boundary into two methods; branches crossing the cut go
// to a local stub. A method with a single chain is returned unchanged.
std::vector<MethodListing> split_method(const MethodListing& method, std::mt19937_64& rng);

// Substitution and padding are counted over the whole payload.
std::vector<MethodListing> apply_transforms(const std::vector<MethodListing>& payload,
                                            const TransformPipeline& pipeline,
                                            std::uint64_t seed);

// Adds the payload methods and a call site (an invoke opcode) at a seeded
// position of one host method.
ProgramListing inject(const ProgramListing& host, const std::vector<MethodListing>& payload,
                      const std::string& family, const std::string& program_id,
                      std::uint64_t seed, const std::string& hook = "invoke-static");

enum class Role { kBenignOriginal, kBenignExtra, kInfected };

std::string_view to_string(Role role);
Role parse_role(std::string_view text);

struct ManifestEntry {
  std::string program_id;
  Role role = Role::kBenignExtra;
  std::string family;  // empty for benign programs
  int variant = 0;     // 1-based, 0 for benign programs
  std::string transforms;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct CorpusManifest {
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> entries;

  const ManifestEntry* find(const std::string& program_id) const;
  nlohmann::json to_json() const;
  static CorpusManifest from_json(const nlohmann::json& doc);

  friend bool operator==(const CorpusManifest&, const CorpusManifest&) = default;
};

struct Corpus {
  CorpusManifest manifest;
  std::vector<ProgramListing> programs;  // same order as manifest entries
};

struct InjectionSpec {
  std::string family;
  std::vector<MethodListing> payload;
  std::vector<TransformPipeline> variants;
  std::vector<ProgramListing> hosts;
  std::uint64_t seed = 0;
  std::string hook = "invoke-static";
};

// Hosts x variants infected programs, variant-major, ids "<host>-v<k>".
std::vector<ProgramListing> infect_all(const InjectionSpec& spec,
                                       std::vector<ManifestEntry>* entries = nullptr);

std::vector<TransformPipeline> mild_variants();

struct LabOptions {
  std::size_t hosts = 10;
  std::size_t extras = 100;
  std::string family = "labtrojan";
  std::vector<TransformPipeline> variants = mild_variants();
  BenignParams benign;
  PayloadParams payload;
  std::uint64_t seed = 2024;
};

// Originals, then infected programs, then clean extras.
Corpus make_lab_corpus(const LabOptions& options);

struct FamilySpec {
  std::string name;
  std::string display;
  std::vector<TransformPipeline> variants;
  std::size_t per_variant = 10;
  // Call-site opcode. Hashes ignore operands, so families sharing a hook
  // would share the hooked host block.
  std::string hook = "invoke-static";
};

struct RealStyleOptions {
  std::size_t clean = 100;
  std::vector<FamilySpec> families;  // empty: DroidJack x6 and Opfake x4, 10 each
  BenignParams benign;
  PayloadParams payload;
  std::uint64_t seed = 77;
};

std::vector<FamilySpec> default_families();

// Clean programs first, then malware family by family.
Corpus make_realstyle_corpus(const RealStyleOptions& options);

struct PipelineOptions {
  int n = 2;
  std::size_t capacity = 100;
  ModelKind classifier = ModelKind::kRandomForest;
  Hyperparameters params;
  DocumentUnit unit = DocumentUnit::kBlock;
  ExtractionOptions extraction;
  ScanOptions scan;
  std::size_t jobs = 1;
  std::string created;  // recorded in database provenance
};

struct TrainedPipeline {
  Vocabulary vocabulary;
  Model model;
};

// Builds the vocabulary and trains on the labeled programs. Empty documents
// are left out of training.
TrainedPipeline train_pipeline(std::span<const ProgramListing> programs,
                               const PipelineOptions& options,
                               Diagnostics* diagnostics = nullptr);

struct DictionaryResult {
  std::string name;
  std::size_t source_programs = 0;
  std::size_t signatures = 0;
  Metrics metrics;
  // (true family or "clean", attributed family or "clean") -> count.
  std::map<std::pair<std::string, std::string>, std::size_t> attribution;
  std::size_t off_diagonal = 0;  // detections attributed to a wrong family
  std::vector<DetectionReport> reports;
};

struct MetricsTable {
  std::string corner;  // top-left header cell
  std::vector<DictionaryResult> rows;

  // "<corner>,Precision,Recall,F-measure" then one row per dictionary.
  void write_csv(std::ostream& out) const;
};

// Recount of precision/recall/F1 from raw verdicts, for cross-checking.
Metrics recount_metrics(std::span<const DetectionReport> reports, const CorpusManifest& manifest,
                        const std::vector<std::string>& positive_families);

// One dictionary per variant, each built from that variant's infected
// programs and scanned against the whole corpus.
MetricsTable run_laboratory(const Corpus& corpus, const PipelineOptions& options,
                            Diagnostics* diagnostics = nullptr);

struct DictionarySpec {
  std::string name;
  std::vector<std::string> families;  // families counted as positives
  std::vector<std::string> source_ids;
};

// "DroidJack"/"Opfake"-style rows built from each family's first variant and
// a final row built from all malware.
std::vector<DictionarySpec> default_dictionaries(const Corpus& corpus,
                                                 const std::vector<FamilySpec>& families);

MetricsTable run_realstyle(const Corpus& corpus, const std::vector<DictionarySpec>& dictionaries,
                           const PipelineOptions& options, Diagnostics* diagnostics = nullptr);

// Clean programs against infected ones from two families; program documents
// are linearly separable by the payload n-grams.
Corpus make_benchmark_corpus(std::size_t per_class, std::uint64_t seed);

// Compact decimal: at most three places, trailing zeros dropped.
std::string format_metric(double value);

}  // namespace opsig
