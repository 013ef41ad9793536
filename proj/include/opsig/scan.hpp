#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "opsig/listing.hpp"
#include "opsig/matcher.hpp"
#include "opsig/signature_db.hpp"

namespace opsig {

struct ScanOptions {
  double theta = 0.5;
  std::size_t budget = 1'000'000;  // per (signature, method) pair
  std::size_t jobs = 1;
};

struct MatchResult {
  std::string signature_id;
  std::string family;
  std::string program_id;
  std::string method_id;
  std::vector<int> mapping;  // signature node -> target block id
  std::size_t signature_nodes = 0;
  double hash_match_fraction = 0.0;
  double distance = 1.0;
  bool exact = false;
  // Exact against a signature that was a whole source CFG.
  bool known = false;
  bool budget_exhausted = false;

  friend bool operator==(const MatchResult&, const MatchResult&) = default;
};

enum class VerdictKind { kClean, kKnownMalware, kVariant };

std::string_view to_string(VerdictKind kind);

struct Verdict {
  VerdictKind kind = VerdictKind::kClean;
  std::string family;  // empty when clean

  bool detected() const { return kind != VerdictKind::kClean; }
  // "clean", "known_malware(<family>)" or "variant(<family>)".
  std::string to_string() const;

  friend bool operator==(const Verdict&, const Verdict&) = default;
};

struct DetectionReport {
  std::string program_id;
  Verdict verdict;
  std::vector<MatchResult> evidence;  // strongest first
  double theta = 0.5;
  std::size_t budget = 0;
  std::size_t exhausted_pairs = 0;  // pairs whose search ran out of budget

  std::optional<double> best_distance() const;
  nlohmann::json to_json() const;
};

// Matches every signature against every method CFG of the program. Throws
// EmptyDatabaseError for a database without signatures and
// std::invalid_argument for theta outside (0, 1].
DetectionReport scan(const ProgramListing& program, const SignatureDatabase& db,
                     const ScanOptions& options = {});

std::vector<DetectionReport> scan_all(std::span<const ProgramListing> programs,
                                      const SignatureDatabase& db,
                                      const ScanOptions& options = {});

nlohmann::json reports_to_json(std::span<const DetectionReport> reports);

// Fixed-width table, one verdict line per program followed by its evidence.
void write_report_table(std::ostream& out, std::span<const DetectionReport> reports);

}  // namespace opsig
