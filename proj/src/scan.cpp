#include "opsig/scan.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <stdexcept>
#include <tuple>

#include <nlohmann/json.hpp>

#include "opsig/cfg.hpp"
#include "opsig/parallel.hpp"

namespace opsig {

namespace {

// Upper bound on hash agreement: matched hashes cannot exceed the multiset
// intersection of the two node labelings.
std::size_t agreement_bound(const ControlFlowGraph& pattern,
                            const std::map<BlockHash, std::size_t>& target_hashes) {
  std::map<BlockHash, std::size_t> need;
  for (const auto& n : pattern.nodes) ++need[n.hash];
  std::size_t bound = 0;
  for (const auto& [h, k] : need) {
    auto it = target_hashes.find(h);
    if (it != target_hashes.end()) bound += std::min(k, it->second);
  }
  return bound;
}

// Strongest evidence first: agreement, larger signature, family, then ids.
bool stronger(const MatchResult& a, const MatchResult& b) {
  return std::tie(b.hash_match_fraction, b.signature_nodes, a.family, a.signature_id,
                  a.method_id) <
         std::tie(a.hash_match_fraction, a.signature_nodes, b.family, b.signature_id,
                  b.method_id);
}

std::string fixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string_view to_string(VerdictKind kind) {
  switch (kind) {
    case VerdictKind::kClean:
      return "clean";
    case VerdictKind::kKnownMalware:
      return "known_malware";
    case VerdictKind::kVariant:
      return "variant";
  }
  return "clean";
}

std::string Verdict::to_string() const {
  if (kind == VerdictKind::kClean) return "clean";
  return std::string(opsig::to_string(kind)) + "(" + family + ")";
}

std::optional<double> DetectionReport::best_distance() const {
  if (evidence.empty()) return std::nullopt;
  return evidence.front().distance;
}

nlohmann::json DetectionReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& m : evidence) {
    rows.push_back({{"signature_id", m.signature_id},
                    {"family", m.family},
                    {"method_id", m.method_id},
                    {"agreement", m.hash_match_fraction},
                    {"distance", m.distance},
                    {"exact", m.exact},
                    {"known", m.known},
                    {"budget_flag", m.budget_exhausted},
                    {"mapping", m.mapping}});
  }
  nlohmann::json doc = {{"program_id", program_id},
                        {"verdict", std::string(opsig::to_string(verdict.kind))},
                        {"family", verdict.family},
                        {"best_distance", nullptr},
                        {"theta", theta},
                        {"budget", budget},
                        {"exhausted_pairs", exhausted_pairs},
                        {"evidence", rows}};
  if (auto d = best_distance()) doc["best_distance"] = *d;
  return doc;
}

DetectionReport scan(const ProgramListing& program, const SignatureDatabase& db,
                     const ScanOptions& options) {
  if (!(options.theta > 0.0 && options.theta <= 1.0)) {
    throw std::invalid_argument("theta must be in (0, 1]");
  }
  if (db.signatures.empty()) throw EmptyDatabaseError("signature database is empty");

  DetectionReport report;
  report.program_id = program.program_id;
  report.theta = options.theta;
  report.budget = options.budget;

  auto graphs = build_program_cfgs(program);
  std::vector<std::map<BlockHash, std::size_t>> hash_counts(graphs.size());
  for (std::size_t g = 0; g < graphs.size(); ++g) {
    for (const auto& n : graphs[g].nodes) ++hash_counts[g][n.hash];
  }

  for (const auto& sig : db.signatures) {
    const auto& pattern = sig.fragment;
    const auto k = pattern.size();
    // Smallest agreeing count that reaches theta, guarding against rounding.
    auto needed = static_cast<std::size_t>(std::ceil(options.theta * static_cast<double>(k)));
    while (needed > 0 && static_cast<double>(needed - 1) / static_cast<double>(k) >= options.theta) {
      --needed;
    }
    while (static_cast<double>(needed) / static_cast<double>(k) < options.theta) ++needed;

    MatchOptions mo;
    mo.budget = options.budget;
    mo.max_maps = 1;
    mo.max_pattern_nodes = std::max<std::size_t>(k, 1);
    mo.min_agreeing = needed;

    for (std::size_t g = 0; g < graphs.size(); ++g) {
      const auto& target = graphs[g];
      if (k > target.size() || pattern.edges.size() > target.edges.size()) continue;
      if (agreement_bound(pattern, hash_counts[g]) < needed) continue;
      auto found = find_monomorphisms(pattern, target, mo);
      if (found.budget_exhausted) ++report.exhausted_pairs;
      if (found.mappings.empty()) continue;
      const auto& best = found.mappings.front();
      if (!is_monomorphism(pattern, target, best.target_of)) {
        throw std::logic_error("matcher produced an invalid mapping");
      }
      MatchResult m;
      m.signature_id = sig.id;
      m.family = sig.family;
      m.program_id = program.program_id;
      m.method_id = program.methods[g].method_id;
      m.mapping = best.target_of;
      m.signature_nodes = k;
      m.hash_match_fraction = hash_agreement(pattern, target, best.target_of);
      m.distance = 1.0 - m.hash_match_fraction;
      m.exact = is_exact_match(pattern, target, best.target_of);
      m.known = m.exact && sig.covers_source_cfg;
      m.budget_exhausted = found.budget_exhausted;
      if (m.hash_match_fraction >= options.theta) report.evidence.push_back(std::move(m));
    }
  }

  std::sort(report.evidence.begin(), report.evidence.end(), stronger);
  auto known = std::find_if(report.evidence.begin(), report.evidence.end(),
                            [](const MatchResult& m) { return m.known; });
  if (known != report.evidence.end()) {
    report.verdict = {VerdictKind::kKnownMalware, known->family};
  } else if (!report.evidence.empty()) {
    report.verdict = {VerdictKind::kVariant, report.evidence.front().family};
  }
  return report;
}

std::vector<DetectionReport> scan_all(std::span<const ProgramListing> programs,
                                      const SignatureDatabase& db, const ScanOptions& options) {
  if (db.signatures.empty()) throw EmptyDatabaseError("signature database is empty");
  std::vector<DetectionReport> out(programs.size());
  parallel_for(programs.size(), options.jobs,
               [&](std::size_t i) { out[i] = scan(programs[i], db, options); });
  return out;
}

nlohmann::json reports_to_json(std::span<const DetectionReport> reports) {
  std::map<std::string, std::size_t> counts{{"clean", 0}, {"known_malware", 0}, {"variant", 0}};
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : reports) {
    ++counts[std::string(to_string(r.verdict.kind))];
    rows.push_back(r.to_json());
  }
  return {{"format", "opsig-scan-report"}, {"summary", counts}, {"reports", rows}};
}

void write_report_table(std::ostream& out, std::span<const DetectionReport> reports) {
  char line[256];
  for (const auto& r : reports) {
    auto d = r.best_distance();
    std::snprintf(line, sizeof line, "%-32s %-32s best_distance=%s evidence=%zu%s\n",
                  r.program_id.c_str(), r.verdict.to_string().c_str(),
                  d ? fixed(*d, 3).c_str() : "-", r.evidence.size(),
                  r.exhausted_pairs ? " budget_exhausted" : "");
    out << line;
    for (const auto& m : r.evidence) {
      std::snprintf(line, sizeof line, "    %-20s %-36s agreement=%s distance=%s exact=%s%s\n",
                    m.signature_id.c_str(), m.method_id.c_str(),
                    fixed(m.hash_match_fraction, 3).c_str(), fixed(m.distance, 3).c_str(),
                    m.exact ? "yes" : "no", m.budget_exhausted ? " budget" : "");
      out << line;
    }
  }
}

}  // namespace opsig
