#include "opsig/signature_db.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "opsig/matcher.hpp"
#include "opsig/parallel.hpp"

namespace opsig {

namespace {

std::string hex64(std::uint64_t v) { return BlockHash{v}.hex(); }

// Grows a connected subset of `component` from its best-scoring block, always
// taking the best-scoring neighbour next.
std::vector<int> truncate_component(const std::vector<int>& component,
                                    const std::vector<std::vector<int>>& neighbours,
                                    std::span<const double> scores, std::size_t max_nodes) {
  std::set<int> members(component.begin(), component.end());
  auto better = [&](int a, int b) {
    auto sa = scores[static_cast<std::size_t>(a)];
    auto sb = scores[static_cast<std::size_t>(b)];
    return sa != sb ? sa > sb : a < b;
  };
  int seed = *std::min_element(component.begin(), component.end(), better);
  std::set<int> chosen{seed};
  std::set<int> frontier;
  auto expand = [&](int v) {
    for (int w : neighbours[static_cast<std::size_t>(v)]) {
      if (members.count(w) && !chosen.count(w)) frontier.insert(w);
    }
  };
  expand(seed);
  while (chosen.size() < max_nodes && !frontier.empty()) {
    int next = *std::min_element(frontier.begin(), frontier.end(), better);
    frontier.erase(next);
    chosen.insert(next);
    expand(next);
  }
  return {chosen.begin(), chosen.end()};
}

MatchOptions embedding_options(std::size_t pattern_nodes) {
  MatchOptions options;
  options.max_maps = 1;
  options.require_equal_hashes = true;
  options.max_pattern_nodes = pattern_nodes;
  return options;
}

bool embeds_exactly(const Signature& sig, const ControlFlowGraph& source) {
  auto found =
      find_monomorphisms(sig.fragment, source, embedding_options(sig.fragment.size()));
  return !found.mappings.empty() && !found.budget_exhausted;
}

nlohmann::json signature_to_json(const Signature& s) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : s.fragment.nodes) nodes.push_back({n.block_id, n.hash.hex(), n.size});
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : s.fragment.edges) edges.push_back({e.from, e.to});
  return {{"id", s.id},
          {"family", s.family},
          {"source",
           {{"program", s.source_program},
            {"method", s.source_method},
            {"blocks", s.source_blocks}}},
          {"score", s.score},
          {"covers_source_cfg", s.covers_source_cfg},
          {"nodes", nodes},
          {"edges", edges}};
}

Signature signature_from_json(const nlohmann::json& doc) {
  Signature s;
  s.id = doc.at("id").get<std::string>();
  s.family = doc.at("family").get<std::string>();
  const auto& source = doc.at("source");
  s.source_program = source.at("program").get<std::string>();
  s.source_method = source.at("method").get<std::string>();
  s.source_blocks = source.at("blocks").get<std::vector<int>>();
  s.score = doc.at("score").get<double>();
  s.covers_source_cfg = doc.at("covers_source_cfg").get<bool>();
  s.fragment = cfg_from_json({{"id", s.source_program + "/" + s.source_method},
                              {"nodes", doc.at("nodes")},
                              {"edges", doc.at("edges")}});
  if (s.id.empty() || s.family.empty()) throw DatabaseFormatError("signature without id or family");
  if (s.source_blocks.size() != s.fragment.size()) {
    throw DatabaseFormatError("signature " + s.id + " has a bad source block list");
  }
  if (!(s.score >= 0.0 && s.score <= 1.0)) {
    throw DatabaseFormatError("signature " + s.id + " has a score outside [0, 1]");
  }
  return s;
}

}  // namespace

const Signature* SignatureDatabase::find(const std::string& id) const {
  for (const auto& s : signatures) {
    if (s.id == id) return &s;
  }
  return nullptr;
}

std::vector<BlockScores> score_blocks(const ProgramListing& malware, const Model& model,
                                      const Vocabulary& vocabulary) {
  if (!malware.label.is_malware()) {
    throw std::invalid_argument("program '" + malware.program_id +
                                "' is not labeled malware(family)");
  }
  if (model.vocabulary_fingerprint() != vocabulary.fingerprint()) {
    throw FingerprintMismatch("model was trained on a different vocabulary");
  }
  std::vector<BlockScores> out;
  out.reserve(malware.methods.size());
  for (const auto& method : malware.methods) {
    BlockScores bs;
    bs.method_id = method.method_id;
    std::vector<BasicBlock> blocks;
    bs.cfg = build_cfg(method, blocks);
    for (const auto& block : blocks) {
      if (block.opcodes.size() < static_cast<std::size_t>(vocabulary.n())) {
        bs.scores.push_back(0.0);
        bs.too_short.push_back(true);
        continue;
      }
      auto fv = vectorize(extract_ngrams(block.opcodes, vocabulary.n()), vocabulary);
      bs.scores.push_back(model.predict_proba(fv));
      bs.too_short.push_back(false);
    }
    out.push_back(std::move(bs));
  }
  return out;
}

std::vector<Signature> extract_signature(const ControlFlowGraph& cfg,
                                         std::span<const double> scores,
                                         const ExtractionOptions& options,
                                         const std::string& family,
                                         const std::string& source_program,
                                         const std::string& source_method,
                                         Diagnostics* diagnostics) {
  if (!(options.tau > 0.0 && options.tau <= 1.0)) {
    throw std::invalid_argument("tau must be in (0, 1]");
  }
  if (options.max_nodes < 1) throw std::invalid_argument("max_nodes must be >= 1");
  if (scores.size() != cfg.size()) throw std::invalid_argument("one score per block required");

  const auto n = cfg.size();
  std::vector<bool> hot(n, false);
  bool any = false;
  for (std::size_t i = 0; i < n; ++i) {
    hot[i] = scores[i] >= options.tau;
    any |= hot[i];
  }
  if (!any) {
    if (diagnostics) {
      diagnostics->warn("no block of " + source_program + "/" + source_method +
                        " reaches the extraction threshold");
    }
    return {};
  }

  std::vector<std::vector<int>> neighbours(n);
  for (const auto& e : cfg.edges) {
    if (e.from == e.to) continue;
    neighbours[static_cast<std::size_t>(e.from)].push_back(e.to);
    neighbours[static_cast<std::size_t>(e.to)].push_back(e.from);
  }

  std::vector<Signature> out;
  std::vector<bool> seen(n, false);
  for (std::size_t start = 0; start < n; ++start) {
    if (!hot[start] || seen[start]) continue;
    std::vector<int> component;
    std::vector<int> stack{static_cast<int>(start)};
    seen[start] = true;
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      component.push_back(v);
      for (int w : neighbours[static_cast<std::size_t>(v)]) {
        auto uw = static_cast<std::size_t>(w);
        if (hot[uw] && !seen[uw]) {
          seen[uw] = true;
          stack.push_back(w);
        }
      }
    }
    std::sort(component.begin(), component.end());
    if (component.size() > options.max_nodes) {
      component = truncate_component(component, neighbours, scores, options.max_nodes);
    }
    if (component.size() == 1 &&
        cfg.nodes[static_cast<std::size_t>(component[0])].size < options.min_block_ops) {
      continue;
    }

    Signature sig;
    sig.family = family;
    sig.source_program = source_program;
    sig.source_method = source_method;
    sig.source_blocks = component;
    sig.fragment.graph_id = source_program + "/" + source_method;
    std::map<int, int> local;
    double total = 0.0;
    for (int v : component) {
      int id = static_cast<int>(local.size());
      local[v] = id;
      const auto& node = cfg.nodes[static_cast<std::size_t>(v)];
      sig.fragment.nodes.push_back({id, node.hash, node.size, true});
      total += scores[static_cast<std::size_t>(v)];
    }
    for (const auto& e : cfg.edges) {
      auto a = local.find(e.from);
      auto b = local.find(e.to);
      if (a != local.end() && b != local.end()) {
        sig.fragment.edges.push_back({a->second, b->second});
      }
    }
    std::sort(sig.fragment.edges.begin(), sig.fragment.edges.end());
    sig.score = total / static_cast<double>(component.size());
    sig.covers_source_cfg = component.size() == n;
    out.push_back(std::move(sig));
  }
  return out;
}

bool fragments_equivalent(const Signature& a, const Signature& b) {
  return a.family == b.family && hash_isomorphic(a.fragment, b.fragment);
}

std::vector<std::string> unsound_signatures(const SignatureDatabase& db,
                                            std::span<const ProgramListing> sources) {
  std::map<std::pair<std::string, std::string>, const MethodListing*> methods;
  for (const auto& p : sources) {
    for (const auto& m : p.methods) methods[{p.program_id, m.method_id}] = &m;
  }
  std::vector<std::string> bad;
  for (const auto& sig : db.signatures) {
    auto it = methods.find({sig.source_program, sig.source_method});
    if (it == methods.end() || !embeds_exactly(sig, build_cfg(*it->second))) {
      bad.push_back(sig.id);
    }
  }
  return bad;
}

SignatureDatabase build_database(std::span<const ProgramListing> malware, const Model& model,
                                 const Vocabulary& vocabulary,
                                 const ExtractionOptions& options, const std::string& created,
                                 Diagnostics* diagnostics, std::size_t jobs,
                                 BuildStats* stats) {
  if (malware.empty()) throw std::invalid_argument("signature corpus is empty");
  for (const auto& p : malware) {
    if (!p.label.is_malware()) {
      throw std::invalid_argument("program '" + p.program_id + "' has no malware family label");
    }
  }

  std::vector<std::vector<Signature>> found(malware.size());
  std::vector<Diagnostics> notes(malware.size());
  parallel_for(malware.size(), jobs, [&](std::size_t i) {
    const auto& program = malware[i];
    for (const auto& bs : score_blocks(program, model, vocabulary)) {
      auto sigs = extract_signature(bs.cfg, bs.scores, options, program.label.family,
                                    program.program_id, bs.method_id, &notes[i]);
      for (auto& s : sigs) {
        if (!embeds_exactly(s, bs.cfg)) {
          throw std::logic_error("extracted fragment does not embed in " +
                                 s.fragment.graph_id);
        }
        found[i].push_back(std::move(s));
      }
    }
  });

  SignatureDatabase db;
  db.provenance = {vocabulary.fingerprint(),
                   model.fingerprint(),
                   std::string(to_string(model.kind())),
                   vocabulary.n(),
                   vocabulary.capacity(),
                   options.tau,
                   options.max_nodes,
                   options.min_block_ops,
                   created};

  // Cheap invariant first, isomorphism only within a bucket.
  using Key = std::tuple<std::string, std::vector<BlockHash>, std::size_t>;
  std::map<Key, std::vector<std::size_t>> buckets;
  std::size_t extracted = 0;
  std::size_t duplicates = 0;
  for (std::size_t i = 0; i < malware.size(); ++i) {
    if (diagnostics) {
      for (auto& w : notes[i].warnings) diagnostics->warn(std::move(w));
    }
    for (auto& sig : found[i]) {
      ++extracted;
      std::vector<BlockHash> hashes;
      for (const auto& n : sig.fragment.nodes) hashes.push_back(n.hash);
      std::sort(hashes.begin(), hashes.end());
      auto& bucket = buckets[{sig.family, std::move(hashes), sig.fragment.edges.size()}];
      auto dup = std::find_if(bucket.begin(), bucket.end(), [&](std::size_t k) {
        return fragments_equivalent(db.signatures[k], sig);
      });
      if (dup != bucket.end()) {
        ++duplicates;
        db.signatures[*dup].covers_source_cfg |= sig.covers_source_cfg;
        continue;
      }
      bucket.push_back(db.signatures.size());
      db.signatures.push_back(std::move(sig));
    }
  }
  if (db.signatures.empty()) {
    throw EmptyDatabaseError("no block reached the extraction threshold; the database would be empty");
  }

  std::map<std::string, int> per_family;
  for (auto& sig : db.signatures) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d", ++per_family[sig.family]);
    sig.id = sig.family + "-" + buf;
  }
  if (stats) *stats = {extracted, duplicates};
  return db;
}

std::string database_to_string(const SignatureDatabase& db) {
  const auto& p = db.provenance;
  nlohmann::json sigs = nlohmann::json::array();
  for (const auto& s : db.signatures) sigs.push_back(signature_to_json(s));
  nlohmann::json doc = {
      {"format", "opsig-signature-db"},
      {"version", db.version},
      {"provenance",
       {{"vocabulary_fingerprint", hex64(p.vocabulary_fingerprint)},
        {"model_fingerprint", hex64(p.model_fingerprint)},
        {"model_kind", p.model_kind},
        {"n", p.n},
        {"capacity", p.capacity},
        {"tau", p.tau},
        {"max_nodes", p.max_nodes},
        {"min_block_ops", p.min_block_ops},
        {"created", p.created}}},
      {"signatures", sigs}};
  return doc.dump(1) + "\n";
}

SignatureDatabase database_from_string(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DatabaseFormatError(std::string("corrupt signature database: ") + e.what());
  }
  try {
    if (!doc.is_object() || doc.value("format", "") != "opsig-signature-db") {
      throw DatabaseFormatError("not a signature database document");
    }
    const int version = doc.at("version").get<int>();
    if (version != kDatabaseVersion) {
      throw DatabaseVersionError("signature database version " + std::to_string(version) +
                                 " is not supported (expected " +
                                 std::to_string(kDatabaseVersion) + ")");
    }
    SignatureDatabase db;
    db.version = version;
    const auto& p = doc.at("provenance");
    db.provenance.vocabulary_fingerprint =
        BlockHash::from_hex(p.at("vocabulary_fingerprint").get<std::string>()).value;
    db.provenance.model_fingerprint =
        BlockHash::from_hex(p.at("model_fingerprint").get<std::string>()).value;
    db.provenance.model_kind = p.at("model_kind").get<std::string>();
    db.provenance.n = p.at("n").get<int>();
    db.provenance.capacity = p.at("capacity").get<std::size_t>();
    db.provenance.tau = p.at("tau").get<double>();
    db.provenance.max_nodes = p.at("max_nodes").get<std::size_t>();
    db.provenance.min_block_ops = p.at("min_block_ops").get<std::size_t>();
    db.provenance.created = p.at("created").get<std::string>();
    std::set<std::string> ids;
    for (const auto& s : doc.at("signatures")) {
      auto sig = signature_from_json(s);
      if (!ids.insert(sig.id).second) throw DatabaseFormatError("duplicate signature id " + sig.id);
      db.signatures.push_back(std::move(sig));
    }
    return db;
  } catch (const nlohmann::json::exception& e) {
    throw DatabaseFormatError(std::string("corrupt signature database: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DatabaseFormatError(std::string("corrupt signature database: ") + e.what());
  }
}

void save_database(const SignatureDatabase& db, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << database_to_string(db);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

SignatureDatabase load_database(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return database_from_string(buf.str());
}

}  // namespace opsig
