#include "opsig/ngram.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "opsig/cfg.hpp"

namespace opsig {

std::string ngram_key(const Ngram& gram) {
  std::string out;
  for (std::size_t i = 0; i < gram.size(); ++i) {
    if (i > 0) out += '|';
    out += gram[i];
  }
  return out;
}

void NgramCounts::add(const Ngram& gram, std::size_t times) {
  counts[gram] += times;
  total += times;
}

void NgramCounts::merge(const NgramCounts& other) {
  if (other.n != n) throw std::invalid_argument("cannot merge n-grams of different sizes");
  for (const auto& [gram, c] : other.counts) add(gram, c);
}

std::size_t NgramCounts::count(const Ngram& gram) const {
  auto it = counts.find(gram);
  return it == counts.end() ? 0 : it->second;
}

void check_ngram_size(int n) {
  if (n < kMinNgram || n > kMaxNgram) {
    throw std::out_of_range("n-gram size must be in [1, 9], got " + std::to_string(n));
  }
}

NgramCounts extract_ngrams(std::span<const std::string> sequence, int n) {
  check_ngram_size(n);
  NgramCounts out;
  out.n = n;
  const auto width = static_cast<std::size_t>(n);
  if (sequence.size() < width) return out;
  for (std::size_t i = 0; i + width <= sequence.size(); ++i) {
    out.add(Ngram(sequence.begin() + static_cast<std::ptrdiff_t>(i),
                  sequence.begin() + static_cast<std::ptrdiff_t>(i + width)));
  }
  return out;
}

NgramCounts extract_program_ngrams(const ProgramListing& program, int n) {
  NgramCounts out;
  check_ngram_size(n);
  out.n = n;
  for (const auto& method : program.methods) {
    auto seq = method.mnemonics();
    out.merge(extract_ngrams(seq, n));
  }
  return out;
}

double term_frequency(const NgramCounts& doc, const Ngram& gram) {
  if (doc.total == 0) throw std::invalid_argument("term frequency of an empty document");
  return static_cast<double>(doc.count(gram)) / static_cast<double>(doc.total);
}

double smoothed_idf(std::size_t documents, std::size_t document_frequency) {
  return std::log((1.0 + static_cast<double>(documents)) /
                  (1.0 + static_cast<double>(document_frequency))) +
         1.0;
}

double inverse_document_frequency(std::span<const NgramCounts> corpus, const Ngram& gram) {
  if (corpus.empty()) throw std::invalid_argument("idf over an empty corpus");
  std::size_t df = 0;
  for (const auto& doc : corpus) {
    if (doc.counts.count(gram)) ++df;
  }
  return smoothed_idf(corpus.size(), df);
}

std::string_view to_string(DocumentUnit unit) {
  return unit == DocumentUnit::kProgram ? "program" : "block";
}

DocumentUnit parse_document_unit(std::string_view text) {
  if (text == "program") return DocumentUnit::kProgram;
  if (text == "block") return DocumentUnit::kBlock;
  throw std::invalid_argument("document unit must be 'program' or 'block'");
}

std::vector<Document> program_documents(std::span<const ProgramListing> programs, int n) {
  std::vector<Document> docs;
  docs.reserve(programs.size());
  for (const auto& p : programs) {
    docs.push_back({p.program_id, p.label, extract_program_ngrams(p, n)});
  }
  return docs;
}

std::vector<Document> block_documents(std::span<const ProgramListing> programs, int n) {
  check_ngram_size(n);
  std::vector<Document> docs;
  for (const auto& p : programs) {
    for (const auto& m : p.methods) {
      for (const auto& block : partition_blocks(m)) {
        docs.push_back({p.program_id + "/" + m.method_id + "#" + std::to_string(block.block_id),
                        p.label, extract_ngrams(block.opcodes, n)});
      }
    }
  }
  return docs;
}

Vocabulary::Vocabulary(int n, std::size_t capacity, std::vector<VocabularyEntry> entries)
    : n_(n), capacity_(capacity), entries_(std::move(entries)) {
  check_ngram_size(n);
  if (entries_.size() > capacity_) throw std::invalid_argument("vocabulary over capacity");
  std::uint64_t h = fnv1a64("opsig-vocabulary\n" + std::to_string(n) + "\n");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (static_cast<int>(e.gram.size()) != n) {
      throw std::invalid_argument("vocabulary entry of the wrong size");
    }
    if (!(e.idf >= 0.0)) throw std::invalid_argument("negative idf");
    if (!index_.emplace(e.gram, i).second) {
      throw std::invalid_argument("duplicate vocabulary entry");
    }
    h = fnv1a64(ngram_key(e.gram) + "\t" + format_double(e.idf) + "\n", h);
  }
  fingerprint_ = h;
}

std::optional<std::size_t> Vocabulary::index_of(const Ngram& gram) const {
  auto it = index_.find(gram);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

nlohmann::json Vocabulary::to_json() const {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : entries_) {
    entries.push_back({{"ngram", e.gram}, {"idf", e.idf}, {"score", e.score}});
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fingerprint_));
  return {{"format", "opsig-vocabulary"},
          {"version", 1},
          {"n", n_},
          {"capacity", capacity_},
          {"fingerprint", buf},
          {"entries", entries}};
}

Vocabulary Vocabulary::from_json(const nlohmann::json& doc) {
  if (doc.at("format").get<std::string>() != "opsig-vocabulary") {
    throw std::invalid_argument("not a vocabulary document");
  }
  std::vector<VocabularyEntry> entries;
  for (const auto& e : doc.at("entries")) {
    entries.push_back({e.at("ngram").get<Ngram>(), e.at("idf").get<double>(),
                       e.at("score").get<double>()});
  }
  Vocabulary v(doc.at("n").get<int>(), doc.at("capacity").get<std::size_t>(),
               std::move(entries));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(v.fingerprint()));
  if (doc.at("fingerprint").get<std::string>() != buf) {
    throw std::invalid_argument("vocabulary fingerprint mismatch");
  }
  return v;
}

Vocabulary build_vocabulary(std::span<const Document> corpus, int n, std::size_t capacity,
                            Diagnostics* diagnostics) {
  check_ngram_size(n);
  if (capacity < 1) throw std::invalid_argument("vocabulary capacity must be >= 1");
  if (corpus.empty()) throw std::invalid_argument("vocabulary over an empty corpus");

  bool has_clean = false;
  bool has_malware = false;
  std::map<Ngram, std::size_t> df;
  std::map<Ngram, double> tf_mass;
  for (const auto& doc : corpus) {
    if (doc.ngrams.n != n) throw std::invalid_argument("document n differs from vocabulary n");
    has_clean |= doc.label.is_clean();
    has_malware |= doc.label.is_malware();
    if (doc.ngrams.empty()) continue;
    const double total = static_cast<double>(doc.ngrams.total);
    for (const auto& [gram, c] : doc.ngrams.counts) {
      ++df[gram];
      tf_mass[gram] += static_cast<double>(c) / total;
    }
  }
  if (diagnostics && !(has_clean && has_malware)) {
    diagnostics->warn("vocabulary corpus does not contain both clean and malware documents");
  }

  std::vector<VocabularyEntry> ranked;
  ranked.reserve(df.size());
  for (const auto& [gram, d] : df) {
    double idf = smoothed_idf(corpus.size(), d);
    ranked.push_back({gram, idf, tf_mass[gram] * idf});
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.gram < b.gram;
  });
  if (ranked.size() > capacity) ranked.resize(capacity);
  return Vocabulary(n, capacity, std::move(ranked));
}

FeatureVector vectorize(const NgramCounts& doc, const Vocabulary& vocabulary) {
  if (doc.n != vocabulary.n()) {
    throw std::invalid_argument("document n-gram size " + std::to_string(doc.n) +
                                " does not match vocabulary size " +
                                std::to_string(vocabulary.n()));
  }
  FeatureVector fv;
  fv.values.assign(vocabulary.size(), 0.0);
  fv.vocabulary_fingerprint = vocabulary.fingerprint();
  if (doc.total == 0) return fv;
  const double total = static_cast<double>(doc.total);
  for (const auto& [gram, c] : doc.counts) {
    if (auto i = vocabulary.index_of(gram)) {
      fv.values[*i] = static_cast<double>(c) / total * vocabulary.entries()[*i].idf;
    }
  }
  return fv;
}

FeatureVector vectorize(const Document& doc, const Vocabulary& vocabulary) {
  auto fv = vectorize(doc.ngrams, vocabulary);
  fv.owner_id = doc.owner_id;
  fv.label = doc.label;
  return fv;
}

std::vector<FeatureVector> vectorize_all(std::span<const Document> docs,
                                         const Vocabulary& vocabulary) {
  std::vector<FeatureVector> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(vectorize(d, vocabulary));
  return out;
}

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc{}) throw std::runtime_error("number formatting failed");
  return std::string(buf, ptr);
}

namespace {

std::string csv_field(const std::string& text) {
  if (text.find_first_of(",\"\n") == std::string::npos) return text;
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void write_feature_matrix(std::ostream& out, const Vocabulary& vocabulary,
                          std::span<const FeatureVector> vectors) {
  out << "owner_id,label";
  for (const auto& e : vocabulary.entries()) out << ',' << csv_field(ngram_key(e.gram));
  out << '\n';
  for (const auto& fv : vectors) {
    if (fv.values.size() != vocabulary.size()) {
      throw std::invalid_argument("feature vector width differs from vocabulary");
    }
    out << csv_field(fv.owner_id) << ','
        << (fv.label ? fv.label->to_string() : std::string("unknown"));
    for (double v : fv.values) out << ',' << format_double(v);
    out << '\n';
  }
}

}  // namespace opsig
