#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "opsig/listing.hpp"

namespace opsig {

inline constexpr int kMinNgram = 1;
inline constexpr int kMaxNgram = 9;

using Ngram = std::vector<std::string>;

// "tok1|tok2|..."
std::string ngram_key(const Ngram& gram);

// Multiset of n-grams of one size, with its total window count.
struct NgramCounts {
  int n = 0;
  std::map<Ngram, std::size_t> counts;
  std::size_t total = 0;

  void add(const Ngram& gram, std::size_t times = 1);
  void merge(const NgramCounts& other);
  std::size_t count(const Ngram& gram) const;
  bool empty() const { return total == 0; }
};

// Throws std::out_of_range unless 1 <= n <= 9.
void check_ngram_size(int n);

NgramCounts extract_ngrams(std::span<const std::string> sequence, int n);

// Windows never cross method boundaries.
NgramCounts extract_program_ngrams(const ProgramListing& program, int n);

// Throws std::invalid_argument for an empty document.
double term_frequency(const NgramCounts& doc, const Ngram& gram);

// ln((1 + N) / (1 + df)) + 1.
double smoothed_idf(std::size_t documents, std::size_t document_frequency);

// Throws std::invalid_argument for an empty corpus.
double inverse_document_frequency(std::span<const NgramCounts> corpus, const Ngram& gram);

enum class DocumentUnit { kProgram, kBlock };

std::string_view to_string(DocumentUnit unit);
DocumentUnit parse_document_unit(std::string_view text);

struct Document {
  std::string owner_id;
  ProgramLabel label;
  NgramCounts ngrams;
};

// One document per program.
std::vector<Document> program_documents(std::span<const ProgramListing> programs, int n);

// One document per basic block, owner "<program>/<method>#<block>". Blocks
// shorter than n yield empty documents.
std::vector<Document> block_documents(std::span<const ProgramListing> programs, int n);

struct VocabularyEntry {
  Ngram gram;
  double idf = 0.0;
  double score = 0.0;  // corpus-wide TF-IDF mass
};

class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(int n, std::size_t capacity, std::vector<VocabularyEntry> entries);

  int n() const { return n_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  const std::vector<VocabularyEntry>& entries() const { return entries_; }
  std::optional<std::size_t> index_of(const Ngram& gram) const;

  // Stable over the ordered entries, their idf values and n.
  std::uint64_t fingerprint() const { return fingerprint_; }

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& doc);

 private:
  int n_ = 0;
  std::size_t capacity_ = 0;
  std::vector<VocabularyEntry> entries_;
  std::map<Ngram, std::size_t> index_;
  std::uint64_t fingerprint_ = 0;
};

struct Diagnostics {
  std::vector<std::string> warnings;
  void warn(std::string message) { warnings.push_back(std::move(message)); }
};

// Scores every n-gram by its summed TF-IDF over the corpus and keeps the top
// `capacity`; ties go to the lexicographically smaller token sequence.
Vocabulary build_vocabulary(std::span<const Document> corpus, int n, std::size_t capacity,
                            Diagnostics* diagnostics = nullptr);

struct FeatureVector {
  std::string owner_id;
  std::vector<double> values;
  std::optional<ProgramLabel> label;
  std::uint64_t vocabulary_fingerprint = 0;
};

// Throws std::invalid_argument when the document's n differs from the
// vocabulary's. An empty document gives the zero vector.
FeatureVector vectorize(const NgramCounts& doc, const Vocabulary& vocabulary);

FeatureVector vectorize(const Document& doc, const Vocabulary& vocabulary);

std::vector<FeatureVector> vectorize_all(std::span<const Document> docs,
                                         const Vocabulary& vocabulary);

// Header: owner_id,label,<gram>,... ; one row per vector.
void write_feature_matrix(std::ostream& out, const Vocabulary& vocabulary,
                          std::span<const FeatureVector> vectors);

// Shortest decimal form that round-trips, '.' separator.
std::string format_double(double value);

}  // namespace opsig
