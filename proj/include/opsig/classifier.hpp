#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "opsig/listing.hpp"
#include "opsig/ngram.hpp"

namespace opsig {

enum class ModelKind { kDecisionTree, kRandomForest, kKnn, kLinearSvm };

// "decision-tree", "random-forest", "knn", "linear-svm".
std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view text);
// Row names used in the benchmark table.
std::string_view display_name(ModelKind kind);

struct Hyperparameters {
  // decision-tree / random-forest
  int max_depth = 0;  // 0: grow until pure
  std::size_t min_samples_split = 2;
  std::size_t max_features = 0;  // 0: all for a tree, floor(sqrt(d)) for a forest
  std::size_t trees = 100;
  // knn
  std::size_t k = 5;
  // linear-svm
  double lambda = 1e-3;
  std::size_t epochs = 50;

  std::uint64_t seed = 42;
  std::size_t jobs = 1;  // not persisted

  friend bool operator==(const Hyperparameters&, const Hyperparameters&) = default;
};

class FingerprintMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Model {
 public:
  struct State;

  Model(ModelKind kind, Hyperparameters params, std::uint64_t vocabulary_fingerprint,
        std::size_t width, std::shared_ptr<const State> state);

  ModelKind kind() const { return kind_; }
  const Hyperparameters& hyperparameters() const { return params_; }
  std::uint64_t vocabulary_fingerprint() const { return vocabulary_fingerprint_; }
  std::size_t width() const { return width_; }

  // Infected-class score in [0, 1]. Throws FingerprintMismatch when the
  // vector came from a different vocabulary.
  double predict_proba(const FeatureVector& v) const;
  // True means infected; a score of exactly 0.5 is clean.
  bool predict(const FeatureVector& v) const { return predict_proba(v) > 0.5; }

  // Unchecked scoring of a raw row.
  double score(std::span<const double> x) const;

  nlohmann::json to_json() const;
  static Model from_json(const nlohmann::json& doc);
  std::uint64_t fingerprint() const;

 private:
  ModelKind kind_;
  Hyperparameters params_;
  std::uint64_t vocabulary_fingerprint_;
  std::size_t width_;
  std::shared_ptr<const State> state_;
};

// Vectors must carry clean or malware labels, share one width and one
// vocabulary fingerprint, and cover both classes.
Model train(ModelKind kind, std::span<const FeatureVector> vectors,
            const Hyperparameters& params = {});

inline double predict_proba(const Model& model, const FeatureVector& v) {
  return model.predict_proba(v);
}

double precision_score(std::size_t tp, std::size_t fp);
double recall_score(std::size_t tp, std::size_t fn);
double f1_score(std::size_t tp, std::size_t fp, std::size_t fn);
double f1_from(double precision, double recall);

struct Metrics {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  void add(bool truth, bool predicted);
  // Recomputes precision/recall/f1 from the counts.
  void finalize();
  static Metrics from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn);

  friend bool operator==(const Metrics&, const Metrics&) = default;
};

struct EvalReport {
  std::size_t folds = 0;
  double holdout_fraction = 0.0;
  Metrics pooled;               // all out-of-fold predictions
  std::vector<double> fold_f1;  // one per fold
  double mean_f1 = 0.0;
  Metrics holdout;              // retrained on the training share of a stratified split

  nlohmann::json to_json() const;
};

// Stratified k-fold cross-validation plus a separate stratified holdout run.
// Throws std::invalid_argument when a class has fewer samples than folds.
EvalReport cross_validate(ModelKind kind, std::span<const FeatureVector> vectors,
                          const Hyperparameters& params = {}, std::size_t folds = 10,
                          double holdout_fraction = 0.2);

struct BenchmarkGrid {
  std::vector<ModelKind> kinds;
  std::vector<int> ngram_sizes;
  std::vector<std::vector<double>> mean_f1;  // [kind][n]
  std::vector<std::vector<EvalReport>> reports;

  // "Algorithm,1,2,..." then one row per classifier, three decimals.
  void write_csv(std::ostream& out) const;
};

BenchmarkGrid benchmark_grid(std::span<const ProgramListing> corpus,
                             std::span<const ModelKind> kinds,
                             std::span<const int> ngram_sizes, std::size_t capacity = 100,
                             const Hyperparameters& params = {}, std::size_t folds = 10,
                             Diagnostics* diagnostics = nullptr);

}  // namespace opsig
