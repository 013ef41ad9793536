#include <gtest/gtest.h>

#include <nlohmann/json.hpp>
#include <random>
#include <sstream>

#include "../support/oracles.hpp"
#include "opsig/classifier.hpp"
#include "opsig/harness.hpp"

using namespace opsig;

namespace {

// Two well separated clusters in 3 dimensions.
std::vector<FeatureVector> clusters(std::size_t per_class, std::uint64_t seed,
                                    bool shuffle_labels = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> noise(0.0, 0.2);
  std::vector<FeatureVector> out;
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const bool infected = i % 2 == 1;
    FeatureVector v;
    v.owner_id = "s" + std::to_string(i);
    const double base = infected ? 1.0 : 0.0;
    v.values = {base + noise(rng), base + noise(rng), noise(rng)};
    v.label = infected ? ProgramLabel::malware("f") : ProgramLabel::clean();
    v.vocabulary_fingerprint = 7;
    out.push_back(std::move(v));
  }
  if (shuffle_labels) {
    std::vector<ProgramLabel> labels;
    for (auto& v : out) labels.push_back(*v.label);
    std::shuffle(labels.begin(), labels.end(), rng);
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i].label = labels[i];
      for (auto& x : out[i].values) x = noise(rng);
    }
  }
  return out;
}

const ModelKind kAll[] = {ModelKind::kDecisionTree, ModelKind::kRandomForest, ModelKind::kKnn,
                          ModelKind::kLinearSvm};

}  // namespace

TEST(Train, TreeFitsSeparableData) {
  auto data = clusters(20, 1);
  auto m = train(ModelKind::kDecisionTree, data);
  for (const auto& v : data) EXPECT_EQ(m.predict(v), v.label->is_malware());
}

TEST(Train, DeterministicUnderSeed) {
  auto data = clusters(20, 2);
  auto probe = clusters(10, 99);
  for (auto kind : kAll) {
    auto a = train(kind, data);
    auto b = train(kind, data);
    for (const auto& v : probe) EXPECT_EQ(a.predict_proba(v), b.predict_proba(v));
  }
}

TEST(Train, OneNearestNeighbourReproducesLabels) {
  auto data = clusters(15, 3);
  Hyperparameters p;
  p.k = 1;
  auto m = train(ModelKind::kKnn, data, p);
  for (const auto& v : data) EXPECT_EQ(m.predict(v), v.label->is_malware());
}

TEST(Train, Rejections) {
  auto data = clusters(5, 4);
  std::vector<FeatureVector> one_class;
  for (auto& v : data)
    if (v.label->is_clean()) one_class.push_back(v);
  EXPECT_THROW(train(ModelKind::kRandomForest, one_class), std::invalid_argument);
  auto unlabeled = data;
  unlabeled[0].label.reset();
  EXPECT_THROW(train(ModelKind::kRandomForest, unlabeled), std::invalid_argument);
  auto ragged = data;
  ragged[1].values.push_back(1.0);
  EXPECT_THROW(train(ModelKind::kRandomForest, ragged), std::invalid_argument);
}

TEST(Predict, FingerprintMismatch) {
  auto data = clusters(5, 5);
  auto m = train(ModelKind::kKnn, data);
  auto v = data[0];
  v.vocabulary_fingerprint = 8;
  EXPECT_THROW(m.predict_proba(v), FingerprintMismatch);
}

TEST(Predict, ForestAllAgreeing) {
  auto data = clusters(20, 6);
  auto m = train(ModelKind::kRandomForest, data);
  FeatureVector far{"x", {5.0, 5.0, 0.1}, std::nullopt, 7};
  EXPECT_DOUBLE_EQ(m.predict_proba(far), 1.0);
}

TEST(Predict, KnnFraction) {
  // Four neighbours at equal distance, two of each class.
  std::vector<FeatureVector> data;
  for (int i = 0; i < 4; ++i) {
    FeatureVector v{"n" + std::to_string(i), {i < 2 ? 1.0 : -1.0},
                    i % 2 ? ProgramLabel::malware("f") : ProgramLabel::clean(), 7};
    data.push_back(v);
  }
  Hyperparameters p;
  p.k = 4;
  auto m = train(ModelKind::kKnn, data, p);
  EXPECT_DOUBLE_EQ(m.predict_proba({"q", {0.0}, std::nullopt, 7}), 0.5);
}

TEST(Predict, SvmZeroMarginIsHalf) {
  auto data = clusters(10, 7);
  auto doc = train(ModelKind::kLinearSvm, data).to_json();
  auto& state = doc["state"];
  for (auto& w : state["weights"]) w = 0.0;
  state["bias"] = 0.0;
  auto m = Model::from_json(doc);
  EXPECT_DOUBLE_EQ(m.predict_proba(data[0]), 0.5);
  EXPECT_FALSE(m.predict(data[0]));
}

TEST(Model, JsonRoundTripPreservesScores) {
  auto data = clusters(15, 8);
  auto probe = clusters(5, 80);
  for (auto kind : kAll) {
    auto m = train(kind, data);
    auto back = Model::from_json(m.to_json());
    EXPECT_EQ(back.fingerprint(), m.fingerprint());
    for (const auto& v : probe) EXPECT_DOUBLE_EQ(back.predict_proba(v), m.predict_proba(v));
  }
}

TEST(Model, KindNames) {
  for (auto kind : kAll) EXPECT_EQ(parse_model_kind(to_string(kind)), kind);
  EXPECT_ANY_THROW(parse_model_kind("xgboost"));
  EXPECT_EQ(display_name(ModelKind::kRandomForest), "Random Forest");
}

TEST(Metrics, ReportedF1) {
  EXPECT_NEAR(f1_from(0.98, 1.0), 0.99, 0.005);
  EXPECT_NEAR(f1_from(0.98, 1.0), oracle::f1(0.98, 1.0), 1e-12);
}

TEST(Metrics, PerfectAndDegenerate) {
  EXPECT_DOUBLE_EQ(f1_score(10, 0, 0), 1.0);
  EXPECT_DOUBLE_EQ(f1_score(0, 3, 2), 0.0);
  auto m = Metrics::from_counts(8, 2, 5, 0);
  EXPECT_DOUBLE_EQ(m.precision, 0.8);
  EXPECT_DOUBLE_EQ(m.recall, 1.0);
  EXPECT_NEAR(m.f1, oracle::f1(0.8, 1.0), 1e-12);
}

TEST(CrossValidate, SeparableGivesOne) {
  auto data = clusters(50, 9);
  for (auto kind : kAll) {
    auto r = cross_validate(kind, data);
    EXPECT_DOUBLE_EQ(r.mean_f1, 1.0) << to_string(kind);
  }
}

TEST(CrossValidate, FoldSizes) {
  auto data = clusters(50, 10);
  auto r = cross_validate(ModelKind::kDecisionTree, data, {}, 10);
  EXPECT_EQ(r.fold_f1.size(), 10u);
  EXPECT_EQ(r.pooled.tp + r.pooled.fp + r.pooled.tn + r.pooled.fn, 100u);
}

TEST(CrossValidate, NoSignalIsNearChance) {
  auto data = clusters(50, 11, true);
  auto r = cross_validate(ModelKind::kRandomForest, data);
  EXPECT_NEAR(r.mean_f1, 0.5, 0.15);
}

TEST(CrossValidate, TooFewSamples) {
  auto data = clusters(3, 12);
  EXPECT_THROW(cross_validate(ModelKind::kKnn, data, {}, 10), std::invalid_argument);
}

TEST(Grid, OneByOne) {
  auto corpus = make_benchmark_corpus(20, 3);
  const ModelKind kinds[] = {ModelKind::kDecisionTree};
  const int sizes[] = {1};
  auto g = benchmark_grid(corpus.programs, kinds, sizes, 100, {}, 5);
  ASSERT_EQ(g.mean_f1.size(), 1u);
  ASSERT_EQ(g.mean_f1[0].size(), 1u);
  std::ostringstream out;
  g.write_csv(out);
  EXPECT_EQ(out.str().substr(0, 12), "Algorithm,1\n");
}

TEST(Grid, ForestOnSeparableBenchmarkCorpus) {
  auto corpus = make_benchmark_corpus(50, 42);
  const ModelKind kinds[] = {ModelKind::kRandomForest};
  const int sizes[] = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  auto g = benchmark_grid(corpus.programs, kinds, sizes);
  for (double f : g.mean_f1[0]) EXPECT_GE(f, 0.9);
}
