#include "opsig/classifier.hpp"

#include <algorithm>
#include <map>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>
#include <variant>

#include <nlohmann/json.hpp>

#include "opsig/cfg.hpp"
#include "opsig/parallel.hpp"
#include "opsig/rng.hpp"

namespace opsig {

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex64(const std::string& text) {
  return BlockHash::from_hex(text).value;
}

// Row-major design matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  const double* row(std::size_t i) const { return data.data() + i * cols; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double infected = 0.0;  // fraction of infected training samples reaching the node
  std::size_t samples = 0;
};

struct Tree {
  std::vector<TreeNode> nodes;

  const TreeNode& leaf(std::span<const double> x) const {
    std::size_t i = 0;
    while (nodes[i].feature >= 0) {
      const auto& n = nodes[i];
      i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold
                                       ? n.left
                                       : n.right);
    }
    return nodes[i];
  }
};

struct Forest {
  std::vector<Tree> trees;
};

struct Knn {
  Matrix rows;
  std::vector<int> labels;
  std::size_t k = 5;
};

// Weights act on standardized features (x - mean) / scale.
struct Svm {
  std::vector<double> weights;
  double bias = 0.0;
  std::vector<double> mean;
  std::vector<double> scale;
};

double gini(double positives, double count) {
  if (count <= 0.0) return 0.0;
  double p = positives / count;
  return 2.0 * p * (1.0 - p);
}

// Rows of the design matrix are deduplicated first; a sample set is then a
// list of distinct rows with total and infected weights.
struct WeightedRow {
  std::size_t row = 0;
  double total = 0.0;
  double infected = 0.0;
};

struct DistinctRows {
  Matrix x;
  std::vector<std::size_t> of_sample;  // distinct row of each training sample
};

DistinctRows distinct_rows(const Matrix& x) {
  DistinctRows out;
  out.x.cols = x.cols;
  std::map<std::vector<double>, std::size_t> seen;
  out.of_sample.reserve(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    std::vector<double> key(x.row(i), x.row(i) + x.cols);
    auto [it, fresh] = seen.emplace(std::move(key), out.x.rows);
    if (fresh) {
      out.x.data.insert(out.x.data.end(), x.row(i), x.row(i) + x.cols);
      ++out.x.rows;
    }
    out.of_sample.push_back(it->second);
  }
  return out;
}

// Collapses a multiset of training samples onto distinct rows.
std::vector<WeightedRow> weigh(const DistinctRows& d, const std::vector<int>& y,
                               std::span<const std::size_t> samples) {
  std::vector<WeightedRow> by_row(d.x.rows);
  for (auto s : samples) {
    auto& w = by_row[d.of_sample[s]];
    w.row = d.of_sample[s];
    w.total += 1.0;
    w.infected += y[s];
  }
  std::erase_if(by_row, [](const WeightedRow& w) { return w.total == 0.0; });
  return by_row;
}

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, const Hyperparameters& params, std::size_t max_features,
              std::uint64_t seed)
      : x_(x), params_(params), max_features_(max_features), rng_(seed) {}

  Tree build(std::vector<WeightedRow> samples) {
    Tree tree;
    grow(tree, samples, 0);
    return tree;
  }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double impurity = 0.0;
  };

  struct Cell {
    double value;
    double total;
    double infected;
    bool operator<(const Cell& o) const { return value < o.value; }
  };

  int grow(Tree& tree, std::vector<WeightedRow>& samples, int depth) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    double count = 0.0;
    double positives = 0.0;
    for (const auto& s : samples) {
      count += s.total;
      positives += s.infected;
    }
    {
      auto& node = tree.nodes.back();
      node.samples = static_cast<std::size_t>(count);
      node.infected = count > 0.0 ? positives / count : 0.0;
    }
    bool pure = positives == 0.0 || positives == count;
    if (pure || count < static_cast<double>(params_.min_samples_split) ||
        (params_.max_depth > 0 && depth >= params_.max_depth)) {
      return id;
    }

    auto split = best_split(samples, count, positives);
    if (split.feature < 0) return id;

    std::vector<WeightedRow> left;
    std::vector<WeightedRow> right;
    for (const auto& s : samples) {
      (x_.at(s.row, static_cast<std::size_t>(split.feature)) <= split.threshold ? left : right)
          .push_back(s);
    }
    samples.clear();
    samples.shrink_to_fit();
    int l = grow(tree, left, depth + 1);
    int r = grow(tree, right, depth + 1);
    auto& node = tree.nodes[static_cast<std::size_t>(id)];
    node.feature = split.feature;
    node.threshold = split.threshold;
    node.left = l;
    node.right = r;
    return id;
  }

  Split best_split(const std::vector<WeightedRow>& samples, double count, double positives) {
    Split best;
    best.impurity = gini(positives, count) - 1e-12;

    std::vector<std::size_t> features(x_.cols);
    std::iota(features.begin(), features.end(), 0);
    const bool subsample = max_features_ > 0 && max_features_ < x_.cols;
    if (subsample) portable_shuffle(features.begin(), features.end(), rng_);

    std::vector<Cell> column(samples.size());
    std::size_t inspected = 0;
    for (auto f : features) {
      if (subsample && inspected >= max_features_) break;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        column[i] = {x_.at(samples[i].row, f), samples[i].total, samples[i].infected};
      }
      std::sort(column.begin(), column.end());
      if (column.front().value == column.back().value) continue;  // constant here
      ++inspected;

      double left_n = 0.0;
      double left_pos = 0.0;
      for (std::size_t i = 0; i + 1 < column.size(); ++i) {
        left_n += column[i].total;
        left_pos += column[i].infected;
        if (column[i].value == column[i + 1].value) continue;
        const double nr = count - left_n;
        const double impurity =
            (left_n * gini(left_pos, left_n) + nr * gini(positives - left_pos, nr)) / count;
        if (impurity < best.impurity) {
          double lo = column[i].value;
          double hi = column[i + 1].value;
          double mid = lo + (hi - lo) / 2.0;
          if (!(mid < hi)) mid = lo;
          best = {static_cast<int>(f), mid, impurity};
        }
      }
    }
    return best;
  }

  const Matrix& x_;
  const Hyperparameters& params_;
  std::size_t max_features_;
  std::mt19937_64 rng_;
};

double tree_score(const Tree& t, std::span<const double> x) { return t.leaf(x).infected; }

// Mean of the per-tree leaf fractions.
double forest_score(const Forest& f, std::span<const double> x) {
  if (f.trees.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& t : f.trees) sum += t.leaf(x).infected;
  return sum / static_cast<double>(f.trees.size());
}

double knn_score(const Knn& m, std::span<const double> x) {
  const auto n = m.rows.rows;
  if (n == 0) return 0.0;
  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = m.rows.row(i);
    double d = 0.0;
    for (std::size_t j = 0; j < m.rows.cols; ++j) {
      double diff = r[j] - x[j];
      d += diff * diff;
    }
    dist[i] = {d, i};
  }
  const auto k = std::min(m.k, n);
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
  std::size_t infected = 0;
  for (std::size_t i = 0; i < k; ++i) infected += static_cast<std::size_t>(m.labels[dist[i].second]);
  return static_cast<double>(infected) / static_cast<double>(k);
}

double svm_margin(const Svm& m, std::span<const double> x) {
  double s = m.bias;
  for (std::size_t j = 0; j < m.weights.size(); ++j) {
    s += m.weights[j] * (x[j] - m.mean[j]) / m.scale[j];
  }
  return s;
}

double logistic(double margin) { return 1.0 / (1.0 + std::exp(-margin)); }

Svm train_svm(const Matrix& x, const std::vector<int>& y, const Hyperparameters& p) {
  // Pegasos with the bias folded in as a constant feature.
  const auto d = x.cols;
  std::vector<double> mean(d, 0.0);
  std::vector<double> scale(d, 0.0);
  const double rows = static_cast<double>(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += x.at(i, j) / rows;
  }
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double dv = x.at(i, j) - mean[j];
      scale[j] += dv * dv / rows;
    }
  }
  for (auto& sj : scale) sj = sj > 0.0 ? std::sqrt(sj) : 1.0;
  std::vector<double> z(d);
  std::vector<double> w(d + 1, 0.0);
  std::vector<std::size_t> order(x.rows);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(p.seed);
  const double radius = 1.0 / std::sqrt(p.lambda);
  std::size_t t = 0;
  for (std::size_t epoch = 0; epoch < p.epochs; ++epoch) {
    portable_shuffle(order.begin(), order.end(), rng);
    for (auto i : order) {
      ++t;
      const double eta = 1.0 / (p.lambda * static_cast<double>(t));
      const double label = y[i] ? 1.0 : -1.0;
      const double* raw = x.row(i);
      for (std::size_t j = 0; j < d; ++j) z[j] = (raw[j] - mean[j]) / scale[j];
      const double* r = z.data();
      double margin = w[d];
      for (std::size_t j = 0; j < d; ++j) margin += w[j] * r[j];
      const double shrink = 1.0 - eta * p.lambda;
      for (auto& wj : w) wj *= shrink;
      if (label * margin < 1.0) {
        for (std::size_t j = 0; j < d; ++j) w[j] += eta * label * r[j];
        w[d] += eta * label;
      }
      double norm = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
      if (norm > radius) {
        for (auto& wj : w) wj *= radius / norm;
      }
    }
  }
  Svm m;
  m.bias = w[d];
  w.pop_back();
  m.weights = std::move(w);
  m.mean = std::move(mean);
  m.scale = std::move(scale);
  return m;
}

nlohmann::json tree_to_json(const Tree& t) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : t.nodes) {
    nodes.push_back({n.feature, n.threshold, n.left, n.right, n.infected, n.samples});
  }
  return nodes;
}

Tree tree_from_json(const nlohmann::json& doc) {
  Tree t;
  for (const auto& n : doc) {
    t.nodes.push_back({n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<int>(),
                       n.at(3).get<int>(), n.at(4).get<double>(), n.at(5).get<std::size_t>()});
  }
  const int count = static_cast<int>(t.nodes.size());
  if (count == 0) throw std::invalid_argument("empty tree");
  for (const auto& n : t.nodes) {
    if (n.feature >= 0 && (n.left <= 0 || n.left >= count || n.right <= 0 || n.right >= count)) {
      throw std::invalid_argument("malformed tree node");
    }
  }
  return t;
}

Matrix to_matrix(std::span<const FeatureVector> vectors, std::size_t width) {
  Matrix m;
  m.rows = vectors.size();
  m.cols = width;
  m.data.reserve(m.rows * m.cols);
  for (const auto& v : vectors) m.data.insert(m.data.end(), v.values.begin(), v.values.end());
  return m;
}

int label_of(const FeatureVector& v) {
  if (!v.label || v.label->kind == ProgramLabel::Kind::kUnknown) {
    throw std::invalid_argument("training vector '" + v.owner_id + "' has no class label");
  }
  return v.label->is_malware() ? 1 : 0;
}

}  // namespace

struct Model::State {
  std::variant<Tree, Forest, Knn, Svm> impl;
};

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kDecisionTree: return "decision-tree";
    case ModelKind::kRandomForest: return "random-forest";
    case ModelKind::kKnn: return "knn";
    case ModelKind::kLinearSvm: return "linear-svm";
  }
  return "decision-tree";
}

ModelKind parse_model_kind(std::string_view text) {
  for (auto k : {ModelKind::kDecisionTree, ModelKind::kRandomForest, ModelKind::kKnn,
                 ModelKind::kLinearSvm}) {
    if (to_string(k) == text) return k;
  }
  if (text == "svm") return ModelKind::kLinearSvm;
  if (text == "forest") return ModelKind::kRandomForest;
  if (text == "tree") return ModelKind::kDecisionTree;
  throw std::invalid_argument("unknown classifier '" + std::string(text) + "'");
}

std::string_view display_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::kDecisionTree: return "Decision Tree";
    case ModelKind::kRandomForest: return "Random Forest";
    case ModelKind::kKnn: return "KNN";
    case ModelKind::kLinearSvm: return "SVM";
  }
  return "";
}

Model::Model(ModelKind kind, Hyperparameters params, std::uint64_t vocabulary_fingerprint,
             std::size_t width, std::shared_ptr<const State> state)
    : kind_(kind),
      params_(params),
      vocabulary_fingerprint_(vocabulary_fingerprint),
      width_(width),
      state_(std::move(state)) {}

double Model::score(std::span<const double> x) const {
  if (x.size() != width_) throw std::invalid_argument("feature width mismatch");
  return std::visit(
      [&](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Tree>) return tree_score(m, x);
        if constexpr (std::is_same_v<T, Forest>) return forest_score(m, x);
        if constexpr (std::is_same_v<T, Knn>) return knn_score(m, x);
        if constexpr (std::is_same_v<T, Svm>) return logistic(svm_margin(m, x));
      },
      state_->impl);
}

double Model::predict_proba(const FeatureVector& v) const {
  if (v.vocabulary_fingerprint != vocabulary_fingerprint_) {
    throw FingerprintMismatch("vector vocabulary " + hex64(v.vocabulary_fingerprint) +
                              " does not match model vocabulary " +
                              hex64(vocabulary_fingerprint_));
  }
  return score(v.values);
}

nlohmann::json Model::to_json() const {
  nlohmann::json hp;
  switch (kind_) {
    case ModelKind::kDecisionTree:
      hp = {{"max_depth", params_.max_depth},
            {"min_samples_split", params_.min_samples_split},
            {"max_features", params_.max_features}};
      break;
    case ModelKind::kRandomForest:
      hp = {{"max_depth", params_.max_depth},
            {"min_samples_split", params_.min_samples_split},
            {"max_features", params_.max_features},
            {"trees", params_.trees}};
      break;
    case ModelKind::kKnn:
      hp = {{"k", params_.k}};
      break;
    case ModelKind::kLinearSvm:
      hp = {{"lambda", params_.lambda}, {"epochs", params_.epochs}};
      break;
  }
  nlohmann::json state = std::visit(
      [](const auto& m) -> nlohmann::json {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Tree>) {
          return {{"nodes", tree_to_json(m)}};
        } else if constexpr (std::is_same_v<T, Forest>) {
          nlohmann::json trees = nlohmann::json::array();
          for (const auto& t : m.trees) trees.push_back(tree_to_json(t));
          return {{"trees", trees}};
        } else if constexpr (std::is_same_v<T, Knn>) {
          nlohmann::json rows = nlohmann::json::array();
          for (std::size_t i = 0; i < m.rows.rows; ++i) {
            rows.push_back(std::vector<double>(m.rows.row(i), m.rows.row(i) + m.rows.cols));
          }
          return {{"rows", rows}, {"labels", m.labels}};
        } else {
          return {{"weights", m.weights}, {"bias", m.bias}, {"mean", m.mean}, {"scale", m.scale}};
        }
      },
      state_->impl);
  return {{"format", "opsig-model"},
          {"version", 1},
          {"kind", to_string(kind_)},
          {"seed", params_.seed},
          {"hyperparameters", hp},
          {"vocabulary_fingerprint", hex64(vocabulary_fingerprint_)},
          {"width", width_},
          {"state", state}};
}

Model Model::from_json(const nlohmann::json& doc) {
  if (doc.at("format").get<std::string>() != "opsig-model") {
    throw std::invalid_argument("not a model document");
  }
  if (doc.at("version").get<int>() != 1) throw std::invalid_argument("unsupported model version");
  auto kind = parse_model_kind(doc.at("kind").get<std::string>());
  Hyperparameters p;
  p.seed = doc.at("seed").get<std::uint64_t>();
  const auto& hp = doc.at("hyperparameters");
  p.max_depth = hp.value("max_depth", p.max_depth);
  p.min_samples_split = hp.value("min_samples_split", p.min_samples_split);
  p.max_features = hp.value("max_features", p.max_features);
  p.trees = hp.value("trees", p.trees);
  p.k = hp.value("k", p.k);
  p.lambda = hp.value("lambda", p.lambda);
  p.epochs = hp.value("epochs", p.epochs);
  const auto width = doc.at("width").get<std::size_t>();
  const auto& s = doc.at("state");
  auto state = std::make_shared<State>();
  switch (kind) {
    case ModelKind::kDecisionTree:
      state->impl = tree_from_json(s.at("nodes"));
      break;
    case ModelKind::kRandomForest: {
      Forest f;
      for (const auto& t : s.at("trees")) f.trees.push_back(tree_from_json(t));
      state->impl = std::move(f);
      break;
    }
    case ModelKind::kKnn: {
      Knn k;
      k.k = p.k;
      k.labels = s.at("labels").get<std::vector<int>>();
      k.rows.cols = width;
      for (const auto& row : s.at("rows")) {
        auto r = row.get<std::vector<double>>();
        if (r.size() != width) throw std::invalid_argument("knn row width mismatch");
        k.rows.data.insert(k.rows.data.end(), r.begin(), r.end());
        ++k.rows.rows;
      }
      if (k.labels.size() != k.rows.rows) throw std::invalid_argument("knn label count mismatch");
      state->impl = std::move(k);
      break;
    }
    case ModelKind::kLinearSvm: {
      Svm m;
      m.weights = s.at("weights").get<std::vector<double>>();
      m.bias = s.at("bias").get<double>();
      m.mean = s.at("mean").get<std::vector<double>>();
      m.scale = s.at("scale").get<std::vector<double>>();
      if (m.weights.size() != width || m.mean.size() != width || m.scale.size() != width) {
        throw std::invalid_argument("svm weight width mismatch");
      }
      for (double sj : m.scale) {
        if (!(sj > 0.0)) throw std::invalid_argument("svm scale must be positive");
      }
      state->impl = std::move(m);
      break;
    }
  }
  return Model(kind, p, parse_hex64(doc.at("vocabulary_fingerprint").get<std::string>()), width,
               std::move(state));
}

std::uint64_t Model::fingerprint() const { return fnv1a64(to_json().dump()); }

Model train(ModelKind kind, std::span<const FeatureVector> vectors, const Hyperparameters& params) {
  if (vectors.empty()) throw std::invalid_argument("no training vectors");
  const auto width = vectors.front().values.size();
  const auto fingerprint = vectors.front().vocabulary_fingerprint;
  std::vector<int> y;
  y.reserve(vectors.size());
  for (const auto& v : vectors) {
    if (v.values.size() != width) throw std::invalid_argument("feature vectors differ in width");
    if (v.vocabulary_fingerprint != fingerprint) {
      throw FingerprintMismatch("training vectors come from different vocabularies");
    }
    y.push_back(label_of(v));
  }
  const auto positives = std::accumulate(y.begin(), y.end(), std::size_t{0});
  if (positives == 0 || positives == y.size()) {
    throw std::invalid_argument("training data holds a single class");
  }
  auto x = to_matrix(vectors, width);
  auto state = std::make_shared<Model::State>();
  std::vector<std::size_t> all(x.rows);
  std::iota(all.begin(), all.end(), 0);

  switch (kind) {
    case ModelKind::kDecisionTree: {
      auto distinct = distinct_rows(x);
      TreeBuilder builder(distinct.x, params, params.max_features, params.seed);
      state->impl = builder.build(weigh(distinct, y, all));
      break;
    }
    case ModelKind::kRandomForest: {
      auto max_features = params.max_features;
      if (max_features == 0) {
        max_features = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(width)))));
      }
      auto distinct = distinct_rows(x);
      Forest forest;
      forest.trees.resize(params.trees);
      parallel_for(params.trees, params.jobs, [&](std::size_t i) {
        const auto seed = splitmix64(params.seed + i);
        std::mt19937_64 rng(seed);
        std::vector<std::size_t> bag(x.rows);
        for (auto& s : bag) s = uniform_index(rng, x.rows);
        TreeBuilder builder(distinct.x, params, max_features, splitmix64(seed));
        forest.trees[i] = builder.build(weigh(distinct, y, bag));
      });
      state->impl = std::move(forest);
      break;
    }
    case ModelKind::kKnn: {
      if (params.k == 0) throw std::invalid_argument("knn needs k >= 1");
      Knn m;
      m.rows = std::move(x);
      m.labels = std::move(y);
      m.k = params.k;
      state->impl = std::move(m);
      break;
    }
    case ModelKind::kLinearSvm: {
      if (!(params.lambda > 0.0)) throw std::invalid_argument("svm needs lambda > 0");
      state->impl = train_svm(x, y, params);
      break;
    }
  }
  return Model(kind, params, fingerprint, width, std::move(state));
}

double precision_score(std::size_t tp, std::size_t fp) {
  return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
}

double recall_score(std::size_t tp, std::size_t fn) {
  return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
}

double f1_from(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

double f1_score(std::size_t tp, std::size_t fp, std::size_t fn) {
  return f1_from(precision_score(tp, fp), recall_score(tp, fn));
}

void Metrics::add(bool truth, bool predicted) {
  if (truth && predicted) ++tp;
  else if (!truth && predicted) ++fp;
  else if (!truth && !predicted) ++tn;
  else ++fn;
}

void Metrics::finalize() {
  precision = precision_score(tp, fp);
  recall = recall_score(tp, fn);
  f1 = f1_from(precision, recall);
}

Metrics Metrics::from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
  Metrics m{tp, fp, tn, fn};
  m.finalize();
  return m;
}

namespace {

nlohmann::json metrics_json(const Metrics& m) {
  return {{"tp", m.tp},   {"fp", m.fp},         {"tn", m.tn},     {"fn", m.fn},
          {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
}

Metrics evaluate(const Model& model, std::span<const FeatureVector> test) {
  Metrics m;
  for (const auto& v : test) m.add(label_of(v) == 1, model.predict(v));
  m.finalize();
  return m;
}

std::vector<FeatureVector> pick(std::span<const FeatureVector> all,
                                const std::vector<std::size_t>& idx) {
  std::vector<FeatureVector> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(all[i]);
  return out;
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
  return {{"folds", folds},
          {"holdout_fraction", holdout_fraction},
          {"cross_validation", metrics_json(pooled)},
          {"fold_f1", fold_f1},
          {"mean_f1", mean_f1},
          {"holdout", metrics_json(holdout)}};
}

EvalReport cross_validate(ModelKind kind, std::span<const FeatureVector> vectors,
                          const Hyperparameters& params, std::size_t folds,
                          double holdout_fraction) {
  if (folds < 2) throw std::invalid_argument("cross-validation needs at least 2 folds");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw std::invalid_argument("holdout fraction must be in (0, 1)");
  }
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    by_class[label_of(vectors[i])].push_back(i);
  }
  for (const auto& c : by_class) {
    if (c.size() < folds) {
      throw std::invalid_argument("a class has fewer samples than folds");
    }
  }

  EvalReport report;
  report.folds = folds;
  report.holdout_fraction = holdout_fraction;

  std::mt19937_64 rng(params.seed);
  std::vector<std::size_t> fold_of(vectors.size());
  std::size_t position = 0;
  for (auto& c : by_class) {
    portable_shuffle(c.begin(), c.end(), rng);
    for (auto i : c) fold_of[i] = position++ % folds;
  }

  std::vector<Metrics> per_fold(folds);
  parallel_for(folds, params.jobs, [&](std::size_t f) {
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> test_idx;
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      (fold_of[i] == f ? test_idx : train_idx).push_back(i);
    }
    auto fold_params = params;
    fold_params.jobs = 1;
    auto model = train(kind, pick(vectors, train_idx), fold_params);
    per_fold[f] = evaluate(model, pick(vectors, test_idx));
  });
  for (const auto& m : per_fold) {
    report.pooled.tp += m.tp;
    report.pooled.fp += m.fp;
    report.pooled.tn += m.tn;
    report.pooled.fn += m.fn;
    report.fold_f1.push_back(m.f1);
  }
  report.pooled.finalize();
  report.mean_f1 = std::accumulate(report.fold_f1.begin(), report.fold_f1.end(), 0.0) /
                   static_cast<double>(folds);

  std::mt19937_64 split_rng(splitmix64(params.seed ^ 0x5eedULL));
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> test_idx;
  for (auto c : by_class) {
    std::sort(c.begin(), c.end());
    portable_shuffle(c.begin(), c.end(), split_rng);
    auto n_test = static_cast<std::size_t>(
        std::llround(holdout_fraction * static_cast<double>(c.size())));
    n_test = std::clamp<std::size_t>(n_test, 1, c.size() - 1);
    test_idx.insert(test_idx.end(), c.begin(), c.begin() + static_cast<std::ptrdiff_t>(n_test));
    train_idx.insert(train_idx.end(), c.begin() + static_cast<std::ptrdiff_t>(n_test), c.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  auto model = train(kind, pick(vectors, train_idx), params);
  report.holdout = evaluate(model, pick(vectors, test_idx));
  return report;
}

void BenchmarkGrid::write_csv(std::ostream& out) const {
  out << "Algorithm";
  for (int n : ngram_sizes) out << ',' << n;
  out << '\n';
  char buf[32];
  for (std::size_t k = 0; k < kinds.size(); ++k) {
    out << display_name(kinds[k]);
    for (double v : mean_f1[k]) {
      std::snprintf(buf, sizeof buf, "%.3f", v);
      out << ',' << buf;
    }
    out << '\n';
  }
}

BenchmarkGrid benchmark_grid(std::span<const ProgramListing> corpus,
                             std::span<const ModelKind> kinds, std::span<const int> ngram_sizes,
                             std::size_t capacity, const Hyperparameters& params,
                             std::size_t folds, Diagnostics* diagnostics) {
  if (kinds.empty() || ngram_sizes.empty()) {
    throw std::invalid_argument("benchmark grid needs at least one classifier and one n");
  }
  BenchmarkGrid grid;
  grid.kinds.assign(kinds.begin(), kinds.end());
  grid.ngram_sizes.assign(ngram_sizes.begin(), ngram_sizes.end());
  grid.mean_f1.assign(kinds.size(), std::vector<double>(ngram_sizes.size(), 0.0));
  grid.reports.assign(kinds.size(), std::vector<EvalReport>(ngram_sizes.size()));
  for (std::size_t j = 0; j < ngram_sizes.size(); ++j) {
    const int n = ngram_sizes[j];
    auto docs = program_documents(corpus, n);
    auto vocab = build_vocabulary(docs, n, capacity, diagnostics);
    auto vectors = vectorize_all(docs, vocab);
    for (std::size_t k = 0; k < kinds.size(); ++k) {
      auto report = cross_validate(kinds[k], vectors, params, folds);
      grid.mean_f1[k][j] = report.mean_f1;
      grid.reports[k][j] = std::move(report);
    }
  }
  return grid;
}

}  // namespace opsig
