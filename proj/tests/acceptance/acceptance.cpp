// Runs the eight acceptance checks and prints one line per check.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>

#include "../support/oracles.hpp"
#include "opsig/cli.hpp"
#include "opsig/harness.hpp"
#include "opsig/matcher.hpp"

namespace fs = std::filesystem;
using namespace opsig;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", x);
  return buf;
}

Outcome lab_corpus() {
  const auto t0 = std::chrono::steady_clock::now();
  auto corpus = make_lab_corpus(LabOptions{});
  PipelineOptions options;
  options.scan.theta = 0.5;
  auto table = run_laboratory(corpus, options);
  const double elapsed = seconds_since(t0);
  bool ok = table.rows.size() == 3 && elapsed < 60.0;
  std::string detail;
  for (const auto& row : table.rows) {
    ok = ok && row.metrics.precision == 1.0 && row.metrics.recall == 1.0 && row.metrics.f1 == 1.0;
    detail += row.name + " P=" + format_metric(row.metrics.precision) +
              " R=" + format_metric(row.metrics.recall) + " F1=" + format_metric(row.metrics.f1) +
              "; ";
  }
  std::size_t infected = 0;
  for (const auto& e : corpus.manifest.entries) infected += e.role == Role::kInfected;
  ok = ok && infected == 30 && corpus.programs.size() == 140;
  return {ok, detail + "programs=" + std::to_string(corpus.programs.size()) + " in " +
                  fmt(elapsed) + "s"};
}

Outcome realstyle_corpus() {
  const auto t0 = std::chrono::steady_clock::now();
  RealStyleOptions ro;
  ro.families = default_families();
  auto corpus = make_realstyle_corpus(ro);
  auto table = run_realstyle(corpus, default_dictionaries(corpus, ro.families), PipelineOptions{});
  const double elapsed = seconds_since(t0);
  std::size_t clean = 0, malware = 0;
  std::set<std::string> families;
  for (const auto& e : corpus.manifest.entries) {
    if (e.role == Role::kInfected) {
      ++malware;
      families.insert(e.family);
    } else {
      ++clean;
    }
  }
  bool ok = clean == 100 && malware == 100 && families.size() >= 2 && elapsed < 120.0;
  std::string detail;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    const bool last = i + 1 == table.rows.size();
    if (last) {
      ok = ok && row.metrics.precision == 1.0 && row.metrics.recall == 1.0;
    } else {
      ok = ok && row.off_diagonal == 0;
    }
    detail += row.name + " P=" + format_metric(row.metrics.precision) +
              " R=" + format_metric(row.metrics.recall) +
              " off-diagonal=" + std::to_string(row.off_diagonal) + "; ";
  }
  return {ok, detail + "in " + fmt(elapsed) + "s"};
}

Outcome benchmark() {
  auto corpus = make_benchmark_corpus(50, 42);
  const ModelKind kinds[] = {ModelKind::kRandomForest, ModelKind::kDecisionTree, ModelKind::kKnn,
                             ModelKind::kLinearSvm};
  const int sizes[] = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  auto grid = benchmark_grid(corpus.programs, kinds, sizes);
  std::stringstream csv;
  grid.write_csv(csv);
  std::vector<std::string> lines;
  for (std::string line; std::getline(csv, line);) lines.push_back(line);
  bool ok = lines.size() == 5 && lines[0] == "Algorithm,1,2,3,4,5,6,7,8,9";
  for (std::size_t r = 1; ok && r < lines.size(); ++r) {
    ok = std::count(lines[r].begin(), lines[r].end(), ',') == 9;
  }
  const double rf2 = grid.mean_f1[0][1];
  ok = ok && rf2 >= 0.95;
  bool knn_complete = true;
  for (std::size_t j = 0; j < 9; ++j) {
    knn_complete = knn_complete && std::isfinite(grid.mean_f1[2][j]) &&
                   grid.reports[2][j].fold_f1.size() == 10;
  }
  ok = ok && knn_complete;
  return {ok, "grid 4x9, RF n=2 F1=" + fmt(rf2) +
                  ", KNN cells complete=" + (knn_complete ? "yes" : "no")};
}

ControlFlowGraph random_graph(std::mt19937_64& rng, int nodes) {
  ControlFlowGraph g;
  std::bernoulli_distribution coin(0.35);
  for (int i = 0; i < nodes; ++i) g.nodes.push_back({i, BlockHash{rng() % 3}, 1, true});
  for (int a = 0; a < nodes; ++a)
    for (int b = 0; b < nodes; ++b)
      if (coin(rng)) g.edges.push_back({a, b});
  return g;
}

Outcome matcher_oracle() {
  std::mt19937_64 rng(4);
  std::size_t agree = 0, total_maps = 0;
  for (int pair = 0; pair < 200; ++pair) {
    auto p = random_graph(rng, 1 + static_cast<int>(rng() % 4));
    auto t = random_graph(rng, 1 + static_cast<int>(rng() % 7));
    MatchOptions o;
    o.max_maps = 0;
    auto got = find_monomorphisms(p, t, o);
    std::set<std::pair<std::vector<int>, std::size_t>> a, b;
    for (const auto& m : got.mappings) a.insert({m.target_of, m.agreeing});
    for (const auto& m : oracle::all_monomorphisms(p, t)) b.insert({m.target_of, m.agreeing});
    agree += a == b && !got.budget_exhausted;
    total_maps += b.size();
  }
  return {agree == 200, std::to_string(agree) + "/200 pairs equal brute force (" +
                            std::to_string(total_maps) + " mappings)"};
}

Outcome tfidf_oracle() {
  std::mt19937_64 rng(5);
  const std::vector<std::string> alphabet{"const", "move", "add-int", "if-eqz", "goto",
                                          "invoke-static", "return-void"};
  std::vector<std::vector<std::string>> seqs;
  std::vector<Document> docs;
  const int n = 2;
  for (int i = 0; i < 100; ++i) {
    std::vector<std::string> s(2 + rng() % 40);
    for (auto& t : s) t = alphabet[rng() % alphabet.size()];
    seqs.push_back(s);
    docs.push_back({"d" + std::to_string(i),
                    i % 2 ? ProgramLabel::clean() : ProgramLabel::malware("f"),
                    extract_ngrams(s, n)});
  }
  auto vocab = build_vocabulary(docs, n, 100);
  double worst = 0.0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    auto fv = vectorize(docs[i], vocab);
    for (std::size_t j = 0; j < vocab.size(); ++j) {
      const auto& gram = vocab.entries()[j].gram;
      std::size_t df = 0;
      for (const auto& s : seqs) df += oracle::window_count(s, gram) > 0;
      const double want = oracle::tfidf(seqs[i], gram, oracle::idf(seqs.size(), df));
      worst = std::max(worst, std::abs(fv.values[j] - want));
    }
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "max abs error %.3g over 100 documents", worst);
  return {worst <= 1e-9, buf};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

int cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (code != kExitOk && code != kExitDetection) std::cerr << err.str();
  return code;
}

// synth -> train -> build-db -> scan -> eval, all under `dir`.
bool full_run(const fs::path& dir) {
  fs::remove_all(dir);
  const std::string seed = "13";
  const auto programs = (dir / "lab" / "programs").string();
  bool ok = cli({"synth", "--kind", "lab", "--lab-hosts", "4", "--lab-extras", "10", "--seed",
                 seed, "--out", (dir / "lab").string()}) == kExitOk;
  ok = ok && cli({"train", "--seed", seed, "--folds", "3", "--jobs", "2", "--corpus", programs,
                  "--out", (dir / "train").string()}) == kExitOk;
  ok = ok && cli({"build-db", "--seed", seed, "--jobs", "2", "--model",
                  (dir / "train" / "model.json").string(), "--vocab",
                  (dir / "train" / "vocabulary.json").string(), "--corpus", programs, "--db",
                  (dir / "db.json").string()}) == kExitOk;
  ok = ok && cli({"scan", "--jobs", "2", "--db", (dir / "db.json").string(), "--out",
                  (dir / "scan").string(), programs}) == kExitDetection;
  ok = ok && cli({"eval", "--seed", seed, "--tables", "2", "--lab-hosts", "4", "--lab-extras",
                  "10", "--jobs", "2", "--out", (dir / "eval").string()}) == kExitOk;
  return ok;
}

Outcome determinism() {
  const auto root = fs::temp_directory_path() / ("opsig-acceptance-" + std::to_string(::getpid()));
  const bool ran = full_run(root / "a") && full_run(root / "b");
  if (!ran) return {false, "a pipeline step failed"};
  const char* files[] = {"train/vocabulary.json", "train/model.json", "train/eval.json",
                         "db.json",  "scan/reports.json", "scan/reports.txt",
                         "eval/table2.csv", "eval/summary.txt"};
  std::size_t same = 0, total = 0;
  std::string differing;
  for (const char* f : files) {
    ++total;
    const auto a = slurp(root / "a" / f);
    if (!a.empty() && a == slurp(root / "b" / f)) {
      ++same;
    } else {
      differing += std::string(" ") + f;
    }
  }
  fs::remove_all(root);
  return {same == total, std::to_string(same) + "/" + std::to_string(total) +
                             " files byte-identical" + (differing.empty() ? "" : ";" + differing)};
}

double pooled_recall(const MetricsTable& table) {
  std::size_t tp = 0, fn = 0;
  for (const auto& row : table.rows) {
    tp += row.metrics.tp;
    fn += row.metrics.fn;
  }
  return static_cast<double>(tp) / static_cast<double>(tp + fn);
}

Outcome threshold_sensitivity() {
  LabOptions lo;
  lo.extras = 20;
  lo.variants = {parse_pipeline("substitution(0.4)"), parse_pipeline("substitution(0.4)"),
                 parse_pipeline("substitution(0.4)")};
  auto corpus = make_lab_corpus(lo);
  PipelineOptions low, high;
  low.scan.theta = 0.5;
  high.scan.theta = 0.95;
  const double r_low = pooled_recall(run_laboratory(corpus, low));
  const double r_high = pooled_recall(run_laboratory(corpus, high));
  return {r_low > r_high, "recall " + fmt(r_low) + " at 0.5 vs " + fmt(r_high) + " at 0.95"};
}

Outcome soundness() {
  auto corpus = make_lab_corpus(LabOptions{});
  std::size_t signatures = 0, unsound = 0, dbs = 0;
  for (int variant = 1; variant <= 3; ++variant) {
    std::vector<ProgramListing> training, sources;
    for (std::size_t i = 0; i < corpus.programs.size(); ++i) {
      const auto& e = corpus.manifest.entries[i];
      if (e.role == Role::kBenignOriginal) training.push_back(corpus.programs[i]);
      if (e.role == Role::kInfected && e.variant == variant) {
        training.push_back(corpus.programs[i]);
        sources.push_back(corpus.programs[i]);
      }
    }
    auto trained = train_pipeline(training, PipelineOptions{});
    // build_database itself refuses to emit a fragment that does not embed.
    auto db = build_database(sources, trained.model, trained.vocabulary);
    ++dbs;
    signatures += db.signatures.size();
    unsound += unsound_signatures(db, sources).size();
    for (const auto& sig : db.signatures) {
      auto src = std::find_if(sources.begin(), sources.end(), [&](const ProgramListing& p) {
        return p.program_id == sig.source_program;
      });
      auto m = std::find_if(src->methods.begin(), src->methods.end(),
                            [&](const MethodListing& x) { return x.method_id == sig.source_method; });
      auto cfg = build_cfg(*m);
      if (!is_monomorphism(sig.fragment, cfg, sig.source_blocks) ||
          hash_agreement(sig.fragment, cfg, sig.source_blocks) != 1.0) {
        ++unsound;
      }
    }
  }
  return {unsound == 0 && signatures > 0,
          std::to_string(signatures) + " signatures in " + std::to_string(dbs) +
              " databases, " + std::to_string(unsound) + " failed to embed"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks = {
      {"lab corpus", lab_corpus},
      {"real-style corpus", realstyle_corpus},
      {"benchmark grid", benchmark},
      {"matcher oracle", matcher_oracle},
      {"tf-idf oracle", tfidf_oracle},
      {"determinism", determinism},
      {"threshold sensitivity", threshold_sensitivity},
      {"soundness", soundness},
  };
  int failures = 0;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    Outcome o;
    try {
      o = checks[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << "criterion " << i + 1 << ": " << (o.pass ? "PASS" : "FAIL") << " ("
              << checks[i].first << ") " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
