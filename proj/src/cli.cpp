#include "opsig/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "opsig/cfg.hpp"
#include "opsig/classifier.hpp"
#include "opsig/harness.hpp"
#include "opsig/ngram.hpp"
#include "opsig/parallel.hpp"
#include "opsig/scan.hpp"
#include "opsig/signature_db.hpp"

namespace fs = std::filesystem;

namespace opsig {

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

bool is_listing(const fs::path& p) {
  return p.extension() == ".oplist" || p.extension() == ".smali";
}

std::vector<ProgramListing> parse_file(const fs::path& path, bool lenient,
                                       std::vector<std::string>* warnings) {
  auto text = read_file(path);
  try {
    if (path.extension() == ".smali") {
      std::vector<SmaliWarning> notes;
      auto program = parse_smali_subset(text, lenient ? SmaliMode::kLenient : SmaliMode::kStrict,
                                        path.stem().string(), &notes);
      if (warnings) {
        for (const auto& w : notes) {
          warnings->push_back(path.string() + ":" + std::to_string(w.line) + ": " + w.message);
        }
      }
      return {std::move(program)};
    }
    if (text.find("program ") == std::string::npos) {
      return {parse_oplist(text, path.stem().string())};
    }
    return parse_oplist_corpus(text);
  } catch (const ParseError& e) {
    throw DataError(path.string() + ":" + std::to_string(e.line()) + ":" +
                    std::to_string(e.column()) + ": " + e.detail());
  } catch (const ListingError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

ModelKind model_kind(const RunConfig& c) {
  try {
    return parse_model_kind(c.classifier);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

Hyperparameters hyperparameters(const RunConfig& c) {
  Hyperparameters p;
  p.trees = c.trees;
  p.max_depth = c.max_depth;
  p.k = c.k;
  p.lambda = c.lambda;
  p.epochs = c.epochs;
  p.seed = c.seed;
  p.jobs = c.jobs;
  return p;
}

PipelineOptions pipeline_options(const RunConfig& c) {
  PipelineOptions o;
  o.n = c.n;
  o.capacity = c.capacity;
  o.classifier = model_kind(c);
  o.params = hyperparameters(c);
  o.unit = parse_document_unit(c.doc_unit);
  o.extraction = {c.tau, c.max_nodes, c.min_block_ops};
  o.scan.theta = c.theta;
  o.scan.budget = c.budget;
  o.scan.jobs = c.jobs;
  o.jobs = c.jobs;
  o.created = c.created;
  return o;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

void require_paths(const std::vector<std::string>& paths, const std::string& what) {
  if (paths.empty()) throw ConfigError(what + " is required");
  for (const auto& p : paths) {
    if (!fs::exists(p)) throw DataError(what + " path does not exist: " + p);
  }
}

std::vector<TransformPipeline> lab_variants(const RunConfig& c) {
  if (c.lab_variants.empty()) return mild_variants();
  std::vector<TransformPipeline> out;
  std::stringstream ss(c.lab_variants);
  std::string item;
  try {
    while (std::getline(ss, item, ';')) out.push_back(parse_pipeline(item));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("lab-variants: ") + e.what());
  }
  if (out.empty()) throw ConfigError("lab-variants lists no variant");
  return out;
}

void write_corpus(const Corpus& corpus, const fs::path& dir) {
  fs::create_directories(dir / "programs");
  for (const auto& p : corpus.programs) {
    write_file(dir / "programs" / (p.program_id + ".oplist"), serialize_oplist(p));
  }
  write_file(dir / "manifest.json", corpus.manifest.to_json().dump(1) + "\n");
}

std::string table_csv(const MetricsTable& t) {
  std::ostringstream s;
  t.write_csv(s);
  return s.str();
}

// ---- subcommands ------------------------------------------------------

int cmd_parse(const RunConfig& c, const std::vector<std::string>& inputs, std::ostream& out,
              std::ostream& err) {
  if (inputs.empty()) throw ConfigError("parse needs at least one input");
  require_paths(inputs, "input");
  std::vector<std::string> warnings;
  auto programs = load_programs(inputs, c.lenient, &warnings);
  for (const auto& w : warnings) err << "warning: " << w << "\n";
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& p : programs) doc.push_back(cfgs_to_json(p.program_id, build_program_cfgs(p)));
  auto text = doc.dump(1) + "\n";
  if (c.out.empty()) {
    out << text;
  } else {
    write_file(c.out, text);
    out << "wrote CFGs of " << programs.size() << " program(s) to " << c.out << "\n";
  }
  return kExitOk;
}

int cmd_synth(const RunConfig& c, std::ostream& out) {
  require(!c.out.empty(), "synth needs --out");
  Corpus corpus;
  if (c.kind == "lab") {
    LabOptions o;
    o.hosts = c.lab_hosts;
    o.extras = c.lab_extras;
    o.variants = lab_variants(c);
    o.seed = c.seed;
    corpus = make_lab_corpus(o);
  } else if (c.kind == "realstyle") {
    RealStyleOptions o;
    o.clean = c.real_clean;
    o.seed = c.seed;
    corpus = make_realstyle_corpus(o);
  } else if (c.kind == "benchmark") {
    corpus = make_benchmark_corpus(c.bench_per_class, c.seed);
  } else {
    throw ConfigError("unknown corpus kind '" + c.kind + "' (lab, realstyle, benchmark)");
  }
  write_corpus(corpus, c.out);
  out << "wrote " << corpus.programs.size() << " programs and manifest.json to " << c.out << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& c, std::ostream& out, std::ostream& err) {
  require_paths(c.corpus, "corpus");
  require(!c.out.empty(), "train needs --out");
  const auto options = pipeline_options(c);
  std::vector<std::string> warnings;
  auto programs = load_programs(c.corpus, c.lenient, &warnings);
  for (const auto& w : warnings) err << "warning: " << w << "\n";
  for (const auto& p : programs) {
    if (p.label.kind == ProgramLabel::Kind::kUnknown) {
      throw DataError("training program '" + p.program_id + "' has no clean/malware label");
    }
  }
  auto docs = options.unit == DocumentUnit::kBlock ? block_documents(programs, options.n)
                                                   : program_documents(programs, options.n);
  std::erase_if(docs, [](const Document& d) { return d.ngrams.empty(); });
  if (docs.empty()) throw DataError("corpus yields no n-grams of size " + std::to_string(c.n));
  Diagnostics diag;
  auto vocabulary = build_vocabulary(docs, options.n, options.capacity, &diag);
  for (const auto& w : diag.warnings) err << "warning: " << w << "\n";
  auto vectors = vectorize_all(docs, vocabulary);
  Model model = [&] {
    try {
      return train(options.classifier, vectors, options.params);
    } catch (const std::invalid_argument& e) {
      throw DataError(e.what());
    }
  }();
  EvalReport report;
  try {
    report = cross_validate(options.classifier, vectors, options.params, c.folds, c.holdout);
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("evaluation: ") + e.what());
  }

  const fs::path dir = c.out;
  write_file(dir / "vocabulary.json", vocabulary.to_json().dump(1) + "\n");
  write_file(dir / "model.json", model.to_json().dump(1) + "\n");
  write_file(dir / "eval.json", report.to_json().dump(1) + "\n");
  out << "trained " << to_string(options.classifier) << " on " << vectors.size() << " "
      << to_string(options.unit) << " documents from " << programs.size() << " programs\n";
  out << "vocabulary: " << vocabulary.size() << " " << c.n << "-grams\n";
  out << "holdout F1 = " << format_metric(report.holdout.f1)
      << ", mean " << report.folds << "-fold F1 = " << format_metric(report.mean_f1) << "\n";
  return kExitOk;
}

int cmd_build_db(const RunConfig& c, std::ostream& out, std::ostream& err) {
  require(!c.model.empty(), "build-db needs --model");
  require(!c.vocab.empty(), "build-db needs --vocab");
  require(!c.db.empty(), "build-db needs --db");
  require_paths({c.model}, "model");
  require_paths({c.vocab}, "vocabulary");
  require_paths(c.corpus, "corpus");
  const auto options = pipeline_options(c);

  Vocabulary vocabulary;
  std::optional<Model> model;
  try {
    vocabulary = Vocabulary::from_json(read_json(c.vocab));
    model = Model::from_json(read_json(c.model));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  std::vector<std::string> warnings;
  auto programs = load_programs(c.corpus, c.lenient, &warnings);
  for (const auto& w : warnings) err << "warning: " << w << "\n";
  std::vector<ProgramListing> malware;
  for (auto& p : programs) {
    if (p.label.is_malware()) malware.push_back(std::move(p));
  }
  if (malware.empty()) {
    throw EmptyDatabaseError("no malware-labeled program in the corpus; the database would be empty");
  }
  Diagnostics diag;
  BuildStats stats;
  auto db = build_database(malware, *model, vocabulary, options.extraction, c.created, &diag,
                           c.jobs, &stats);
  save_database(db, c.db);
  std::map<std::string, std::size_t> per_family;
  for (const auto& s : db.signatures) ++per_family[s.family];
  out << "extracted " << stats.extracted << " fragments from " << malware.size()
      << " programs, merged " << stats.duplicates << " duplicates\n";
  for (const auto& [family, count] : per_family) {
    out << "  " << pad(family, 24) << count << "\n";
  }
  out << db.signatures.size() << " signatures written to " << c.db << "\n";
  return kExitOk;
}

int cmd_scan(const RunConfig& c, const std::vector<std::string>& inputs, std::ostream& out,
             std::ostream& err) {
  require(!c.db.empty(), "scan needs --db");
  if (inputs.empty()) throw ConfigError("scan needs at least one input");
  require_paths({c.db}, "database");
  require_paths(inputs, "input");
  SignatureDatabase db;
  try {
    db = load_database(c.db);
  } catch (const DatabaseFormatError& e) {
    throw DataError(e.what());
  } catch (const DatabaseVersionError& e) {
    throw DataError(e.what());
  }
  if (db.signatures.empty()) throw EmptyDatabaseError("signature database is empty");

  std::vector<std::string> warnings;
  auto programs = load_programs(inputs, c.lenient, &warnings);
  for (const auto& w : warnings) err << "warning: " << w << "\n";
  if (programs.empty()) throw DataError("no program could be read from the inputs");

  const auto options = pipeline_options(c);
  auto reports = scan_all(programs, db, options.scan);

  std::ostringstream table;
  write_report_table(table, reports);
  std::map<std::string, std::size_t> counts{{"clean", 0}, {"known_malware", 0}, {"variant", 0}};
  bool detected = false;
  for (const auto& r : reports) {
    ++counts[std::string(to_string(r.verdict.kind))];
    detected |= r.verdict.detected();
  }
  if (c.out.empty()) {
    out << table.str();
  } else {
    const fs::path dir = c.out;
    write_file(dir / "reports.json", reports_to_json(reports).dump(1) + "\n");
    write_file(dir / "reports.txt", table.str());
  }
  out << "scanned " << reports.size() << " programs: clean=" << counts["clean"]
      << " known_malware=" << counts["known_malware"] << " variant=" << counts["variant"]
      << "\n";
  return detected ? kExitDetection : kExitOk;
}

int cmd_eval(const RunConfig& c, std::ostream& out) {
  require(!c.out.empty(), "eval needs --out");
  std::vector<int> tables;
  {
    std::stringstream ss(c.tables);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item == "1" || item == "2" || item == "3") {
        tables.push_back(item[0] - '0');
      } else {
        throw ConfigError("tables lists '" + item + "'; expected 1, 2 or 3");
      }
    }
  }
  require(!tables.empty(), "tables is empty");
  const fs::path dir = c.out;
  const auto options = pipeline_options(c);
  std::ostringstream summary;

  for (int t : tables) {
    if (t == 1) {
      auto corpus = make_benchmark_corpus(c.bench_per_class, c.seed);
      const std::vector<ModelKind> kinds = {ModelKind::kRandomForest, ModelKind::kDecisionTree,
                                            ModelKind::kKnn, ModelKind::kLinearSvm};
      const std::vector<int> sizes = {1, 2, 3, 4, 5, 6, 7, 8, 9};
      auto grid = benchmark_grid(corpus.programs, kinds, sizes, c.capacity, options.params,
                                 c.folds);
      std::ostringstream csv;
      grid.write_csv(csv);
      write_file(dir / "table1.csv", csv.str());
      summary << "Classifier benchmark (mean " << c.folds << "-fold F1, capacity " << c.capacity
              << ", " << corpus.programs.size() << " programs)\n" << csv.str() << "\n";
    } else if (t == 2) {
      LabOptions o;
      o.hosts = c.lab_hosts;
      o.extras = c.lab_extras;
      o.variants = lab_variants(c);
      o.seed = c.seed;
      auto corpus = make_lab_corpus(o);
      auto table = run_laboratory(corpus, options);
      write_file(dir / "lab_manifest.json", corpus.manifest.to_json().dump(1) + "\n");
      write_file(dir / "table2.csv", table_csv(table));
      summary << "Laboratory corpus (" << corpus.programs.size() << " programs, theta "
              << format_metric(c.theta) << ")\n" << table_csv(table);
      for (const auto& r : table.rows) {
        summary << "  " << r.name << ": " << r.signatures << " signatures, tp=" << r.metrics.tp
                << " fp=" << r.metrics.fp << " fn=" << r.metrics.fn << "\n";
      }
      summary << "\n";
    } else {
      RealStyleOptions o;
      o.clean = c.real_clean;
      o.seed = c.seed;
      auto corpus = make_realstyle_corpus(o);
      auto table = run_realstyle(corpus, default_dictionaries(corpus, default_families()),
                                 options);
      write_file(dir / "realstyle_manifest.json", corpus.manifest.to_json().dump(1) + "\n");
      write_file(dir / "table3.csv", table_csv(table));
      summary << "Real-style corpus (" << corpus.programs.size() << " programs)\n"
              << table_csv(table);
      for (const auto& r : table.rows) {
        summary << "  " << r.name << ": " << r.signatures << " signatures, off-diagonal="
                << r.off_diagonal << "\n";
      }
      summary << "\n";
    }
  }
  write_file(dir / "summary.txt", summary.str());
  out << summary.str();
  return kExitOk;
}

}  // namespace

void validate(const RunConfig& c) {
  if (c.n < kMinNgram || c.n > kMaxNgram) {
    throw ConfigError("n must be between " + std::to_string(kMinNgram) + " and " +
                      std::to_string(kMaxNgram) + ", got " + std::to_string(c.n));
  }
  require(c.capacity >= 1, "capacity must be >= 1");
  require(c.tau > 0.0 && c.tau <= 1.0, "tau must be in (0, 1]");
  require(c.theta > 0.0 && c.theta <= 1.0, "theta must be in (0, 1]");
  require(c.jobs >= 1, "jobs must be >= 1");
  require(c.trees >= 1, "trees must be >= 1");
  require(c.k >= 1, "k must be >= 1");
  require(c.lambda > 0.0, "lambda must be > 0");
  require(c.max_depth >= 0, "max-depth must be >= 0");
  require(c.max_nodes >= 1 && c.max_nodes <= 20, "max-nodes must be in [1, 20]");
  require(c.budget >= 1, "budget must be >= 1");
  require(c.folds >= 2, "folds must be >= 2");
  require(c.holdout > 0.0 && c.holdout < 1.0, "holdout must be in (0, 1)");
  require(c.lab_hosts >= 1 && c.bench_per_class >= 1, "corpus sizes must be >= 1");
  model_kind(c);
  try {
    parse_document_unit(c.doc_unit);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::vector<ProgramListing> load_programs(const std::vector<std::string>& paths, bool lenient,
                                          std::vector<std::string>* warnings) {
  std::vector<fs::path> files;
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::recursive_directory_iterator(p)) {
        if (e.is_regular_file() && is_listing(e.path())) found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::exists(p)) {
      files.emplace_back(p);
    } else {
      throw DataError("no such file or directory: " + p);
    }
  }
  std::vector<ProgramListing> out;
  for (const auto& f : files) {
    try {
      for (auto& prog : parse_file(f, lenient, warnings)) out.push_back(std::move(prog));
    } catch (const DataError& e) {
      if (!lenient) throw;
      if (warnings) warnings->push_back(std::string("skipped ") + e.what());
    }
  }
  return out;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig c;
  c.jobs = default_jobs();
  std::vector<std::string> inputs;

  CLI::App app{"Opcode n-gram signature extraction and CFG matching"};
  app.name("opsig");
  app.set_config("--config", "", "flat key=value file; flags win over it");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  app.fallthrough();

  app.add_option("--n", c.n, "n-gram size (1-9)")->capture_default_str();
  app.add_option("--capacity", c.capacity, "vocabulary size")->capture_default_str();
  app.add_option("--classifier", c.classifier,
                 "random-forest, decision-tree, knn or linear-svm")->capture_default_str();
  app.add_option("--trees", c.trees, "random forest size")->capture_default_str();
  app.add_option("--max-depth", c.max_depth, "tree depth limit, 0 for none")->capture_default_str();
  app.add_option("--k", c.k, "KNN neighbours")->capture_default_str();
  app.add_option("--lambda", c.lambda, "SVM regularization")->capture_default_str();
  app.add_option("--epochs", c.epochs, "SVM epochs")->capture_default_str();
  app.add_option("--tau", c.tau, "signature extraction threshold")->capture_default_str();
  app.add_option("--theta", c.theta, "match threshold")->capture_default_str();
  app.add_option("--seed", c.seed, "random seed")->capture_default_str();
  app.add_option("--jobs", c.jobs, "worker threads (default: all cores)");
  auto* strict = app.add_flag("--strict", "reject malformed inputs (default)");
  auto* lenient = app.add_flag("--lenient", c.lenient, "skip malformed inputs with a warning");
  strict->excludes(lenient);
  app.add_option("--doc-unit", c.doc_unit, "program or block")->capture_default_str();
  app.add_option("--max-nodes", c.max_nodes, "signature size limit")->capture_default_str();
  app.add_option("--min-block-ops", c.min_block_ops,
                 "smallest single-block signature")->capture_default_str();
  app.add_option("--budget", c.budget, "search states per signature and method")
      ->capture_default_str();
  app.add_option("--folds", c.folds, "cross-validation folds")->capture_default_str();
  app.add_option("--holdout", c.holdout, "holdout fraction")->capture_default_str();
  app.add_option("--created", c.created, "creation stamp stored in the database");
  app.add_option("--corpus", c.corpus, "program files or directories");
  app.add_option("--db", c.db, "signature database file");
  app.add_option("--out", c.out, "output file or directory");
  app.add_option("--model", c.model, "model file");
  app.add_option("--vocab", c.vocab, "vocabulary file");
  app.add_option("--tables", c.tables, "eval tables to produce")->capture_default_str();
  app.add_option("--kind", c.kind, "synth corpus: lab, realstyle or benchmark")
      ->capture_default_str();
  app.add_option("--lab-hosts", c.lab_hosts, "laboratory host programs")->capture_default_str();
  app.add_option("--lab-extras", c.lab_extras, "laboratory clean extras")->capture_default_str();
  app.add_option("--lab-variants", c.lab_variants,
                 "';'-separated transform pipelines, e.g. substitution(0.2);reorder,padding(0.1)");
  app.add_option("--real-clean", c.real_clean, "real-style clean programs")->capture_default_str();
  app.add_option("--bench-per-class", c.bench_per_class, "benchmark samples per class")
      ->capture_default_str();

  auto* train_cmd = app.add_subcommand("train", "build vocabulary and model from a labeled corpus");
  auto* build_cmd = app.add_subcommand("build-db", "extract signatures from malware");
  auto* scan_cmd = app.add_subcommand("scan", "match programs against a signature database");
  scan_cmd->add_option("inputs", inputs, "program files or directories");
  auto* eval_cmd = app.add_subcommand("eval", "reproduce the benchmark and detection tables");
  auto* parse_cmd = app.add_subcommand("parse", "print the CFGs of programs as JSON");
  parse_cmd->add_option("inputs", inputs, "program files or directories");
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic corpus");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    validate(c);
    if (*train_cmd) return cmd_train(c, out, err);
    if (*build_cmd) return cmd_build_db(c, out, err);
    if (*scan_cmd) return cmd_scan(c, inputs, out, err);
    if (*eval_cmd) return cmd_eval(c, out);
    if (*parse_cmd) return cmd_parse(c, inputs, out, err);
    if (*synth_cmd) return cmd_synth(c, out);
    err << "error: no subcommand\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const EmptyDatabaseError& e) {
    err << "empty database: " << e.what() << "\n";
    return kExitEmptyDatabase;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const FingerprintMismatch& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const DatabaseFormatError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace opsig
