#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "opsig/listing.hpp"

namespace opsig {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitData = 3,
  kExitEmptyDatabase = 4,
  kExitDetection = 10,
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  int n = 2;
  std::size_t capacity = 100;
  std::string classifier = "random-forest";
  std::size_t trees = 100;
  int max_depth = 0;
  std::size_t k = 5;
  double lambda = 1e-3;
  std::size_t epochs = 50;
  double tau = 0.8;
  double theta = 0.5;
  std::uint64_t seed = 42;
  std::size_t jobs = 1;
  bool lenient = false;
  std::string doc_unit = "block";
  std::size_t max_nodes = 20;
  std::size_t min_block_ops = 3;
  std::size_t budget = 1'000'000;
  std::size_t folds = 10;
  double holdout = 0.2;
  std::string created;

  std::vector<std::string> corpus;
  std::string db;
  std::string out;
  std::string model;
  std::string vocab;

  // eval / synth
  std::string tables = "1,2,3";
  std::string kind = "lab";
  std::size_t lab_hosts = 10;
  std::size_t lab_extras = 100;
  std::string lab_variants;  // ';'-separated pipelines, empty for the mild default
  std::size_t real_clean = 100;
  std::size_t bench_per_class = 50;
};

// Range and consistency checks. Throws ConfigError.
void validate(const RunConfig& config);

// Reads .oplist and .smali files; directories are walked recursively in
// path order. Strict mode throws DataError on the first bad file, lenient mode
// skips it and appends a warning.
std::vector<ProgramListing> load_programs(const std::vector<std::string>& paths, bool lenient,
                                          std::vector<std::string>* warnings = nullptr);

// Entry point behind the executable; args exclude the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace opsig
