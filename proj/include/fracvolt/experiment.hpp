#pragma once

// Config-driven experiments and their report bundles.

#include "fracvolt/config.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace fracvolt {

enum ExitCode : int { kExitOk = 0, kExitInvariant = 1, kExitConfig = 2, kExitNumerical = 3 };

// Report files held in memory until committed.
class Bundle {
 public:
  void add(const std::string& name, std::string content);
  const std::map<std::string, std::string>& files() const { return files_; }
  bool contains(const std::string& name) const { return files_.count(name) > 0; }
  const std::string& at(const std::string& name) const { return files_.at(name); }

  // FNV-1a 64 over (name, content) pairs in name order; `filter` limits the
  // files to those whose name ends with it.
  std::uint64_t hash(const std::string& filter = "") const;

  // Writes the files into a staging directory next to out_dir and renames it
  // onto out_dir. An existing out_dir is replaced only if it is empty or
  // holds an earlier bundle (manifest.json); otherwise DomainError.
  void commit(const std::filesystem::path& out_dir) const;

 private:
  std::map<std::string, std::string> files_;
};

std::string hex64(std::uint64_t v);

struct Invariant {
  std::string name;
  bool pass = true;
  std::string detail;
};

struct RunResult {
  Experiment experiment = Experiment::resolvent;
  std::string headline;  // one line, e.g. the cp-check verdict
  std::vector<Invariant> invariants;
  std::vector<std::pair<std::string, std::string>> metrics;
  Bundle bundle;  // CSV tables, summary.txt, manifest.json

  bool all_pass() const;
  int exit_code() const { return all_pass() ? kExitOk : kExitInvariant; }
};

// Runs a validated config without touching the file system. Throws
// DomainError or NumericalError.
RunResult run_experiment(const ExperimentConfig& config);

// Loads, runs and commits to config.out_dir; reports on the two streams and
// returns the process exit code.
int run(const std::filesystem::path& config_path, std::ostream& out, std::ostream& err);

}  // namespace fracvolt
