#pragma once

// Desk-scale acceptance suite with pinned parameters and fixed seeds.

#include "fracvolt/experiment.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace fracvolt {

struct CriterionResult {
  int id = 0;
  std::string title;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;  // wall clock; kept out of the bundle
};

struct SelftestOptions {
  int paths = 10000;  // criterion 7; criteria 8 and 9 use paths / 10
  std::uint64_t seed = 42;
  // Criterion 10: recompute 1..9 at another thread count and compare CSVs.
  bool check_determinism = true;
  std::function<void(const CriterionResult&)> progress;
};

struct SelftestReport {
  std::vector<CriterionResult> criteria;
  Bundle bundle;

  bool all_pass() const;
  std::string table() const;
};

SelftestReport run_selftest(const SelftestOptions& opts = {});

// Prints the per-criterion table, commits the bundle if out_dir is given and
// returns 0 when every criterion passes, 1 otherwise.
int selftest(const SelftestOptions& opts, const std::optional<std::filesystem::path>& out_dir, std::ostream& out,
             std::ostream& err);

}  // namespace fracvolt
