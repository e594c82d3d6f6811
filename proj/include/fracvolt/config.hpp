#pragma once

// Experiment configuration: a single JSON document, validated before any
// computation starts. docs/config.md describes the schema.

#include "fracvolt/core.hpp"
#include "fracvolt/kernels.hpp"
#include "fracvolt/operators.hpp"
#include "fracvolt/resolvent.hpp"
#include "fracvolt/stochastic.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fracvolt {

// Malformed or incomplete configuration (exit code 2).
class ConfigError : public DomainError {
 public:
  using DomainError::DomainError;
};

enum class Experiment { resolvent, cp_check, converge, simulate, verify_strong };

std::string to_string(Experiment e);

struct ExperimentConfig {
  Experiment experiment = Experiment::resolvent;
  std::string description;
  std::optional<operators::OperatorSpec> op;
  std::optional<kernels::KernelSpec> kernel;  // "alpha": x is read as fractional(x)
  std::optional<TimeGrid> grid;
  std::optional<NoiseSpec> noise;
  std::optional<std::vector<double>> n_list;
  std::optional<int> paths;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out_dir;

  // resolvent
  std::optional<Method> method;
  std::optional<double> residual_tol;
  // cp-check
  std::vector<double> mu_grid = kernels::kDefaultMuGrid;
  double tol = kernels::kDefaultCPTolerance;
  // converge (with noise) and verify-strong
  double p = 2.0;
  int levels = 3;
  // simulate: moment times, default {t_end / 2, t_end}
  std::optional<std::vector<double>> times;

  Index max_dim = operators::kDefaultMaxDim;
};

// Parses and validates; throws ConfigError.
ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Checks that the fields required by the experiment are present and in range.
void validate(const ExperimentConfig& config);

// Canonical JSON; parse_config(serialize_config(c)) describes the same run.
std::string serialize_config(const ExperimentConfig& config);

}  // namespace fracvolt
