#include "fracvolt/experiment.hpp"
#include "fracvolt/selftest.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"fracvolt: resolvent families of fractional Volterra equations and their stochastic convolutions"};
  app.set_version_flag("--version", std::string(FRACVOLT_VERSION));
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run the experiment described by a JSON config");
  run->add_option("config", config_path, "Config file")->required();

  fracvolt::SelftestOptions opts;
  std::string out_dir;
  auto* self = app.add_subcommand("selftest", "Run the acceptance suite with pinned parameters");
  self->add_option("--paths", opts.paths, "Monte Carlo paths for the moment check (others use paths/10)")
      ->check(CLI::Range(2, 100'000'000));
  self->add_option("--seed", opts.seed, "Base seed");
  self->add_option("--out", out_dir, "Write the report bundle to this directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : fracvolt::kExitConfig;
  }

  if (*run) return fracvolt::run(config_path, std::cout, std::cerr);

  opts.progress = [](const fracvolt::CriterionResult& r) {
    std::printf("[%2d] %s  %-34s %8.2f s\n", r.id, r.pass ? "PASS" : "FAIL", r.title.c_str(), r.seconds);
    std::fflush(stdout);
  };
  std::optional<std::filesystem::path> out;
  if (!out_dir.empty()) out = out_dir;
  return fracvolt::selftest(opts, out, std::cout, std::cerr);
}
