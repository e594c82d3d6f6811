#include <doctest.h>

#include "fracvolt/config.hpp"
#include "fracvolt/experiment.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

using namespace fracvolt;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("fracvolt-cli-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_config(const fs::path& dir, const std::string& name, const std::string& text) {
  const fs::path p = dir / name;
  std::ofstream(p) << text;
  return p;
}

const char* kResolvent = R"({
  "experiment": "resolvent",
  "operator": {"kind": "laplacian_1d", "n": 4},
  "alpha": 0.5,
  "grid": {"t_end": 1, "steps": 50},
  "out_dir": "out"
})";

std::string with(const std::string& base, const std::string& key, const std::string& value) {
  auto j = nlohmann::ordered_json::parse(base);
  if (value.empty())
    j.erase(key);
  else
    j[key] = nlohmann::ordered_json::parse(value);
  return j.dump();
}

// Column `name` of a CSV with a plain header and no quoted fields.
std::vector<std::string> column(const std::string& csv, const std::string& name) {
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::istringstream h(line);
    for (std::string f; std::getline(h, f, ',');) header.push_back(f);
  }
  const auto idx = std::find(header.begin(), header.end(), name) - header.begin();
  std::vector<std::string> out;
  while (std::getline(in, line)) {
    std::istringstream r(line);
    std::string f;
    for (long i = 0; i <= idx; ++i) std::getline(r, f, ',');
    out.push_back(f);
  }
  return out;
}

}  // namespace

TEST_CASE("config: required fields per experiment") {
  CHECK_NOTHROW(parse_config(kResolvent));

  CHECK_THROWS_AS(parse_config(with(kResolvent, "operator", "")), ConfigError);
  CHECK_THROWS_AS(parse_config(with(kResolvent, "alpha", "")), ConfigError);
  CHECK_THROWS_AS(parse_config(with(kResolvent, "grid", "")), ConfigError);
  CHECK_THROWS_AS(parse_config(with(kResolvent, "out_dir", "")), ConfigError);
  CHECK_THROWS_AS(parse_config(with(kResolvent, "experiment", "")), ConfigError);

  // cp-check does not need an operator
  const auto cp = with(with(kResolvent, "experiment", "\"cp-check\""), "operator", "");
  CHECK(parse_config(cp).experiment == Experiment::cp_check);

  const std::string noise = R"({"q_power": 2, "dim_u": 4})";
  auto sim = with(kResolvent, "experiment", "\"simulate\"");
  CHECK_THROWS_AS(parse_config(sim), ConfigError);
  sim = with(sim, "noise", noise);
  CHECK_THROWS_AS(parse_config(sim), ConfigError);  // paths, seed
  sim = with(sim, "paths", "64");
  CHECK_THROWS_AS(parse_config(sim), ConfigError);  // seed
  sim = with(sim, "seed", "5");
  CHECK_NOTHROW(parse_config(sim));
  CHECK_THROWS_AS(parse_config(with(sim, "noise", R"({"q_power": 2, "dim_u": 3})")), ConfigError);

  auto strong = with(sim, "experiment", "\"verify-strong\"");
  CHECK_NOTHROW(parse_config(strong));
  CHECK_THROWS_AS(parse_config(with(strong, "levels", "1")), ConfigError);
  CHECK_THROWS_AS(parse_config(with(strong, "noise", "")), ConfigError);

  // converge: noise is optional, but brings paths and seed along
  auto conv = with(kResolvent, "experiment", "\"converge\"");
  CHECK_NOTHROW(parse_config(conv));
  CHECK_THROWS_AS(parse_config(with(conv, "noise", noise)), ConfigError);
  CHECK_THROWS_AS(parse_config(with(conv, "n_list", "[8, 2]")), ConfigError);
  CHECK_THROWS_AS(parse_config(with(conv, "n_list", "[0, 2]")), ConfigError);
}

TEST_CASE("config: malformed input") {
  CHECK_THROWS_AS(parse_config("{"), ConfigError);
  CHECK_THROWS_AS(parse_config("[]"), ConfigError);
  CHECK_THROWS_AS(parse_config(with(kResolvent, "typo", "1")), ConfigError);
  CHECK_THROWS_AS(parse_config(with(kResolvent, "experiment", "\"plot\"")), ConfigError);
  CHECK_THROWS_AS(parse_config(with(kResolvent, "kernel", R"({"kind": "fractional", "alpha": 0.5})")), ConfigError);
  CHECK_THROWS_AS(parse_config(with(kResolvent, "alpha", "-1")), ConfigError);
  CHECK_THROWS_AS(parse_config(with(kResolvent, "grid", R"({"t_end": 1, "steps": 0})")), ConfigError);
  CHECK_THROWS_AS(parse_config(with(kResolvent, "grid", R"({"t_end": 1, "steps": 2.5})")), ConfigError);
  CHECK_THROWS_AS(parse_config(with(kResolvent, "seed", "-3")), ConfigError);
  CHECK_THROWS_AS(parse_config(with(kResolvent, "operator", R"({"kind": "dense", "matrix": [[1, 2]]})")),
                  ConfigError);
  CHECK_THROWS_AS(parse_config(with(kResolvent, "operator", R"({"kind": "laplacian_1d", "n": 4, "size": 2})")),
                  ConfigError);
  CHECK_THROWS_AS(parse_config(with(kResolvent, "max_dim", "3")), ConfigError);
  CHECK_THROWS_AS(parse_config(with(kResolvent, "method", "\"magic\"")), ConfigError);
  CHECK_THROWS_AS(parse_config(with(with(kResolvent, "alpha", "1.5"), "method", "\"subordination\"")), ConfigError);
  CHECK_THROWS_AS(parse_config(with(with(kResolvent, "alpha", ""), "kernel",
                                    R"({"kind": "table", "times": [0, 0], "values": [1, 1]})")),
                  ConfigError);
  // every config error is also a DomainError
  CHECK_THROWS_AS(parse_config("{"), DomainError);
}

TEST_CASE("config: round trip") {
  const std::string text = R"({
    "experiment": "simulate",
    "description": "round trip",
    "operator": {"kind": "dense", "matrix": [[-1, 0.25], [0.25, -2]]},
    "kernel": {"kind": "exponential", "rate": 0.1, "scale": 3},
    "grid": {"t_end": 0.3, "steps": 7},
    "noise": {"q_eigs": [1, 0.1], "psi": {"kind": "constant", "matrix": [[1, 0], [0.5, 0.3333333333333333]]}},
    "paths": 10, "seed": 18446744073709551615, "out_dir": "a/b",
    "times": [0.1], "max_dim": 5
  })";
  const auto c = parse_config(text);
  const std::string once = serialize_config(c);
  const auto back = parse_config(once);
  CHECK(serialize_config(back) == once);

  CHECK(back.experiment == Experiment::simulate);
  CHECK(*back.seed == 18446744073709551615ULL);
  CHECK(back.grid->t_end == 0.3);
  CHECK(back.grid->steps == 7);
  CHECK(back.out_dir == fs::path("a/b"));
  const auto& e = std::get<kernels::Exponential>(back.kernel->kind);
  CHECK(e.rate == 0.1);
  CHECK(e.scale == 3.0);
  const auto& psi = std::get<psi::Constant>(back.noise->psi);
  CHECK(psi.c(1, 1) == 1.0 / 3.0);

  SUBCASE("shorthands expand to their canonical form") {
    const auto d = parse_config(with(with(kResolvent, "experiment", "\"converge\""), "n_list", "[2, 4]"));
    const auto j = nlohmann::json::parse(serialize_config(d));
    CHECK(j["kernel"]["kind"] == "fractional");
    CHECK(j["kernel"]["alpha"] == 0.5);
    CHECK(j["operator"]["length"].get<double>() == std::numbers::pi);

    const auto s = parse_config(with(with(with(with(kResolvent, "experiment", "\"simulate\""), "noise",
                                                   R"({"q_power": 2, "dim_u": 4})"),
                                              "paths", "8"),
                                         "seed", "1"));
    CHECK(s.noise->q_eigs(3) == 1.0 / 16.0);
    const auto j2 = nlohmann::json::parse(serialize_config(s));
    CHECK(j2["noise"]["q_eigs"].size() == 4);
    CHECK(j2["noise"]["psi"] == "identity");
  }
}

TEST_CASE("cp-check verdicts exit 0 either way") {
  const std::string base = R"({"experiment": "cp-check", "grid": {"t_end": 2, "steps": 2000}, "out_dir": "x"})";
  const auto pos = run_experiment(parse_config(with(base, "alpha", "0.5")));
  CHECK(pos.headline == "completely_positive_on_grid");
  CHECK(pos.exit_code() == kExitOk);

  const auto neg = run_experiment(parse_config(with(base, "alpha", "1.5")));
  CHECK(neg.headline.rfind("violated", 0) == 0);
  CHECK(neg.exit_code() == kExitOk);
  CHECK(neg.bundle.contains("cp.csv"));
  CHECK(neg.bundle.at("summary.txt").find("violated") != std::string::npos);
}

TEST_CASE("converge with A = 0 gives a zero error column") {
  const auto r = run_experiment(parse_config(R"({
    "experiment": "converge",
    "operator": {"kind": "dense", "matrix": [[0, 0], [0, 0]]},
    "alpha": 0.7,
    "grid": {"t_end": 1, "steps": 20},
    "n_list": [2, 8, 32],
    "out_dir": "x"
  })"));
  CHECK(r.exit_code() == kExitOk);
  const auto err = column(r.bundle.at("convergence.csv"), "err");
  REQUIRE(err.size() == 3);
  for (const auto& e : err) CHECK(std::stod(e) == 0.0);
}

TEST_CASE("resolvent experiment invariants") {
  const auto ok = run_experiment(parse_config(kResolvent));
  CHECK(ok.exit_code() == kExitOk);
  for (const char* f : {"family.csv", "norms.csv", "summary.txt", "manifest.json"}) CHECK(ok.bundle.contains(f));

  // an enabled check that cannot hold
  const auto bad = run_experiment(parse_config(with(kResolvent, "residual_tol", "1e-300")));
  CHECK(bad.exit_code() == kExitInvariant);
  CHECK(bad.bundle.at("summary.txt").find("FAIL  equation_residual") != std::string::npos);

  // volterra families satisfy their own discrete equation to rounding
  const auto vs = run_experiment(
      parse_config(with(with(kResolvent, "method", "\"volterra_step\""), "residual_tol", "1e-10")));
  CHECK(vs.exit_code() == kExitOk);

  const auto again = run_experiment(parse_config(kResolvent));
  CHECK(again.bundle.hash() == ok.bundle.hash());
}

TEST_CASE("stochastic experiments") {
  const std::string base = R"({
    "operator": {"kind": "laplacian_1d", "n": 3},
    "alpha": 0.5,
    "grid": {"t_end": 1, "steps": 40},
    "noise": {"q_power": 2, "dim_u": 3},
    "paths": 200, "seed": 9, "out_dir": "x"
  })";
  const auto sim = run_experiment(parse_config(with(base, "experiment", "\"simulate\"")));
  CHECK(sim.exit_code() == kExitOk);
  for (const char* f : {"moments.csv", "covariance.csv", "paths.csv"}) CHECK(sim.bundle.contains(f));
  CHECK(column(sim.bundle.at("moments.csv"), "t").size() == 2);

  const auto strong = run_experiment(parse_config(with(base, "experiment", "\"verify-strong\"")));
  CHECK(strong.exit_code() == kExitOk);
  CHECK(column(strong.bundle.at("strong.csv"), "level").size() == 3);
  CHECK(column(strong.bundle.at("residuals.csv"), "path").size() == 200);

  const auto conv = run_experiment(parse_config(with(with(base, "experiment", "\"converge\""), "n_list", "[2, 8, 32]")));
  CHECK(conv.exit_code() == kExitOk);
  CHECK(conv.bundle.contains("convolution.csv"));

  const auto manifest = nlohmann::json::parse(sim.bundle.at("manifest.json"));
  CHECK(manifest["seed"] == 9);
  CHECK(manifest["version"] == FRACVOLT_VERSION);
  CHECK(manifest["config"]["noise"]["q_eigs"].size() == 3);
  // the echoed config reproduces the run
  const auto rerun = run_experiment(parse_config(manifest["config"].dump()));
  CHECK(rerun.bundle.at("moments.csv") == sim.bundle.at("moments.csv"));
}

TEST_CASE("run: exit codes and atomic bundle") {
  TempDir tmp;
  std::ostringstream out, err;
  const fs::path out_dir = tmp.path / "bundle";
  auto cfg = [&](const std::string& text) {
    return write_config(tmp.path, "c.json", with(text, "out_dir", "\"" + out_dir.string() + "\""));
  };

  SUBCASE("success writes exactly the bundle") {
    const auto path = cfg(kResolvent);
    const auto before = std::distance(fs::directory_iterator(tmp.path), fs::directory_iterator());
    CHECK(run(path, out, err) == kExitOk);
    CHECK(fs::exists(out_dir / "manifest.json"));
    CHECK(fs::exists(out_dir / "summary.txt"));
    CHECK(fs::exists(out_dir / "family.csv"));
    CHECK(std::distance(fs::directory_iterator(tmp.path), fs::directory_iterator()) == before + 1);
    const auto manifest = nlohmann::json::parse(read_file(out_dir / "manifest.json"));
    CHECK(manifest["experiment"] == "resolvent");
    CHECK(manifest["seed"].is_null());

    // a second run replaces the earlier bundle
    fs::remove(out_dir / "family.csv");
    CHECK(run(path, out, err) == kExitOk);
    CHECK(fs::exists(out_dir / "family.csv"));
    CHECK(std::distance(fs::directory_iterator(tmp.path), fs::directory_iterator()) == before + 1);
  }

  SUBCASE("invalid config: exit 2, nothing written") {
    CHECK(run(cfg(with(kResolvent, "grid", "")), out, err) == kExitConfig);
    CHECK(!fs::exists(out_dir));
    CHECK(run(tmp.path / "missing.json", out, err) == kExitConfig);
  }

  SUBCASE("invariant failure: exit 1, bundle written") {
    CHECK(run(cfg(with(kResolvent, "residual_tol", "1e-300")), out, err) == kExitInvariant);
    CHECK(read_file(out_dir / "summary.txt").find("exit_code: 1") != std::string::npos);
  }

  SUBCASE("numerical failure: exit 3") {
    const std::string blowup = R"({
      "experiment": "resolvent",
      "operator": {"kind": "dense", "matrix": [[300, 1], [0, 300]]},
      "kernel": {"kind": "constant_one"},
      "grid": {"t_end": 3, "steps": 3000},
      "out_dir": "x"
    })";
    CHECK(run(cfg(blowup), out, err) == kExitNumerical);
    CHECK(!fs::exists(out_dir));
  }

  SUBCASE("foreign directories are left alone") {
    fs::create_directories(out_dir);
    std::ofstream(out_dir / "notes.txt") << "keep";
    CHECK(run(cfg(kResolvent), out, err) == kExitConfig);
    CHECK(read_file(out_dir / "notes.txt") == "keep");
    CHECK(!fs::exists(out_dir / "manifest.json"));
  }
}
