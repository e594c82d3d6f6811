#include "fracvolt/experiment.hpp"

#include "fracvolt/csv.hpp"

#include <json.hpp>

#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <system_error>

#include <unistd.h>

namespace fracvolt {

namespace fs = std::filesystem;

void Bundle::add(const std::string& name, std::string content) {
  if (name.empty() || name.find('/') != std::string::npos || name.front() == '.')
    throw DomainError("Bundle: invalid file name '" + name + "'");
  files_[name] = std::move(content);
}

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

// FNV-1a with a terminator byte, so concatenations stay distinct.
void fnv_mix(std::uint64_t& h, std::string_view s) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  h ^= 0xff;
  h *= 0x100000001b3ULL;
}

}  // namespace

std::uint64_t Bundle::hash(const std::string& filter) const {
  std::uint64_t h = kFnvOffset;
  for (const auto& [name, content] : files_) {
    if (!filter.empty() && !name.ends_with(filter)) continue;
    fnv_mix(h, name);
    fnv_mix(h, content);
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

void Bundle::commit(const fs::path& out_dir) const {
  const fs::path target = fs::absolute(out_dir).lexically_normal();
  const fs::path leaf = target.filename().empty() ? target.parent_path() : target;
  const fs::path parent = leaf.parent_path();
  const std::string name = leaf.filename().string();

  if (fs::exists(leaf)) {
    if (!fs::is_directory(leaf)) throw DomainError("out_dir exists and is not a directory: " + leaf.string());
    if (!fs::is_empty(leaf) && !fs::exists(leaf / "manifest.json"))
      throw DomainError("out_dir exists and does not hold a report bundle: " + leaf.string());
  }
  fs::create_directories(parent);

  static std::atomic<unsigned> counter{0};
  const std::string tag = std::to_string(::getpid()) + "-" + std::to_string(counter++);
  const fs::path staging = parent / ("." + name + ".staging-" + tag);
  const fs::path retired = parent / ("." + name + ".retired-" + tag);
  try {
    fs::create_directory(staging);
    for (const auto& [file, content] : files_) {
      std::ofstream os(staging / file, std::ios::binary);
      os.write(content.data(), static_cast<std::streamsize>(content.size()));
      os.close();
      if (!os) throw NumericalError("Bundle: failed to write " + (staging / file).string());
    }
    if (fs::exists(leaf)) fs::rename(leaf, retired);
    fs::rename(staging, leaf);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(staging, ec);
    if (fs::exists(retired, ec) && !fs::exists(leaf, ec)) fs::rename(retired, leaf, ec);
    throw;
  }
  std::error_code ec;
  fs::remove_all(retired, ec);
}

bool RunResult::all_pass() const {
  for (const auto& inv : invariants)
    if (!inv.pass) return false;
  return true;
}

namespace {

std::string num(double v) { return csv::format_double(v); }

template <typename F>
std::string csv_text(F&& write) {
  std::ostringstream os;
  write(os);
  return os.str();
}

double kernel_alpha(const kernels::KernelSpec& k) {
  if (const auto* f = std::get_if<kernels::Fractional>(&k.kind)) return f->alpha;
  if (std::holds_alternative<kernels::ConstantOne>(k.kind)) return 1.0;
  return std::numeric_limits<double>::quiet_NaN();
}

int node_of(const TimeGrid& grid, double t) {
  const int k = static_cast<int>(std::lround(t / grid.dt()));
  return std::clamp(k, 1, grid.steps);
}

struct Context {
  const ExperimentConfig& config;
  RunResult& result;

  void check(std::string name, bool pass, std::string detail) {
    result.invariants.push_back({std::move(name), pass, std::move(detail)});
  }
  void metric(std::string name, std::string value) { result.metrics.emplace_back(std::move(name), std::move(value)); }
  void table(const std::string& name, std::string content) { result.bundle.add(name, std::move(content)); }
};

// ---- experiments --------------------------------------------------------------

void run_resolvent(Context& ctx) {
  const auto& c = ctx.config;
  const auto a = build_operator(*c.op, c.max_dim);
  const TimeGrid grid = *c.grid;

  ResolventFamily fam;
  if (!c.method) {
    fam = resolvent_for_kernel(a, *c.kernel, grid);
  } else if (*c.method == Method::ml_spectral) {
    fam = resolvent_ml(a, kernel_alpha(*c.kernel), grid);
  } else if (*c.method == Method::subordination) {
    fam = resolvent_subordination(a, kernel_alpha(*c.kernel), grid);
  } else {
    fam = resolvent_volterra_step(a, *c.kernel, grid);
  }
  for (const auto& m : fam.mats)
    if (!m.allFinite()) throw NumericalError("resolvent: non-finite family values");

  const Index dim = fam.dim();
  const double s0 = (fam.at(0) - MatrixXd::Identity(dim, dim)).cwiseAbs().maxCoeff();
  const double comm = commutation_defect(fam, a);
  const double residual = resolvent_equation_residual(fam, a, *c.kernel);
  const FittedType type = growth_bound_fit(fam);

  std::vector<double> norms(static_cast<std::size_t>(grid.nodes()));
  double worst_bound = 0.0;
  for (int k = 0; k < grid.nodes(); ++k) {
    norms[static_cast<std::size_t>(k)] = family_norm(fam, k);
    const double bound = type.M * std::exp(type.omega * grid.t(k));
    worst_bound = std::max(worst_bound, norms[static_cast<std::size_t>(k)] / bound);
  }

  ctx.result.headline = "resolvent family by " + to_string(fam.method) + ", dim " + std::to_string(dim) + ", " +
                        std::to_string(grid.nodes()) + " nodes";
  ctx.check("s0_identity", s0 <= 1e-12, "max|S(0) - I| = " + num(s0));
  ctx.check("commutation", comm <= 1e-8, "max ||S A - A S|| / (||A|| ||S||) = " + num(comm));
  ctx.check("growth_bound", worst_bound <= 1.0 + 1e-9,
            "max ||S(t)|| / (M e^{omega t}) = " + num(worst_bound));
  if (c.residual_tol)
    ctx.check("equation_residual", residual <= *c.residual_tol,
              "residual " + num(residual) + " vs tol " + num(*c.residual_tol));
  ctx.metric("method", to_string(fam.method));
  ctx.metric("equation_residual", num(residual));
  ctx.metric("type_M", num(type.M));
  ctx.metric("type_omega", num(type.omega));

  ctx.table("norms.csv", csv_text([&](std::ostream& os) {
              csv::Writer w(os, {"k", "t", "norm", "bound"});
              for (int k = 0; k < grid.nodes(); ++k)
                w.row({std::int64_t{k}, grid.t(k), norms[static_cast<std::size_t>(k)],
                       type.M * std::exp(type.omega * grid.t(k))});
            }));
  const double rows = static_cast<double>(dim) * static_cast<double>(dim) * grid.nodes();
  if (rows <= 2e6) {
    ctx.table("family.csv", csv_text([&](std::ostream& os) { write_family_csv(os, fam); }));
  } else {
    ctx.metric("family_csv", "skipped, " + num(rows) + " rows");
  }
}

void run_cp_check(Context& ctx) {
  const auto& c = ctx.config;
  const TimeGrid grid = *c.grid;
  const auto report = kernels::check_completely_positive(*c.kernel, c.mu_grid, grid, c.tol);
  const auto monotone = kernels::check_completely_monotone(*c.kernel, grid, 4, c.tol);

  ctx.table("cp.csv", csv_text([&](std::ostream& os) {
              csv::Writer w(os, {"mu", "min_s", "t_min_s", "min_r", "t_min_r"});
              for (double mu : c.mu_grid) {
                const auto sol = kernels::solve_cp_equations(*c.kernel, mu, grid, kernels::CPRule::ProductRectangle);
                Index is = 0, ir = 1;
                sol.s.minCoeff(&is);
                sol.r.tail(grid.steps).minCoeff(&ir);
                ++ir;
                w.row({mu, sol.s(is), grid.t(static_cast<int>(is)), sol.r(ir), grid.t(static_cast<int>(ir))});
              }
            }));

  ctx.result.headline = report.verdict();
  ctx.check("classification", true, report.verdict());
  ctx.metric("verdict", report.verdict());
  ctx.metric("min_s", num(report.min_s));
  ctx.metric("min_r", num(report.min_r));
  ctx.metric("monotone_screen", monotone.pass ? "pass" : "fails at order " + std::to_string(monotone.order));
}

void run_converge(Context& ctx) {
  const auto& c = ctx.config;
  const auto a = build_operator(*c.op, c.max_dim);
  const TimeGrid grid = *c.grid;
  const auto n_list = c.n_list.value_or(kDefaultYosidaN);
  const double alpha = kernel_alpha(*c.kernel);

  const auto report = std::isfinite(alpha) && alpha <= 2.0 ? convergence_study(a, alpha, grid, n_list)
                                                           : convergence_study(a, *c.kernel, grid, n_list);
  ctx.table("convergence.csv", csv_text([&](std::ostream& os) { write_convergence_csv(os, report); }));

  bool non_increasing = true;
  for (std::size_t i = 1; i < report.rows.size(); ++i)
    non_increasing = non_increasing && report.rows[i].err <= report.rows[i - 1].err;
  ctx.result.headline = "Yosida convergence, err(" + num(report.rows.back().n) + ")/err(" +
                        num(report.rows.front().n) + ") = " + num(report.reduction());
  ctx.check("err_non_increasing", non_increasing, "err over n_list never grows");
  ctx.metric("method", to_string(report.method));
  ctx.metric("strictly_decreasing", report.strictly_decreasing() ? "yes" : "no");
  ctx.metric("reduction", num(report.reduction()));

  if (c.noise) {
    const auto conv = convolution_convergence(a, *c.kernel, *c.noise, grid, n_list, c.p, *c.paths, *c.seed);
    ctx.table("convolution.csv", csv_text([&](std::ostream& os) { write_convolution_csv(os, conv); }));
    bool no_increase = true;
    for (std::size_t i = 1; i < conv.rows.size(); ++i)
      no_increase = no_increase && conv.rows[i].decrease >= -2.0 * conv.rows[i].decrease_stderr;
    ctx.check("convolution_no_increase", no_increase,
              "no paired increase of E sup|W_S - W_Sn|^p beyond 2 standard errors");
    ctx.metric("convolution_decreasing_beyond_2se", conv.decreasing_beyond(2.0) ? "yes" : "no");
  }
}

void run_simulate(Context& ctx) {
  const auto& c = ctx.config;
  const auto a = build_operator(*c.op, c.max_dim);
  const TimeGrid grid = *c.grid;
  const NoiseSpec& noise = *c.noise;
  const auto fam = resolvent_for_kernel(a, *c.kernel, grid);
  const auto hyp = check_hypotheses(noise, a, grid);

  std::vector<int> idx;
  for (double t : c.times.value_or(std::vector<double>{grid.t_end / 2.0, grid.t_end})) idx.push_back(node_of(grid, t));
  const auto moments = ito_isometry_study(fam, noise, *c.seed, *c.paths, idx);
  ctx.table("moments.csv", csv_text([&](std::ostream& os) { write_moment_csv(os, moments); }));

  double max_z = 0.0;
  for (const auto& r : moments.rows) max_z = std::max(max_z, std::abs(r.z_score()));
  ctx.result.headline = "Monte Carlo second moments, " + std::to_string(*c.paths) + " paths, max |z| = " + num(max_z);
  ctx.check("hypotheses_finite", hyp.finite(),
            "|Psi|_HS^2 = " + num(hyp.psi_hs_sq) + ", |A Psi|_HS^2 = " + num(hyp.a_psi_hs_sq));
  ctx.check("isometry_within_3se", moments.within(3.0), "max |z| = " + num(max_z));

  if (fam.dim() <= 50) {
    const auto cov = covariance_study(fam, noise, *c.seed, *c.paths, grid.steps);
    ctx.table("covariance.csv", csv_text([&](std::ostream& os) {
                csv::Writer w(os, {"i", "j", "sample", "analytic", "stderr"});
                for (Index i = 0; i < cov.sample.rows(); ++i)
                  for (Index j = 0; j < cov.sample.cols(); ++j)
                    w.row({std::int64_t{i}, std::int64_t{j}, cov.sample(i, j), cov.analytic(i, j), cov.stderr(i, j)});
              }));
    ctx.check("covariance_within_5se", cov.max_abs_z <= 5.0, "max |z| = " + num(cov.max_abs_z));
  }

  const int shown = std::min(*c.paths, 4);
  if (static_cast<double>(fam.dim()) * grid.nodes() * shown <= 1e6) {
    ctx.table("paths.csv", csv_text([&](std::ostream& os) {
                csv::Writer w(os, {"path", "k", "t", "i", "value"});
                for (int p = 0; p < shown; ++p) {
                  const auto x = stochastic_convolution(fam, noise, sample_wiener_path(noise, grid, *c.seed, p));
                  for (int k = 0; k < grid.nodes(); ++k)
                    for (Index i = 0; i < x.values.rows(); ++i)
                      w.row({std::int64_t{p}, std::int64_t{k}, grid.t(k), std::int64_t{i}, x.values(i, k)});
                }
              }));
  }
}

void run_verify_strong(Context& ctx) {
  const auto& c = ctx.config;
  const auto a = build_operator(*c.op, c.max_dim);
  const auto hyp = check_hypotheses(*c.noise, a, *c.grid);
  const auto study = strong_refinement_study(a, *c.kernel, *c.noise, *c.grid, c.levels, *c.paths, *c.seed);

  ctx.table("strong.csv", csv_text([&](std::ostream& os) {
              csv::Writer w(os, {"level", "steps", "dt", "mean_sup", "stderr", "order"});
              for (std::size_t l = 0; l < study.levels.size(); ++l) {
                const auto& r = study.levels[l];
                w.row({static_cast<std::int64_t>(l), std::int64_t{r.grid.steps}, r.grid.dt(), r.mean_sup,
                       r.stderr_sup(), r.refinement_order.value_or(std::numeric_limits<double>::quiet_NaN())});
              }
            }));
  ctx.table("residuals.csv", csv_text([&](std::ostream& os) { write_residual_csv(os, study.levels.back()); }));

  ctx.result.headline = "strong residual, final/first = " + num(study.final_over_first());
  ctx.check("hypotheses_finite", hyp.finite(),
            "|Psi|_HS^2 = " + num(hyp.psi_hs_sq) + ", |A Psi|_HS^2 = " + num(hyp.a_psi_hs_sq));
  ctx.check("residual_strictly_decreasing", study.strictly_decreasing(), "mean sup residual over levels");
  if (c.levels >= 3)
    ctx.check("residual_final_le_half_first", study.final_over_first() <= 0.5,
              "final/first = " + num(study.final_over_first()));
}

std::string summary_text(const ExperimentConfig& c, const RunResult& r) {
  std::ostringstream os;
  os << "fracvolt " << FRACVOLT_VERSION << "\n";
  os << "experiment: " << to_string(c.experiment) << "\n";
  if (!c.description.empty()) os << "description: " << c.description << "\n";
  os << "seed: " << (c.seed ? std::to_string(*c.seed) : std::string("none")) << "\n";
  os << "result: " << r.headline << "\n\ninvariants:\n";
  for (const auto& inv : r.invariants)
    os << "  " << (inv.pass ? "PASS" : "FAIL") << "  " << inv.name << "  " << inv.detail << "\n";
  if (!r.metrics.empty()) {
    os << "\nmetrics:\n";
    for (const auto& [k, v] : r.metrics) os << "  " << k << ": " << v << "\n";
  }
  os << "\nfiles:";
  for (const auto& [name, content] : r.bundle.files()) os << " " << name;
  os << "\nexit_code: " << r.exit_code() << "\n";
  return os.str();
}

std::string manifest_text(const ExperimentConfig& c, const RunResult& r) {
  nlohmann::ordered_json j;
  j["tool"] = "fracvolt";
  j["version"] = FRACVOLT_VERSION;
  j["experiment"] = to_string(c.experiment);
  if (c.seed) j["seed"] = *c.seed;
  else j["seed"] = nullptr;
  j["config"] = nlohmann::ordered_json::parse(serialize_config(c));
  nlohmann::ordered_json files = nlohmann::ordered_json::object();
  for (const auto& [name, content] : r.bundle.files()) {
    std::uint64_t h = kFnvOffset;
    fnv_mix(h, content);
    files[name] = hex64(h);
  }
  j["files"] = files;
  j["exit_code"] = r.exit_code();
  return j.dump(2) + "\n";
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& config) {
  validate(config);
  RunResult result;
  result.experiment = config.experiment;
  Context ctx{config, result};
  switch (config.experiment) {
    case Experiment::resolvent: run_resolvent(ctx); break;
    case Experiment::cp_check: run_cp_check(ctx); break;
    case Experiment::converge: run_converge(ctx); break;
    case Experiment::simulate: run_simulate(ctx); break;
    case Experiment::verify_strong: run_verify_strong(ctx); break;
  }
  const std::string manifest = manifest_text(config, result);
  result.bundle.add("summary.txt", summary_text(config, result));
  result.bundle.add("manifest.json", manifest);
  return result;
}

int run(const fs::path& config_path, std::ostream& out, std::ostream& err) {
  ExperimentConfig config;
  try {
    config = load_config(config_path);
  } catch (const DomainError& e) {
    err << e.what() << "\n";
    return kExitConfig;
  }
  try {
    const RunResult result = run_experiment(config);
    result.bundle.commit(config.out_dir);
    out << result.bundle.at("summary.txt");
    out << "bundle: " << config.out_dir.string() << "\n";
    return result.exit_code();
  } catch (const DomainError& e) {
    err << "invalid configuration: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << "\n";
    return kExitNumerical;
  }
}

}  // namespace fracvolt
