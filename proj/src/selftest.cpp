#include "fracvolt/selftest.hpp"

#include "fracvolt/csv.hpp"
#include "fracvolt/parallel.hpp"
#include "fracvolt/quadrature.hpp"
#include "fracvolt/specfun.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace fracvolt {

namespace {

using kernels::KernelSpec;

std::string fixed(double v, int digits = 3) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

OperatorD scalar_op(double lambda) { return operators::make_operator(MatrixXd(MatrixXd::Constant(1, 1, lambda))); }

OperatorD laplacian(int n) { return operators::build_operator(operators::OperatorSpec{operators::Laplacian1d{n}}); }

VectorXd power_decay(Index n, double p) {
  VectorXd q(n);
  for (Index j = 0; j < n; ++j) q(j) = std::pow(static_cast<double>(j + 1), -p);
  return q;
}

double integrate_half_line(const std::function<double(double)>& f) {
  quadrature::AdaptiveOptions opts;
  opts.rel_tol = 1e-13;
  opts.abs_tol = 1e-15;
  // s = u / (1 - u)
  auto g = [&](double u) {
    if (u >= 1.0) return 0.0;
    const double s = u / (1.0 - u);
    return f(s) / ((1.0 - u) * (1.0 - u));
  };
  return quadrature::adaptive(g, 0.0, 1.0, opts).value;
}

double max_gap(const ResolventFamily& a, const ResolventFamily& b) {
  double g = 0.0;
  for (int k = 0; k < a.grid.nodes(); ++k) g = std::max(g, (a.at(k) - b.at(k)).cwiseAbs().maxCoeff());
  return g;
}

template <typename F>
std::string csv_text(std::vector<std::string> header, F&& rows) {
  std::ostringstream os;
  csv::Writer w(os, std::move(header));
  rows(w);
  return os.str();
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Suite {
  const SelftestOptions& opts;
  Bundle& bundle;

  int paths_small() const { return std::max(50, opts.paths / 10); }

  Outcome c1() {
    bool pass = true;
    double worst = 0.0;
    bundle.add("c1_wright.csv", csv_text({"gamma", "z", "quantity", "value", "reference", "abs_err"}, [&](auto& w) {
                 for (double g : {0.3, 0.5, 0.8}) {
                   const double mass = integrate_half_line([g](double s) { return specfun::wright_phi(g, s); });
                   worst = std::max(worst, std::abs(mass - 1.0));
                   w.row({g, std::string("-"), std::string("mass"), mass, 1.0, std::abs(mass - 1.0)});
                   for (double z : {0.5, 1.0, 5.0}) {
                     const double lt = integrate_half_line(
                         [g, z](double s) { return specfun::wright_phi(g, s) * std::exp(-z * s); });
                     const double ref = specfun::mittag_leffler(g, -z);
                     worst = std::max(worst, std::abs(lt - ref));
                     w.row({g, z, std::string("laplace"), lt, ref, std::abs(lt - ref)});
                   }
                 }
               }));
    pass = worst <= 1e-6;
    return {pass, "max abs err " + fixed(worst)};
  }

  Outcome c2() {
    struct Anchor {
      const char* name;
      double value, reference;
    };
    const Anchor anchors[] = {
        {"E_0.5(-1)", specfun::mittag_leffler(0.5, -1.0), std::numbers::e * std::erfc(1.0)},
        {"E_2(-1)", specfun::mittag_leffler(2.0, -1.0), std::cos(1.0)},
        {"Phi_0.5(1)", specfun::wright_phi(0.5, 1.0), std::exp(-0.25) / std::sqrt(std::numbers::pi)},
    };
    double worst = 0.0;
    bundle.add("c2_anchors.csv", csv_text({"anchor", "value", "reference", "rel_err"}, [&](auto& w) {
                 for (const auto& a : anchors) {
                   const double rel = std::abs(a.value - a.reference) / std::abs(a.reference);
                   worst = std::max(worst, rel);
                   w.row({std::string(a.name), a.value, a.reference, rel});
                 }
               }));
    return {worst <= 1e-9, "max rel err " + fixed(worst)};
  }

  Outcome c3() {
    const auto a = scalar_op(-1.0);
    const TimeGrid g1(2.0, 2000), g2(2.0, 4000);
    bool pass = true;
    std::string detail;
    bundle.add("c3_cross_method.csv",
               csv_text({"alpha", "ml_vs_subordination", "volterra_vs_ml_dt_1e-3", "volterra_vs_ml_dt_5e-4",
                         "halving_factor"},
                        [&](auto& w) {
                          for (double alpha : {0.3, 0.5, 0.9}) {
                            const auto kernel = KernelSpec::fractional(alpha);
                            const auto ml1 = resolvent_ml(a, alpha, g1);
                            const auto ml2 = resolvent_ml(a, alpha, g2);
                            const double sub = max_gap(ml1, resolvent_subordination(a, alpha, g1));
                            const double v1 = max_gap(ml1, resolvent_volterra_step(a, kernel, g1));
                            const double v2 = max_gap(ml2, resolvent_volterra_step(a, kernel, g2));
                            const double factor = v2 > 0.0 ? v1 / v2 : INFINITY;
                            pass = pass && sub <= 1e-6 && v1 <= 1e-3 && factor >= 1.5;
                            w.row({alpha, sub, v1, v2, factor});
                            detail += "a=" + fixed(alpha, 2) + ": " + fixed(sub, 2) + "/" + fixed(v1, 2) + "/x" +
                                      fixed(factor, 3) + " ";
                          }
                        }));
    return {pass, detail + "(ml-sub / vs-ml / halving)"};
  }

  Outcome c4() {
    const auto lap = laplacian(20);
    const TimeGrid grid(1.0, 100);
    const auto fam = resolvent_ml(lap, 1.0, grid);
    // Pade scaling and squaring on the dense matrix, independent of the eigenbasis.
    double semigroup_err = 0.0;
    for (int k = 0; k < grid.nodes(); ++k) {
      const MatrixXd reference = (grid.t(k) * lap.matrix).exp();
      semigroup_err = std::max(semigroup_err, (fam.at(k) - reference).cwiseAbs().maxCoeff());
    }
    const TimeGrid to_pi(std::numbers::pi, 100);
    const double cosine = resolvent_ml(scalar_op(-1.0), 2.0, to_pi).at(100)(0, 0);
    bundle.add("c4_endpoints.csv", csv_text({"case", "value", "reference", "abs_err"}, [&](auto& w) {
                 w.row({std::string("alpha=1 laplacian_1d(20) vs Pade exp(tA), max over t in [0,1]"), semigroup_err, 0.0,
                        semigroup_err});
                 w.row({std::string("alpha=2 A=-1 S(pi)"), cosine, -1.0, std::abs(cosine + 1.0)});
               }));
    const bool pass = semigroup_err <= 1e-8 && std::abs(cosine + 1.0) <= 1e-8;
    return {pass, "semigroup " + fixed(semigroup_err) + ", |S(pi)+1| " + fixed(std::abs(cosine + 1.0))};
  }

  Outcome c5() {
    const TimeGrid grid(2.0, 2000);
    bool pass = true;
    std::string detail;
    bundle.add("c5_cp.csv", csv_text({"alpha", "expected", "verdict", "min_s", "min_r"}, [&](auto& w) {
                 for (double alpha : {0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75}) {
                   const auto r = kernels::check_completely_positive(KernelSpec::fractional(alpha),
                                                                     kernels::kDefaultMuGrid, grid, 1e-8);
                   const bool expected = alpha <= 1.0;
                   pass = pass && r.completely_positive() == expected;
                   w.row({alpha, std::string(expected ? "positive" : "violated"), r.verdict(), r.min_s, r.min_r});
                   detail += r.completely_positive() ? "+" : "-";
                 }
               }));
    return {pass, "verdicts " + detail + " (alpha 0.25..1.75)"};
  }

  Outcome c6() {
    const auto lap = laplacian(20);
    const TimeGrid grid(1.0, 1000);
    const std::vector<double> n_list = {2.0, 8.0, 32.0, 128.0};
    bool pass = true;
    std::string detail;
    bundle.add("c6_yosida.csv", csv_text({"alpha", "n", "err", "sup_norm"}, [&](auto& w) {
                 for (double alpha : {0.5, 1.0}) {
                   const auto r = convergence_study(lap, alpha, grid, n_list);
                   for (const auto& row : r.rows) w.row({alpha, row.n, row.err, row.sup_norm});
                   pass = pass && r.strictly_decreasing() && r.reduction() <= 0.05;
                   detail += "a=" + fixed(alpha, 2) + ": " + (r.strictly_decreasing() ? "decr" : "not decr") +
                             ", err(128)/err(2)=" + fixed(r.reduction()) + " ";
                 }
               }));
    return {pass, detail + "(need <= 0.05)"};
  }

  Outcome c7() {
    const int n = opts.paths;
    const auto lap = laplacian(10);
    const TimeGrid grid(1.0, 1000);
    const auto noise = NoiseSpec::identity(power_decay(10, 2.0));
    const auto fam = resolvent_ml(lap, 0.5, grid);
    const auto moments = ito_isometry_study(fam, noise, opts.seed, n, {500, 1000});
    const auto cov = covariance_study(fam, noise, opts.seed, n, 1000);

    const auto scalar_fam = resolvent_ml(scalar_op(-1.0), 1.0, grid);
    const auto scalar_noise = NoiseSpec::identity(VectorXd::Ones(1));
    const auto scalar = ito_isometry_study(scalar_fam, scalar_noise, opts.seed, n, {1000});
    MomentRow closed = scalar.rows.front();
    closed.analytic_value = (1.0 - std::exp(-2.0)) / 2.0;

    double max_z = 0.0;
    bundle.add("c7_moments.csv",
               csv_text({"case", "t", "mean", "var", "reference", "stderr", "z"}, [&](auto& w) {
                 auto put = [&](const std::string& name, const MomentRow& r) {
                   max_z = std::max(max_z, std::abs(r.z_score()));
                   w.row({name, r.t, r.mean, r.var, r.analytic_value, r.stderr, r.z_score()});
                 };
                 for (const auto& r : moments.rows) put("laplacian_1d(10) alpha=0.5 vs isometry", r);
                 put("scalar A=-1 alpha=1 vs (1-e^-2)/2", closed);
               }));
    bundle.add("c7_covariance.csv", csv_text({"i", "j", "sample", "analytic", "stderr"}, [&](auto& w) {
                 for (Index i = 0; i < cov.sample.rows(); ++i)
                   for (Index j = 0; j < cov.sample.cols(); ++j)
                     w.row({std::int64_t{i}, std::int64_t{j}, cov.sample(i, j), cov.analytic(i, j), cov.stderr(i, j)});
               }));
    const bool pass = max_z <= 3.0 && cov.max_abs_z <= 4.0;
    return {pass, std::to_string(n) + " paths, max |z| moments " + fixed(max_z) + ", covariance " +
                      fixed(cov.max_abs_z)};
  }

  Outcome c8() {
    const int n = paths_small();
    const TimeGrid coarse(1.0, 250);
    bool pass = true;
    std::string detail;
    bundle.add("c8_strong.csv",
               csv_text({"case", "alpha", "level", "dt", "mean_sup", "stderr"}, [&](auto& w) {
                 struct Case {
                   std::string name;
                   OperatorD a;
                   NoiseSpec noise;
                 };
                 const Case cases[] = {{"scalar A=-1", scalar_op(-1.0), NoiseSpec::identity(VectorXd::Ones(1))},
                                       {"laplacian_1d(10)", laplacian(10), NoiseSpec::identity(power_decay(10, 2.0))}};
                 std::uint64_t stream = 0;
                 for (const auto& c : cases)
                   for (double alpha : {0.5, 1.0}) {
                     const auto study = strong_refinement_study(c.a, KernelSpec::fractional(alpha), c.noise, coarse, 3,
                                                                n, opts.seed + 1 + stream++);
                     for (std::size_t l = 0; l < study.levels.size(); ++l) {
                       const auto& r = study.levels[l];
                       w.row({c.name, alpha, static_cast<std::int64_t>(l), r.grid.dt(), r.mean_sup, r.stderr_sup()});
                     }
                     pass = pass && study.strictly_decreasing() && study.final_over_first() <= 0.5;
                     detail += fixed(study.final_over_first()) + (study.strictly_decreasing() ? " " : "(not decr) ");
                   }
               }));
    return {pass, std::to_string(n) + " paths, final/first " + detail};
  }

  Outcome c9() {
    const int n = paths_small();
    const TimeGrid grid(1.0, 500);
    const std::vector<double> n_list = {2.0, 8.0, 32.0, 128.0};
    bool pass = true;
    std::string detail;
    bundle.add("c9_convolution.csv",
               csv_text({"case", "n", "moment", "stderr", "decrease", "decrease_stderr"}, [&](auto& w) {
                 auto run = [&](const std::string& name, const OperatorD& a, double alpha, const NoiseSpec& noise,
                                std::uint64_t seed) {
                   const auto r =
                       convolution_convergence(a, KernelSpec::fractional(alpha), noise, grid, n_list, 2.0, n, seed);
                   double weakest = INFINITY;
                   for (std::size_t i = 0; i < r.rows.size(); ++i) {
                     const auto& row = r.rows[i];
                     w.row({name, row.n, row.moment, row.stderr, row.decrease, row.decrease_stderr});
                     if (i > 0) weakest = std::min(weakest, row.decrease / row.decrease_stderr);
                   }
                   pass = pass && r.decreasing_beyond(2.0);
                   detail += name + " min decrease/se " + fixed(weakest) + "; ";
                 };
                 run("scalar A=-1 alpha=1", scalar_op(-1.0), 1.0, NoiseSpec::identity(VectorXd::Ones(1)),
                     opts.seed + 11);
                 run("laplacian_1d(10) alpha=0.5", laplacian(10), 0.5, NoiseSpec::identity(power_decay(10, 2.0)),
                     opts.seed + 12);
               }));
    return {pass, std::to_string(n) + " paths, " + detail};
  }
};

struct Spec {
  int id;
  const char* title;
  Outcome (Suite::*run)();
  double time_limit;  // seconds, 0 for none
};

constexpr Spec kCriteria[] = {
    {1, "special-function identities", &Suite::c1, 10.0},
    {2, "closed-form anchors", &Suite::c2, 0.0},
    {3, "cross-method resolvent agreement", &Suite::c3, 60.0},
    {4, "semigroup and cosine endpoints", &Suite::c4, 0.0},
    {5, "complete-positivity dichotomy", &Suite::c5, 30.0},
    {6, "Yosida convergence", &Suite::c6, 120.0},
    {7, "Ito isometry and covariance", &Suite::c7, 0.0},
    {8, "strong-solution residual", &Suite::c8, 0.0},
    {9, "stochastic convolution trend", &Suite::c9, 0.0},
};

std::vector<CriterionResult> run_criteria(const SelftestOptions& opts, Bundle& bundle, bool report_progress) {
  Suite suite{opts, bundle};
  std::vector<CriterionResult> out;
  for (const auto& spec : kCriteria) {
    const auto start = std::chrono::steady_clock::now();
    CriterionResult r{spec.id, spec.title, false, "", 0.0};
    try {
      const Outcome o = (suite.*spec.run)();
      r.pass = o.pass;
      r.detail = o.detail;
    } catch (const std::exception& e) {
      r.detail = std::string("error: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (spec.time_limit > 0.0 && r.seconds >= spec.time_limit) {
      r.pass = false;
      r.detail += " (over " + fixed(spec.time_limit) + " s)";
    }
    if (report_progress && opts.progress) opts.progress(r);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

bool SelftestReport::all_pass() const {
  for (const auto& c : criteria)
    if (!c.pass) return false;
  return !criteria.empty();
}

std::string SelftestReport::table() const {
  std::ostringstream os;
  os << std::left << std::setw(4) << "#" << std::setw(36) << "criterion" << std::setw(6) << "pass" << std::right
     << std::setw(9) << "seconds" << "  detail\n";
  for (const auto& c : criteria) {
    os << std::left << std::setw(4) << c.id << std::setw(36) << c.title << std::setw(6) << (c.pass ? "PASS" : "FAIL")
       << std::right << std::setw(9) << std::fixed << std::setprecision(2) << c.seconds << "  " << c.detail << "\n";
    os.unsetf(std::ios::fixed);
  }
  return os.str();
}

SelftestReport run_selftest(const SelftestOptions& opts) {
  if (opts.paths < 2) throw DomainError("selftest: paths must be at least 2");
  SelftestReport report;
  report.criteria = run_criteria(opts, report.bundle, true);

  if (opts.check_determinism) {
    const auto start = std::chrono::steady_clock::now();
    const int base = thread_count();
    const int other = base == 1 ? 4 : 1;
    Bundle again;
    {
      ScopedThreadCount scope(other);
      run_criteria(opts, again, false);
    }
    const std::uint64_t h1 = report.bundle.hash(".csv"), h2 = again.hash(".csv");
    CriterionResult r{10, "determinism across thread counts", h1 == h2, "", 0.0};
    r.detail = "csv hash " + hex64(h1) + " at " + std::to_string(base) + " threads, " + hex64(h2) + " at " +
               std::to_string(other);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (opts.progress) opts.progress(r);
    report.criteria.push_back(std::move(r));
  }

  std::ostringstream summary;
  summary << "fracvolt " << FRACVOLT_VERSION << " selftest\nseed: " << opts.seed << "\npaths: " << opts.paths
          << "\n\n";
  for (const auto& c : report.criteria)
    summary << (c.pass ? "PASS" : "FAIL") << "  " << c.id << "  " << c.title << "\n";
  summary << "\nresult: " << (report.all_pass() ? "all criteria pass" : "some criteria fail") << "\n";

  nlohmann::ordered_json m;
  m["tool"] = "fracvolt";
  m["version"] = FRACVOLT_VERSION;
  m["command"] = "selftest";
  m["seed"] = opts.seed;
  m["paths"] = opts.paths;
  m["csv_hash"] = hex64(report.bundle.hash(".csv"));
  report.bundle.add("summary.txt", summary.str());
  report.bundle.add("manifest.json", m.dump(2) + "\n");
  return report;
}

int selftest(const SelftestOptions& opts, const std::optional<std::filesystem::path>& out_dir, std::ostream& out,
             std::ostream& err) {
  SelftestReport report;
  try {
    report = run_selftest(opts);
  } catch (const DomainError& e) {
    err << e.what() << "\n";
    return kExitConfig;
  }
  out << "\n" << report.table();
  out << "bundle hash (csv): " << hex64(report.bundle.hash(".csv")) << "\n";
  if (out_dir) {
    try {
      report.bundle.commit(*out_dir);
      out << "bundle: " << out_dir->string() << "\n";
    } catch (const std::exception& e) {
      err << "cannot write bundle: " << e.what() << "\n";
      return kExitNumerical;
    }
  }
  return report.all_pass() ? kExitOk : kExitInvariant;
}

}  // namespace fracvolt
