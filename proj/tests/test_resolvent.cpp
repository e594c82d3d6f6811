#include <doctest.h>

#include "fracvolt/resolvent.hpp"
#include "fracvolt/specfun.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

using namespace fracvolt;
using kernels::KernelSpec;

namespace {

OperatorD scalar(double v) { return operators::make_operator<double>(MatrixXd::Constant(1, 1, v)); }
OperatorD laplacian(int n) { return operators::build_operator(operators::OperatorSpec{operators::Laplacian1d{n}}); }

// Small non-symmetric operator without spectral data.
OperatorD skewed() {
  MatrixXd m(3, 3);
  m << -0.3, 0.1, 0.05, 0.0, -0.4, 0.1, 0.02, 0.0, -0.2;
  return operators::make_operator(m);
}

double max_gap(const ResolventFamily& a, const ResolventFamily& b) {
  double g = 0.0;
  for (int k = 0; k < a.grid.nodes(); ++k) g = std::max(g, (a.at(k) - b.at(k)).cwiseAbs().maxCoeff());
  return g;
}

}  // namespace

TEST_CASE("resolvent_ml: closed forms and endpoints") {
  const auto one = resolvent_ml(scalar(-1.0), 1.0, TimeGrid(1.0, 4));
  CHECK(one.at(4)(0, 0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  CHECK(one.at(0) == MatrixXd::Identity(1, 1));
  CHECK(one.method == Method::ml_spectral);

  const double pi = std::numbers::pi;
  const auto cosine = resolvent_ml(scalar(-1.0), 2.0, TimeGrid(pi, 8));
  CHECK(std::abs(cosine.at(8)(0, 0) + 1.0) < 1e-12);

  const double omega = 1.7;
  const auto c2 = resolvent_ml(scalar(-omega * omega), 2.0, TimeGrid(3.0, 30));
  for (int k = 0; k <= 30; ++k) CHECK(std::abs(c2.at(k)(0, 0) - std::cos(omega * c2.grid.t(k))) < 1e-10);

  const auto lap = laplacian(20);
  const TimeGrid grid(1.0, 50);
  const auto fam = resolvent_ml(lap, 1.0, grid);
  for (int k = 0; k <= 50; ++k)
    CHECK((fam.at(k) - operators::semigroup(lap, grid.t(k))).cwiseAbs().maxCoeff() < 1e-12);

  for (double alpha : {0.3, 1.4}) CHECK(resolvent_ml(lap, alpha, grid).at(0) == MatrixXd::Identity(20, 20));
  CHECK_THROWS_AS(resolvent_ml(lap, 0.0, grid), DomainError);
  CHECK_THROWS_AS(resolvent_ml(lap, 2.5, grid), DomainError);
}

TEST_CASE("resolvent_ml: series path without spectral data") {
  const auto a = skewed();
  REQUIRE_FALSE(a.spectral);
  const TimeGrid grid(1.5, 6);
  const auto fam = resolvent_ml(a, 1.0, grid);
  for (int k = 0; k <= 6; ++k)
    CHECK((fam.at(k) - operators::semigroup(a, grid.t(k))).cwiseAbs().maxCoeff() < 1e-14);
  CHECK_FALSE(fam.modal);

  MatrixXd big = 10.0 * a.matrix;
  CHECK_THROWS_AS(resolvent_ml(operators::make_operator(big), 0.5, grid), DomainError);
}

TEST_CASE("resolvent_subordination") {
  const auto half = resolvent_subordination(scalar(-1.0), 0.5, TimeGrid(1.0, 10));
  CHECK(std::abs(half.at(10)(0, 0) - 0.4275835762) < 1e-9);
  CHECK(half.at(0) == MatrixXd::Identity(1, 1));

  const auto zero = resolvent_subordination(operators::make_operator<double>(MatrixXd::Zero(2, 2)), 0.3,
                                            TimeGrid(2.0, 5));
  for (const auto& m : zero.mats) CHECK((m - MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-9);

  const auto lap = laplacian(20);
  const TimeGrid grid(1.0, 100);
  CHECK(max_gap(resolvent_subordination(lap, 0.3, grid), resolvent_ml(lap, 0.3, grid)) <= 1e-6);

  const auto a = skewed();
  const TimeGrid coarse(1.0, 4);
  CHECK(max_gap(resolvent_subordination(a, 0.6, coarse), resolvent_ml(a, 0.6, coarse)) <= 1e-8);

  CHECK_THROWS_AS(resolvent_subordination(lap, 1.0, grid), DomainError);
  SubordinationOptions tight;
  tight.u_budget = 0.5;
  CHECK_THROWS_AS(resolvent_subordination(scalar(-1.0), 0.5, grid, tight), NumericalError);
}

TEST_CASE("resolvent_volterra_step") {
  const TimeGrid grid(1.0, 1000);
  const auto exp_fam = resolvent_volterra_step(scalar(-1.0), KernelSpec::constant_one(), grid);
  CHECK(std::abs(exp_fam.at(1000)(0, 0) - std::exp(-1.0)) <= 1e-5);
  CHECK(exp_fam.at(0) == MatrixXd::Identity(1, 1));

  const auto frac = resolvent_volterra_step(scalar(-1.0), KernelSpec::fractional(0.5), grid);
  CHECK(std::abs(frac.at(1000)(0, 0) - specfun::mittag_leffler(0.5, -1.0)) <= 1e-3);
  CHECK(frac.alpha == 0.5);

  SUBCASE("dense path") {
    const auto a = skewed();
    const TimeGrid g(1.0, 400);
    const auto fam = resolvent_volterra_step(a, KernelSpec::fractional(0.7), g);
    CHECK_FALSE(fam.modal);
    CHECK(max_gap(fam, resolvent_ml(a, 0.7, g)) <= 1e-4);
  }

  SUBCASE("exponential kernel against its closed form") {
    // a(t) = e^{-t}, A = -1: s = (1 + e^{-2t}) / 2.
    const auto fam = resolvent_volterra_step(scalar(-1.0), KernelSpec::exponential(1.0), TimeGrid(2.0, 400));
    double worst = 0.0;
    for (int k = 0; k <= 400; ++k) {
      const double t = fam.grid.t(k);
      const double exact = 0.5 * (1.0 + std::exp(-2.0 * t));
      worst = std::max(worst, std::abs(fam.at(k)(0, 0) - exact));
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("resolvent equation residual") {
  const TimeGrid grid(1.0, 20);
  ResolventFamily ident;
  ident.grid = grid;
  ident.mats.assign(21, MatrixXd::Identity(2, 2));
  const auto zero = operators::make_operator<double>(MatrixXd::Zero(2, 2));
  CHECK(resolvent_equation_residual(ident, zero, KernelSpec::fractional(0.5)) == 0.0);

  const auto lap = laplacian(10);
  const TimeGrid g(1.0, 500);
  for (const auto& kernel : {KernelSpec::fractional(0.4), KernelSpec::exponential(2.0), KernelSpec::constant_one()}) {
    const auto fam = resolvent_volterra_step(lap, kernel, g);
    const double scale = 1.0 + operator_norm(lap.matrix) * g.t_end;
    CHECK(resolvent_equation_residual(fam, lap, kernel) <= 10.0 * 2.2e-16 * scale * g.steps);
  }
  const auto a = skewed();
  const auto dense = resolvent_volterra_step(a, KernelSpec::fractional(0.6), g);
  CHECK(resolvent_equation_residual(dense, a, KernelSpec::fractional(0.6)) < 1e-14);

  double previous = 1.0;
  for (int steps : {1000, 2000, 4000}) {
    const auto fam = resolvent_ml(scalar(-1.0), 0.5, TimeGrid(1.0, steps));
    const double r = resolvent_equation_residual(fam, scalar(-1.0), KernelSpec::fractional(0.5));
    CHECK(r <= 5e-3);
    CHECK(r < previous);
    previous = r;
  }
}

TEST_CASE("cross-method agreement") {
  const TimeGrid grid(2.0, 2000);
  const TimeGrid fine = grid.refined();
  const auto lap = laplacian(6);
  for (double alpha : {0.3, 0.5, 0.9}) {
    CAPTURE(alpha);
    for (const auto& a : {scalar(-1.0), lap}) {
      const auto ml = resolvent_ml(a, alpha, grid);
      CHECK(max_gap(ml, resolvent_subordination(a, alpha, grid)) <= 1e-6);
      CHECK(commutation_defect(ml, a) <= 1e-8);
      const double coarse_gap = max_gap(resolvent_volterra_step(a, KernelSpec::fractional(alpha), grid), ml);
      const double fine_gap =
          max_gap(resolvent_volterra_step(a, KernelSpec::fractional(alpha), fine), resolvent_ml(a, alpha, fine));
      CHECK(fine_gap < coarse_gap);
      if (a.dim() == 1 || alpha > 0.5) {
        CHECK(coarse_gap <= 1e-3);
        CHECK(coarse_gap / fine_gap >= 1.5);
      } else {
        // Stiff modes (|lambda| t^alpha of order one at the first nodes)
        // fall back to the uncorrected rule.
        CHECK(coarse_gap <= 0.1);
      }
    }
  }
}

TEST_CASE("convergence_study") {
  const TimeGrid grid(1.0, 200);
  const auto scalar_report = convergence_study(scalar(-1.0), 1.0, grid, {2, 8, 32, 128});
  CHECK(scalar_report.strictly_decreasing());
  CHECK(scalar_report.reduction() < 0.05);
  // sup_t |e^{-tn/(n+1)} - e^{-t}|, attained at t = 1 for this grid
  const double n = 8.0;
  CHECK(scalar_report.rows[1].err == doctest::Approx(std::exp(-n / (n + 1)) - std::exp(-1.0)).epsilon(1e-10));

  const auto zero = convergence_study(operators::make_operator<double>(MatrixXd::Zero(3, 3)), 0.5, grid, {2, 8});
  for (const auto& r : zero.rows) CHECK(r.err == 0.0);

  const auto lap = laplacian(20);
  const auto lap_report = convergence_study(lap, 0.5, grid, kDefaultYosidaN);
  CHECK(lap_report.strictly_decreasing());
  CHECK(lap_report.rows.size() == 5);

  // The refined grid contains the coarse nodes, so the sup can only grow.
  const auto refined = convergence_study(lap, 0.5, grid.refined(), kDefaultYosidaN);
  for (std::size_t i = 0; i < refined.rows.size(); ++i) CHECK(refined.rows[i].err >= lap_report.rows[i].err);

  // Semigroup case: doubling the nodes moves the sup by less than 10%.
  const auto one = convergence_study(lap, 1.0, grid, kDefaultYosidaN);
  const auto one_refined = convergence_study(lap, 1.0, grid.refined(), kDefaultYosidaN);
  CHECK(one.strictly_decreasing());
  for (std::size_t i = 0; i < one.rows.size(); ++i)
    CHECK(std::abs(one_refined.rows[i].err - one.rows[i].err) < 0.1 * one.rows[i].err);

  const auto dense = convergence_study(skewed(), KernelSpec::fractional(0.8), TimeGrid(1.0, 100), {2, 8, 32});
  CHECK(dense.method == Method::volterra_step);
  CHECK(dense.strictly_decreasing());

  MatrixXd bad = MatrixXd::Ones(20, 1);
  CHECK_THROWS_AS(convergence_study(lap, 0.5, grid, {2}, bad), DomainError);
  CHECK_THROWS_AS(convergence_study(scalar(1.0), 0.5, grid, {0.5}), DomainError);
  CHECK(default_probes(60).cols() == 10);
  CHECK(default_probes(60).colwise().norm().minCoeff() == doctest::Approx(1.0));
}

TEST_CASE("growth_bound_fit") {
  const TimeGrid grid(5.0, 100);
  ResolventFamily ident;
  ident.grid = grid;
  ident.mats.assign(101, MatrixXd::Identity(2, 2));
  const auto fi = growth_bound_fit(ident);
  CHECK(fi.M == 1.0);
  CHECK(fi.omega == 0.0);

  const auto decay = growth_bound_fit(resolvent_ml(scalar(-1.0), 1.0, grid));
  CHECK(decay.M == doctest::Approx(1.0));
  CHECK(decay.omega == doctest::Approx(-1.0).epsilon(1e-12));

  const auto grow = growth_bound_fit(resolvent_ml(scalar(1.0), 0.5, TimeGrid(30.0, 300)));
  CHECK(grow.omega == doctest::Approx(1.0).epsilon(0.05));
  CHECK(grow.M >= 1.0);
}

TEST_CASE("family CSV export") {
  const auto fam = resolvent_ml(laplacian(2), 0.5, TimeGrid(1.0, 3));
  std::ostringstream os;
  write_family_csv(os, fam);
  const std::string s = os.str();
  CHECK(s.rfind("k,t,i,j,value\n", 0) == 0);
  CHECK(std::count(s.begin(), s.end(), '\n') == 1 + 4 * 4);
  CHECK(s.find("\n0,0,0,0,1\n") != std::string::npos);

  std::ostringstream rep;
  write_convergence_csv(rep, convergence_study(laplacian(2), 0.5, TimeGrid(1.0, 3), {2, 8}));
  CHECK(rep.str().rfind("n,err,sup_norm\n2,", 0) == 0);
}
