#include <doctest.h>

#include "fracvolt/kernels.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace fracvolt;
using namespace fracvolt::kernels;

namespace {

// g_a(t) = t^{a-1} / Gamma(a), written with std::tgamma so it is independent of the library.
double g(double a, double t) { return std::pow(t, a - 1.0) / std::tgamma(a); }

VectorXd samples(const TimeGrid& grid, auto&& f) {
  VectorXd v(grid.nodes());
  for (int k = 0; k < grid.nodes(); ++k) v(k) = f(grid.t(k));
  return v;
}

}  // namespace

TEST_CASE("kernel_eval") {
  CHECK(kernel_eval(KernelSpec::fractional(1.0), 0.7) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(kernel_eval(KernelSpec::fractional(0.5), 1.0) ==
        doctest::Approx(1.0 / std::sqrt(std::numbers::pi)).epsilon(1e-14));
  CHECK(kernel_eval(KernelSpec::fractional(2.0), 3.0) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(kernel_eval(KernelSpec::constant_one(), 12.0) == 1.0);
  CHECK(kernel_eval(KernelSpec::exponential(2.0, 3.0), 0.5) == doctest::Approx(3.0 * std::exp(-1.0)));
  const auto tab = KernelSpec::table({0.0, 1.0, 2.0}, {1.0, 3.0, 2.0});
  CHECK(kernel_eval(tab, 0.5) == doctest::Approx(2.0));
  CHECK(kernel_eval(tab, 1.5) == doctest::Approx(2.5));
  CHECK(kernel_eval(tab, 2.0) == doctest::Approx(2.0));

  CHECK_THROWS_AS(kernel_eval(KernelSpec::fractional(0.5), 0.0), DomainError);
  CHECK_THROWS_AS(kernel_eval(KernelSpec::fractional(0.5), -1.0), DomainError);
  CHECK_THROWS_AS(kernel_eval(tab, 2.5), DomainError);
  CHECK_THROWS_AS(KernelSpec::fractional(0.0), DomainError);
  CHECK_THROWS_AS(KernelSpec::table({0.0, 0.0}, {1.0, 1.0}), DomainError);
  CHECK_THROWS_AS(KernelSpec::table({0.0, 1.0}, {1.0, NAN}), DomainError);
  CHECK(KernelSpec::fractional(0.5).singular_at_zero());
  CHECK_FALSE(KernelSpec::fractional(1.0).singular_at_zero());
}

TEST_CASE("convolve against closed forms") {
  const TimeGrid grid(1.0, 200);
  SUBCASE("constant kernel integrates constants exactly") {
    const VectorXd out = convolve(product_weights(KernelSpec::constant_one(), grid), VectorXd::Ones(grid.nodes()));
    for (int k = 0; k < grid.nodes(); ++k) CHECK(out(k) == doctest::Approx(grid.t(k)).epsilon(1e-13));
  }
  SUBCASE("g_a * 1 = g_{a+1}") {
    const auto w = product_weights(KernelSpec::fractional(0.5), grid);
    const VectorXd out = convolve(w, VectorXd::Ones(grid.nodes()));
    CHECK(out(grid.steps) == doctest::Approx(1.0 / std::tgamma(1.5)).epsilon(1e-13));
    CHECK(out(grid.steps) == doctest::Approx(1.1283791671).epsilon(1e-10));
    for (int k = 1; k < grid.nodes(); ++k) CHECK(out(k) == doctest::Approx(g(1.5, grid.t(k))).epsilon(1e-12));
  }
  SUBCASE("linear samples are integrated exactly") {
    const VectorXd f = samples(grid, [](double t) { return 2.0 * t - 0.5; });
    const VectorXd out = convolve(product_weights(KernelSpec::fractional(0.5), grid), f);
    for (int k = 1; k < grid.nodes(); ++k) {
      const double t = grid.t(k);
      CHECK(out(k) == doctest::Approx(2.0 * g(2.5, t) - 0.5 * g(1.5, t)).epsilon(1e-12));
    }
  }
  SUBCASE("g_a * g_b = g_{a+b} at second order for smooth g_b") {
    for (auto [a, b] : {std::pair{0.5, 3.0}, std::pair{0.3, 4.0}, std::pair{1.5, 3.0}}) {
      double prev = 0.0;
      for (int steps : {50, 100, 200}) {
        const TimeGrid gr(1.0, steps);
        const VectorXd f = samples(gr, [b](double t) { return g(b, t); });
        const VectorXd out = convolve(product_weights(KernelSpec::fractional(a), gr), f);
        double err = 0.0;
        for (int k = 1; k < gr.nodes(); ++k) err = std::max(err, std::abs(out(k) - g(a + b, gr.t(k))));
        CAPTURE(a);
        CAPTURE(steps);
        CHECK(err < 5e-4);
        if (prev > 0.0) CHECK(prev / err > 3.5);
        prev = err;
      }
    }
  }
  SUBCASE("exponential kernel") {
    // int_0^t e^{-(t-s)} ds = 1 - e^{-t}
    const VectorXd out = convolve(product_weights(KernelSpec::exponential(1.0), grid), VectorXd::Ones(grid.nodes()));
    CHECK(out(grid.steps) == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-13));
  }
  SUBCASE("length mismatch") {
    CHECK_THROWS_AS(convolve(product_weights(KernelSpec::constant_one(), grid), VectorXd::Ones(5)), DomainError);
  }
}

TEST_CASE("convolve is linear") {
  const TimeGrid grid(2.0, 300);
  const auto w = product_weights(KernelSpec::fractional(0.4), grid);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n01;
  MatrixXd f(3, grid.nodes()), h(3, grid.nodes());
  for (Index i = 0; i < f.size(); ++i) {
    f.data()[i] = n01(rng);
    h.data()[i] = n01(rng);
  }
  const MatrixXd lhs = convolve(w, MatrixXd(f + h));
  const MatrixXd rhs = convolve(w, f) + convolve(w, h);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-13 * lhs.cwiseAbs().maxCoeff());
}

TEST_CASE("solve_cp_equations") {
  SUBCASE("mu = 0 is the identity bit for bit") {
    const TimeGrid grid(1.0, 100);
    for (const auto& spec : {KernelSpec::fractional(0.5), KernelSpec::fractional(1.5), KernelSpec::constant_one()}) {
      const auto sol = solve_cp_equations(spec, 0.0, grid);
      for (int k = 0; k < grid.nodes(); ++k) CHECK(sol.s(k) == 1.0);
      for (int k = 1; k < grid.nodes(); ++k) CHECK(sol.r(k) == kernel_eval(spec, grid.t(k)));
    }
  }
  SUBCASE("constant kernel: s = r = exp(-mu t), second order") {
    double prev = 0.0;
    for (int steps : {100, 200, 400, 800}) {
      const TimeGrid grid(1.0, steps);
      const auto sol = solve_cp_equations(KernelSpec::constant_one(), 2.0, grid);
      double err = 0.0;
      for (int k = 0; k < grid.nodes(); ++k) {
        const double want = std::exp(-2.0 * grid.t(k));
        err = std::max({err, std::abs(sol.s(k) - want), std::abs(sol.r(k) - want)});
      }
      CHECK(err < 1e-4);
      if (prev > 0.0) CHECK(prev / err >= 3.5);
      prev = err;
    }
  }
  SUBCASE("g_1/2 with mu = 1: s = E_{1/2}(-sqrt t) = e^t erfc(sqrt t)") {
    const TimeGrid grid(1.0, 1000);
    const auto sol = solve_cp_equations(KernelSpec::fractional(0.5), 1.0, grid);
    double err = 0.0;
    for (int k = 0; k < grid.nodes(); ++k) {
      const double t = grid.t(k);
      err = std::max(err, std::abs(sol.s(k) - std::exp(t) * std::erfc(std::sqrt(t))));
    }
    CHECK(err <= 1e-3);
    CHECK(std::isinf(sol.r(0)));
    // r = -s'/mu > 0
    for (int k = 1; k < grid.nodes(); ++k) CHECK(sol.r(k) > 0.0);
  }
  CHECK_THROWS_AS(solve_cp_equations(KernelSpec::constant_one(), -1.0, TimeGrid(1.0, 10)), DomainError);
}

TEST_CASE("complete positivity dichotomy for g_alpha") {
  const TimeGrid grid(2.0, 500);
  for (double a : {0.25, 0.5, 0.75, 1.0}) {
    const auto rep = check_completely_positive(KernelSpec::fractional(a), kDefaultMuGrid, grid);
    CAPTURE(a);
    CHECK(rep.completely_positive());
    CHECK(rep.verdict() == "completely_positive_on_grid");
  }
  for (double a : {1.25, 1.5, 1.75}) {
    const auto rep = check_completely_positive(KernelSpec::fractional(a), kDefaultMuGrid, grid);
    CAPTURE(a);
    CHECK_FALSE(rep.completely_positive());
    CHECK(rep.verdict().rfind("violated", 0) == 0);
    CHECK(std::min(rep.min_s, rep.min_r) < -kDefaultCPTolerance);
  }
  const auto one = check_completely_positive(KernelSpec::constant_one(), kDefaultMuGrid, grid);
  CHECK(one.completely_positive());
  CHECK(one.min_s >= -1e-14);
  CHECK_THROWS_AS(check_completely_positive(KernelSpec::constant_one(), {}, grid), DomainError);
}

TEST_CASE("product-rectangle rule is monotone where the linear rule oscillates") {
  const TimeGrid grid(2.0, 500);
  const auto spec = KernelSpec::fractional(0.5);
  const auto lin = solve_cp_equations(spec, 50.0, grid, CPRule::ProductLinear);
  const auto rect = solve_cp_equations(spec, 50.0, grid, CPRule::ProductRectangle);
  CHECK(lin.s.minCoeff() < 0.0);
  CHECK(rect.s.minCoeff() > 0.0);
  for (int k = 1; k < grid.nodes(); ++k) CHECK(rect.s(k) <= rect.s(k - 1));
  // both rules converge to the same limit
  const double t = grid.t(250);
  // e^{x^2} erfc(x) at x = 50 sqrt(t) = 50, from its asymptotic expansion
  const double x = 50.0 * std::sqrt(t);
  const double exact = (1.0 - 0.5 / (x * x) + 0.75 / std::pow(x, 4)) / (x * std::sqrt(std::numbers::pi));
  CHECK(std::abs(rect.s(250) - exact) < 2e-3);
  CHECK(std::abs(lin.s(250) - exact) < 2e-3);
}

TEST_CASE("complete monotonicity screen") {
  const TimeGrid grid(2.0, 200);
  CHECK(check_completely_monotone(KernelSpec::fractional(0.5), grid, 6).pass);
  CHECK(check_completely_monotone(KernelSpec::constant_one(), grid, 6).pass);
  CHECK(check_completely_monotone(KernelSpec::exponential(1.5), grid, 6).pass);
  const auto rep = check_completely_monotone(KernelSpec::fractional(1.5), grid, 6);
  CHECK_FALSE(rep.pass);
  CHECK(rep.order == 1);
  CHECK_THROWS_AS(check_completely_monotone(KernelSpec::fractional(0.5), std::vector<double>{0.0, 0.1, 0.2}, 1),
                  DomainError);
  CHECK_THROWS_AS(check_completely_monotone(KernelSpec::fractional(0.5), grid, 7), DomainError);
}
