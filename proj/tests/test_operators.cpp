#include "fracvolt/operators.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace fracvolt;
using namespace fracvolt::operators;

namespace {

OperatorD dense(const MatrixXd& m) { return build_operator(OperatorSpec{Dense{m}}); }

OperatorD laplacian(int n, double length = std::numbers::pi) { return build_operator(OperatorSpec{Laplacian1d{n, length}}); }

}  // namespace

TEST_CASE("laplacian_1d eigenvalues match the tridiagonal closed form") {
  const double pi = std::numbers::pi;
  const auto a3 = laplacian(3);
  REQUIRE(a3.spectral);
  const double c = 16.0 / (pi * pi);
  VectorXd expected(3);
  expected << -c * (2 + std::sqrt(2.0)), -c * 2, -c * (2 - std::sqrt(2.0));
  CHECK((a3.spectral->eigenvalues - expected).cwiseAbs().maxCoeff() < 1e-12);

  for (int n : {5, 20, 57}) {
    const auto a = laplacian(n, 2.0);
    const double h = 2.0 / (n + 1);
    for (int k = 1; k <= n; ++k) {
      const double s = std::sin(k * pi / (2.0 * (n + 1)));
      const double mu = -4.0 / (h * h) * s * s;
      CHECK(a.spectral->eigenvalues(n - k) == doctest::Approx(mu).epsilon(1e-12));
    }
    CHECK(a.spectral_bound < 0.0);
    CHECK(a.matrix.isApprox(a.matrix.transpose()));
  }
}

TEST_CASE("build_operator: dense and spectral inputs") {
  CHECK(dense(MatrixXd::Zero(3, 3)).spectral_bound == 0.0);

  MatrixXd d = VectorXd::LinSpaced(2, -1, -2).asDiagonal();
  const auto op = dense(d);
  REQUIRE(op.spectral);
  CHECK(op.spectral->eigenvalues(0) == doctest::Approx(-2.0));
  CHECK(op.spectral->eigenvalues(1) == doctest::Approx(-1.0));
  CHECK(op.spectral_bound == doctest::Approx(-1.0));

  MatrixXd nonsym(2, 2);
  nonsym << -1, 3, 0, -2;
  const auto ns = dense(nonsym);
  CHECK_FALSE(ns.spectral);
  CHECK(ns.spectral_bound == doctest::Approx(-1.0));

  // rotated spectrum
  const double th = 0.3;
  MatrixXd q(2, 2);
  q << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
  const auto sp = build_operator(OperatorSpec{SpectralSpec{VectorXd::LinSpaced(2, -3, -1), q}});
  CHECK((sp.matrix - q * VectorXd::LinSpaced(2, -3, -1).asDiagonal() * q.transpose()).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(sp.spectral_bound == -1.0);

  const auto ident = build_operator(OperatorSpec{SpectralSpec{VectorXd::Constant(4, -0.5), std::nullopt}});
  CHECK(ident.matrix.isApprox(-0.5 * MatrixXd::Identity(4, 4)));
}

TEST_CASE("build_operator: rejections") {
  MatrixXd bad = MatrixXd::Zero(2, 2);
  bad(0, 1) = std::nan("");
  CHECK_THROWS_AS(dense(bad), DomainError);
  CHECK_THROWS_AS(dense(MatrixXd::Zero(2, 3)), DomainError);
  CHECK_THROWS_AS(laplacian(0), DomainError);
  CHECK_THROWS_AS(laplacian(3, -1.0), DomainError);
  CHECK_THROWS_AS(build_operator(OperatorSpec{Laplacian1d{30, 1.0}}, 20), DomainError);
  MatrixXd not_orthogonal = MatrixXd::Ones(2, 2);
  CHECK_THROWS_AS(build_operator(OperatorSpec{SpectralSpec{VectorXd::Ones(2), not_orthogonal}}), NumericalError);
}

TEST_CASE("resolvent_op") {
  CHECK(resolvent_op(dense(MatrixXd::Zero(3, 3)), 2.0).isApprox(0.5 * MatrixXd::Identity(3, 3)));
  CHECK(resolvent_op(dense(-MatrixXd::Identity(1, 1)), 1.0)(0, 0) == doctest::Approx(0.5));

  const auto lap = laplacian(10);
  const MatrixXd r = resolvent_op(lap, 1.0);
  CHECK(((MatrixXd::Identity(10, 10) - lap.matrix) * r - MatrixXd::Identity(10, 10)).cwiseAbs().maxCoeff() < 1e-12);

  SUBCASE("resolvent identity, spectral and dense paths") {
    MatrixXd m(3, 3);
    m << -2, 1, 0.5, 0, -3, 1, 0.2, 0, -1;
    for (const auto& op : {lap, dense(m)}) {
      const double lam = 0.7, mu = 2.5;
      const MatrixXd rl = resolvent_op(op, lam), rm = resolvent_op(op, mu);
      CHECK((rl - rm - (mu - lam) * rl * rm).cwiseAbs().maxCoeff() < 1e-9);
    }
  }

  SUBCASE("singular shift") {
    CHECK_THROWS_AS(resolvent_op(dense(-MatrixXd::Identity(2, 2)), -1.0), NumericalError);
    MatrixXd j(2, 2);
    j << 0, 1, 0, 0;
    CHECK_THROWS_AS(resolvent_op(dense(j), 0.0), NumericalError);
  }
}

TEST_CASE("yosida approximation") {
  const auto a2 = dense(-2.0 * MatrixXd::Identity(1, 1));
  CHECK(yosida(a2, 10.0).matrix(0, 0) == doctest::Approx(-5.0 / 3.0).epsilon(1e-15));
  CHECK(yosida(dense(MatrixXd::Zero(2, 2)), 7.0).matrix.cwiseAbs().maxCoeff() == 0.0);

  const auto a1 = dense(-MatrixXd::Identity(1, 1));
  double previous = 0.0;
  for (double n : {10.0, 100.0, 1000.0}) {
    const double v = yosida(a1, n).matrix(0, 0);
    CHECK(v == doctest::Approx(-n / (n + 1)).epsilon(1e-15));
    CHECK(std::abs(v + 1.0) == doctest::Approx(1.0 / (n + 1)).epsilon(1e-12));
    CHECK(v < previous);
    previous = v;
  }

  CHECK_THROWS_AS(yosida(dense(MatrixXd::Identity(1, 1)), 1.0), DomainError);
  CHECK_THROWS_AS(yosida(a1, -1.0), DomainError);

  SUBCASE("dense and spectral paths agree, commute with A") {
    const auto lap = laplacian(8);
    const auto an = yosida(lap, 50.0);
    const MatrixXd via_formula = 2500.0 * resolvent_op(lap, 50.0) - 50.0 * MatrixXd::Identity(8, 8);
    CHECK((an.matrix - via_formula).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((an.matrix * lap.matrix - lap.matrix * an.matrix).cwiseAbs().maxCoeff() < 1e-9);
    for (Index k = 0; k < 8; ++k) {
      const double mu = lap.spectral->eigenvalues(k);
      CHECK(an.spectral->eigenvalues(k) > mu);
      CHECK(an.spectral->eigenvalues(k) < 0.0);
    }
    CHECK(operator_norm(semigroup(an, 1.5)) <= 1.0 + 1e-14);
  }

  SUBCASE("basis vectors converge") {
    const auto lap = laplacian(6);
    double previous_err = INFINITY;
    for (double n : {2.0, 8.0, 32.0, 128.0, 512.0, 1e5}) {
      const double err = (yosida(lap, n).matrix - lap.matrix).colwise().norm().maxCoeff();
      CHECK(err < previous_err);
      previous_err = err;
    }
    CHECK(previous_err < 1e-1);
  }
}

TEST_CASE("semigroup") {
  const auto lap = laplacian(7);
  CHECK(semigroup(lap, 0.0) == MatrixXd::Identity(7, 7));
  CHECK(semigroup(dense(-MatrixXd::Identity(1, 1)), 1.0)(0, 0) == doctest::Approx(0.3678794412).epsilon(1e-10));

  MatrixXd m(3, 3);
  m << -2, 1, 0.5, 0, -3, 1, 0.2, 0, -1;
  for (const auto& op : {lap, dense(m)}) {
    const MatrixXd lhs = semigroup(op, 0.3) * semigroup(op, 0.45);
    CHECK((lhs - semigroup(op, 0.75)).cwiseAbs().maxCoeff() < 1e-10);
  }
  MatrixXd nil(2, 2);
  nil << 0, 1, 0, 0;
  MatrixXd expected(2, 2);
  expected << 1, 2, 0, 1;
  CHECK((semigroup(dense(nil), 2.0) - expected).cwiseAbs().maxCoeff() < 1e-14);

  CHECK_THROWS_AS(semigroup(lap, -1.0), DomainError);
  CHECK_THROWS_AS(semigroup(dense(MatrixXd::Identity(1, 1)), 800.0), NumericalError);
}

TEST_CASE("adjoint") {
  const auto lap = laplacian(5);
  CHECK(adjoint(lap).matrix == lap.matrix);
  MatrixXd j(2, 2);
  j << 0, 1, 0, 0;
  const auto aj = adjoint(dense(j));
  CHECK(aj.matrix(1, 0) == 1.0);
  CHECK(aj.matrix(0, 1) == 0.0);
  CHECK(adjoint(aj).matrix == j);
}

TEST_CASE("operators instantiate for other scalar types") {
  const auto lf = build_operator<long double>(OperatorSpec{Laplacian1d{4, 1.0}});
  const long double pi = std::numbers::pi_v<long double>;
  const long double s = std::sin(pi / 10.0L);
  CHECK(static_cast<double>(lf.spectral_bound) == doctest::Approx(static_cast<double>(-4.0L * 25.0L * s * s)).epsilon(1e-15));
  const auto yf = yosida(lf, 100.0L);
  CHECK(yf.spectral_bound > lf.spectral_bound);

  Matrix<float> mf(2, 2);
  mf << -1.0f, 0.5f, 0.0f, -2.0f;
  const auto of = make_operator<float>(mf);
  const Matrix<float> rf = resolvent_op(of, 1.0f);
  CHECK(((Matrix<float>::Identity(2, 2) - mf) * rf - Matrix<float>::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-5f);
}
