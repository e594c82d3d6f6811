#pragma once

// Finite-dimensional generators A: construction, resolvent R(lambda, A),
// Yosida approximation, semigroup e^{tA} and adjoint. Everything is templated
// on the scalar type; the spectral path is taken whenever A is symmetric.

#include "fracvolt/core.hpp"

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <variant>

namespace fracvolt {

// Orthonormal eigenbasis: matrix = eigenvectors * diag(eigenvalues) * eigenvectors^T.
template <typename Scalar>
struct Spectral {
  Vector<Scalar> eigenvalues;
  Matrix<Scalar> eigenvectors;
};

template <typename Scalar>
struct Operator {
  Matrix<Scalar> matrix;
  std::optional<Spectral<Scalar>> spectral;
  Scalar spectral_bound = 0;  // max real part of the spectrum

  Index dim() const { return matrix.rows(); }
};

using OperatorD = Operator<double>;

// V diag(d) V^T
template <typename Scalar, typename Derived>
Matrix<Scalar> spectral_apply(const Spectral<Scalar>& s, const Eigen::MatrixBase<Derived>& d) {
  return s.eigenvectors * d.asDiagonal() * s.eigenvectors.transpose();
}

// Largest singular value.
template <typename Derived>
typename Derived::Scalar operator_norm(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  if (m.size() == 0) return Scalar(0);
  if (m.rows() == 1 && m.cols() == 1) return std::abs(m(0, 0));
  Eigen::JacobiSVD<Matrix<Scalar>> svd(m);
  return svd.singularValues()(0);
}

namespace operators {

struct Dense {
  MatrixXd matrix;
};
struct SpectralSpec {
  VectorXd eigenvalues;
  std::optional<MatrixXd> eigenvectors;  // identity when absent
};
// Dirichlet second-difference matrix on n interior points of [0, length],
// scaled by (n+1)^2 / length^2.
struct Laplacian1d {
  int n = 1;
  double length = std::numbers::pi;
};

struct OperatorSpec {
  std::variant<Dense, SpectralSpec, Laplacian1d> kind;
};

inline constexpr Index kDefaultMaxDim = 2000;

namespace detail {

template <typename Scalar>
Scalar tolerance_scale(const Matrix<Scalar>& m) {
  return std::max(Scalar(1), m.cwiseAbs().maxCoeff());
}

template <typename Scalar>
bool is_symmetric(const Matrix<Scalar>& m) {
  if (m.rows() != m.cols()) return false;
  const Scalar tol = Scalar(64) * std::numeric_limits<Scalar>::epsilon() * tolerance_scale(m);
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol;
}

template <typename Scalar>
void validate_spectral(const Operator<Scalar>& op) {
  const auto& s = *op.spectral;
  const Index n = op.dim();
  const Scalar scale = tolerance_scale(op.matrix);
  const Matrix<Scalar> av = op.matrix * s.eigenvectors - s.eigenvectors * s.eigenvalues.asDiagonal();
  if (av.cwiseAbs().maxCoeff() > Scalar(1e-10) * scale)
    throw NumericalError("build_operator: eigen decomposition residual exceeds 1e-10");
  const Matrix<Scalar> gram = s.eigenvectors.transpose() * s.eigenvectors - Matrix<Scalar>::Identity(n, n);
  if (gram.cwiseAbs().maxCoeff() > Scalar(1e-12) * std::max<Scalar>(1, Scalar(n) / 100))
    throw NumericalError("build_operator: eigenvectors are not orthonormal");
}

}  // namespace detail

// Operator from a matrix; spectral data is computed when it is symmetric.
template <typename Scalar>
Operator<Scalar> make_operator(Matrix<Scalar> m, Index max_dim = kDefaultMaxDim) {
  if (m.rows() != m.cols() || m.rows() < 1) throw DomainError("build_operator: matrix must be square and non-empty");
  if (m.rows() > max_dim) throw DomainError("build_operator: dimension exceeds the configured maximum");
  if (!m.allFinite()) throw DomainError("build_operator: non-finite matrix entries");
  Operator<Scalar> op;
  op.matrix = std::move(m);
  if (detail::is_symmetric(op.matrix)) {
    Matrix<Scalar> sym = Scalar(0.5) * (op.matrix + op.matrix.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(sym);
    if (es.info() != Eigen::Success) throw NumericalError("build_operator: symmetric eigensolver failed");
    op.spectral = Spectral<Scalar>{es.eigenvalues(), es.eigenvectors()};
    op.spectral_bound = es.eigenvalues().maxCoeff();
    detail::validate_spectral(op);
  } else {
    Eigen::EigenSolver<Matrix<Scalar>> es(op.matrix, false);
    if (es.info() != Eigen::Success) throw NumericalError("build_operator: eigensolver failed");
    op.spectral_bound = es.eigenvalues().real().maxCoeff();
  }
  return op;
}

template <typename Scalar = double>
Operator<Scalar> build_operator(const OperatorSpec& spec, Index max_dim = kDefaultMaxDim) {
  if (const auto* d = std::get_if<Dense>(&spec.kind)) return make_operator<Scalar>(d->matrix.cast<Scalar>(), max_dim);

  if (const auto* lap = std::get_if<Laplacian1d>(&spec.kind)) {
    if (lap->n < 1) throw DomainError("build_operator: laplacian_1d needs n >= 1");
    if (!(lap->length > 0.0) || !std::isfinite(lap->length)) throw DomainError("build_operator: length must be > 0");
    if (lap->n > max_dim) throw DomainError("build_operator: dimension exceeds the configured maximum");
    const Index n = lap->n;
    const Scalar scale = Scalar((n + 1) * (n + 1)) / Scalar(lap->length * lap->length);
    Matrix<Scalar> m = Matrix<Scalar>::Zero(n, n);
    for (Index i = 0; i < n; ++i) {
      m(i, i) = Scalar(-2) * scale;
      if (i + 1 < n) m(i, i + 1) = m(i + 1, i) = scale;
    }
    return make_operator<Scalar>(std::move(m), max_dim);
  }

  const auto& sp = std::get<SpectralSpec>(spec.kind);
  const Index n = sp.eigenvalues.size();
  if (n < 1) throw DomainError("build_operator: empty spectrum");
  if (n > max_dim) throw DomainError("build_operator: dimension exceeds the configured maximum");
  if (!sp.eigenvalues.allFinite()) throw DomainError("build_operator: non-finite eigenvalues");
  Operator<Scalar> op;
  Spectral<Scalar> s{sp.eigenvalues.cast<Scalar>(), Matrix<Scalar>::Identity(n, n)};
  if (sp.eigenvectors) {
    if (sp.eigenvectors->rows() != n || sp.eigenvectors->cols() != n)
      throw DomainError("build_operator: eigenvector matrix has the wrong shape");
    if (!sp.eigenvectors->allFinite()) throw DomainError("build_operator: non-finite eigenvectors");
    s.eigenvectors = sp.eigenvectors->cast<Scalar>();
  }
  op.matrix = spectral_apply(s, s.eigenvalues);
  op.spectral_bound = s.eigenvalues.maxCoeff();
  op.spectral = std::move(s);
  detail::validate_spectral(op);
  return op;
}

// R(lambda, A) = (lambda I - A)^{-1}
template <typename Scalar>
Matrix<Scalar> resolvent_op(const Operator<Scalar>& a, Scalar lambda) {
  const Index n = a.dim();
  const Scalar eps = std::numeric_limits<Scalar>::epsilon();
  if (a.spectral) {
    const auto& s = *a.spectral;
    Vector<Scalar> inv(n);
    for (Index i = 0; i < n; ++i) {
      const Scalar gap = lambda - s.eigenvalues(i);
      if (std::abs(gap) <= Scalar(16) * eps * std::max({Scalar(1), std::abs(lambda), std::abs(s.eigenvalues(i))}))
        throw NumericalError("resolvent_op: lambda is an eigenvalue of A");
      inv(i) = Scalar(1) / gap;
    }
    return spectral_apply(s, inv);
  }
  const Matrix<Scalar> shifted = lambda * Matrix<Scalar>::Identity(n, n) - a.matrix;
  Eigen::PartialPivLU<Matrix<Scalar>> lu(shifted);
  const Scalar rcond = lu.rcond();
  if (!(rcond > Scalar(16) * eps)) throw NumericalError("resolvent_op: lambda I - A is numerically singular");
  Matrix<Scalar> r = lu.inverse();
  const Scalar residual = (shifted * r - Matrix<Scalar>::Identity(n, n)).cwiseAbs().maxCoeff();
  if (residual > Scalar(1e-10) / rcond) throw NumericalError("resolvent_op: residual check failed");
  return r;
}

// A_n = n A R(n, A) = n^2 R(n, A) - n I, bounded for n > spectral bound.
template <typename Scalar>
Operator<Scalar> yosida(const Operator<Scalar>& a, Scalar n) {
  if (!(n > a.spectral_bound)) throw DomainError("yosida: n must exceed the spectral bound of A");
  Operator<Scalar> out;
  if (a.spectral) {
    const auto& s = *a.spectral;
    Spectral<Scalar> sn{s.eigenvalues.unaryExpr([n](Scalar mu) { return n * mu / (n - mu); }), s.eigenvectors};
    out.matrix = spectral_apply(sn, sn.eigenvalues);
    out.spectral_bound = sn.eigenvalues.maxCoeff();
    out.spectral = std::move(sn);
    return out;
  }
  out.matrix = n * a.matrix * resolvent_op(a, n);
  Eigen::EigenSolver<Matrix<Scalar>> es(out.matrix, false);
  out.spectral_bound = es.eigenvalues().real().maxCoeff();
  return out;
}

// T(t) = e^{tA}; T(0) = I exactly.
template <typename Scalar>
Matrix<Scalar> semigroup(const Operator<Scalar>& a, Scalar t) {
  if (!(t >= Scalar(0))) throw DomainError("semigroup: t must be >= 0");
  const Index n = a.dim();
  if (t == Scalar(0)) return Matrix<Scalar>::Identity(n, n);
  if (t * a.spectral_bound > Scalar(700)) throw NumericalError("semigroup: e^{t A} overflows (t * spectral bound > 700)");
  if (a.spectral) {
    const auto& s = *a.spectral;
    return spectral_apply(s, s.eigenvalues.unaryExpr([t](Scalar mu) { return std::exp(t * mu); }));
  }
  const Matrix<Scalar> scaled = t * a.matrix;
  return scaled.exp();
}

template <typename Scalar>
Operator<Scalar> adjoint(const Operator<Scalar>& a) {
  Operator<Scalar> out;
  out.matrix = a.matrix.transpose();
  out.spectral = a.spectral;  // real symmetric: same eigenbasis
  out.spectral_bound = a.spectral_bound;
  return out;
}

}  // namespace operators
}  // namespace fracvolt
