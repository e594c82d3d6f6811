#pragma once

// Scalar kernels a(t) of the Volterra equation, product-integration
// convolution against them, and the complete positivity screen.

#include "fracvolt/core.hpp"

#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace fracvolt::kernels {

// g_alpha(t) = t^{alpha-1} / Gamma(alpha)
struct Fractional {
  double alpha = 1.0;
};
// scale * exp(-rate t)
struct Exponential {
  double rate = 1.0;
  double scale = 1.0;
};
struct ConstantOne {};
// Piecewise linear through (times[i], values[i]); times strictly increasing.
struct Table {
  std::vector<double> times;
  std::vector<double> values;
};

struct KernelSpec {
  std::variant<Fractional, Exponential, ConstantOne, Table> kind;

  static KernelSpec fractional(double alpha);
  static KernelSpec exponential(double rate, double scale = 1.0);
  static KernelSpec constant_one() { return {ConstantOne{}}; }
  static KernelSpec table(std::vector<double> times, std::vector<double> values);

  // True when a(t) is unbounded as t -> 0+.
  bool singular_at_zero() const;
  std::string describe() const;
};

double kernel_eval(const KernelSpec& spec, double t);

// Product-integration moments on a uniform grid. With sigma measured back
// from the evaluation node, for every subinterval m = 0 .. steps-1:
//   zero[m] = int_{m dt}^{(m+1) dt} a(sigma) d sigma
//   one[m]  = int_{m dt}^{(m+1) dt} a(sigma) (sigma - m dt) / dt d sigma
// The piecewise-linear interpolant of f is integrated exactly against a, so
//   (a * f)(t_k) = sum_{m<k} (zero[m] - one[m]) f_{k-m} + one[m] f_{k-m-1}.
struct ProductWeights {
  TimeGrid grid;
  std::vector<double> zero;
  std::vector<double> one;

  // Coefficient of f_k in (a * f)(t_k).
  double diagonal() const { return zero[0] - one[0]; }
  // Coefficient of f_{k-i} in (a * f)(t_k).
  double weight(int k, int i) const {
    double w = 0.0;
    if (i < k) w += zero[i] - one[i];
    if (i >= 1) w += one[i - 1];
    return w;
  }
};

ProductWeights product_weights(const KernelSpec& spec, const TimeGrid& grid);

// Columns of f are the samples f(t_0), ..., f(t_K); rows are components.
MatrixXd convolve_nodes(const ProductWeights& w, const Eigen::Ref<const MatrixXd>& f);

// Column vectors are read as a scalar sequence f_0 .. f_K, anything else as
// one node per column.
template <typename Derived>
auto convolve(const ProductWeights& w, const Eigen::MatrixBase<Derived>& f) {
  if constexpr (Derived::ColsAtCompileTime == 1) {
    const MatrixXd row = f.transpose();
    return VectorXd(convolve_nodes(w, row).transpose());
  } else {
    return convolve_nodes(w, f);
  }
}

template <typename Derived>
auto convolve(const KernelSpec& spec, const TimeGrid& grid, const Eigen::MatrixBase<Derived>& f) {
  return convolve(product_weights(spec, grid), f);
}

// Correction terms for g_alpha with non-integer alpha. Solutions of equations
// with this kernel behave like sums of t^{q alpha} near 0, which the
// piecewise-linear interpolant resolves poorly. With
//   (a * f)(t_k) ~ sum_i w.weight(k, i) f_{k-i} + sum_j c(k, j-1) f_j,  j = 1..m,
// the corrected rule is exact for t^gamma, gamma in {0, 1} and q alpha < 2
// (at most kMaxStartingTerms exponents, smallest first).
inline constexpr int kMaxStartingTerms = 8;

struct StartingWeights {
  std::vector<double> exponents;
  MatrixXd c;  // nodes x m; row 0 is zero

  int count() const { return static_cast<int>(exponents.size()); }
  bool empty() const { return exponents.empty(); }
};

// Empty unless spec is fractional with non-integer alpha and the grid has
// more than kMaxStartingTerms steps.
StartingWeights starting_weights(const KernelSpec& spec, const ProductWeights& w);

struct CPSolution {
  VectorXd s;
  // r at the nodes. For kernels singular at 0 (and for the rectangle rule),
  // r_k (k >= 1) is the mean of r over [t_{k-1}, t_k], taken from the exact
  // discrete identity 1 * r = (1 - s) / mu; r(0) = a(0), possibly +inf.
  VectorXd r;
};

enum class CPRule {
  // Exact moments against the piecewise-linear interpolant; second order,
  // but oscillates when mu * dt^alpha is large.
  ProductLinear,
  // Exact zeroth moments with right-endpoint values; first order and
  // monotone, so sign information is not polluted by the discretisation.
  ProductRectangle,
};

// Solves s + mu (a * s) = 1 and r + mu (a * r) = a on the grid by forward
// substitution.
CPSolution solve_cp_equations(const KernelSpec& spec, double mu, const TimeGrid& grid,
                              CPRule rule = CPRule::ProductLinear);

inline const std::vector<double> kDefaultMuGrid = {0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0};
inline constexpr double kDefaultCPTolerance = 1e-8;

struct Violation {
  double mu = 0.0;
  double t = 0.0;
  double value = 0.0;
  char which = 's';
};

struct CPReport {
  std::vector<double> mu_grid;
  double min_s = 0.0;
  double min_r = 0.0;
  std::optional<Violation> violation;  // empty: completely positive on the grid

  bool completely_positive() const { return !violation.has_value(); }
  std::string verdict() const;
};

// Uses CPRule::ProductRectangle.
CPReport check_completely_positive(const KernelSpec& spec, const std::vector<double>& mu_grid,
                                   const TimeGrid& grid, double tol = kDefaultCPTolerance);

struct MonotoneReport {
  bool pass = true;
  int order = -1;  // first failing difference order
  double t = 0.0;
  double value = 0.0;
};

// Screens (-1)^k Delta^k a >= -tol * max|a| for k = 0 .. max_order on
// uniformly spaced times; a necessary condition for complete monotonicity.
MonotoneReport check_completely_monotone(const KernelSpec& spec, const std::vector<double>& times, int max_order,
                                         double tol = kDefaultCPTolerance);
// Uses the nodes t_1 .. t_K of the grid.
MonotoneReport check_completely_monotone(const KernelSpec& spec, const TimeGrid& grid, int max_order,
                                         double tol = kDefaultCPTolerance);

}  // namespace fracvolt::kernels
