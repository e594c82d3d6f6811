#pragma once

// Special functions behind the fractional resolvent: the reciprocal gamma
// function, the real Mittag-Leffler function E_a(z) and the Wright function
// Phi_g(z) (the M-Wright density), plus the subordination density built on it.
//
// Every function is pure. The *_estimate variants return the value together
// with an absolute error estimate; the plain variants return the value only.

namespace fracvolt::specfun {

struct Estimate {
  double value = 0.0;
  double abs_error = 0.0;

  // Relative accuracy target the estimate is checked against.
  bool within(double rel_tol) const;
};

// 1 / Gamma(x). Exact zero at the poles x = 0, -1, -2, ...
double recip_gamma(double x);

// sin(pi x) with exact zeros at the integers.
double sin_pi(double x);

// E_a(z) = sum_n z^n / Gamma(a n + 1), 0 < a <= 2, z real.
Estimate mittag_leffler_estimate(double alpha, double z);
double mittag_leffler(double alpha, double z);

// Phi_g(z) = sum_n (-z)^n / (n! Gamma(1 - g - g n)), 0 < g < 1, z >= 0.
Estimate wright_phi_estimate(double gamma, double z);
double wright_phi(double gamma, double z);

// Arguments at or below this use the power series for Phi_g; above it the
// positive integral representation is used.
inline constexpr double kWrightSeriesLimit = 1.0;

// phi_{t,a}(s) = t^{-a} Phi_a(s t^{-a}), t > 0, 0 < a < 1, s >= 0.
double subordination_density(double t, double alpha, double s);

}  // namespace fracvolt::specfun
