#include "fracvolt/specfun.hpp"

#include "fracvolt/core.hpp"
#include "fracvolt/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace fracvolt::specfun {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();
constexpr double kPi = std::numbers::pi;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Neumaier-compensated running sum that also tracks sum |terms|.
struct CompensatedSum {
  double sum = 0.0;
  double carry = 0.0;
  double abs_sum = 0.0;

  void add(double x) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x))
      carry += (sum - t) + x;
    else
      carry += (x - t) + sum;
    sum = t;
    abs_sum += std::abs(x);
  }
  double value() const { return sum + carry; }
};

bool is_nonpositive_integer(double x) { return x <= 0.0 && x == std::floor(x); }

// log|1/Gamma(x)| and its sign, for arguments where 1/Gamma(x) may overflow.
// Undefined at the poles (callers test those first).
double log_abs_recip_gamma(double x, int& sign) {
  if (x > 0.0) {
    sign = 1;
    return -std::lgamma(x);
  }
  // reflection: 1/Gamma(x) = Gamma(1 - x) sin(pi x) / pi
  const double s = sin_pi(x);
  sign = s > 0.0 ? 1 : -1;
  return std::lgamma(1.0 - x) + std::log(std::abs(s)) - std::log(kPi);
}

void check_alpha_ml(double alpha) {
  if (!(alpha > 0.0 && alpha <= 2.0)) throw DomainError("mittag_leffler: alpha must lie in (0, 2]");
}

// Taylor series with positive terms (z > 0), evaluated in log space.
Estimate ml_series_positive(double alpha, double z) {
  const double log_z = std::log(z);
  CompensatedSum acc;
  double max_log = 0.0;
  double prev_log = -kInf;
  for (int n = 0; n < 2'000'000; ++n) {
    const double log_term = n * log_z - std::lgamma(alpha * n + 1.0);
    if (log_term > 709.0) return {kInf, kInf};
    const double term = std::exp(log_term);
    acc.add(term);
    max_log = std::max(max_log, std::abs(log_term));
    const bool decreasing = log_term < prev_log;
    prev_log = log_term;
    if (decreasing && term < 0.25 * kEps * acc.value()) {
      const double v = acc.value();
      return {v, v * kEps * (8.0 + max_log)};
    }
  }
  return {acc.value(), kInf};
}

// Alternating Taylor series for moderate |z|; the error estimate follows the
// magnitude of the largest partial contributions.
Estimate ml_series_signed(double alpha, double z) {
  CompensatedSum acc;
  double power = 1.0;
  int quiet = 0;
  for (int n = 0; n < 100'000; ++n) {
    const double term = power * recip_gamma(alpha * n + 1.0);
    acc.add(term);
    if (std::abs(term) <= kEps * 1e-3 * std::abs(acc.value()) || term == 0.0) {
      if (++quiet >= 5) break;
    } else {
      quiet = 0;
    }
    power *= z;
  }
  return {acc.value(), 4.0 * kEps * acc.abs_sum};
}

// E_a(-x), x > 0, 0 < a < 2, through the Laplace representation of the
// completely monotone part:
//   (sin(a pi) / (a pi)) * int_0^inf exp(-(v x)^{1/a}) / (v^2 + 2 v cos(a pi) + 1) dv
// For 1 < a < 2 the two poles at x^{1/a} e^{+-i pi/a} add
//   (2/a) exp(x^{1/a} cos(pi/a)) cos(x^{1/a} sin(pi/a)).
Estimate ml_negative_integral(double alpha, double x) {
  const double c = std::cos(alpha * kPi);
  const double inv_alpha = 1.0 / alpha;
  auto lower = [&](double v) {
    return std::exp(-std::pow(v * x, inv_alpha)) / (v * v + 2.0 * v * c + 1.0);
  };
  // v = 1/u maps [1, inf) onto (0, 1].
  auto upper = [&](double u) {
    if (u <= 0.0) return 0.0;
    return std::exp(-std::pow(x / u, inv_alpha)) / (1.0 + 2.0 * u * c + u * u);
  };
  quadrature::AdaptiveOptions opts;
  opts.rel_tol = 1e-12;
  opts.abs_tol = 1e-300;
  opts.max_intervals = 5000;

  const double knee = std::min(1.0, 1.0 / x);
  auto r1 = quadrature::adaptive(lower, 0.0, knee, opts);
  quadrature::Result r2{};
  if (knee < 1.0) r2 = quadrature::adaptive(lower, knee, 1.0, opts);
  auto r3 = quadrature::adaptive(upper, 0.0, 1.0, opts);

  const double factor = std::sin(alpha * kPi) / (alpha * kPi);
  double value = factor * (r1.value + r2.value + r3.value);
  double err = std::abs(factor) * (r1.abs_error + r2.abs_error + r3.abs_error);
  if (alpha > 1.0) {
    const double r = std::pow(x, inv_alpha);
    const double pole = (2.0 / alpha) * std::exp(r * std::cos(kPi / alpha)) * std::cos(r * std::sin(kPi / alpha));
    value += pole;
    err += 4.0 * kEps * (std::abs(pole) * (1.0 + r));
  }
  err += 4.0 * kEps * std::abs(value);
  return {value, err};
}

// Phi_g via its defining series; pole terms vanish through recip_gamma.
Estimate wright_series(double gamma, double z) {
  CompensatedSum acc;
  double max_term = 0.0;
  int small_run = 0;
  const double log_z = z > 0.0 ? std::log(z) : -kInf;
  for (int n = 0; n < 100'000; ++n) {
    double term = 0.0;
    if (n == 0) {
      term = recip_gamma(1.0 - gamma);
    } else if (z > 0.0) {
      const double arg = 1.0 - gamma - gamma * n;
      if (!is_nonpositive_integer(arg)) {
        int sign = 1;
        const double log_rg = log_abs_recip_gamma(arg, sign);
        const double log_mag = n * log_z - std::lgamma(n + 1.0) + log_rg;
        term = sign * ((n % 2 == 0) ? 1.0 : -1.0) * std::exp(log_mag);
      }
    }
    acc.add(term);
    max_term = std::max(max_term, std::abs(term));
    if (n > 0 && std::abs(term) < 1e-16 * max_term) {
      if (++small_run >= 20) break;
    } else {
      small_run = 0;
    }
    if (z == 0.0) break;
  }
  return {acc.value(), 4.0 * kEps * acc.abs_sum};
}

// Positive integral representation of the M-Wright function,
//   Phi_g(z) = z^{g/(1-g)} / (pi (1-g)) * int_0^pi A(p) exp(-z^{1/(1-g)} A(p)) dp,
//   A(p) = [ sin(g p)^g sin((1-g) p)^{1-g} / sin p ]^{1/(1-g)},
// obtained from the Kanter form of the one-sided stable density.
Estimate wright_integral(double gamma, double z) {
  const double q = 1.0 - gamma;
  const double scale = std::pow(z, 1.0 / q);
  const double a_min = q * std::pow(gamma, gamma / q);  // A(0+)
  auto log_a = [&](double p) {
    return (gamma * std::log(std::sin(gamma * p)) + q * std::log(std::sin(q * p)) - std::log(std::sin(p))) / q;
  };
  // exp(-scale * a_min) is factored out to keep the integrand representable.
  auto integrand = [&](double p) {
    if (p <= 0.0 || p >= kPi) return 0.0;
    const double la = log_a(p);
    const double a = std::exp(la);
    const double decay = scale * std::max(a - a_min, 0.0);
    if (!std::isfinite(la) || !std::isfinite(decay)) return 0.0;
    return std::exp(la - decay);
  };
  quadrature::AdaptiveOptions opts;
  opts.rel_tol = 1e-12;
  opts.abs_tol = 0.0;
  opts.max_intervals = 5000;
  // Most of the mass sits near p = 0 once scale is large.
  const double width = std::min(kPi / 2.0, 4.0 / std::sqrt(std::max(scale, 1e-300)));
  auto r1 = quadrature::adaptive(integrand, 0.0, width, opts);
  auto r2 = quadrature::adaptive(integrand, width, kPi, opts);
  const double log_pref = (gamma / q) * std::log(z) - std::log(kPi * q) - scale * a_min;
  const double pref = std::exp(log_pref);
  const double value = pref * (r1.value + r2.value);
  const double err = pref * (r1.abs_error + r2.abs_error) + 4.0 * kEps * std::abs(value) * (1.0 + std::abs(log_pref));
  return {value, err};
}

}  // namespace

bool Estimate::within(double rel_tol) const {
  return std::isfinite(value) && abs_error <= rel_tol * std::abs(value);
}

double sin_pi(double x) {
  if (!std::isfinite(x)) return std::numeric_limits<double>::quiet_NaN();
  double r = std::fmod(x, 2.0);  // (-2, 2)
  if (r > 1.0) r -= 2.0;
  if (r < -1.0) r += 2.0;
  if (r == 0.0 || r == 1.0 || r == -1.0) return 0.0;
  if (r > 0.5) r = 1.0 - r;
  if (r < -0.5) r = -1.0 - r;
  return std::sin(kPi * r);
}

double recip_gamma(double x) {
  if (std::isnan(x)) return x;
  if (is_nonpositive_integer(x)) return 0.0;
  if (x >= 0.5) {
    if (x > 171.7) return 0.0;
    return 1.0 / std::tgamma(x);
  }
  const double one_minus = 1.0 - x;
  if (one_minus < 171.0) return std::tgamma(one_minus) * sin_pi(x) / kPi;
  int sign = 1;
  const double log_mag = log_abs_recip_gamma(x, sign);
  return sign * std::exp(log_mag);
}

Estimate mittag_leffler_estimate(double alpha, double z) {
  check_alpha_ml(alpha);
  if (std::isnan(z)) throw DomainError("mittag_leffler: z is NaN");
  if (z == 0.0) return {1.0, 0.0};
  if (alpha == 1.0) {
    const double v = std::exp(z);
    return {v, kEps * std::abs(v) * (1.0 + std::abs(z))};
  }
  if (alpha == 2.0) {
    const double r = std::sqrt(std::abs(z));
    const double v = z < 0.0 ? std::cos(r) : std::cosh(r);
    return {v, 2.0 * kEps * (1.0 + std::abs(v) * (1.0 + r))};
  }
  if (z > 0.0) return ml_series_positive(alpha, z);
  if (std::isinf(z)) return {0.0, 0.0};
  const double series_limit = alpha < 1.0 ? 1.0 : 5.0;
  if (-z <= series_limit) return ml_series_signed(alpha, z);
  return ml_negative_integral(alpha, -z);
}

double mittag_leffler(double alpha, double z) { return mittag_leffler_estimate(alpha, z).value; }

Estimate wright_phi_estimate(double gamma, double z) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw DomainError("wright_phi: gamma must lie in (0, 1)");
  if (!(z >= 0.0)) throw DomainError("wright_phi: z must be >= 0");
  if (std::isinf(z)) return {0.0, 0.0};
  if (z <= kWrightSeriesLimit) return wright_series(gamma, z);
  return wright_integral(gamma, z);
}

double wright_phi(double gamma, double z) { return wright_phi_estimate(gamma, z).value; }

double subordination_density(double t, double alpha, double s) {
  if (!(t > 0.0)) throw DomainError("subordination_density: t must be > 0");
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("subordination_density: alpha must lie in (0, 1)");
  if (!(s >= 0.0)) throw DomainError("subordination_density: s must be >= 0");
  const double scale = std::pow(t, -alpha);
  return scale * wright_phi(alpha, s * scale);
}

}  // namespace fracvolt::specfun
