#pragma once

#include <functional>
#include <vector>

namespace fracvolt::quadrature {

// Gauss–Legendre nodes and weights on [-1, 1].
struct GaussLegendre {
  std::vector<double> nodes;
  std::vector<double> weights;

  explicit GaussLegendre(int n);

  int size() const { return static_cast<int>(nodes.size()); }

  template <typename F>
  double integrate(F&& f, double a, double b) const {
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    double sum = 0.0;
    for (int i = 0; i < size(); ++i) sum += weights[i] * f(mid + half * nodes[i]);
    return half * sum;
  }
};

// Process-wide cached rule; construction is thread safe.
const GaussLegendre& gauss_legendre(int n);

struct Result {
  double value = 0.0;
  double abs_error = 0.0;
  int evaluations = 0;
  bool converged = false;
};

struct AdaptiveOptions {
  double abs_tol = 0.0;
  double rel_tol = 1e-12;
  int max_intervals = 2000;
};

// Globally adaptive 15-point Gauss–Kronrod on [a, b] (QUADPACK QAG strategy).
Result adaptive(const std::function<double(double)>& f, double a, double b,
                const AdaptiveOptions& opts = {});

}  // namespace fracvolt::quadrature
