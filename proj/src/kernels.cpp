#include "fracvolt/kernels.hpp"

#include "fracvolt/parallel.hpp"
#include "fracvolt/quadrature.hpp"
#include "fracvolt/specfun.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace fracvolt::kernels {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kMomentNodes = 16;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

// a(t) for t >= 0; +inf at t = 0 for singular kernels.
double value_at(const KernelSpec& spec, double t) {
  return std::visit(
      Overloaded{
          [t](const Fractional& k) {
            if (t == 0.0) return k.alpha < 1.0 ? kInf : (k.alpha == 1.0 ? 1.0 : 0.0);
            return std::pow(t, k.alpha - 1.0) * specfun::recip_gamma(k.alpha);
          },
          [t](const Exponential& k) { return k.scale * std::exp(-k.rate * t); },
          [](const ConstantOne&) { return 1.0; },
          [t](const Table& k) {
            if (t < k.times.front() || t > k.times.back())
              throw DomainError("kernel_eval: t outside the table range");
            auto it = std::upper_bound(k.times.begin(), k.times.end(), t);
            if (it == k.times.end()) return k.values.back();
            const auto i = static_cast<std::size_t>(it - k.times.begin());
            const double t0 = k.times[i - 1], t1 = k.times[i];
            const double lam = (t - t0) / (t1 - t0);
            return (1.0 - lam) * k.values[i - 1] + lam * k.values[i];
          },
      },
      spec.kind);
}

void check_finite_positive(double x, const char* what) {
  if (!(x > 0.0) || !std::isfinite(x)) throw DomainError(std::string("KernelSpec: ") + what + " must be positive");
}

}  // namespace

KernelSpec KernelSpec::fractional(double alpha) {
  check_finite_positive(alpha, "alpha");
  return {Fractional{alpha}};
}

KernelSpec KernelSpec::exponential(double rate, double scale) {
  check_finite_positive(rate, "rate");
  check_finite_positive(scale, "scale");
  return {Exponential{rate, scale}};
}

KernelSpec KernelSpec::table(std::vector<double> times, std::vector<double> values) {
  if (times.size() < 2 || times.size() != values.size())
    throw DomainError("KernelSpec: table needs matching times/values with at least two points");
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!std::isfinite(times[i]) || !std::isfinite(values[i])) throw DomainError("KernelSpec: table entries must be finite");
    if (i > 0 && !(times[i] > times[i - 1])) throw DomainError("KernelSpec: table times must be strictly increasing");
  }
  return {Table{std::move(times), std::move(values)}};
}

bool KernelSpec::singular_at_zero() const {
  const auto* f = std::get_if<Fractional>(&kind);
  return f && f->alpha < 1.0;
}

std::string KernelSpec::describe() const {
  std::ostringstream os;
  os.precision(17);
  std::visit(Overloaded{
                 [&](const Fractional& k) { os << "fractional(" << k.alpha << ")"; },
                 [&](const Exponential& k) { os << "exponential(rate=" << k.rate << ", scale=" << k.scale << ")"; },
                 [&](const ConstantOne&) { os << "constant_one"; },
                 [&](const Table& k) { os << "table(" << k.times.size() << " points)"; },
             },
             kind);
  return os.str();
}

double kernel_eval(const KernelSpec& spec, double t) {
  if (!(t > 0.0)) throw DomainError("kernel_eval: t must be > 0");
  return value_at(spec, t);
}

ProductWeights product_weights(const KernelSpec& spec, const TimeGrid& grid) {
  const int steps = grid.steps;
  const double dt = grid.dt();
  ProductWeights w{grid, std::vector<double>(steps), std::vector<double>(steps)};

  if (const auto* tab = std::get_if<Table>(&spec.kind)) {
    if (tab->times.front() > 0.0 || tab->times.back() < grid.t_end)
      throw DomainError("product_weights: table kernel must cover [0, t_end]");
    // Trapezoid on the kernel samples; first order only where the table has kinks.
    for (int m = 0; m < steps; ++m) {
      const double a0 = value_at(spec, m * dt);
      const double a1 = value_at(spec, std::min((m + 1) * dt, grid.t_end));
      w.zero[m] = 0.5 * dt * (a0 + a1);
      w.one[m] = 0.5 * dt * a1;
    }
    return w;
  }
  if (std::holds_alternative<ConstantOne>(spec.kind)) {
    std::fill(w.zero.begin(), w.zero.end(), dt);
    std::fill(w.one.begin(), w.one.end(), 0.5 * dt);
    return w;
  }

  const auto& gl = quadrature::gauss_legendre(kMomentNodes);
  int first = 0;
  if (const auto* f = std::get_if<Fractional>(&spec.kind)) {
    // int_0^dt g_a = dt^a / Gamma(a+1);  (1/dt) int_0^dt g_a(s) s ds = dt^a / ((a+1) Gamma(a))
    const double p = std::pow(dt, f->alpha);
    w.zero[0] = p * specfun::recip_gamma(f->alpha + 1.0);
    w.one[0] = p * specfun::recip_gamma(f->alpha) / (f->alpha + 1.0);
    first = 1;
  }
  // Away from 0 every shipped kernel is analytic, so 16-point Gauss–Legendre
  // reproduces the moments to rounding.
  for (int m = first; m < steps; ++m) {
    const double lo = m * dt;
    const double hi = (m + 1) * dt;
    w.zero[m] = gl.integrate([&](double s) { return value_at(spec, s); }, lo, hi);
    w.one[m] = gl.integrate([&](double s) { return value_at(spec, s) * (s - lo) / dt; }, lo, hi);
  }
  return w;
}

StartingWeights starting_weights(const KernelSpec& spec, const ProductWeights& w) {
  StartingWeights sw;
  const auto* f = std::get_if<Fractional>(&spec.kind);
  if (!f || f->alpha == std::round(f->alpha)) return sw;
  const double alpha = f->alpha;
  std::vector<double> ex = {0.0, 1.0};
  for (int q = 1; q * alpha < 2.0; ++q)
    if (std::abs(q * alpha - std::round(q * alpha)) > 1e-12) ex.push_back(q * alpha);
  std::sort(ex.begin(), ex.end());
  if (static_cast<int>(ex.size()) > kMaxStartingTerms) ex.resize(kMaxStartingTerms);
  if (std::find(ex.begin(), ex.end(), 1.0) == ex.end()) ex.back() = 1.0;
  const int m = static_cast<int>(ex.size());
  const TimeGrid& grid = w.grid;
  if (grid.steps <= m) return sw;

  // Moments are formed in units of dt and in extended precision: the
  // right-hand sides are small differences of O(k^{gamma + alpha}) terms.
  using Real = long double;
  using MatrixL = Matrix<Real>;
  const int nodes = grid.nodes();
  const Real dt = grid.dt();
  const Real scale = std::pow(dt, static_cast<Real>(alpha));
  MatrixL v(m, m);
  for (int q = 0; q < m; ++q)
    for (int j = 1; j <= m; ++j) v(q, j - 1) = std::pow(static_cast<Real>(j), static_cast<Real>(ex[q]));
  const Eigen::FullPivLU<MatrixL> lu(v);

  std::vector<std::vector<Real>> powers(m, std::vector<Real>(nodes));
  std::vector<Real> exact_coef(m);
  for (int q = 0; q < m; ++q) {
    const Real g = ex[q];
    for (int j = 0; j < nodes; ++j) powers[q][j] = (j == 0 && g == 0) ? 1 : std::pow(static_cast<Real>(j), g);
    exact_coef[q] = std::exp(std::lgamma(g + 1) - std::lgamma(g + 1 + static_cast<Real>(alpha)));
  }
  sw.exponents = ex;
  sw.c = MatrixXd::Zero(nodes, m);
  Eigen::Matrix<Real, Eigen::Dynamic, 1> rhs(m);
  for (int k = 1; k < nodes; ++k) {
    for (int q = 0; q < m; ++q) {
      Real quad = 0;
      for (int i = 0; i <= k; ++i) quad += static_cast<Real>(w.weight(k, i)) * powers[q][k - i];
      const Real exact = exact_coef[q] * std::pow(static_cast<Real>(k), ex[q] + static_cast<Real>(alpha)) * scale;
      rhs(q) = exact - quad;
    }
    sw.c.row(k) = lu.solve(rhs).cast<double>().transpose();
  }
  return sw;
}

MatrixXd convolve_nodes(const ProductWeights& w, const Eigen::Ref<const MatrixXd>& f) {
  const int nodes = w.grid.nodes();
  if (f.cols() != nodes) throw DomainError("convolve: sample count does not match the grid");
  MatrixXd out = MatrixXd::Zero(f.rows(), nodes);
  for (int k = 1; k < nodes; ++k) {
    auto acc = out.col(k);
    for (int m = 0; m < k; ++m) {
      acc.noalias() += (w.zero[m] - w.one[m]) * f.col(k - m);
      acc.noalias() += w.one[m] * f.col(k - m - 1);
    }
  }
  return out;
}

CPSolution solve_cp_equations(const KernelSpec& spec, double mu, const TimeGrid& grid, CPRule rule) {
  if (!(mu >= 0.0) || !std::isfinite(mu)) throw DomainError("solve_cp_equations: mu must be >= 0");
  const int nodes = grid.nodes();
  CPSolution sol{VectorXd::Ones(nodes), VectorXd(nodes)};
  sol.r(0) = value_at(spec, 0.0);
  for (int k = 1; k < nodes; ++k) sol.r(k) = value_at(spec, grid.t(k));
  if (mu == 0.0) return sol;

  const auto w = product_weights(spec, grid);
  const bool linear = rule == CPRule::ProductLinear;
  auto weight = [&](int k, int i) { return linear ? w.weight(k, i) : (i < k ? w.zero[i] : 0.0); };
  const double denom = 1.0 + mu * weight(1, 0);
  if (!(denom > 0.0)) throw NumericalError("solve_cp_equations: non-positive diagonal weight");

  auto march = [&](VectorXd& x, const VectorXd& rhs) {
    for (int k = 1; k < nodes; ++k) {
      double hist = 0.0;
      for (int i = 1; i <= k; ++i) hist += weight(k, i) * x(k - i);
      x(k) = (rhs(k) - mu * hist) / denom;
    }
  };
  march(sol.s, VectorXd::Ones(nodes));

  if (spec.singular_at_zero() || !linear) {
    const double dt = grid.dt();
    for (int k = 1; k < nodes; ++k) sol.r(k) = (sol.s(k - 1) - sol.s(k)) / (mu * dt);
  } else {
    const VectorXd a = sol.r;
    march(sol.r, a);
  }
  return sol;
}

std::string CPReport::verdict() const {
  if (!violation) return "completely_positive_on_grid";
  std::ostringstream os;
  os.precision(6);
  os << "violated(mu=" << violation->mu << ", t=" << violation->t << ", " << violation->which << "=" << violation->value
     << ")";
  return os.str();
}

CPReport check_completely_positive(const KernelSpec& spec, const std::vector<double>& mu_grid, const TimeGrid& grid,
                                   double tol) {
  if (!(tol > 0.0)) throw DomainError("check_completely_positive: tol must be > 0");
  if (mu_grid.empty()) throw DomainError("check_completely_positive: empty mu grid");
  for (double mu : mu_grid)
    if (!(mu >= 0.0)) throw DomainError("check_completely_positive: mu must be >= 0");

  std::vector<CPSolution> sols(mu_grid.size());
  parallel_for(static_cast<int>(mu_grid.size()),
               [&](int i) { sols[i] = solve_cp_equations(spec, mu_grid[i], grid, CPRule::ProductRectangle); });

  CPReport rep{mu_grid, kInf, kInf, std::nullopt};
  for (std::size_t i = 0; i < sols.size(); ++i) {
    auto scan = [&](const VectorXd& v, char which, double& running_min) {
      for (Index k = 0; k < v.size(); ++k) {
        const double x = v(k);
        if (!std::isfinite(x)) continue;
        running_min = std::min(running_min, x);
        if (x < -tol && (!rep.violation || x < rep.violation->value))
          rep.violation = Violation{mu_grid[i], grid.t(static_cast<int>(k)), x, which};
      }
    };
    scan(sols[i].s, 's', rep.min_s);
    scan(sols[i].r, 'r', rep.min_r);
  }
  return rep;
}

MonotoneReport check_completely_monotone(const KernelSpec& spec, const std::vector<double>& times, int max_order,
                                         double tol) {
  if (max_order < 0 || max_order > 6) throw DomainError("check_completely_monotone: max_order must lie in [0, 6]");
  if (times.size() < static_cast<std::size_t>(max_order) + 1)
    throw DomainError("check_completely_monotone: not enough points for the requested order");
  if (!(times.front() > 0.0)) throw DomainError("check_completely_monotone: times must lie strictly inside (0, T]");
  const double h = times.size() > 1 ? times[1] - times[0] : 1.0;
  for (std::size_t i = 1; i < times.size(); ++i)
    if (std::abs((times[i] - times[i - 1]) - h) > 1e-9 * std::max(1.0, std::abs(times[i])))
      throw DomainError("check_completely_monotone: times must be uniformly spaced");

  std::vector<double> diff(times.size());
  double scale = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    diff[i] = kernel_eval(spec, times[i]);
    scale = std::max(scale, std::abs(diff[i]));
  }
  const double floor = -tol * std::max(scale, 1e-300);
  std::size_t len = diff.size();
  for (int order = 0; order <= max_order; ++order) {
    if (order > 0) {
      for (std::size_t i = 0; i + 1 < len; ++i) diff[i] = diff[i + 1] - diff[i];
      --len;
    }
    const double sign = order % 2 == 0 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < len; ++i) {
      if (sign * diff[i] < floor) return {false, order, times[i], sign * diff[i]};
    }
  }
  return {};
}

MonotoneReport check_completely_monotone(const KernelSpec& spec, const TimeGrid& grid, int max_order, double tol) {
  std::vector<double> times;
  for (int k = 1; k < grid.nodes(); ++k) times.push_back(grid.t(k));
  return check_completely_monotone(spec, times, max_order, tol);
}

}  // namespace fracvolt::kernels
