#include "fracvolt/resolvent.hpp"

#include "fracvolt/csv.hpp"
#include "fracvolt/parallel.hpp"
#include "fracvolt/quadrature.hpp"
#include "fracvolt/specfun.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <functional>
#include <sstream>

namespace fracvolt {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_alpha(double alpha, double hi, bool hi_open, const char* what) {
  const bool ok = alpha > 0.0 && (hi_open ? alpha < hi : alpha <= hi);
  if (!ok || !std::isfinite(alpha)) throw DomainError(std::string(what) + ": alpha out of range");
}

ResolventFamily from_modal(const TimeGrid& grid, double alpha, Method method, const MatrixXd& basis,
                           MatrixXd values) {
  if (!values.allFinite()) throw NumericalError(to_string(method) + ": non-finite resolvent values");
  ResolventFamily fam;
  fam.grid = grid;
  fam.alpha = alpha;
  fam.method = method;
  const Index d = basis.rows();
  fam.mats.resize(static_cast<std::size_t>(grid.nodes()));
  fam.mats[0] = MatrixXd::Identity(d, d);
  parallel_for(grid.steps, [&](int i) {
    const int k = i + 1;
    fam.mats[k] = basis * values.col(k).asDiagonal() * basis.transpose();
  });
  values.col(0).setOnes();
  fam.modal = ModalData{basis, std::move(values)};
  return fam;
}

bool same_basis(const ResolventFamily& fam, const OperatorD& a) {
  return fam.modal && a.spectral && fam.modal->basis.rows() == a.spectral->eigenvectors.rows() &&
         fam.modal->basis == a.spectral->eigenvectors;
}

// max_j |M e_j| for M = V diag(delta) V^T P given B = V^T P.
double modal_column_sup(const VectorXd& delta, const MatrixXd& b) {
  return (delta.asDiagonal() * b).colwise().norm().maxCoeff();
}

double kernel_alpha(const kernels::KernelSpec& k) {
  if (const auto* f = std::get_if<kernels::Fractional>(&k.kind)) return f->alpha;
  if (std::holds_alternative<kernels::ConstantOne>(k.kind)) return 1.0;
  return kNaN;
}

// sum_n X^n / Gamma(alpha n + 1) for ||X|| <= kSeriesNormLimit.
MatrixXd ml_matrix_series(const MatrixXd& x, double alpha) {
  const Index d = x.rows();
  MatrixXd power = MatrixXd::Identity(d, d);
  MatrixXd sum = power;
  int small = 0;
  for (int n = 1; n < 2000; ++n) {
    power = power * x;
    const double c = specfun::recip_gamma(alpha * n + 1.0);
    sum += c * power;
    const double term = std::abs(c) * power.cwiseAbs().maxCoeff();
    small = term <= 1e-17 * std::max(1.0, sum.cwiseAbs().maxCoeff()) ? small + 1 : 0;
    if (small >= 3) return sum;
  }
  throw NumericalError("resolvent_ml: matrix series did not converge");
}

// Composite Gauss-Legendre rule for int_0^u_max Phi_alpha(u) f(u) du with the
// density folded into the weights.
struct SubordinationRule {
  std::vector<double> u;
  std::vector<double> w;
};

SubordinationRule subordination_rule(double alpha, const std::vector<double>& edges, int points, int split) {
  const auto& gl = quadrature::gauss_legendre(points);
  SubordinationRule rule;
  for (std::size_t p = 0; p + 1 < edges.size(); ++p) {
    const double h = (edges[p + 1] - edges[p]) / split;
    for (int s = 0; s < split; ++s) {
      const double a = edges[p] + s * h;
      for (int i = 0; i < points; ++i) {
        const double u = a + 0.5 * h * (gl.nodes[i] + 1.0);
        rule.u.push_back(u);
        rule.w.push_back(0.5 * h * gl.weights[i]);
      }
    }
  }
  std::vector<double> phi(rule.u.size());
  parallel_for(static_cast<int>(rule.u.size()),
               [&](int j) { phi[j] = specfun::wright_phi(alpha, rule.u[j]); });
  SubordinationRule kept;
  for (std::size_t j = 0; j < rule.u.size(); ++j) {
    const double wj = rule.w[j] * phi[j];
    if (wj != 0.0) {
      kept.u.push_back(rule.u[j]);
      kept.w.push_back(wj);
    }
  }
  return kept;
}

// sum_j w_j e^{rate u_j}
double apply_rule(const SubordinationRule& rule, double rate) {
  double s = 0.0;
  for (std::size_t j = 0; j < rule.u.size(); ++j) s += rule.w[j] * std::exp(rate * rule.u[j]);
  return s;
}

MatrixXd apply_rule(const SubordinationRule& rule, const OperatorD& a, double scale) {
  const Index d = a.dim();
  MatrixXd s = MatrixXd::Zero(d, d);
  for (std::size_t j = 0; j < rule.u.size(); ++j) {
    if (std::abs(rule.w[j]) < 1e-300) continue;
    s += rule.w[j] * operators::semigroup(a, scale * rule.u[j]);
  }
  return s;
}

// Node subset used to judge convergence of the quadrature: the first few
// nodes, powers of two, and an even spread.
std::vector<int> sample_nodes(const TimeGrid& grid) {
  std::vector<int> ks;
  for (int k = 1; k <= grid.steps; k *= 2) ks.push_back(k);
  const int spread = std::min(grid.steps, 32);
  for (int i = 1; i <= spread; ++i) ks.push_back(static_cast<int>(std::lround(double(i) * grid.steps / spread)));
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  return ks;
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::ml_spectral: return "ml_spectral";
    case Method::subordination: return "subordination";
    case Method::volterra_step: return "volterra_step";
  }
  return "unknown";
}

ResolventFamily resolvent_ml(const OperatorD& a, double alpha, const TimeGrid& grid) {
  check_alpha(alpha, 2.0, false, "resolvent_ml");
  if (a.spectral) {
    const VectorXd& lam = a.spectral->eigenvalues;
    MatrixXd values(a.dim(), grid.nodes());
    values.col(0).setOnes();
    parallel_for(grid.steps, [&](int i) {
      const int k = i + 1;
      const double ta = std::pow(grid.t(k), alpha);
      for (Index j = 0; j < lam.size(); ++j) values(j, k) = specfun::mittag_leffler(alpha, ta * lam(j));
    });
    return from_modal(grid, alpha, Method::ml_spectral, a.spectral->eigenvectors, std::move(values));
  }
  if (operator_norm(a.matrix) * std::pow(grid.t_end, alpha) > kSeriesNormLimit)
    throw DomainError("resolvent_ml: operator without spectral data and ||t_end^alpha A|| above the series limit");
  ResolventFamily fam;
  fam.grid = grid;
  fam.alpha = alpha;
  fam.method = Method::ml_spectral;
  fam.mats.resize(static_cast<std::size_t>(grid.nodes()));
  fam.mats[0] = MatrixXd::Identity(a.dim(), a.dim());
  parallel_for(grid.steps, [&](int i) {
    const int k = i + 1;
    fam.mats[k] = ml_matrix_series(std::pow(grid.t(k), alpha) * a.matrix, alpha);
  });
  return fam;
}

ResolventFamily resolvent_subordination(const OperatorD& a, double alpha, const TimeGrid& grid,
                                        const SubordinationOptions& opts) {
  check_alpha(alpha, 1.0, true, "resolvent_subordination");
  if (opts.points_per_panel < 2 || opts.max_doublings < 1) throw DomainError("resolvent_subordination: bad options");

  // Truncation point: neglected mass of Phi_alpha(u) e^{growth u} below tail_mass.
  const double growth = std::pow(grid.t_end, alpha) * std::max(a.spectral_bound, 0.0);
  double u_max = 0.0;
  double achieved = kInf;
  for (double u = 1.0; u <= opts.u_budget; u *= 2.0) {
    const auto tail = quadrature::adaptive(
        [&](double v) { return specfun::wright_phi(alpha, v) * std::exp(growth * v); }, u, 4.0 * u,
        {1e-16, 1e-6, 200});
    achieved = tail.value;
    if (tail.value < opts.tail_mass) {
      u_max = u;
      break;
    }
  }
  if (u_max == 0.0) {
    std::ostringstream msg;
    msg << "resolvent_subordination: tail mass " << achieved << " above " << opts.tail_mass
        << " at the u budget " << opts.u_budget;
    throw NumericalError(msg.str());
  }

  // Graded panels: [0, 1e-8], then decades up to u_max.
  std::vector<double> edges = {0.0};
  for (double e = 1e-8; e < u_max; e *= 10.0) edges.push_back(e);
  edges.push_back(u_max);

  const auto samples = sample_nodes(grid);
  const Index d = a.dim();
  const bool spectral = a.spectral.has_value();

  auto evaluate_samples = [&](const SubordinationRule& rule) {
    std::vector<MatrixXd> out(samples.size());
    parallel_for(static_cast<int>(samples.size()), [&](int s) {
      const double ta = std::pow(grid.t(samples[s]), alpha);
      if (spectral) {
        const VectorXd& lam = a.spectral->eigenvalues;
        MatrixXd v(d, 1);
        for (Index j = 0; j < d; ++j) v(j, 0) = apply_rule(rule, ta * lam(j));
        out[s] = v;
      } else {
        out[s] = apply_rule(rule, a, ta);
      }
    });
    return out;
  };

  SubordinationRule rule = subordination_rule(alpha, edges, opts.points_per_panel, 1);
  auto previous = evaluate_samples(rule);
  bool converged = false;
  double change = kInf;
  for (int level = 1; level <= opts.max_doublings && !converged; ++level) {
    rule = subordination_rule(alpha, edges, opts.points_per_panel, 1 << level);
    auto current = evaluate_samples(rule);
    change = 0.0;
    for (std::size_t s = 0; s < samples.size(); ++s)
      change = std::max(change, (current[s] - previous[s]).cwiseAbs().maxCoeff());
    converged = change < opts.change_tol;
    previous = std::move(current);
  }
  if (!converged) {
    std::ostringstream msg;
    msg << "resolvent_subordination: quadrature change " << change << " did not fall below " << opts.change_tol;
    throw NumericalError(msg.str());
  }

  if (spectral) {
    const VectorXd& lam = a.spectral->eigenvalues;
    MatrixXd values(d, grid.nodes());
    values.col(0).setOnes();
    parallel_for(grid.steps, [&](int i) {
      const int k = i + 1;
      const double ta = std::pow(grid.t(k), alpha);
      for (Index j = 0; j < d; ++j) values(j, k) = apply_rule(rule, ta * lam(j));
    });
    return from_modal(grid, alpha, Method::subordination, a.spectral->eigenvectors, std::move(values));
  }

  ResolventFamily fam;
  fam.grid = grid;
  fam.alpha = alpha;
  fam.method = Method::subordination;
  fam.mats.resize(static_cast<std::size_t>(grid.nodes()));
  fam.mats[0] = MatrixXd::Identity(d, d);
  parallel_for(grid.steps, [&](int i) {
    const int k = i + 1;
    fam.mats[k] = apply_rule(rule, a, std::pow(grid.t(k), alpha));
  });
  for (const auto& m : fam.mats)
    if (!m.allFinite()) throw NumericalError("resolvent_subordination: non-finite resolvent values");
  return fam;
}

namespace {

// Product-linear rule plus starting corrections. Corrections are used for a
// mode (or a whole dense operator) only while |lambda| t_m^alpha <= 1: beyond
// that the t^{q alpha} expansion behind them no longer describes the first
// steps and the coupled start system can be close to singular.
struct CorrectedRule {
  kernels::ProductWeights w;
  kernels::StartingWeights sw;
  double reach = 0.0;

  int m() const { return sw.count(); }
  bool applies(double magnitude) const { return !sw.empty() && magnitude * reach <= 1.0; }
};

CorrectedRule corrected_rule(const kernels::KernelSpec& kernel, const TimeGrid& grid) {
  CorrectedRule r{kernels::product_weights(kernel, grid), {}, 0.0};
  r.sw = kernels::starting_weights(kernel, r.w);
  if (!r.sw.empty()) r.reach = std::pow(r.m() * grid.dt(), kernel_alpha(kernel));
  return r;
}

VectorXd correction_mask(const CorrectedRule& rule, const VectorXd& lam) {
  VectorXd mask(lam.size());
  for (Index i = 0; i < lam.size(); ++i) mask(i) = rule.applies(std::abs(lam(i))) ? 1.0 : 0.0;
  return mask;
}

}  // namespace

ResolventFamily resolvent_volterra_step(const OperatorD& a, const kernels::KernelSpec& kernel,
                                        const TimeGrid& grid) {
  const CorrectedRule rule = corrected_rule(kernel, grid);
  const auto& w = rule.w;
  const double diag = w.diagonal();
  const Index d = a.dim();
  const int nodes = grid.nodes();
  const double alpha = kernel_alpha(kernel);
  const int m = rule.m();

  if (a.spectral) {
    const VectorXd& lam = a.spectral->eigenvalues;
    const VectorXd denom = VectorXd::Ones(d) - diag * lam;
    if ((denom.array().abs() < 1e-14).any()) throw NumericalError("resolvent_volterra_step: I - w_0 A is singular");
    const VectorXd mask = correction_mask(rule, lam);
    const bool any = mask.sum() > 0.0;
    MatrixXd values(d, nodes);
    values.col(0).setOnes();
    VectorXd hist(d);
    for (int k = 1; k < nodes; ++k) {
      hist.setZero();
      for (int i = 1; i <= k; ++i) hist.noalias() += w.weight(k, i) * values.col(k - i);
      if (any && k > m) hist += mask.cwiseProduct(values.middleCols(1, m) * rule.sw.c.row(k).transpose());
      values.col(k) = (VectorXd::Ones(d) + lam.cwiseProduct(hist)).cwiseQuotient(denom);
      if (any && k == m) {
        // Corrected modes: the first m steps form one coupled system.
        for (Index i = 0; i < d; ++i) {
          if (mask(i) == 0.0) continue;
          MatrixXd sys = MatrixXd::Identity(m, m);
          VectorXd rhs = VectorXd::Ones(m);
          for (int r = 1; r <= m; ++r) {
            for (int q = 0; q < r; ++q) sys(r - 1, r - q - 1) -= lam(i) * w.weight(r, q);
            rhs(r - 1) += lam(i) * w.weight(r, r);
            for (int j = 1; j <= m; ++j) sys(r - 1, j - 1) -= lam(i) * rule.sw.c(r, j - 1);
          }
          Eigen::PartialPivLU<MatrixXd> lu(sys);
          values.row(i).segment(1, m) = lu.solve(rhs).transpose();
        }
      }
    }
    return from_modal(grid, alpha, Method::volterra_step, a.spectral->eigenvectors, std::move(values));
  }

  const MatrixXd id = MatrixXd::Identity(d, d);
  Eigen::PartialPivLU<MatrixXd> lu(id - diag * a.matrix);
  if (!(lu.rcond() > 1e-13)) throw NumericalError("resolvent_volterra_step: I - w_0 A is singular");
  const bool corrected = rule.applies(operator_norm(a.matrix));
  ResolventFamily fam;
  fam.grid = grid;
  fam.alpha = alpha;
  fam.method = Method::volterra_step;
  fam.mats.resize(static_cast<std::size_t>(nodes));
  fam.mats[0] = id;
  int first = 1;
  if (corrected) {
    // Block system for S_1 .. S_m.
    MatrixXd sys = MatrixXd::Identity(m * d, m * d);
    MatrixXd rhs(m * d, d);
    for (int r = 1; r <= m; ++r) {
      rhs.middleRows((r - 1) * d, d) = id + w.weight(r, r) * a.matrix;
      for (int q = 0; q < r; ++q) sys.block((r - 1) * d, (r - q - 1) * d, d, d) -= w.weight(r, q) * a.matrix;
      for (int j = 1; j <= m; ++j) sys.block((r - 1) * d, (j - 1) * d, d, d) -= rule.sw.c(r, j - 1) * a.matrix;
    }
    Eigen::PartialPivLU<MatrixXd> block(sys);
    const MatrixXd start = block.solve(rhs);
    for (int r = 1; r <= m; ++r) fam.mats[r] = start.middleRows((r - 1) * d, d);
    first = m + 1;
  }
  MatrixXd hist(d, d);
  for (int k = first; k < nodes; ++k) {
    hist.setZero();
    for (int i = 1; i <= k; ++i) hist.noalias() += w.weight(k, i) * fam.mats[k - i];
    if (corrected)
      for (int j = 1; j <= m; ++j) hist.noalias() += rule.sw.c(k, j - 1) * fam.mats[j];
    fam.mats[k] = lu.solve(id + a.matrix * hist);
    if (!fam.mats[k].allFinite()) throw NumericalError("resolvent_volterra_step: non-finite resolvent values");
  }
  return fam;
}

ResolventFamily resolvent_for_kernel(const OperatorD& a, const kernels::KernelSpec& kernel, const TimeGrid& grid) {
  const double alpha = kernel_alpha(kernel);
  if (a.spectral && std::isfinite(alpha) && alpha <= 2.0) return resolvent_ml(a, alpha, grid);
  return resolvent_volterra_step(a, kernel, grid);
}

double resolvent_equation_residual(const ResolventFamily& fam, const OperatorD& a,
                                   const kernels::KernelSpec& kernel) {
  if (fam.dim() != a.dim()) throw DomainError("resolvent_equation_residual: dimension mismatch");
  const CorrectedRule rule = corrected_rule(kernel, fam.grid);
  const int nodes = fam.grid.nodes();
  const Index d = a.dim();
  const int m = rule.m();

  if (same_basis(fam, a)) {
    const MatrixXd& v = fam.modal->values;
    const VectorXd& lam = a.spectral->eigenvalues;
    MatrixXd conv = kernels::convolve_nodes(rule.w, v);
    const VectorXd mask = correction_mask(rule, lam);
    if (mask.sum() > 0.0)
      for (int k = 1; k < nodes; ++k)
        conv.col(k) += mask.cwiseProduct(v.middleCols(1, m) * rule.sw.c.row(k).transpose());
    const MatrixXd vt = fam.modal->basis.transpose();
    double worst = 0.0;
    for (int k = 0; k < nodes; ++k) {
      const VectorXd r = v.col(k) - VectorXd::Ones(d) - lam.cwiseProduct(conv.col(k));
      worst = std::max(worst, modal_column_sup(r, vt));
    }
    return worst;
  }

  MatrixXd f(d * d, nodes);
  for (int k = 0; k < nodes; ++k) f.col(k) = (a.matrix * fam.at(k)).reshaped();
  MatrixXd conv = kernels::convolve_nodes(rule.w, f);
  if (rule.applies(operator_norm(a.matrix)))
    for (int k = 1; k < nodes; ++k) conv.col(k) += f.middleCols(1, m) * rule.sw.c.row(k).transpose();
  const MatrixXd id = MatrixXd::Identity(d, d);
  double worst = 0.0;
  for (int k = 0; k < nodes; ++k) {
    const MatrixXd r = fam.at(k) - id - conv.col(k).reshaped(d, d);
    worst = std::max(worst, r.colwise().norm().maxCoeff());
  }
  return worst;
}

double commutation_defect(const ResolventFamily& fam, const OperatorD& a) {
  const double na = operator_norm(a.matrix);
  if (na == 0.0) return 0.0;
  double worst = 0.0;
  for (int k = 0; k < fam.grid.nodes(); ++k) {
    const MatrixXd& s = fam.at(k);
    const double ns = family_norm(fam, k);
    if (ns == 0.0) continue;
    worst = std::max(worst, operator_norm(MatrixXd(s * a.matrix - a.matrix * s)) / (na * ns));
  }
  return worst;
}

double family_norm(const ResolventFamily& fam, int k) {
  if (fam.modal) return fam.modal->values.col(k).cwiseAbs().maxCoeff();
  return operator_norm(fam.at(k));
}

FittedType growth_bound_fit(const ResolventFamily& fam) {
  std::vector<double> ts, ys;
  for (int k = 0; k < fam.grid.nodes(); ++k) {
    const double n = family_norm(fam, k);
    if (n > 0.0) {
      ts.push_back(fam.grid.t(k));
      ys.push_back(std::log(n));
    }
  }
  if (ts.empty()) return {1.0, 0.0};
  if (ts.size() == 1) return {std::max(1.0, std::exp(ys[0])), 0.0};

  // Upper hull, t increasing.
  std::vector<std::size_t> hull;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    while (hull.size() >= 2) {
      const std::size_t p = hull[hull.size() - 2], q = hull.back();
      const double cross = (ts[q] - ts[p]) * (ys[i] - ys[p]) - (ys[q] - ys[p]) * (ts[i] - ts[p]);
      if (cross >= 0.0) hull.pop_back();
      else break;
    }
    hull.push_back(i);
  }

  // Among supporting lines of hull edges (intercept clamped at log M >= 0),
  // take the one with the smallest total gap above the data.
  auto gap = [&](double b, double omega) {
    double g = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i) g += b + omega * ts[i] - ys[i];
    return g;
  };
  auto through_origin = [&]() {
    double omega = -kInf;
    for (std::size_t i = 0; i < ts.size(); ++i)
      if (ts[i] > 0.0) omega = std::max(omega, ys[i] / ts[i]);
    return omega;
  };
  double best_b = 0.0, best_omega = 0.0, best_gap = kInf;
  for (std::size_t e = 0; e + 1 < hull.size(); ++e) {
    const std::size_t p = hull[e], q = hull[e + 1];
    double omega = (ys[q] - ys[p]) / (ts[q] - ts[p]);
    double b = ys[p] - omega * ts[p];
    if (b < 0.0) {
      b = 0.0;
      omega = through_origin();
    }
    const double g = gap(b, omega);
    if (g < best_gap) {
      best_gap = g;
      best_b = b;
      best_omega = omega;
    }
  }
  return {std::exp(best_b), best_omega};
}

MatrixXd default_probes(Index dim) {
  if (dim <= 50) return MatrixXd::Identity(dim, dim);
  std::mt19937_64 gen(0x5eed0fa11ULL);
  std::normal_distribution<double> normal;
  MatrixXd p(dim, 10);
  for (Index j = 0; j < p.cols(); ++j) {
    for (Index i = 0; i < dim; ++i) p(i, j) = normal(gen);
    p.col(j).normalize();
  }
  return p;
}

bool ConvergenceReport::strictly_decreasing() const {
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (!(rows[i].err < rows[i - 1].err)) return false;
  return true;
}

double ConvergenceReport::reduction() const {
  if (rows.empty() || rows.front().err == 0.0) return 0.0;
  return rows.back().err / rows.front().err;
}

namespace {

ConvergenceReport run_convergence(const OperatorD& a, const TimeGrid& grid, const std::vector<double>& n_list,
                                  const MatrixXd& probes_in, Method method,
                                  const std::function<ResolventFamily(const OperatorD&)>& build) {
  const MatrixXd probes = probes_in.size() == 0 ? default_probes(a.dim()) : probes_in;
  if (probes.rows() != a.dim()) throw DomainError("convergence_study: probe dimension mismatch");
  for (Index j = 0; j < probes.cols(); ++j)
    if (std::abs(probes.col(j).norm() - 1.0) > 1e-12) throw DomainError("convergence_study: probes must be unit vectors");

  const ResolventFamily ref = build(a);
  ConvergenceReport report;
  report.method = method;
  for (double n : n_list) {
    const OperatorD an = operators::yosida(a, n);
    const ResolventFamily fam = build(an);
    ConvergenceRow row;
    row.n = n;
    const bool modal = ref.modal && fam.modal && ref.modal->basis == fam.modal->basis;
    const MatrixXd b = modal ? MatrixXd(ref.modal->basis.transpose() * probes) : MatrixXd();
    for (int k = 0; k < grid.nodes(); ++k) {
      double e;
      if (modal) e = modal_column_sup(fam.modal->values.col(k) - ref.modal->values.col(k), b);
      else e = ((fam.at(k) - ref.at(k)) * probes).colwise().norm().maxCoeff();
      row.err = std::max(row.err, e);
      row.sup_norm = std::max(row.sup_norm, family_norm(fam, k));
    }
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace

ConvergenceReport convergence_study(const OperatorD& a, double alpha, const TimeGrid& grid,
                                    const std::vector<double>& n_list, const MatrixXd& probes) {
  check_alpha(alpha, 2.0, false, "convergence_study");
  if (a.spectral)
    return run_convergence(a, grid, n_list, probes, Method::ml_spectral,
                           [&](const OperatorD& op) { return resolvent_ml(op, alpha, grid); });
  const auto kernel = kernels::KernelSpec::fractional(alpha);
  return run_convergence(a, grid, n_list, probes, Method::volterra_step,
                         [&](const OperatorD& op) { return resolvent_volterra_step(op, kernel, grid); });
}

ConvergenceReport convergence_study(const OperatorD& a, const kernels::KernelSpec& kernel, const TimeGrid& grid,
                                    const std::vector<double>& n_list, const MatrixXd& probes) {
  return run_convergence(a, grid, n_list, probes, Method::volterra_step,
                         [&](const OperatorD& op) { return resolvent_volterra_step(op, kernel, grid); });
}

void write_family_csv(std::ostream& os, const ResolventFamily& fam) {
  csv::Writer out(os, {"k", "t", "i", "j", "value"});
  const Index d = fam.dim();
  for (int k = 0; k < fam.grid.nodes(); ++k)
    for (Index i = 0; i < d; ++i)
      for (Index j = 0; j < d; ++j)
        out.row({std::int64_t{k}, fam.grid.t(k), std::int64_t{i}, std::int64_t{j}, fam.at(k)(i, j)});
}

void write_convergence_csv(std::ostream& os, const ConvergenceReport& report) {
  csv::Writer out(os, {"n", "err", "sup_norm"});
  for (const auto& r : report.rows) out.row({r.n, r.err, r.sup_norm});
}

}  // namespace fracvolt
