#include "fracvolt/stochastic.hpp"

#include "fracvolt/csv.hpp"
#include "fracvolt/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

namespace fracvolt {

// ---- noise -----------------------------------------------------------------

namespace {

void check_q(const VectorXd& q) {
  if (q.size() < 1) throw DomainError("NoiseSpec: q_eigs must be non-empty");
  if (!q.allFinite() || (q.array() < 0.0).any()) throw DomainError("NoiseSpec: q_eigs must be finite and >= 0");
}

}  // namespace

NoiseSpec NoiseSpec::identity(VectorXd q) {
  check_q(q);
  return NoiseSpec{std::move(q), psi::Identity{}};
}

NoiseSpec NoiseSpec::constant(MatrixXd c, VectorXd q) {
  check_q(q);
  if (c.cols() != q.size()) throw DomainError("NoiseSpec: Psi must have dim_u columns");
  if (!c.allFinite()) throw DomainError("NoiseSpec: non-finite Psi");
  return NoiseSpec{std::move(q), psi::Constant{std::move(c)}};
}

NoiseSpec NoiseSpec::time_varying(TimeGrid grid, std::vector<MatrixXd> mats, VectorXd q) {
  check_q(q);
  if (static_cast<int>(mats.size()) != grid.nodes()) throw DomainError("NoiseSpec: one Psi matrix per grid node");
  for (const auto& m : mats)
    if (m.cols() != q.size() || m.rows() != mats.front().rows() || !m.allFinite())
      throw DomainError("NoiseSpec: time-varying Psi matrices must share a finite dim x dim_u shape");
  return NoiseSpec{std::move(q), psi::TimeVarying{grid, std::move(mats)}};
}

Index NoiseSpec::dim() const {
  if (const auto* c = std::get_if<psi::Constant>(&psi)) return c->c.rows();
  if (const auto* tv = std::get_if<psi::TimeVarying>(&psi)) return tv->mats.front().rows();
  return dim_u();
}

MatrixXd NoiseSpec::psi_at(int k) const {
  if (const auto* c = std::get_if<psi::Constant>(&psi)) return c->c;
  if (const auto* tv = std::get_if<psi::TimeVarying>(&psi)) return tv->mats.at(static_cast<std::size_t>(k));
  return MatrixXd::Identity(dim_u(), dim_u());
}

void NoiseSpec::validate(Index op_dim, const TimeGrid& grid) const {
  check_q(q_eigs);
  if (dim() != op_dim) throw DomainError("NoiseSpec: Psi maps into a space of the wrong dimension");
  if (const auto* tv = std::get_if<psi::TimeVarying>(&psi)) require_same_grid(tv->grid, grid, "NoiseSpec");
}

double hs_norm_sq(const MatrixXd& m, const VectorXd& q) {
  if (m.cols() != q.size()) throw DomainError("hs_norm_sq: column count must match q");
  return (m.colwise().squaredNorm().transpose().array() * q.array()).sum();
}

HypothesisReport check_hypotheses(const NoiseSpec& noise, const OperatorD& a, const TimeGrid& grid) {
  noise.validate(a.dim(), grid);
  HypothesisReport r;
  const int nodes = std::holds_alternative<psi::TimeVarying>(noise.psi) ? grid.nodes() : 1;
  for (int k = 0; k < nodes; ++k) {
    const MatrixXd p = noise.psi_at(k);
    r.psi_hs_sq = std::max(r.psi_hs_sq, hs_norm_sq(p, noise.q_eigs));
    r.a_psi_hs_sq = std::max(r.a_psi_hs_sq, hs_norm_sq(a.matrix * p, noise.q_eigs));
  }
  return r;
}

// ---- Wiener increments -----------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t path, std::uint64_t level) {
  return splitmix64(splitmix64(splitmix64(seed) ^ path) ^ (level * 0xd1b54a32d192ed03ULL));
}

WienerIncrements sample_wiener_path(const NoiseSpec& noise, const TimeGrid& grid, std::uint64_t seed,
                                    std::uint64_t path) {
  WienerIncrements w{grid, MatrixXd(noise.dim_u(), grid.steps), seed, path, 0};
  std::mt19937_64 gen(substream_seed(seed, path, 0));
  std::normal_distribution<double> normal;
  const VectorXd sd = (noise.q_eigs * grid.dt()).cwiseSqrt();
  for (int j = 0; j < grid.steps; ++j)
    for (Index c = 0; c < noise.dim_u(); ++c) w.dW(c, j) = sd(c) * normal(gen);
  return w;
}

std::vector<WienerIncrements> sample_wiener(const NoiseSpec& noise, const TimeGrid& grid, std::uint64_t seed,
                                            int n_paths) {
  if (n_paths < 1) throw DomainError("sample_wiener: n_paths must be >= 1");
  std::vector<WienerIncrements> out(static_cast<std::size_t>(n_paths));
  parallel_for(n_paths, [&](int p) { out[p] = sample_wiener_path(noise, grid, seed, static_cast<std::uint64_t>(p)); });
  return out;
}

WienerIncrements refine(const WienerIncrements& coarse, const NoiseSpec& noise) {
  if (coarse.dW.rows() != noise.dim_u()) throw DomainError("refine: noise dimension mismatch");
  WienerIncrements fine{coarse.grid.refined(), MatrixXd(noise.dim_u(), 2 * coarse.grid.steps), coarse.seed,
                        coarse.path, coarse.level + 1};
  std::mt19937_64 gen(substream_seed(coarse.seed, coarse.path, static_cast<std::uint64_t>(fine.level)));
  std::normal_distribution<double> normal;
  // Given the coarse increment, the midpoint increment is N(dW/2, q dt/4).
  const VectorXd sd = (noise.q_eigs * (coarse.grid.dt() / 4.0)).cwiseSqrt();
  for (int j = 0; j < coarse.grid.steps; ++j)
    for (Index c = 0; c < noise.dim_u(); ++c) {
      const double first = 0.5 * coarse.dW(c, j) + sd(c) * normal(gen);
      fine.dW(c, 2 * j) = first;
      fine.dW(c, 2 * j + 1) = coarse.dW(c, j) - first;
    }
  return fine;
}

WienerIncrements coupled_increments(const NoiseSpec& noise, const TimeGrid& coarse, std::uint64_t seed,
                                    std::uint64_t path, int level) {
  WienerIncrements w = sample_wiener_path(noise, coarse, seed, path);
  for (int l = 0; l < level; ++l) w = refine(w, noise);
  return w;
}

// ---- single paths ----------------------------------------------------------

namespace {

// Columns Psi(t_j) dW_j, j = 0 .. steps-1.
MatrixXd forcing(const NoiseSpec& noise, const WienerIncrements& incs) {
  if (incs.dW.rows() != noise.dim_u()) throw DomainError("stochastic: increments do not match the noise dimension");
  if (const auto* c = std::get_if<psi::Constant>(&noise.psi)) return c->c * incs.dW;
  if (const auto* tv = std::get_if<psi::TimeVarying>(&noise.psi)) {
    require_same_grid(tv->grid, incs.grid, "stochastic");
    MatrixXd u(noise.dim(), incs.grid.steps);
    for (int j = 0; j < incs.grid.steps; ++j) u.col(j) = tv->mats[j] * incs.dW.col(j);
    return u;
  }
  return incs.dW;
}

}  // namespace

SamplePath stochastic_convolution(const ResolventFamily& fam, const NoiseSpec& noise, const WienerIncrements& incs,
                                  const VectorXd& x0) {
  require_same_grid(fam.grid, incs.grid, "stochastic_convolution");
  noise.validate(fam.dim(), fam.grid);
  const int nodes = fam.grid.nodes();
  const Index d = fam.dim();
  const MatrixXd u = forcing(noise, incs);
  SamplePath out{fam.grid, MatrixXd::Zero(d, nodes), PathKind::mild_convolution};
  if (fam.modal) {
    const MatrixXd& v = fam.modal->basis;
    const MatrixXd& sigma = fam.modal->values;
    const MatrixXd y = v.transpose() * u;
    MatrixXd xt = MatrixXd::Zero(d, nodes);
    for (int k = 1; k < nodes; ++k)
      for (int j = 0; j < k; ++j) xt.col(k) += sigma.col(k - j).cwiseProduct(y.col(j));
    out.values = v * xt;
  } else {
    for (int k = 1; k < nodes; ++k)
      for (int j = 0; j < k; ++j) out.values.col(k) += fam.at(k - j) * u.col(j);
  }
  if (x0.size() > 0) {
    if (x0.size() != d) throw DomainError("stochastic_convolution: x0 has the wrong dimension");
    for (int k = 0; k < nodes; ++k) out.values.col(k) += fam.at(k) * x0;
  }
  return out;
}

SamplePath noise_integral(const NoiseSpec& noise, const WienerIncrements& incs) {
  const MatrixXd u = forcing(noise, incs);
  SamplePath z{incs.grid, MatrixXd::Zero(noise.dim(), incs.grid.nodes()), PathKind::noise_integral};
  for (int k = 1; k < incs.grid.nodes(); ++k) z.values.col(k) = z.values.col(k - 1) + u.col(k - 1);
  return z;
}

double ito_isometry_value(const ResolventFamily& fam, const NoiseSpec& noise, int t_index) {
  if (t_index < 0 || t_index > fam.grid.steps) throw DomainError("ito_isometry_value: t_index outside the grid");
  noise.validate(fam.dim(), fam.grid);
  const double dt = fam.grid.dt();
  const bool varying = std::holds_alternative<psi::TimeVarying>(noise.psi);
  double total = 0.0;
  if (fam.modal) {
    const MatrixXd& v = fam.modal->basis;
    const MatrixXd& sigma = fam.modal->values;
    // |V diag(s) V^T Psi Q^{1/2}|_HS^2 = sum_i s_i^2 g_i, g_i = sum_c q_c (V^T Psi)_{ic}^2
    auto weights = [&](int j) {
      const MatrixXd b = v.transpose() * noise.psi_at(j);
      return VectorXd(b.array().square().matrix() * noise.q_eigs);
    };
    VectorXd g = weights(0);
    for (int j = 0; j < t_index; ++j) {
      if (varying && j > 0) g = weights(j);
      total += dt * sigma.col(t_index - j).array().square().matrix().dot(g);
    }
    return total;
  }
  for (int j = 0; j < t_index; ++j) total += dt * hs_norm_sq(fam.at(t_index - j) * noise.psi_at(j), noise.q_eigs);
  return total;
}

// ---- residuals -------------------------------------------------------------

double ResidualReport::stderr_sup() const {
  const std::size_t n = per_path_sup.size();
  if (n < 2) return 0.0;
  double ss = 0.0;
  for (double v : per_path_sup) ss += (v - mean_sup) * (v - mean_sup);
  return std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
}

namespace {

ResidualReport make_report(const TimeGrid& grid, std::vector<double> sups) {
  ResidualReport r;
  r.grid = grid;
  double s = 0.0;
  for (double v : sups) s += v;
  r.mean_sup = sups.empty() ? 0.0 : s / static_cast<double>(sups.size());
  r.per_path_sup = std::move(sups);
  return r;
}

void check_pairs(const std::vector<SamplePath>& paths, const std::vector<SamplePath>& z, Index dim) {
  if (paths.size() != z.size()) throw DomainError("residual: one noise path per sample path");
  for (std::size_t p = 0; p < paths.size(); ++p) {
    require_same_grid(paths[p].grid, z[p].grid, "residual");
    if (paths[p].values.rows() != dim || z[p].values.rows() != dim)
      throw DomainError("residual: path dimension does not match the operator");
  }
}

}  // namespace

MatrixXd residual_vectors(const SamplePath& x, const OperatorD& a, const kernels::KernelSpec& kernel,
                          const SamplePath& z) {
  require_same_grid(x.grid, z.grid, "residual_vectors");
  if (x.values.rows() != a.dim() || z.values.rows() != a.dim())
    throw DomainError("residual_vectors: dimension mismatch");
  const MatrixXd conv = kernels::convolve_nodes(kernels::product_weights(kernel, x.grid), x.values);
  return x.values - a.matrix * conv - z.values;
}

ResidualReport strong_residual(const std::vector<SamplePath>& paths, const OperatorD& a,
                               const kernels::KernelSpec& kernel, const std::vector<SamplePath>& noise_paths) {
  check_pairs(paths, noise_paths, a.dim());
  if (paths.empty()) throw DomainError("strong_residual: no paths");
  const auto w = kernels::product_weights(kernel, paths.front().grid);
  std::vector<double> sups(paths.size());
  parallel_for(static_cast<int>(paths.size()), [&](int p) {
    require_same_grid(paths[p].grid, w.grid, "strong_residual");
    const MatrixXd conv = kernels::convolve_nodes(w, paths[p].values);
    const MatrixXd r = paths[p].values - a.matrix * conv - noise_paths[p].values;
    sups[p] = r.colwise().norm().maxCoeff();
  });
  return make_report(paths.front().grid, std::move(sups));
}

ResidualReport weak_residual(const std::vector<SamplePath>& paths, const OperatorD& a,
                             const kernels::KernelSpec& kernel, const std::vector<SamplePath>& noise_paths,
                             const MatrixXd& test_vectors) {
  check_pairs(paths, noise_paths, a.dim());
  if (paths.empty()) throw DomainError("weak_residual: no paths");
  if (test_vectors.rows() != a.dim() || test_vectors.cols() < 1)
    throw DomainError("weak_residual: test vectors must be columns of the operator's dimension");
  for (Index j = 0; j < test_vectors.cols(); ++j)
    if (std::abs(test_vectors.col(j).norm() - 1.0) > 1e-12) throw DomainError("weak_residual: test vectors must be unit vectors");
  const auto w = kernels::product_weights(kernel, paths.front().grid);
  const MatrixXd a_star_xi = a.matrix.transpose() * test_vectors;
  std::vector<double> sups(paths.size());
  parallel_for(static_cast<int>(paths.size()), [&](int p) {
    require_same_grid(paths[p].grid, w.grid, "weak_residual");
    const MatrixXd conv = kernels::convolve_nodes(w, paths[p].values);
    const MatrixXd r = test_vectors.transpose() * paths[p].values - a_star_xi.transpose() * conv -
                       test_vectors.transpose() * noise_paths[p].values;
    sups[p] = r.cwiseAbs().maxCoeff();
  });
  return make_report(paths.front().grid, std::move(sups));
}

double refinement_order(const ResidualReport& coarse, const ResidualReport& fine) {
  const double ratio = coarse.grid.dt() / fine.grid.dt();
  return std::log(coarse.mean_sup / fine.mean_sup) / std::log(ratio);
}

// ---- batched Monte Carlo engine ---------------------------------------------

namespace {

// One batch of kBatchWidth paths (unused columns are zero). Coordinates are
// the shared eigenbasis when every family is modal, else the standard basis.
struct Batch {
  int first = 0;
  int count = 0;
  std::vector<std::vector<MatrixXd>> x;  // [family][coordinate]: nodes x width
  std::vector<MatrixXd> y;               // [coordinate]: steps x width, forcing in coordinates
};

struct Engine {
  std::vector<const ResolventFamily*> fams;
  const NoiseSpec* noise = nullptr;
  std::function<WienerIncrements(int)> increments;
  int n_paths = 0;
  std::vector<int> rows;  // nodes to compute; empty means all (others stay zero)

  const TimeGrid& grid() const { return fams.front()->grid; }

  bool modal() const {
    for (const auto* f : fams)
      if (!f->modal || !(f->modal->basis == fams.front()->modal->basis)) return false;
    return true;
  }

  int batches() const { return (n_paths + kBatchWidth - 1) / kBatchWidth; }

  void run(const std::function<void(int, const Batch&)>& visit) const {
    if (fams.empty() || n_paths < 1) throw DomainError("monte carlo: nothing to simulate");
    for (const auto* f : fams) {
      require_same_grid(f->grid, grid(), "monte carlo");
      noise->validate(f->dim(), f->grid);
    }
    const bool use_modal = modal();
    const int steps = grid().steps;
    const int nodes = grid().nodes();
    const Index d = fams.front()->dim();

    parallel_for(batches(), [&](int b) {
      Batch batch;
      batch.first = b * kBatchWidth;
      batch.count = std::min(kBatchWidth, n_paths - batch.first);
      batch.y.assign(static_cast<std::size_t>(d), MatrixXd::Zero(steps, kBatchWidth));
      std::vector<MatrixXd> forcings(static_cast<std::size_t>(batch.count));
      for (int p = 0; p < batch.count; ++p) {
        const WienerIncrements incs = increments(batch.first + p);
        require_same_grid(incs.grid, grid(), "monte carlo");
        MatrixXd u = forcing(*noise, incs);
        if (use_modal) u = fams.front()->modal->basis.transpose() * u;
        for (Index i = 0; i < d; ++i) batch.y[i].col(p) = u.row(i).transpose();
        forcings[p] = std::move(u);
      }
      batch.x.resize(fams.size());
      if (use_modal) {
        // Per mode, the convolution is a lower-triangular Toeplitz product.
        MatrixXd toeplitz(rows.empty() ? steps : 0, rows.empty() ? steps : 0);
        for (std::size_t f = 0; f < fams.size(); ++f) {
          const MatrixXd& sigma = fams[f]->modal->values;
          batch.x[f].assign(static_cast<std::size_t>(d), MatrixXd::Zero(nodes, kBatchWidth));
          for (Index i = 0; i < d; ++i) {
            if (!rows.empty()) {
              for (int k : rows) {
                if (k == 0) continue;
                const Eigen::RowVectorXd lags = sigma.row(i).segment(1, k).reverse();
                batch.x[f][i].row(k).noalias() = lags * batch.y[i].topRows(k);
              }
              continue;
            }
            toeplitz.setZero();
            for (int c = 0; c < steps; ++c)
              for (int r = c; r < steps; ++r) toeplitz(r, c) = sigma(i, r - c + 1);
            batch.x[f][i].bottomRows(steps).noalias() = toeplitz.triangularView<Eigen::Lower>() * batch.y[i];
          }
        }
      } else {
        for (std::size_t f = 0; f < fams.size(); ++f) {
          batch.x[f].assign(static_cast<std::size_t>(d), MatrixXd::Zero(nodes, kBatchWidth));
          for (int p = 0; p < batch.count; ++p) {
            MatrixXd xs = MatrixXd::Zero(d, nodes);
            for (int k = 1; k < nodes; ++k)
              for (int j = 0; j < k; ++j) xs.col(k) += fams[f]->at(k - j) * forcings[p].col(j);
            for (Index i = 0; i < d; ++i) batch.x[f][i].col(p) = xs.row(i).transpose();
          }
        }
      }
      visit(b, batch);
    });
  }
};

// |x(t_k)|^2 for every node and path of a batch.
MatrixXd squared_norms(const std::vector<MatrixXd>& coords) {
  MatrixXd s = MatrixXd::Zero(coords.front().rows(), coords.front().cols());
  for (const auto& c : coords) s += c.cwiseAbs2();
  return s;
}

struct MeanVar {
  double mean = 0.0;
  double var = 0.0;
  double stderr = 0.0;
};

MeanVar mean_var(const std::vector<double>& v) {
  MeanVar m;
  const double n = static_cast<double>(v.size());
  for (double x : v) m.mean += x;
  m.mean /= n;
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.var = ss / (n - 1.0);
    m.stderr = std::sqrt(m.var / n);
  }
  return m;
}

}  // namespace

bool MomentReport::within(double n_stderr) const {
  for (const auto& r : rows)
    if (!(std::abs(r.mean - r.analytic_value) <= n_stderr * r.stderr)) return false;
  return true;
}

MomentReport ito_isometry_study(const ResolventFamily& fam, const NoiseSpec& noise, std::uint64_t seed, int n_paths,
                                const std::vector<int>& t_indices) {
  for (int k : t_indices)
    if (k < 0 || k > fam.grid.steps) throw DomainError("ito_isometry_study: t index outside the grid");
  Engine eng{{&fam}, &noise, [&](int p) { return sample_wiener_path(noise, fam.grid, seed, static_cast<std::uint64_t>(p)); },
             n_paths, t_indices};
  std::vector<std::vector<double>> samples(t_indices.size(), std::vector<double>(static_cast<std::size_t>(n_paths)));
  eng.run([&](int, const Batch& b) {
    const MatrixXd sq = squared_norms(b.x[0]);
    for (std::size_t i = 0; i < t_indices.size(); ++i)
      for (int p = 0; p < b.count; ++p) samples[i][b.first + p] = sq(t_indices[i], p);
  });
  MomentReport report;
  report.n_paths = n_paths;
  for (std::size_t i = 0; i < t_indices.size(); ++i) {
    const MeanVar mv = mean_var(samples[i]);
    report.rows.push_back({t_indices[i], fam.grid.t(t_indices[i]), mv.mean, mv.var,
                           ito_isometry_value(fam, noise, t_indices[i]), mv.stderr});
  }
  return report;
}

CovarianceReport covariance_study(const ResolventFamily& fam, const NoiseSpec& noise, std::uint64_t seed,
                                  int n_paths, int t_index) {
  if (t_index < 1 || t_index > fam.grid.steps) throw DomainError("covariance_study: t index outside the grid");
  if (n_paths < 2) throw DomainError("covariance_study: need at least two paths");
  Engine eng{{&fam}, &noise, [&](int p) { return sample_wiener_path(noise, fam.grid, seed, static_cast<std::uint64_t>(p)); },
             n_paths, {t_index}};
  const Index d = fam.dim();
  MatrixXd xs(d, n_paths);
  const MatrixXd basis = eng.modal() ? fam.modal->basis : MatrixXd::Identity(d, d);
  eng.run([&](int, const Batch& b) {
    MatrixXd coords(d, b.count);
    for (Index i = 0; i < d; ++i) coords.row(i) = b.x[0][i].row(t_index).head(b.count);
    xs.middleCols(b.first, b.count) = basis * coords;
  });
  CovarianceReport r;
  r.sample = MatrixXd::Zero(d, d);
  r.stderr = MatrixXd::Zero(d, d);
  // Zero-mean process: E[X_i X_j] estimated by the mean of products.
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j <= i; ++j) {
      std::vector<double> prod(static_cast<std::size_t>(n_paths));
      for (int p = 0; p < n_paths; ++p) prod[p] = xs(i, p) * xs(j, p);
      const MeanVar mv = mean_var(prod);
      r.sample(i, j) = r.sample(j, i) = mv.mean;
      r.stderr(i, j) = r.stderr(j, i) = mv.stderr;
    }
  r.analytic = MatrixXd::Zero(d, d);
  const double dt = fam.grid.dt();
  const MatrixXd q = noise.q_eigs.asDiagonal();
  for (int j = 0; j < t_index; ++j) {
    const MatrixXd sp = fam.at(t_index - j) * noise.psi_at(j);
    r.analytic += dt * sp * q * sp.transpose();
  }
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) {
      const double diff = std::abs(r.sample(i, j) - r.analytic(i, j));
      const double z = r.stderr(i, j) > 0.0 ? diff / r.stderr(i, j) : (diff > 0.0 ? INFINITY : 0.0);
      r.max_abs_z = std::max(r.max_abs_z, z);
    }
  return r;
}

bool StrongStudy::strictly_decreasing() const {
  for (std::size_t i = 1; i < levels.size(); ++i)
    if (!(levels[i].mean_sup < levels[i - 1].mean_sup)) return false;
  return true;
}

double StrongStudy::final_over_first() const {
  if (levels.empty() || levels.front().mean_sup == 0.0) return 0.0;
  return levels.back().mean_sup / levels.front().mean_sup;
}

StrongStudy strong_refinement_study(const OperatorD& a, const kernels::KernelSpec& kernel, const NoiseSpec& noise,
                                    const TimeGrid& coarse, int levels, int n_paths, std::uint64_t seed) {
  if (levels < 1) throw DomainError("strong_refinement_study: levels must be >= 1");
  StrongStudy study;
  TimeGrid grid = coarse;
  for (int level = 0; level < levels; ++level, grid = grid.refined()) {
    const ResolventFamily fam = resolvent_for_kernel(a, kernel, grid);
    const auto w = kernels::product_weights(kernel, grid);
    Engine eng{{&fam}, &noise,
               [&](int p) { return coupled_increments(noise, coarse, seed, static_cast<std::uint64_t>(p), level); },
               n_paths, {}};
    std::vector<double> sups(static_cast<std::size_t>(n_paths));
    const bool diagonal = eng.modal() && a.spectral && fam.modal->basis == a.spectral->eigenvectors;
    const int nodes = grid.nodes();
    const int steps = grid.steps;

    if (diagonal) {
      // Residual in eigen coordinates: A is diagonal there and the basis is orthonormal.
      MatrixXd pw = MatrixXd::Zero(nodes, nodes);
      for (int k = 1; k < nodes; ++k)
        for (int i = 0; i <= k; ++i) pw(k, k - i) = w.weight(k, i);
      const VectorXd& lam = a.spectral->eigenvalues;
      eng.run([&](int, const Batch& b) {
        MatrixXd sq = MatrixXd::Zero(nodes, kBatchWidth);
        for (Index i = 0; i < fam.dim(); ++i) {
          const MatrixXd& x = b.x[0][i];
          MatrixXd conv(nodes, kBatchWidth);
          conv.noalias() = pw.triangularView<Eigen::Lower>() * x;
          MatrixXd r = x - lam(i) * conv;
          MatrixXd z = MatrixXd::Zero(nodes, kBatchWidth);
          for (int k = 1; k <= steps; ++k) z.row(k) = z.row(k - 1) + b.y[i].row(k - 1);
          r -= z;
          sq += r.cwiseAbs2();
        }
        for (int p = 0; p < b.count; ++p) sups[b.first + p] = std::sqrt(sq.col(p).maxCoeff());
      });
    } else {
      parallel_for(n_paths, [&](int p) {
        const WienerIncrements incs = coupled_increments(noise, coarse, seed, static_cast<std::uint64_t>(p), level);
        const SamplePath x = stochastic_convolution(fam, noise, incs);
        const SamplePath z = noise_integral(noise, incs);
        sups[p] = residual_vectors(x, a, kernel, z).colwise().norm().maxCoeff();
      });
    }
    study.levels.push_back(make_report(grid, std::move(sups)));
    if (level > 0) study.levels.back().refinement_order = refinement_order(study.levels[level - 1], study.levels.back());
  }
  return study;
}

bool ConvolutionReport::decreasing_beyond(double k) const {
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (!(rows[i].decrease > k * rows[i].decrease_stderr)) return false;
  return true;
}

ConvolutionReport convolution_convergence(const OperatorD& a, const kernels::KernelSpec& kernel,
                                          const NoiseSpec& noise, const TimeGrid& grid,
                                          const std::vector<double>& n_list, double p, int n_paths,
                                          std::uint64_t seed) {
  if (!(p >= 2.0) || !std::isfinite(p)) throw DomainError("convolution_convergence: p must be >= 2");
  if (!std::isfinite(noise.trace())) throw DomainError("convolution_convergence: Tr Q must be finite");
  const ResolventFamily ref = resolvent_for_kernel(a, kernel, grid);

  // W_S - W_{S_n} is the convolution with the family S - S_n.
  std::vector<ResolventFamily> diffs;
  for (double n : n_list) {
    ResolventFamily fn = resolvent_for_kernel(operators::yosida(a, n), kernel, grid);
    ResolventFamily diff = fn;
    for (std::size_t k = 0; k < diff.mats.size(); ++k) diff.mats[k] = ref.mats[k] - fn.mats[k];
    if (ref.modal && fn.modal && ref.modal->basis == fn.modal->basis) diff.modal->values = ref.modal->values - fn.modal->values;
    else diff.modal.reset();
    diffs.push_back(std::move(diff));
  }
  std::vector<const ResolventFamily*> ptrs;
  for (const auto& f : diffs) ptrs.push_back(&f);
  Engine eng{ptrs, &noise, [&](int q) { return sample_wiener_path(noise, grid, seed, static_cast<std::uint64_t>(q)); },
             n_paths, {}};

  const std::size_t nf = diffs.size();
  std::vector<std::vector<double>> sup_p(nf, std::vector<double>(static_cast<std::size_t>(n_paths)));
  std::vector<std::vector<VectorXd>> batch_sums(nf, std::vector<VectorXd>(static_cast<std::size_t>(eng.batches())));
  eng.run([&](int bi, const Batch& b) {
    for (std::size_t f = 0; f < nf; ++f) {
      const MatrixXd sq = squared_norms(b.x[f]);
      batch_sums[f][bi] = sq.leftCols(b.count).rowwise().sum();
      for (int q = 0; q < b.count; ++q) sup_p[f][b.first + q] = std::pow(sq.col(q).maxCoeff(), p / 2.0);
    }
  });

  ConvolutionReport report;
  report.p = p;
  report.n_paths = n_paths;
  for (std::size_t f = 0; f < nf; ++f) {
    ConvolutionRow row;
    row.n = n_list[f];
    const MeanVar mv = mean_var(sup_p[f]);
    row.moment = mv.mean;
    row.stderr = mv.stderr;
    VectorXd total = VectorXd::Zero(grid.nodes());
    for (const auto& s : batch_sums[f]) total += s;
    row.sup_mean_sq = total.maxCoeff() / n_paths;
    if (f > 0) {
      std::vector<double> d(static_cast<std::size_t>(n_paths));
      for (int q = 0; q < n_paths; ++q) d[q] = sup_p[f - 1][q] - sup_p[f][q];
      const MeanVar dv = mean_var(d);
      row.decrease = dv.mean;
      row.decrease_stderr = dv.stderr;
    }
    report.rows.push_back(row);
  }
  return report;
}

// ---- CSV ---------------------------------------------------------------------

void write_moment_csv(std::ostream& os, const MomentReport& report) {
  csv::Writer out(os, {"t", "mean", "var", "analytic_value", "stderr"});
  for (const auto& r : report.rows) out.row({r.t, r.mean, r.var, r.analytic_value, r.stderr});
}

void write_residual_csv(std::ostream& os, const ResidualReport& report) {
  csv::Writer out(os, {"path", "sup_residual"});
  for (std::size_t p = 0; p < report.per_path_sup.size(); ++p)
    out.row({static_cast<std::int64_t>(p), report.per_path_sup[p]});
}

void write_convolution_csv(std::ostream& os, const ConvolutionReport& report) {
  csv::Writer out(os, {"n", "moment", "stderr", "sup_mean_sq", "decrease", "decrease_stderr"});
  for (const auto& r : report.rows)
    out.row({r.n, r.moment, r.stderr, r.sup_mean_sq, r.decrease, r.decrease_stderr});
}

}  // namespace fracvolt
