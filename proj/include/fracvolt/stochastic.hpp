#pragma once

// Q-Wiener noise, stochastic convolutions int_0^t S(t - tau) Psi(tau) dW(tau)
// and Monte Carlo checks of their second moments and solution residuals.
// All stochastic integrals use the left-point (Ito) rule.

#include "fracvolt/core.hpp"
#include "fracvolt/kernels.hpp"
#include "fracvolt/operators.hpp"
#include "fracvolt/resolvent.hpp"

#include <cstdint>
#include <optional>
#include <ostream>
#include <variant>
#include <vector>

namespace fracvolt {

namespace psi {
struct Identity {};
struct Constant {
  MatrixXd c;  // dim x dim_u
};
// Psi(t_k) sampled on a grid; Psi is applied at left endpoints.
struct TimeVarying {
  TimeGrid grid;
  std::vector<MatrixXd> mats;
};
}  // namespace psi

// Q = diag(q_eigs) in the standard basis of U = R^{dim_u}.
struct NoiseSpec {
  VectorXd q_eigs;
  std::variant<psi::Identity, psi::Constant, psi::TimeVarying> psi = psi::Identity{};

  static NoiseSpec identity(VectorXd q);
  static NoiseSpec constant(MatrixXd c, VectorXd q);
  static NoiseSpec time_varying(TimeGrid grid, std::vector<MatrixXd> mats, VectorXd q);

  Index dim_u() const { return q_eigs.size(); }
  Index dim() const;  // rows of Psi
  double trace() const { return q_eigs.sum(); }
  MatrixXd psi_at(int k) const;

  // Throws DomainError unless this noise is usable for an operator of this
  // dimension on this grid.
  void validate(Index op_dim, const TimeGrid& grid) const;
};

// sum_j q_j |M e_j|^2 = |M Q^{1/2}|_HS^2
double hs_norm_sq(const MatrixXd& m, const VectorXd& q);

// Integrability of Psi and A Psi in the L_2^0 norm, as max over grid nodes.
struct HypothesisReport {
  double psi_hs_sq = 0.0;
  double a_psi_hs_sq = 0.0;
  bool finite() const { return std::isfinite(psi_hs_sq) && std::isfinite(a_psi_hs_sq); }
};
HypothesisReport check_hypotheses(const NoiseSpec& noise, const OperatorD& a, const TimeGrid& grid);

// Seed of the random stream for (seed, path, refinement level).
std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t path, std::uint64_t level = 0);

struct WienerIncrements {
  TimeGrid grid;
  MatrixXd dW;  // dim_u x steps; column j is W(t_{j+1}) - W(t_j)
  std::uint64_t seed = 0;
  std::uint64_t path = 0;
  int level = 0;
};

WienerIncrements sample_wiener_path(const NoiseSpec& noise, const TimeGrid& grid, std::uint64_t seed,
                                    std::uint64_t path);
std::vector<WienerIncrements> sample_wiener(const NoiseSpec& noise, const TimeGrid& grid, std::uint64_t seed,
                                            int n_paths);
// Brownian-bridge midpoint insertion: the result lives on grid.refined() and
// its increments sum pairwise to the coarse ones.
WienerIncrements refine(const WienerIncrements& coarse, const NoiseSpec& noise);
// Increments at `level` refinements of the coarse path (seed, path).
WienerIncrements coupled_increments(const NoiseSpec& noise, const TimeGrid& coarse, std::uint64_t seed,
                                    std::uint64_t path, int level);

enum class PathKind { mild_convolution, noise_integral, other };

struct SamplePath {
  TimeGrid grid;
  MatrixXd values;  // dim x nodes
  PathKind kind = PathKind::other;
};

// X(t_k) = S(t_k) x0 + sum_{j<k} S(t_k - t_j) Psi(t_j) dW_j
SamplePath stochastic_convolution(const ResolventFamily& fam, const NoiseSpec& noise, const WienerIncrements& incs,
                                  const VectorXd& x0 = VectorXd());
// Z(t_k) = sum_{j<k} Psi(t_j) dW_j
SamplePath noise_integral(const NoiseSpec& noise, const WienerIncrements& incs);

// sum_{j<k} dt |S(t_k - t_j) Psi(t_j) Q^{1/2}|_HS^2, the exact second moment
// of the discrete convolution at node k.
double ito_isometry_value(const ResolventFamily& fam, const NoiseSpec& noise, int t_index);

struct ResidualReport {
  std::vector<double> per_path_sup;
  double mean_sup = 0.0;
  TimeGrid grid;
  std::optional<double> refinement_order;

  double stderr_sup() const;
};

// R(t_k) = X(t_k) - (a * A X)(t_k) - Z(t_k); columns are nodes.
MatrixXd residual_vectors(const SamplePath& x, const OperatorD& a, const kernels::KernelSpec& kernel,
                          const SamplePath& z);

ResidualReport strong_residual(const std::vector<SamplePath>& paths, const OperatorD& a,
                               const kernels::KernelSpec& kernel, const std::vector<SamplePath>& noise_paths);

// Per path: max over test vectors xi and nodes of
// |<X, xi> - <a * X, A^T xi> - <Z, xi>|.
ResidualReport weak_residual(const std::vector<SamplePath>& paths, const OperatorD& a,
                             const kernels::KernelSpec& kernel, const std::vector<SamplePath>& noise_paths,
                             const MatrixXd& test_vectors);

// log2(mean_sup(coarse) / mean_sup(fine)) per halving of dt.
double refinement_order(const ResidualReport& coarse, const ResidualReport& fine);

// ---- Monte Carlo ensembles -------------------------------------------------
// Paths are processed in fixed-width batches with per-path random streams and
// reduced in path order, so results do not depend on the thread count.

inline constexpr int kBatchWidth = 32;

struct MomentRow {
  int k = 0;
  double t = 0.0;
  double mean = 0.0;  // MC mean of |X(t)|^2
  double var = 0.0;   // sample variance of |X(t)|^2
  double analytic_value = 0.0;
  double stderr = 0.0;

  double z_score() const { return stderr > 0.0 ? (mean - analytic_value) / stderr : 0.0; }
};

struct MomentReport {
  std::vector<MomentRow> rows;
  int n_paths = 0;

  bool within(double n_stderr) const;
};

MomentReport ito_isometry_study(const ResolventFamily& fam, const NoiseSpec& noise, std::uint64_t seed, int n_paths,
                                const std::vector<int>& t_indices);

struct CovarianceReport {
  MatrixXd sample;
  MatrixXd analytic;  // sum_{j<k} dt S(t_k - t_j) Psi Q Psi^T S(t_k - t_j)^T
  MatrixXd stderr;
  double max_abs_z = 0.0;
};

CovarianceReport covariance_study(const ResolventFamily& fam, const NoiseSpec& noise, std::uint64_t seed,
                                  int n_paths, int t_index);

// Strong residual of the convolution X = S * (Psi dW) in X = a * (A X) + Z on
// `levels` coupled grids, coarse first.
struct StrongStudy {
  std::vector<ResidualReport> levels;

  bool strictly_decreasing() const;
  double final_over_first() const;
};

StrongStudy strong_refinement_study(const OperatorD& a, const kernels::KernelSpec& kernel, const NoiseSpec& noise,
                                    const TimeGrid& coarse, int levels, int n_paths, std::uint64_t seed);

struct ConvolutionRow {
  double n = 0.0;
  double moment = 0.0;  // MC estimate of E sup_t |W_S - W_{S_n}|^p
  double stderr = 0.0;
  double sup_mean_sq = 0.0;  // sup_t of the MC mean of |W_S - W_{S_n}|^2
  // Paired (common random numbers) decrease from the previous n.
  double decrease = 0.0;
  double decrease_stderr = 0.0;
};

struct ConvolutionReport {
  double p = 2.0;
  int n_paths = 0;
  std::vector<ConvolutionRow> rows;

  // Every step in n lowers the moment by more than k paired standard errors.
  bool decreasing_beyond(double k) const;
};

ConvolutionReport convolution_convergence(const OperatorD& a, const kernels::KernelSpec& kernel,
                                          const NoiseSpec& noise, const TimeGrid& grid,
                                          const std::vector<double>& n_list, double p, int n_paths,
                                          std::uint64_t seed);

// Columns t, mean, var, analytic_value, stderr.
void write_moment_csv(std::ostream& os, const MomentReport& report);
// Columns path, sup_residual.
void write_residual_csv(std::ostream& os, const ResidualReport& report);
// Columns n, moment, stderr, sup_mean_sq, decrease, decrease_stderr.
void write_convolution_csv(std::ostream& os, const ConvolutionReport& report);

}  // namespace fracvolt
