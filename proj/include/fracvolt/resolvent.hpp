#pragma once

// Resolvent families S(t) of S(t)x = x + int_0^t a(t - tau) A S(tau) x dtau,
// sampled on a time grid, built by three independent methods.

#include "fracvolt/core.hpp"
#include "fracvolt/kernels.hpp"
#include "fracvolt/operators.hpp"

#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace fracvolt {

enum class Method { ml_spectral, subordination, volterra_step };

std::string to_string(Method m);

// ||S(t)|| <= M e^{omega t}
struct FittedType {
  double M = 1.0;
  double omega = 0.0;
};

// S(t_k) = basis * diag(values.col(k)) * basis^T with orthonormal basis.
struct ModalData {
  MatrixXd basis;
  MatrixXd values;  // dim x nodes
};

struct ResolventFamily {
  TimeGrid grid;
  std::vector<MatrixXd> mats;
  double alpha = 1.0;  // kernel order; NaN for kernels other than g_alpha
  Method method = Method::ml_spectral;
  std::optional<FittedType> fitted_type;
  std::optional<ModalData> modal;

  Index dim() const { return mats.empty() ? 0 : mats.front().rows(); }
  const MatrixXd& at(int k) const { return mats.at(static_cast<std::size_t>(k)); }
};

// Matrix series sum (t^alpha A)^n / Gamma(alpha n + 1) is used for operators
// without spectral data while ||t_end^alpha A|| stays below this bound.
inline constexpr double kSeriesNormLimit = 1.0;

// S_alpha(t) = E_alpha(t^alpha A), alpha in (0, 2].
ResolventFamily resolvent_ml(const OperatorD& a, double alpha, const TimeGrid& grid);

struct SubordinationOptions {
  double tail_mass = 1e-10;       // neglected density mass beyond u_max
  double change_tol = 1e-9;       // stop doubling once results move less than this
  int points_per_panel = 64;      // Gauss-Legendre points per graded panel
  int max_doublings = 6;
  double u_budget = 1e4;          // largest admissible truncation point
};

// S_alpha(t) = int_0^inf Phi_alpha(u) e^{t^alpha u A} du for alpha in (0, 1).
ResolventFamily resolvent_subordination(const OperatorD& a, double alpha, const TimeGrid& grid,
                                        const SubordinationOptions& opts = {});

// Implicit product-integration marching for an arbitrary kernel.
ResolventFamily resolvent_volterra_step(const OperatorD& a, const kernels::KernelSpec& kernel,
                                        const TimeGrid& grid);

// g_alpha (and a = 1) on operators with spectral data: resolvent_ml;
// everything else: resolvent_volterra_step.
ResolventFamily resolvent_for_kernel(const OperatorD& a, const kernels::KernelSpec& kernel, const TimeGrid& grid);

// max_k max_j |S(t_k) e_j - e_j - (a * A S)(t_k) e_j|, convolution by product
// integration on the family's own grid.
double resolvent_equation_residual(const ResolventFamily& fam, const OperatorD& a,
                                   const kernels::KernelSpec& kernel);

// max_k ||S_k A - A S_k|| / (||A|| ||S_k||), 0 when A = 0.
double commutation_defect(const ResolventFamily& fam, const OperatorD& a);

// Fitted (M, omega) from the upper convex hull of (t_k, log ||S(t_k)||).
FittedType growth_bound_fit(const ResolventFamily& fam);

// Operator 2-norm of S(t_k).
double family_norm(const ResolventFamily& fam, int k);

inline const std::vector<double> kDefaultYosidaN = {2.0, 8.0, 32.0, 128.0, 512.0};

// Full standard basis for dim <= 50, otherwise 10 fixed-seed random unit
// vectors. Columns are the probes.
MatrixXd default_probes(Index dim);

struct ConvergenceRow {
  double n = 0.0;
  double err = 0.0;       // sup over nodes and probes of |S_n(t_k) x - S(t_k) x|
  double sup_norm = 0.0;  // sup over nodes of ||S_n(t_k)||
};

struct ConvergenceReport {
  std::vector<ConvergenceRow> rows;
  Method method = Method::ml_spectral;

  bool strictly_decreasing() const;
  // err(last) / err(first); 0 when err(first) == 0.
  double reduction() const;
};

// Yosida approximations A_n for the g_alpha kernel. Uses resolvent_ml when A
// has spectral data, else volterra stepping.
ConvergenceReport convergence_study(const OperatorD& a, double alpha, const TimeGrid& grid,
                                    const std::vector<double>& n_list, const MatrixXd& probes = {});

// General kernels, always by volterra stepping.
ConvergenceReport convergence_study(const OperatorD& a, const kernels::KernelSpec& kernel,
                                    const TimeGrid& grid, const std::vector<double>& n_list,
                                    const MatrixXd& probes = {});

// One row per (k, i, j): k, t, i, j, value.
void write_family_csv(std::ostream& os, const ResolventFamily& fam);
// Columns n, err, sup_norm.
void write_convergence_csv(std::ostream& os, const ConvergenceReport& report);

}  // namespace fracvolt
