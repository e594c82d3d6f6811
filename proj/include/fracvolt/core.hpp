#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace fracvolt {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;
using Index = Eigen::Index;

// Input outside the documented domain of an operation.
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A computation that could not reach its accuracy or stability target.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Uniform grid t_k = k * dt on [0, t_end], node 0 included.
struct TimeGrid {
  double t_end = 1.0;
  int steps = 1;

  TimeGrid() = default;
  TimeGrid(double t_end_, int steps_) : t_end(t_end_), steps(steps_) {
    if (!(t_end_ > 0.0) || !std::isfinite(t_end_)) throw DomainError("TimeGrid: t_end must be positive and finite");
    if (steps_ < 1) throw DomainError("TimeGrid: steps must be >= 1");
  }

  double dt() const { return t_end / steps; }
  double t(int k) const { return k == steps ? t_end : k * dt(); }
  int nodes() const { return steps + 1; }
  TimeGrid refined() const { return TimeGrid(t_end, 2 * steps); }

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;
};

inline void require_same_grid(const TimeGrid& a, const TimeGrid& b, const char* what) {
  if (!(a == b)) throw DomainError(std::string(what) + ": time grids differ");
}

}  // namespace fracvolt
