#pragma once

/// @file
/// @brief Uniform time grids, grid-sampled signals and trapezoidal L2 calculus.
///
/// Every L2 inner product and every integral cost in the library goes through
/// the trapezoidal weights defined here; signals are piecewise linear between
/// nodes, which makes the rule exact for the signal class it integrates
/// products of only to second order.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "gnoc/errors.hpp"

namespace gnoc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Uniform grid on [t0, tf] with n_steps intervals.
class TimeGrid {
 public:
  TimeGrid(double t0, double tf, std::size_t n_steps) : t0_(t0), tf_(tf), n_(n_steps) {
    if (!std::isfinite(t0) || !std::isfinite(tf) || !(tf > t0))
      throw InvalidArgument("TimeGrid: requires finite t0 < tf");
    if (n_steps < 1) throw InvalidArgument("TimeGrid: n_steps must be >= 1");
    dt_ = (tf - t0) / static_cast<double>(n_steps);
  }

  /// Grid with spacing dt; dt must divide (tf - t0) to within 1e-12 relative.
  static TimeGrid with_step(double t0, double tf, double dt) {
    if (!(dt > 0.0)) throw InvalidArgument("TimeGrid: dt must be positive");
    const double steps = (tf - t0) / dt;
    const double rounded = std::round(steps);
    if (rounded < 1.0 || std::abs(steps - rounded) > 1e-12 * std::max(1.0, steps))
      throw InvalidArgument("TimeGrid: dt does not divide the interval");
    return TimeGrid(t0, tf, static_cast<std::size_t>(rounded));
  }

  double t0() const noexcept { return t0_; }
  double tf() const noexcept { return tf_; }
  double dt() const noexcept { return dt_; }
  std::size_t n_steps() const noexcept { return n_; }
  std::size_t node_count() const noexcept { return n_ + 1; }
  double length() const noexcept { return tf_ - t0_; }

  /// t0 + k*dt; the last node is tf itself so that grids round-trip through text.
  double node(std::size_t k) const noexcept { return k == n_ ? tf_ : t0_ + static_cast<double>(k) * dt_; }

  /// Trapezoidal quadrature weight of node k.
  double weight(std::size_t k) const noexcept { return (k == 0 || k == n_) ? 0.5 * dt_ : dt_; }

  bool contains(double t) const noexcept { return t >= t0_ && t <= tf_; }

  /// Interval index i and local coordinate theta in [0,1] with t = node(i) + theta*dt.
  std::pair<std::size_t, double> locate(double t) const {
    const double slack = 1e-12 * std::max({1.0, std::abs(t0_), std::abs(tf_)});
    if (!(t >= t0_ - slack && t <= tf_ + slack))
      throw OutOfRangeError("TimeGrid: t = " + std::to_string(t) + " outside [t0, tf]");
    double s = std::max(0.0, (t - t0_) / dt_);
    auto i = static_cast<std::size_t>(std::floor(s));
    if (i >= n_) i = n_ - 1;
    double theta = s - static_cast<double>(i);
    if (theta < 0.0) theta = 0.0;
    if (theta > 1.0) theta = 1.0;
    return {i, theta};
  }

  friend bool operator==(const TimeGrid& a, const TimeGrid& b) noexcept {
    return a.t0_ == b.t0_ && a.tf_ == b.tf_ && a.n_ == b.n_;
  }

 private:
  double t0_;
  double tf_;
  std::size_t n_;
  double dt_;
};

namespace detail {

inline void require_finite(const Matrix& m, const char* who) {
  if (!m.allFinite()) throw NonFiniteError(std::string(who) + ": non-finite entry");
}

}  // namespace detail

/// Vector-valued function of time stored as node samples (one row per node).
class GridSignal {
 public:
  GridSignal(TimeGrid grid, Matrix values) : grid_(grid), values_(std::move(values)) {
    if (static_cast<std::size_t>(values_.rows()) != grid_.node_count())
      throw DimensionError("GridSignal: row count must equal node count");
    if (values_.cols() < 1) throw DimensionError("GridSignal: dim must be positive");
    detail::require_finite(values_, "GridSignal");
  }

  static GridSignal zeros(const TimeGrid& grid, std::size_t dim) {
    return GridSignal(grid, Matrix::Zero(static_cast<Eigen::Index>(grid.node_count()),
                                         static_cast<Eigen::Index>(dim)));
  }

  static GridSignal constant(const TimeGrid& grid, const Vector& value) {
    Matrix m(static_cast<Eigen::Index>(grid.node_count()), value.size());
    m.rowwise() = value.transpose();
    return GridSignal(grid, std::move(m));
  }

  /// Samples fn(t) -> Vector at every node.
  template <class Fn>
  static GridSignal from_function(const TimeGrid& grid, std::size_t dim, Fn&& fn) {
    Matrix m(static_cast<Eigen::Index>(grid.node_count()), static_cast<Eigen::Index>(dim));
    for (std::size_t k = 0; k < grid.node_count(); ++k) {
      Vector v = fn(grid.node(k));
      if (static_cast<std::size_t>(v.size()) != dim) throw DimensionError("GridSignal::from_function: size");
      m.row(static_cast<Eigen::Index>(k)) = v.transpose();
    }
    return GridSignal(grid, std::move(m));
  }

  const TimeGrid& grid() const noexcept { return grid_; }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(values_.cols()); }
  const Matrix& values() const noexcept { return values_; }

  Vector at(std::size_t k) const { return values_.row(static_cast<Eigen::Index>(k)).transpose(); }

  /// Piecewise-linear interpolant; exact row at nodes.
  Vector sample(double t) const {
    auto [i, theta] = grid_.locate(t);
    const auto r0 = values_.row(static_cast<Eigen::Index>(i));
    const auto r1 = values_.row(static_cast<Eigen::Index>(i + 1));
    if (theta == 0.0) return r0.transpose();
    if (theta == 1.0) return r1.transpose();
    return ((1.0 - theta) * r0 + theta * r1).transpose();
  }

  /// Same as sample(), for a point already located in interval i.
  Vector sample_in(std::size_t i, double theta) const {
    const auto r0 = values_.row(static_cast<Eigen::Index>(i));
    if (theta == 0.0) return r0.transpose();
    const auto r1 = values_.row(static_cast<Eigen::Index>(i + 1));
    if (theta == 1.0) return r1.transpose();
    return ((1.0 - theta) * r0 + theta * r1).transpose();
  }

  GridSignal operator+(const GridSignal& o) const {
    check_compatible(o, "GridSignal::operator+");
    return GridSignal(grid_, values_ + o.values_);
  }
  GridSignal operator-(const GridSignal& o) const {
    check_compatible(o, "GridSignal::operator-");
    return GridSignal(grid_, values_ - o.values_);
  }
  GridSignal operator*(double s) const { return GridSignal(grid_, values_ * s); }
  friend GridSignal operator*(double s, const GridSignal& a) { return a * s; }

  void check_compatible(const GridSignal& o, const char* who) const {
    if (!(grid_ == o.grid_) || dim() != o.dim())
      throw DimensionError(std::string(who) + ": grid or dimension mismatch");
  }

 private:
  TimeGrid grid_;
  Matrix values_;
};

/// Matrix-valued function of time stored as one matrix per node.
class GridMatrixFunction {
 public:
  GridMatrixFunction(TimeGrid grid, std::size_t rows, std::size_t cols, std::vector<Matrix> values)
      : grid_(grid), rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != grid_.node_count())
      throw DimensionError("GridMatrixFunction: one matrix per node required");
    for (const auto& m : values_) {
      if (static_cast<std::size_t>(m.rows()) != rows_ || static_cast<std::size_t>(m.cols()) != cols_)
        throw DimensionError("GridMatrixFunction: inconsistent node matrix shape");
      detail::require_finite(m, "GridMatrixFunction");
    }
  }

  static GridMatrixFunction constant(const TimeGrid& grid, const Matrix& m) {
    return GridMatrixFunction(grid, static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()),
                              std::vector<Matrix>(grid.node_count(), m));
  }

  const TimeGrid& grid() const noexcept { return grid_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  const Matrix& at(std::size_t k) const { return values_.at(k); }
  const std::vector<Matrix>& values() const noexcept { return values_; }

  Matrix sample(double t) const {
    auto [i, theta] = grid_.locate(t);
    return sample_in(i, theta);
  }

  Matrix sample_in(std::size_t i, double theta) const {
    if (theta == 0.0) return values_[i];
    if (theta == 1.0) return values_[i + 1];
    return (1.0 - theta) * values_[i] + theta * values_[i + 1];
  }

 private:
  TimeGrid grid_;
  std::size_t rows_;
  std::size_t cols_;
  std::vector<Matrix> values_;
};

/// Trapezoidal approximation of the integral of a(t)^T b(t) over the grid.
inline double l2_inner(const GridSignal& a, const GridSignal& b) {
  a.check_compatible(b, "l2_inner");
  const auto& grid = a.grid();
  double sum = 0.0;
  for (std::size_t k = 0; k < grid.node_count(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    sum += grid.weight(k) * a.values().row(kk).dot(b.values().row(kk));
  }
  return sum;
}

inline double l2_norm_sq(const GridSignal& a) { return l2_inner(a, a); }

inline double l2_norm(const GridSignal& a) { return std::sqrt(l2_norm_sq(a)); }

/// Trapezoidal integral of a scalar per-node sequence.
inline double trapezoid(const TimeGrid& grid, const Vector& samples) {
  if (static_cast<std::size_t>(samples.size()) != grid.node_count())
    throw DimensionError("trapezoid: sample count must equal node count");
  double sum = 0.0;
  for (std::size_t k = 0; k < grid.node_count(); ++k) sum += grid.weight(k) * samples(static_cast<Eigen::Index>(k));
  return sum;
}

/// Largest absolute entry.
inline double max_abs(const GridSignal& a) { return a.values().cwiseAbs().maxCoeff(); }

}  // namespace gnoc
