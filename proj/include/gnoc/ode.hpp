#pragma once

/// @file
/// @brief Fixed-step classical RK4 on a TimeGrid, forward and backward in time.
///
/// Each grid interval is split into `substeps` equal RK4 steps. Backward
/// problems are marched by time reversal: with s = t0 + tf - t the end-value
/// problem x' = f(t, x), x(tf) = xT becomes an initial-value problem in s and
/// goes through the same stepper as forward problems.

#include <concepts>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "gnoc/timegrid.hpp"

namespace gnoc {

/// Node samples of an ODE solution.
using Trajectory = GridSignal;

template <class F>
concept VectorField = requires(const F& f, double t, const Vector& x) {
  { f(t, x) } -> std::convertible_to<Vector>;
};

/// Type-erased right-hand side (t, x) -> dx/dt with its dimension.
struct RhsField {
  std::size_t dim = 0;
  std::function<Vector(double, const Vector&)> fn;

  Vector operator()(double t, const Vector& x) const { return fn(t, x); }
};

inline constexpr std::size_t kDefaultSubsteps = 4;

/// Stage abscissae of the classical RK4 tableau.
inline constexpr double kRk4Nodes[4] = {0.0, 0.5, 0.5, 1.0};

/// One classical RK4 step of size h (h may be negative). `on_stage(s, t_s, x_s)`
/// sees the time and state at which stage s is evaluated.
template <VectorField F, class StageObserver>
Vector rk4_step(const F& f, double t, const Vector& x, double h, StageObserver&& on_stage) {
  on_stage(0, t, x);
  const Vector k1 = f(t, x);
  const Vector x2 = x + 0.5 * h * k1;
  on_stage(1, t + 0.5 * h, x2);
  const Vector k2 = f(t + 0.5 * h, x2);
  const Vector x3 = x + 0.5 * h * k2;
  on_stage(2, t + 0.5 * h, x3);
  const Vector k3 = f(t + 0.5 * h, x3);
  const Vector x4 = x + h * k3;
  on_stage(3, t + h, x4);
  const Vector k4 = f(t + h, x4);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

template <VectorField F>
Vector rk4_step(const F& f, double t, const Vector& x, double h) {
  return rk4_step(f, t, x, h, [](int, double, const Vector&) {});
}

namespace detail {

inline void check_substeps(std::size_t substeps) {
  if (substeps < 1) throw InvalidArgument("substeps must be >= 1");
}

inline void check_state(const Vector& x, double t) {
  if (!x.allFinite()) throw DivergenceError("integration diverged at t = " + std::to_string(t), t);
}

}  // namespace detail

/// Marches x' = f(t, x) from x0 at t0 to tf. `on_substep(t, x)` is called at
/// every substep boundary (including both ends).
template <VectorField F, class SubstepObserver>
Trajectory integrate_forward(const F& f, const Vector& x0, const TimeGrid& grid, std::size_t substeps,
                             SubstepObserver&& on_substep) {
  detail::check_substeps(substeps);
  detail::check_state(x0, grid.t0());
  const auto nx = x0.size();
  Matrix out(static_cast<Eigen::Index>(grid.node_count()), nx);
  out.row(0) = x0.transpose();
  const double h = grid.dt() / static_cast<double>(substeps);
  Vector x = x0;
  on_substep(grid.t0(), x);
  for (std::size_t i = 0; i < grid.n_steps(); ++i) {
    const double ti = grid.node(i);
    for (std::size_t j = 0; j < substeps; ++j) {
      const double t = ti + static_cast<double>(j) * h;
      x = rk4_step(f, t, x, h);
      if (x.size() != nx) throw DimensionError("integrate_forward: rhs changed the state dimension");
      const double tn = (j + 1 == substeps) ? grid.node(i + 1) : t + h;
      detail::check_state(x, tn);
      on_substep(tn, x);
    }
    out.row(static_cast<Eigen::Index>(i + 1)) = x.transpose();
  }
  return Trajectory(grid, std::move(out));
}

template <VectorField F>
Trajectory integrate_forward(const F& f, const Vector& x0, const TimeGrid& grid,
                             std::size_t substeps = kDefaultSubsteps) {
  return integrate_forward(f, x0, grid, substeps, [](double, const Vector&) {});
}

inline Trajectory integrate_forward(const RhsField& rhs, const Vector& x0, const TimeGrid& grid,
                                    std::size_t substeps = kDefaultSubsteps) {
  if (static_cast<std::size_t>(x0.size()) != rhs.dim) throw DimensionError("integrate_forward: x0 dimension");
  return integrate_forward(rhs.fn, x0, grid, substeps);
}

/// Solves the end-value problem x' = f(t, x), x(tf) = xT on the grid by time
/// reversal. `post(x)` may modify the state after each substep (e.g. to
/// symmetrize a flattened matrix); `on_substep(t, x)` sees every substep
/// boundary in decreasing time order.
template <VectorField F, class Post, class SubstepObserver>
Trajectory integrate_backward(const F& f, const Vector& xT, const TimeGrid& grid, std::size_t substeps, Post&& post,
                              SubstepObserver&& on_substep) {
  detail::check_substeps(substeps);
  detail::check_state(xT, grid.tf());
  const auto nx = xT.size();
  const double mirror = grid.t0() + grid.tf();
  // s = t0 + tf - t; dx/ds = -f(t0 + tf - s, x)
  auto reversed = [&](double s, const Vector& x) -> Vector { return -f(mirror - s, x); };
  Matrix out(static_cast<Eigen::Index>(grid.node_count()), nx);
  const auto last = static_cast<Eigen::Index>(grid.n_steps());
  out.row(last) = xT.transpose();
  const double h = grid.dt() / static_cast<double>(substeps);
  Vector x = xT;
  on_substep(grid.tf(), x);
  for (std::size_t i = grid.n_steps(); i-- > 0;) {
    // interval [node(i), node(i+1)] covered in s from mirror - node(i+1)
    const double s0 = mirror - grid.node(i + 1);
    for (std::size_t j = 0; j < substeps; ++j) {
      const double s = s0 + static_cast<double>(j) * h;
      x = rk4_step(reversed, s, x, h);
      if (x.size() != nx) throw DimensionError("integrate_backward: rhs changed the state dimension");
      post(x);
      const double tn = (j + 1 == substeps) ? grid.node(i) : mirror - (s + h);
      detail::check_state(x, tn);
      on_substep(tn, x);
    }
    out.row(static_cast<Eigen::Index>(i)) = x.transpose();
  }
  return Trajectory(grid, std::move(out));
}

template <VectorField F>
Trajectory integrate_backward(const F& f, const Vector& xT, const TimeGrid& grid,
                              std::size_t substeps = kDefaultSubsteps) {
  return integrate_backward(
      f, xT, grid, substeps, [](Vector&) {}, [](double, const Vector&) {});
}

inline Trajectory integrate_backward(const RhsField& rhs, const Vector& xT, const TimeGrid& grid,
                                     std::size_t substeps = kDefaultSubsteps) {
  if (static_cast<std::size_t>(xT.size()) != rhs.dim) throw DimensionError("integrate_backward: xT dimension");
  return integrate_backward(rhs.fn, xT, grid, substeps);
}

namespace detail {

inline Vector flatten(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

inline Matrix unflatten(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

inline void symmetrize_flat(Vector& v, Eigen::Index n) {
  Eigen::Map<Matrix> m(v.data(), n, n);
  const Matrix sym = 0.5 * (m + m.transpose());
  m = sym;
}

}  // namespace detail

struct MatrixBackwardOptions {
  std::size_t substeps = kDefaultSubsteps;
  /// Replace M by (M + M^T)/2 after every substep; requires a square terminal value.
  bool symmetrize = false;
};

/// Matrix end-value problem M' = rhs(t, M), M(tf) = MT integrated as the
/// column-major flattened vector system. `on_substep(t, M)` sees every
/// substep boundary in decreasing time order.
template <class MatrixRhs, class SubstepObserver>
GridMatrixFunction integrate_matrix_backward(const MatrixRhs& rhs, const Matrix& MT, const TimeGrid& grid,
                                             MatrixBackwardOptions opt, SubstepObserver&& on_substep) {
  const Eigen::Index rows = MT.rows();
  const Eigen::Index cols = MT.cols();
  if (opt.symmetrize && rows != cols) throw DimensionError("integrate_matrix_backward: symmetrize needs square MT");
  auto flat_rhs = [&](double t, const Vector& v) -> Vector {
    Matrix d = rhs(t, detail::unflatten(v, rows, cols));
    if (d.rows() != rows || d.cols() != cols) throw DimensionError("integrate_matrix_backward: rhs changed shape");
    return detail::flatten(d);
  };
  auto post = [&](Vector& v) {
    if (opt.symmetrize) detail::symmetrize_flat(v, rows);
  };
  auto observe = [&](double t, const Vector& v) { on_substep(t, detail::unflatten(v, rows, cols)); };
  Trajectory flat = integrate_backward(flat_rhs, detail::flatten(MT), grid, opt.substeps, post, observe);
  std::vector<Matrix> values;
  values.reserve(grid.node_count());
  for (std::size_t k = 0; k < grid.node_count(); ++k) values.push_back(detail::unflatten(flat.at(k), rows, cols));
  return GridMatrixFunction(grid, static_cast<std::size_t>(rows), static_cast<std::size_t>(cols), std::move(values));
}

template <class MatrixRhs>
GridMatrixFunction integrate_matrix_backward(const MatrixRhs& rhs, const Matrix& MT, const TimeGrid& grid,
                                             MatrixBackwardOptions opt = {}) {
  return integrate_matrix_backward(rhs, MT, grid, opt, [](double, const Matrix&) {});
}

}  // namespace gnoc
