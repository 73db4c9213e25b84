#pragma once

/// @file
/// @brief Tracking cost, box constraints and their projection, reference generation.

#include <limits>
#include <optional>
#include <utility>

#include <Eigen/Eigenvalues>

#include "gnoc/model.hpp"

namespace gnoc {

/// Componentwise bounds on u(t) and p; entries may be infinite.
struct BoxBounds {
  Vector u_low, u_up;
  Vector p_low, p_up;

  static BoxBounds unbounded(std::size_t nu, std::size_t np) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    const auto u = static_cast<Eigen::Index>(nu);
    const auto p = static_cast<Eigen::Index>(np);
    return BoxBounds{Vector::Constant(u, -inf), Vector::Constant(u, inf), Vector::Constant(p, -inf),
                     Vector::Constant(p, inf)};
  }

  void validate(std::size_t nu, std::size_t np) const {
    if (static_cast<std::size_t>(u_low.size()) != nu || static_cast<std::size_t>(u_up.size()) != nu ||
        static_cast<std::size_t>(p_low.size()) != np || static_cast<std::size_t>(p_up.size()) != np)
      throw DimensionError("BoxBounds: dimensions do not match the model");
    if ((u_low.array() > u_up.array()).any() || (p_low.array() > p_up.array()).any())
      throw InvalidArgument("BoxBounds: low > up");
    if (u_low.array().isNaN().any() || u_up.array().isNaN().any() || p_low.array().isNaN().any() ||
        p_up.array().isNaN().any())
      throw InvalidArgument("BoxBounds: NaN bound");
  }

  bool u_unbounded() const {
    return u_low.array().isInf().all() && u_up.array().isInf().all();
  }
};

/// Componentwise clamp of u(t) at every node and of p into the box.
inline InputPair project(const InputPair& in, const BoxBounds& b) {
  Matrix u = in.u.values();
  for (Eigen::Index j = 0; j < u.cols(); ++j)
    u.col(j) = u.col(j).cwiseMax(b.u_low(j)).cwiseMin(b.u_up(j));
  Vector p = in.p.cwiseMax(b.p_low).cwiseMin(b.p_up);
  return InputPair(GridSignal(in.u.grid(), std::move(u)), std::move(p));
}

inline bool is_feasible(const InputPair& in, const BoxBounds& b) {
  for (Eigen::Index j = 0; j < in.u.values().cols(); ++j) {
    const auto col = in.u.values().col(j).array();
    if ((col < b.u_low(j)).any() || (col > b.u_up(j)).any()) return false;
  }
  return !((in.p.array() < b.p_low.array()).any() || (in.p.array() > b.p_up.array()).any());
}

namespace detail {

inline void require_symmetric_psd(const Matrix& m, const char* who) {
  if (m.rows() != m.cols()) throw DimensionError(std::string(who) + ": must be square");
  if (!m.allFinite()) throw NonFiniteError(std::string(who) + ": non-finite");
  const double scale = std::max(m.norm(), std::numeric_limits<double>::min());
  if ((m - m.transpose()).norm() > 1e-12 * scale) throw InvalidArgument(std::string(who) + ": not symmetric");
  if (m.size() == 0) return;
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-12 * scale)
    throw InvalidArgument(std::string(who) + ": not positive semi-definite");
}

}  // namespace detail

/// Model, grid, reference output, weights, regularization and bounds.
struct TrackingProblem {
  ModelInterface model;
  TimeGrid grid;
  GridSignal y_ref;
  Matrix Q;
  Matrix T;
  double alpha_u = 0.0;
  double alpha_p = 0.0;
  BoxBounds bounds;
  /// When set, p is frozen to this value and only u is optimized.
  std::optional<Vector> p_fixed;
  std::size_t substeps = kDefaultSubsteps;

  void validate() const {
    model.validate();
    if (!(y_ref.grid() == grid)) throw DimensionError("TrackingProblem: y_ref grid");
    if (y_ref.dim() != model.ny) throw DimensionError("TrackingProblem: y_ref dimension");
    if (static_cast<std::size_t>(Q.rows()) != model.ny || static_cast<std::size_t>(T.rows()) != model.ny)
      throw DimensionError("TrackingProblem: Q, T must be ny x ny");
    detail::require_symmetric_psd(Q, "Q");
    detail::require_symmetric_psd(T, "T");
    if (!(alpha_u >= 0.0) || !(alpha_p >= 0.0)) throw InvalidArgument("TrackingProblem: alpha must be >= 0");
    bounds.validate(model.nu, model.np);
    if (p_fixed && static_cast<std::size_t>(p_fixed->size()) != model.np)
      throw DimensionError("TrackingProblem: p_fixed dimension");
    if (substeps < 1) throw InvalidArgument("TrackingProblem: substeps");
  }

  bool reduced() const noexcept { return p_fixed.has_value(); }

  /// The input actually evaluated: p replaced by p_fixed in the reduced problem.
  InputPair effective(const InputPair& in) const {
    if (!p_fixed) return in;
    return InputPair(in.u, *p_fixed);
  }
};

/// Cost split as reported per iteration.
struct CostBreakdown {
  double total = 0.0;
  double data_misfit = 0.0;
  double terminal_misfit = 0.0;
  double reg_u = 0.0;
  double reg_p = 0.0;

  double regularization() const noexcept { return reg_u + reg_p; }
};

/// State and output of one forward simulation.
struct Simulation {
  Trajectory x;
  GridSignal y;
};

inline Simulation simulate(const TrackingProblem& prob, const InputPair& in) {
  const InputPair eff = prob.effective(in);
  Trajectory x = input_to_state(prob.model, eff, prob.grid, prob.substeps);
  GridSignal y = output_along(prob.model, eff, x);
  return Simulation{std::move(x), std::move(y)};
}

/// Cost of `in` given its simulated output y.
inline CostBreakdown cost_from_output(const TrackingProblem& prob, const InputPair& in, const GridSignal& y) {
  const auto& grid = prob.grid;
  const Matrix e = y.values() - prob.y_ref.values();
  CostBreakdown c;
  for (std::size_t k = 0; k < grid.node_count(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const Vector ek = e.row(kk).transpose();
    c.data_misfit += 0.5 * grid.weight(k) * ek.dot(prob.Q * ek);
    c.reg_u += 0.5 * prob.alpha_u * grid.weight(k) * in.u.values().row(kk).squaredNorm();
  }
  const Vector eN = e.row(e.rows() - 1).transpose();
  c.terminal_misfit = 0.5 * eN.dot(prob.T * eN);
  c.reg_p = prob.reduced() ? 0.0 : 0.5 * prob.alpha_p * in.p.squaredNorm();
  c.total = c.data_misfit + c.terminal_misfit + c.reg_u + c.reg_p;
  return c;
}

/// J(u, p) with its decomposition. Defined off the feasible set as well.
inline CostBreakdown evaluate_cost(const TrackingProblem& prob, const InputPair& in) {
  return cost_from_output(prob, in, simulate(prob, in).y);
}

/// Reference data produced by a forward simulation.
struct Reference {
  InputPair inputs;
  Trajectory x;
  GridSignal y;
};

inline Reference generate_reference(const ModelInterface& model, const InputPair& in_ref, const TimeGrid& grid,
                                    std::size_t substeps = kDefaultSubsteps) {
  Trajectory x = input_to_state(model, in_ref, grid, substeps);
  GridSignal y = output_along(model, in_ref, x);
  return Reference{in_ref, std::move(x), std::move(y)};
}

}  // namespace gnoc
