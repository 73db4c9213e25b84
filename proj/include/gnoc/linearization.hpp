#pragma once

/// @file
/// @brief Linearization of the tracking problem around an iterate: the
/// sensitivity map S'(u,p), its L2-adjoint, the cost gradient and the
/// normal-equation residual.
///
/// The sensitivity system dx' = A dx + Bu du + Bp dp, dx(t0) = 0 is marched
/// with the same RK4 substeps as the state, with the Jacobians evaluated at
/// the RK4 stage states of the nominal solve. That makes S' the exact
/// derivative of the discrete input-to-output map. The adjoint end-value
/// problem is marched backward with the transposed stage recursion, so
///
///     <S' du, dy>_L2 = <du, S'* dy>_L2
///
/// holds to rounding under the trapezoidal inner product.

#include <utility>
#include <vector>

#include "gnoc/tracking.hpp"

namespace gnoc {

/// Jacobians and input-interpolation location of one RK4 stage.
struct StageJacobian {
  Matrix A;
  Matrix Bu;
  Matrix Bp;
  std::size_t interval = 0;
  double theta = 0.0;
};

/// Problem data of the linear-quadratic auxiliary problem at (u_k, p_k).
struct LinearizedModel {
  TimeGrid grid;
  std::size_t substeps;
  std::size_t nx, nu, np, ny;
  GridMatrixFunction A, Bu, Bp, C, Du, Dp;
  /// y_ref - y_k at every node.
  GridSignal r;
  GridSignal u_k;
  Vector p_k;
  Trajectory x_k;
  GridSignal y_k;
  /// Stage data, index ((i * substeps) + j) * 4 + s.
  std::vector<StageJacobian> stages;

  const StageJacobian& stage(std::size_t interval, std::size_t sub, int s) const {
    return stages[(interval * substeps + sub) * 4 + static_cast<std::size_t>(s)];
  }
};

/// Simulates (u, p), evaluates the Jacobians at every node and every RK4
/// stage, and forms r = y_ref - y.
inline LinearizedModel linearize(const TrackingProblem& prob, const InputPair& in) {
  const InputPair eff = prob.effective(in);
  const auto& m = prob.model;
  const auto& grid = prob.grid;
  detail::check_input(m, eff, grid);
  const std::size_t M = prob.substeps;
  const double h = grid.dt() / static_cast<double>(M);

  std::vector<StageJacobian> stages;
  stages.reserve(grid.n_steps() * M * 4);
  auto rhs = closed_rhs(m, eff);
  auto capture = [&](int, double ts, const Vector& xs) {
    auto [i, theta] = grid.locate(ts);
    const Vector us = eff.u.sample_in(i, theta);
    stages.push_back(StageJacobian{m.f_x(ts, xs, us, eff.p), m.f_u(ts, xs, us, eff.p), m.f_p(ts, xs, us, eff.p), i,
                                   theta});
  };

  Matrix xs(static_cast<Eigen::Index>(grid.node_count()), static_cast<Eigen::Index>(m.nx));
  Vector x = m.x0;
  xs.row(0) = x.transpose();
  for (std::size_t i = 0; i < grid.n_steps(); ++i) {
    const double ti = grid.node(i);
    for (std::size_t j = 0; j < M; ++j) {
      const double t = ti + static_cast<double>(j) * h;
      x = rk4_step(rhs, t, x, h, capture);
      detail::check_state(x, t + h);
    }
    xs.row(static_cast<Eigen::Index>(i + 1)) = x.transpose();
  }
  Trajectory x_k(grid, std::move(xs));
  GridSignal y_k = output_along(m, eff, x_k);

  std::vector<Matrix> A, Bu, Bp, C, Du, Dp;
  for (std::size_t k = 0; k < grid.node_count(); ++k) {
    const double t = grid.node(k);
    const Vector xk = x_k.at(k);
    const Vector uk = eff.u.at(k);
    A.push_back(m.f_x(t, xk, uk, eff.p));
    Bu.push_back(m.f_u(t, xk, uk, eff.p));
    Bp.push_back(m.f_p(t, xk, uk, eff.p));
    C.push_back(m.h_x(t, xk, uk, eff.p));
    Du.push_back(m.h_u(t, xk, uk, eff.p));
    Dp.push_back(m.h_p(t, xk, uk, eff.p));
  }
  const std::size_t nx = m.nx, nu = m.nu, np = m.np, ny = m.ny;
  GridSignal r = prob.y_ref - y_k;
  return LinearizedModel{grid,
                         M,
                         nx,
                         nu,
                         np,
                         ny,
                         GridMatrixFunction(grid, nx, nx, std::move(A)),
                         GridMatrixFunction(grid, nx, nu, std::move(Bu)),
                         GridMatrixFunction(grid, nx, np, std::move(Bp)),
                         GridMatrixFunction(grid, ny, nx, std::move(C)),
                         GridMatrixFunction(grid, ny, nu, std::move(Du)),
                         GridMatrixFunction(grid, ny, np, std::move(Dp)),
                         std::move(r),
                         eff.u,
                         eff.p,
                         std::move(x_k),
                         std::move(y_k),
                         std::move(stages)};
}

/// Solution of the sensitivity system for one perturbation.
struct SensitivityResult {
  Trajectory dx;
  GridSignal dy;
};

/// dx' = A dx + Bu du + Bp dp, dx(t0) = 0, and dy = C dx + Du du + Dp dp.
inline SensitivityResult sensitivity_solve(const LinearizedModel& lin, const GridSignal& du, const Vector& dp) {
  if (!(du.grid() == lin.grid) || du.dim() != lin.nu) throw DimensionError("sensitivity: du shape");
  if (static_cast<std::size_t>(dp.size()) != lin.np) throw DimensionError("sensitivity: dp dimension");
  const auto& grid = lin.grid;
  const std::size_t M = lin.substeps;
  const double h = grid.dt() / static_cast<double>(M);
  const auto nx = static_cast<Eigen::Index>(lin.nx);

  Matrix xs = Matrix::Zero(static_cast<Eigen::Index>(grid.node_count()), nx);
  Vector z = Vector::Zero(nx);
  for (std::size_t i = 0; i < grid.n_steps(); ++i) {
    for (std::size_t j = 0; j < M; ++j) {
      Vector g[4];
      for (int s = 0; s < 4; ++s) {
        const auto& st = lin.stage(i, j, s);
        g[s] = st.Bu * du.sample_in(st.interval, st.theta) + st.Bp * dp;
      }
      const Vector k1 = lin.stage(i, j, 0).A * z + g[0];
      const Vector k2 = lin.stage(i, j, 1).A * (z + 0.5 * h * k1) + g[1];
      const Vector k3 = lin.stage(i, j, 2).A * (z + 0.5 * h * k2) + g[2];
      const Vector k4 = lin.stage(i, j, 3).A * (z + h * k3) + g[3];
      z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    detail::check_state(z, grid.node(i + 1));
    xs.row(static_cast<Eigen::Index>(i + 1)) = z.transpose();
  }
  Trajectory dx(grid, std::move(xs));
  Matrix ys(static_cast<Eigen::Index>(grid.node_count()), static_cast<Eigen::Index>(lin.ny));
  for (std::size_t k = 0; k < grid.node_count(); ++k)
    ys.row(static_cast<Eigen::Index>(k)) = (lin.C.at(k) * dx.at(k) + lin.Du.at(k) * du.at(k) + lin.Dp.at(k) * dp).transpose();
  return SensitivityResult{std::move(dx), GridSignal(grid, std::move(ys))};
}

/// S'(u_k, p_k)(du, dp) on the grid.
inline GridSignal sensitivity_apply(const LinearizedModel& lin, const GridSignal& du, const Vector& dp) {
  return sensitivity_solve(lin, du, dp).dy;
}

/// Raw cotangents of a linear functional of the outputs: d/d(du_k) and d/d(dp).
struct Pullback {
  Matrix u_bar;  // nodes x nu, not divided by quadrature weights
  Vector p_bar;
};

/// Pulls the node cotangents y_bar (nodes x ny, i.e. dL/dy_k) of a functional
/// L(dy) back through S': returns dL/d(du_k) for every node and dL/d(dp).
/// This is the backward (adjoint) solve: the cotangent of dx is marched from
/// tf to t0 by the transposed RK4 stage recursion.
inline Pullback pullback(const LinearizedModel& lin, const Matrix& y_bar) {
  const auto& grid = lin.grid;
  if (static_cast<std::size_t>(y_bar.rows()) != grid.node_count() || static_cast<std::size_t>(y_bar.cols()) != lin.ny)
    throw DimensionError("pullback: cotangent shape");
  const std::size_t M = lin.substeps;
  const double h = grid.dt() / static_cast<double>(M);
  const auto nx = static_cast<Eigen::Index>(lin.nx);

  Matrix u_bar = Matrix::Zero(static_cast<Eigen::Index>(grid.node_count()), static_cast<Eigen::Index>(lin.nu));
  Vector p_bar = Vector::Zero(static_cast<Eigen::Index>(lin.np));
  for (std::size_t k = 0; k < grid.node_count(); ++k) {
    const Vector yk = y_bar.row(static_cast<Eigen::Index>(k)).transpose();
    u_bar.row(static_cast<Eigen::Index>(k)) += (lin.Du.at(k).transpose() * yk).transpose();
    p_bar += lin.Dp.at(k).transpose() * yk;
  }

  auto add_stage_forcing = [&](const StageJacobian& st, const Vector& g_bar) {
    const Vector ub = st.Bu.transpose() * g_bar;
    u_bar.row(static_cast<Eigen::Index>(st.interval)) += (1.0 - st.theta) * ub.transpose();
    if (st.theta != 0.0) u_bar.row(static_cast<Eigen::Index>(st.interval + 1)) += st.theta * ub.transpose();
    p_bar += st.Bp.transpose() * g_bar;
  };

  const auto last = grid.n_steps();
  Vector z_bar = lin.C.at(last).transpose() * y_bar.row(static_cast<Eigen::Index>(last)).transpose();
  for (std::size_t i = grid.n_steps(); i-- > 0;) {
    for (std::size_t j = M; j-- > 0;) {
      const auto& s1 = lin.stage(i, j, 0);
      const auto& s2 = lin.stage(i, j, 1);
      const auto& s3 = lin.stage(i, j, 2);
      const auto& s4 = lin.stage(i, j, 3);
      Vector k1_bar = (h / 6.0) * z_bar;
      Vector k2_bar = (h / 3.0) * z_bar;
      Vector k3_bar = (h / 3.0) * z_bar;
      const Vector k4_bar = (h / 6.0) * z_bar;
      const Vector v4 = s4.A.transpose() * k4_bar;
      add_stage_forcing(s4, k4_bar);
      z_bar += v4;
      k3_bar += h * v4;
      const Vector v3 = s3.A.transpose() * k3_bar;
      add_stage_forcing(s3, k3_bar);
      z_bar += v3;
      k2_bar += 0.5 * h * v3;
      const Vector v2 = s2.A.transpose() * k2_bar;
      add_stage_forcing(s2, k2_bar);
      z_bar += v2;
      k1_bar += 0.5 * h * v2;
      const Vector v1 = s1.A.transpose() * k1_bar;
      add_stage_forcing(s1, k1_bar);
      z_bar += v1;
    }
    detail::check_state(z_bar, grid.node(i));
    z_bar += lin.C.at(i).transpose() * y_bar.row(static_cast<Eigen::Index>(i)).transpose();
  }
  (void)nx;
  return Pullback{std::move(u_bar), std::move(p_bar)};
}

/// Divides node cotangents by the trapezoidal weights: the L2 (Riesz)
/// representative of a linear functional on piecewise-linear signals.
inline GridSignal riesz(const TimeGrid& grid, Matrix u_bar) {
  for (std::size_t k = 0; k < grid.node_count(); ++k) u_bar.row(static_cast<Eigen::Index>(k)) /= grid.weight(k);
  return GridSignal(grid, std::move(u_bar));
}

/// Node cotangents of the functional <., dy>_L2.
inline Matrix weighted_cotangent(const GridSignal& dy) {
  Matrix y_bar = dy.values();
  for (std::size_t k = 0; k < dy.grid().node_count(); ++k) y_bar.row(static_cast<Eigen::Index>(k)) *= dy.grid().weight(k);
  return y_bar;
}

/// L2-adjoint of the control part of S': returns S'* dy (dimension nu).
inline GridSignal adjoint_apply(const LinearizedModel& lin, const GridSignal& dy) {
  if (!(dy.grid() == lin.grid) || dy.dim() != lin.ny) throw DimensionError("adjoint_apply: dy shape");
  return riesz(lin.grid, pullback(lin, weighted_cotangent(dy)).u_bar);
}

/// Adjoint of S' with respect to (u, p): S'* dy as (L2 function, vector).
inline std::pair<GridSignal, Vector> adjoint_apply_full(const LinearizedModel& lin, const GridSignal& dy) {
  if (!(dy.grid() == lin.grid) || dy.dim() != lin.ny) throw DimensionError("adjoint_apply: dy shape");
  Pullback pb = pullback(lin, weighted_cotangent(dy));
  return {riesz(lin.grid, std::move(pb.u_bar)), std::move(pb.p_bar)};
}

/// Node cotangents of the misfit part of a tracking cost with output error e:
/// weight_k Q e_k at every node plus T e_N at the final node.
inline Matrix misfit_cotangent(const Matrix& Q, const Matrix& T, const TimeGrid& grid, const Matrix& e) {
  Matrix y_bar(e.rows(), e.cols());
  for (std::size_t k = 0; k < grid.node_count(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    y_bar.row(kk) = grid.weight(k) * (Q * e.row(kk).transpose()).transpose();
  }
  const auto last = e.rows() - 1;
  y_bar.row(last) += (T * e.row(last).transpose()).transpose();
  return y_bar;
}

/// Gradient of J at an iterate: the u part as an L2 function, the p part as a vector.
struct CostGradient {
  GridSignal u;
  Vector p;

  /// J'(u,p)(du, dp) = <g_u, du>_L2 + g_p . dp
  double apply(const GridSignal& du, const Vector& dp) const { return l2_inner(u, du) + p.dot(dp); }
};

/// Gradient of the nonlinear tracking cost at the iterate `lin` was built at.
/// In the reduced problem the p part is zero.
inline CostGradient cost_gradient(const TrackingProblem& prob, const LinearizedModel& lin) {
  const Matrix e = -lin.r.values();
  Pullback pb = pullback(lin, misfit_cotangent(prob.Q, prob.T, lin.grid, e));
  GridSignal gu = riesz(lin.grid, std::move(pb.u_bar)) + prob.alpha_u * lin.u_k;
  Vector gp = prob.reduced() ? Vector::Zero(static_cast<Eigen::Index>(lin.np)) : Vector(pb.p_bar + prob.alpha_p * lin.p_k);
  return CostGradient{std::move(gu), std::move(gp)};
}

inline CostGradient cost_gradient(const TrackingProblem& prob, const InputPair& in) {
  return cost_gradient(prob, linearize(prob, in));
}

/// Parts of the normal-equation residual
///   [S'* S' + alpha I] du + S'*(y_k - y_ref) + alpha u_k
/// in the setting Q = I, T = 0 (control only).
struct NormalEquationResidual {
  double residual_norm = 0.0;  // |lhs + rhs-term|_L2
  double du_norm = 0.0;
  double rhs_norm = 0.0;  // |S'*(y_k - y_ref) + alpha u_k|_L2

  /// residual / max(1, |du|)
  double value() const { return residual_norm / std::max(1.0, du_norm); }
  /// residual / |rhs|
  double relative_to_rhs() const { return rhs_norm > 0.0 ? residual_norm / rhs_norm : residual_norm; }
};

inline NormalEquationResidual normal_equation_parts(const LinearizedModel& lin, const GridSignal& du, double alpha_u) {
  const Vector zero_p = Vector::Zero(static_cast<Eigen::Index>(lin.np));
  const GridSignal normal = adjoint_apply(lin, sensitivity_apply(lin, du, zero_p)) + alpha_u * du;
  const GridSignal rhs = adjoint_apply(lin, lin.r * -1.0) + alpha_u * lin.u_k;
  NormalEquationResidual out;
  out.residual_norm = l2_norm(normal + rhs);
  out.du_norm = l2_norm(du);
  out.rhs_norm = l2_norm(rhs);
  return out;
}

/// |[S'*S' + alpha I] du + S'*(y_k - y_ref) + alpha u_k|_L2 / max(1, |du|_L2).
inline double normal_equation_residual(const LinearizedModel& lin, const GridSignal& du, double alpha_u) {
  return normal_equation_parts(lin, du, alpha_u).value();
}

}  // namespace gnoc
