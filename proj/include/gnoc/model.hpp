#pragma once

/// @file
/// @brief Dynamical-system abstraction x' = f(t,x,u,p), y = h(t,x,u,p), its
/// input-to-state and input-to-output maps, and the built-in models.

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <utility>

#include "gnoc/ode.hpp"

namespace gnoc {

using ModelFn = std::function<Vector(double t, const Vector& x, const Vector& u, const Vector& p)>;
using JacobianFn = std::function<Matrix(double t, const Vector& x, const Vector& u, const Vector& p)>;

/// Right-hand side f, output h, their six Jacobians, dimensions and x(t0).
struct ModelInterface {
  std::string name;
  std::size_t nx = 0;
  std::size_t nu = 0;
  std::size_t np = 0;
  std::size_t ny = 0;
  Vector x0;

  ModelFn f;
  ModelFn h;
  JacobianFn f_x;
  JacobianFn f_u;
  JacobianFn f_p;
  JacobianFn h_x;
  JacobianFn h_u;
  JacobianFn h_p;

  void validate() const {
    if (nx < 1 || nu < 1 || ny < 1) throw InvalidArgument("ModelInterface: nx, nu, ny must be positive");
    if (ny > nx) throw InvalidArgument("ModelInterface: ny <= nx required");
    if (static_cast<std::size_t>(x0.size()) != nx) throw DimensionError("ModelInterface: x0 dimension");
    if (!x0.allFinite()) throw NonFiniteError("ModelInterface: x0");
    if (!f || !h || !f_x || !f_u || !f_p || !h_x || !h_u || !h_p)
      throw InvalidArgument("ModelInterface: every mapping must be set");
  }
};

/// Decision variable (u, p).
struct InputPair {
  GridSignal u;
  Vector p;

  InputPair(GridSignal u_, Vector p_) : u(std::move(u_)), p(std::move(p_)) {
    if (!p.allFinite()) throw NonFiniteError("InputPair: p");
  }
};

namespace detail {

inline void check_input(const ModelInterface& m, const InputPair& in, const TimeGrid& grid) {
  if (!(in.u.grid() == grid)) throw DimensionError("input u lives on a different grid");
  if (in.u.dim() != m.nu) throw DimensionError("input u dimension != nu");
  if (static_cast<std::size_t>(in.p.size()) != m.np) throw DimensionError("parameter dimension != np");
}

}  // namespace detail

/// Right-hand side t -> f(t, x, u(t), p) with u interpolated linearly.
inline auto closed_rhs(const ModelInterface& model, const InputPair& in) {
  return [&model, &in](double t, const Vector& x) -> Vector { return model.f(t, x, in.u.sample(t), in.p); };
}

/// Input-to-state map: solution of x' = f(t,x,u(t),p), x(t0) = x0 at the grid nodes.
inline Trajectory input_to_state(const ModelInterface& model, const InputPair& in, const TimeGrid& grid,
                                 std::size_t substeps = kDefaultSubsteps) {
  detail::check_input(model, in, grid);
  return integrate_forward(closed_rhs(model, in), model.x0, grid, substeps);
}

/// Pointwise output h(t_k, x_k, u_k, p) along a state trajectory.
inline GridSignal output_along(const ModelInterface& model, const InputPair& in, const Trajectory& x) {
  const auto& grid = x.grid();
  Matrix y(static_cast<Eigen::Index>(grid.node_count()), static_cast<Eigen::Index>(model.ny));
  for (std::size_t k = 0; k < grid.node_count(); ++k) {
    Vector yk = model.h(grid.node(k), x.at(k), in.u.at(k), in.p);
    if (static_cast<std::size_t>(yk.size()) != model.ny) throw DimensionError("h returned wrong dimension");
    y.row(static_cast<Eigen::Index>(k)) = yk.transpose();
  }
  return GridSignal(grid, std::move(y));
}

/// Input-to-output map S(u, p).
inline GridSignal input_to_output(const ModelInterface& model, const InputPair& in, const TimeGrid& grid,
                                  std::size_t substeps = kDefaultSubsteps) {
  return output_along(model, in, input_to_state(model, in, grid, substeps));
}

// ---------------------------------------------------------------------------
// Quarter-car

/// Physical constants in SI units. The spring stiffness between the bodies is
/// the model parameter p and is not part of this struct.
struct QuarterCarParams {
  double m1 = 3600.0;    // kg, upper body
  double m2 = 380.0;     // kg, wheel
  double k2 = 1.0e6;     // N/m, tyre
  double d1 = 3.4e4;     // N s/m, damper
  double c = 40.0;       // cubic stiffness coefficient

  /// From kN-based values (k2 in kN/m, d1 in kN s/m).
  static QuarterCarParams from_kilo(double m1, double m2, double k2_kN_per_m, double d1_kN_s_per_m, double c) {
    return QuarterCarParams{m1, m2, k2_kN_per_m * 1e3, d1_kN_s_per_m * 1e3, c};
  }

  void validate() const {
    if (!(m1 > 0.0) || !(m2 > 0.0) || !(k2 > 0.0)) throw InvalidArgument("QuarterCarParams: m1, m2, k2 must be > 0");
    if (!(d1 >= 0.0) || !(c >= 0.0)) throw InvalidArgument("QuarterCarParams: d1, c must be >= 0");
  }
};

/// Nominal stiffness between the bodies, N/m.
inline constexpr double kQuarterCarReferenceStiffness = 230000.0;

/// Two-mass suspension with a cubic spring; state (x1, x2, v1, v2), road input
/// u, parameter p = spring stiffness in N/m, output = upper-body acceleration.
inline ModelInterface quarter_car_model(const QuarterCarParams& q) {
  q.validate();
  ModelInterface m;
  m.name = "quarter_car";
  m.nx = 4;
  m.nu = 1;
  m.np = 1;
  m.ny = 1;
  m.x0 = Vector::Zero(4);

  // spring force per unit stiffness and its slope
  auto spring = [q](const Vector& x) {
    const double s = x(0) - x(1);
    return std::pair{s + q.c * s * s * s, 1.0 + 3.0 * q.c * s * s};
  };

  m.f = [q, spring](double, const Vector& x, const Vector& u, const Vector& p) -> Vector {
    const auto [g, dg] = spring(x);
    (void)dg;
    const double dv = x(2) - x(3);
    Vector dx(4);
    dx << x(2), x(3), -(p(0) / q.m1) * g - (q.d1 / q.m1) * dv,
        (p(0) / q.m2) * g + (q.d1 / q.m2) * dv - (q.k2 / q.m2) * (x(1) - u(0));
    return dx;
  };
  m.h = [q, spring](double, const Vector& x, const Vector&, const Vector& p) -> Vector {
    const auto [g, dg] = spring(x);
    (void)dg;
    Vector y(1);
    y << -(p(0) / q.m1) * g - (q.d1 / q.m1) * (x(2) - x(3));
    return y;
  };
  m.f_x = [q, spring](double, const Vector& x, const Vector&, const Vector& p) -> Matrix {
    const auto [g, dg] = spring(x);
    (void)g;
    const double a = p(0) / q.m1 * dg;
    const double b = p(0) / q.m2 * dg;
    Matrix J(4, 4);
    J << 0, 0, 1, 0,  //
        0, 0, 0, 1,   //
        -a, a, -q.d1 / q.m1, q.d1 / q.m1, b, -b - q.k2 / q.m2, q.d1 / q.m2, -q.d1 / q.m2;
    return J;
  };
  m.f_u = [q](double, const Vector&, const Vector&, const Vector&) -> Matrix {
    Matrix J = Matrix::Zero(4, 1);
    J(3, 0) = q.k2 / q.m2;
    return J;
  };
  m.f_p = [q, spring](double, const Vector& x, const Vector&, const Vector&) -> Matrix {
    const auto [g, dg] = spring(x);
    (void)dg;
    Matrix J = Matrix::Zero(4, 1);
    J(2, 0) = -g / q.m1;
    J(3, 0) = g / q.m2;
    return J;
  };
  m.h_x = [q, spring](double, const Vector& x, const Vector&, const Vector& p) -> Matrix {
    const auto [g, dg] = spring(x);
    (void)g;
    const double a = p(0) / q.m1 * dg;
    Matrix J(1, 4);
    J << -a, a, -q.d1 / q.m1, q.d1 / q.m1;
    return J;
  };
  m.h_u = [](double, const Vector&, const Vector&, const Vector&) -> Matrix { return Matrix::Zero(1, 1); };
  m.h_p = [q, spring](double, const Vector& x, const Vector&, const Vector&) -> Matrix {
    const auto [g, dg] = spring(x);
    (void)dg;
    Matrix J(1, 1);
    J << -g / q.m1;
    return J;
  };
  return m;
}

// ---------------------------------------------------------------------------
// Linear time-invariant model

/// x' = A x + Bu u + Bp p, y = C x + Du u + Dp p. Bp/Dp may have zero columns.
struct LinearModelMatrices {
  Matrix A, Bu, Bp, C, Du, Dp;
  Vector x0;
};

/// Fills empty Bp, Dp, Du, x0 with zeros of the right shape and checks all shapes.
inline LinearModelMatrices normalized(LinearModelMatrices lm) {
  const auto nx = lm.A.rows();
  const auto nu = lm.Bu.cols();
  const auto ny = lm.C.rows();
  if (lm.Bp.size() == 0) lm.Bp = Matrix::Zero(nx, 0);
  if (lm.Dp.size() == 0) lm.Dp = Matrix::Zero(ny, lm.Bp.cols());
  if (lm.Du.size() == 0) lm.Du = Matrix::Zero(ny, nu);
  if (lm.x0.size() == 0) lm.x0 = Vector::Zero(nx);
  if (lm.A.cols() != nx || lm.Bu.rows() != nx || lm.Bp.rows() != nx || lm.C.cols() != nx || lm.Du.rows() != ny ||
      lm.Du.cols() != nu || lm.Dp.rows() != ny || lm.Dp.cols() != lm.Bp.cols() || lm.x0.size() != nx)
    throw DimensionError("linear_model: inconsistent matrix shapes");
  return lm;
}

inline ModelInterface linear_model(LinearModelMatrices lm_in) {
  const LinearModelMatrices lm = normalized(std::move(lm_in));
  const auto nx = lm.A.rows();
  const auto nu = lm.Bu.cols();
  const auto ny = lm.C.rows();
  ModelInterface m;
  m.name = "linear";
  m.nx = static_cast<std::size_t>(nx);
  m.nu = static_cast<std::size_t>(nu);
  m.np = static_cast<std::size_t>(lm.Bp.cols());
  m.ny = static_cast<std::size_t>(ny);
  m.x0 = lm.x0;
  m.f = [lm](double, const Vector& x, const Vector& u, const Vector& p) -> Vector {
    return lm.A * x + lm.Bu * u + lm.Bp * p;
  };
  m.h = [lm](double, const Vector& x, const Vector& u, const Vector& p) -> Vector {
    return lm.C * x + lm.Du * u + lm.Dp * p;
  };
  m.f_x = [lm](double, const Vector&, const Vector&, const Vector&) -> Matrix { return lm.A; };
  m.f_u = [lm](double, const Vector&, const Vector&, const Vector&) -> Matrix { return lm.Bu; };
  m.f_p = [lm](double, const Vector&, const Vector&, const Vector&) -> Matrix { return lm.Bp; };
  m.h_x = [lm](double, const Vector&, const Vector&, const Vector&) -> Matrix { return lm.C; };
  m.h_u = [lm](double, const Vector&, const Vector&, const Vector&) -> Matrix { return lm.Du; };
  m.h_p = [lm](double, const Vector&, const Vector&, const Vector&) -> Matrix { return lm.Dp; };
  return m;
}

// ---------------------------------------------------------------------------
// Finite-difference Jacobians

namespace detail {

/// Central differences of fn with respect to the argument selected by `which`
/// (0 = x, 1 = u, 2 = p); step max(1, |v_j|) * 1e-6 per component.
inline Matrix central_difference(const ModelFn& fn, int which, double t, const Vector& x, const Vector& u,
                                 const Vector& p) {
  const Vector& arg = which == 0 ? x : (which == 1 ? u : p);
  const Vector f0 = fn(t, x, u, p);
  Matrix J(f0.size(), arg.size());
  for (Eigen::Index j = 0; j < arg.size(); ++j) {
    const double step = std::max(1.0, std::abs(arg(j))) * 1e-6;
    Vector plus = arg;
    Vector minus = arg;
    plus(j) += step;
    minus(j) -= step;
    Vector fp, fm;
    switch (which) {
      case 0:
        fp = fn(t, plus, u, p);
        fm = fn(t, minus, u, p);
        break;
      case 1:
        fp = fn(t, x, plus, p);
        fm = fn(t, x, minus, p);
        break;
      default:
        fp = fn(t, x, u, plus);
        fm = fn(t, x, u, minus);
        break;
    }
    J.col(j) = (fp - fm) / (plus(j) - minus(j));
  }
  return J;
}

}  // namespace detail

/// Wraps f and h with central-difference Jacobians.
inline ModelInterface finite_difference_jacobians(ModelFn f, ModelFn h, std::size_t nx, std::size_t nu,
                                                  std::size_t np, std::size_t ny, Vector x0,
                                                  std::string name = "finite_difference") {
  ModelInterface m;
  m.name = std::move(name);
  m.nx = nx;
  m.nu = nu;
  m.np = np;
  m.ny = ny;
  m.x0 = std::move(x0);
  m.f = f;
  m.h = h;
  auto jac = [](ModelFn fn, int which) -> JacobianFn {
    return [fn = std::move(fn), which](double t, const Vector& x, const Vector& u, const Vector& p) {
      return detail::central_difference(fn, which, t, x, u, p);
    };
  };
  m.f_x = jac(f, 0);
  m.f_u = jac(f, 1);
  m.f_p = jac(f, 2);
  m.h_x = jac(h, 0);
  m.h_u = jac(h, 1);
  m.h_p = jac(h, 2);
  m.validate();
  return m;
}

/// Worst relative disagreement of the analytic Jacobians with central
/// differences over one probe point, measured as |J - J_fd|_F / max(1, |J_fd|_F).
struct JacobianCheck {
  double worst = 0.0;
  std::string worst_name;
};

inline JacobianCheck check_jacobians_at(const ModelInterface& m, double t, const Vector& x, const Vector& u,
                                        const Vector& p) {
  JacobianCheck out;
  auto one = [&](const char* name, const JacobianFn& jac, const ModelFn& fn, int which) {
    const Matrix a = jac(t, x, u, p);
    const Matrix d = detail::central_difference(fn, which, t, x, u, p);
    if (a.rows() != d.rows() || a.cols() != d.cols()) {
      out.worst = std::numeric_limits<double>::infinity();
      out.worst_name = name;
      return;
    }
    const double err = (a - d).norm() / std::max(1.0, d.norm());
    if (err > out.worst) {
      out.worst = err;
      out.worst_name = name;
    }
  };
  one("f_x", m.f_x, m.f, 0);
  one("f_u", m.f_u, m.f, 1);
  one("f_p", m.f_p, m.f, 2);
  one("h_x", m.h_x, m.h, 0);
  one("h_u", m.h_u, m.h, 1);
  one("h_p", m.h_p, m.h, 2);
  return out;
}

/// Probes `count` random points with x ~ U(-x_scale, x_scale), u ~ U(-u_scale, u_scale)
/// and p ~ p_center * U(0.5, 1.5).
inline JacobianCheck check_jacobians(const ModelInterface& m, std::mt19937_64& rng, int count, double x_scale,
                                     double u_scale, const Vector& p_center, double t0 = 0.0, double tf = 1.0) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  JacobianCheck worst;
  for (int i = 0; i < count; ++i) {
    const double t = t0 + 0.5 * (unit(rng) + 1.0) * (tf - t0);
    Vector x(m.nx), u(m.nu), p(m.np);
    for (auto& v : x) v = x_scale * unit(rng);
    for (auto& v : u) v = u_scale * unit(rng);
    for (Eigen::Index j = 0; j < p.size(); ++j) p(j) = p_center(j) * (1.0 + 0.5 * unit(rng));
    const auto c = check_jacobians_at(m, t, x, u, p);
    if (c.worst > worst.worst) worst = c;
  }
  return worst;
}

}  // namespace gnoc
