#pragma once

/// @file
/// @brief Inner solvers for the linear-quadratic auxiliary problem: unconstrained
/// function-space gradient descent and the Riccati feedback solution.
///
/// The auxiliary cost is kept in its full form
///
///     J_a(du, dp) = 1/2 int |Q^{1/2}(dy - r)|^2 + alpha_u/2 |u_k + du|^2 dt
///                 + 1/2 |T^{1/2}(dy(tf) - r(tf))|^2 + alpha_p/2 |p_k + dp|^2
///
/// with dy = S'(du, dp), so that J_a(0, 0) equals the tracking cost at the iterate.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "gnoc/linearization.hpp"

namespace gnoc {

struct AuxProblem {
  LinearizedModel lin;
  Matrix Q;
  Matrix T;
  double alpha_u = 0.0;
  double alpha_p = 0.0;
  /// p frozen: dp is identically zero and no p-regularization is charged.
  bool p_fixed = false;
};

inline AuxProblem make_aux_problem(const TrackingProblem& prob, LinearizedModel lin) {
  return AuxProblem{std::move(lin), prob.Q, prob.T, prob.alpha_u, prob.alpha_p, prob.reduced()};
}

/// One row of inner-solver diagnostics.
struct InnerIterate {
  std::size_t iter = 0;
  double J_alpha = 0.0;
  double grad_norm = 0.0;
  double step = 0.0;
};

struct AuxSolution {
  GridSignal du;
  Vector dp;
  double cost = 0.0;
  std::size_t iterations = 0;
  std::vector<InnerIterate> diagnostics;
  std::string stop_reason;
  bool stalled = false;
};

/// J_a for a perturbation whose sensitivity dy is already known.
inline double aux_cost_from_dy(const AuxProblem& aux, const GridSignal& du, const Vector& dp, const GridSignal& dy) {
  const auto& lin = aux.lin;
  const auto& grid = lin.grid;
  const Matrix e = dy.values() - lin.r.values();
  const Matrix u = lin.u_k.values() + du.values();
  double sum = 0.0;
  for (std::size_t k = 0; k < grid.node_count(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const Vector ek = e.row(kk).transpose();
    sum += 0.5 * grid.weight(k) * (ek.dot(aux.Q * ek) + aux.alpha_u * u.row(kk).squaredNorm());
  }
  const Vector eN = e.row(e.rows() - 1).transpose();
  sum += 0.5 * eN.dot(aux.T * eN);
  if (!aux.p_fixed) sum += 0.5 * aux.alpha_p * (lin.p_k + dp).squaredNorm();
  return sum;
}

inline double aux_cost(const AuxProblem& aux, const GridSignal& du, const Vector& dp) {
  return aux_cost_from_dy(aux, du, dp, sensitivity_apply(aux.lin, du, dp));
}

namespace detail {

inline Vector zero_dp(const AuxProblem& aux) { return Vector::Zero(static_cast<Eigen::Index>(aux.lin.np)); }

inline std::pair<GridSignal, Vector> aux_gradient_from_dy(const AuxProblem& aux, const GridSignal& du, const Vector& dp,
                                                          const GridSignal& dy) {
  const auto& lin = aux.lin;
  const Matrix e = dy.values() - lin.r.values();
  Pullback pb = pullback(lin, misfit_cotangent(aux.Q, aux.T, lin.grid, e));
  GridSignal gu = riesz(lin.grid, std::move(pb.u_bar)) + aux.alpha_u * (lin.u_k + du);
  Vector gp = aux.p_fixed ? zero_dp(aux) : Vector(pb.p_bar + aux.alpha_p * (lin.p_k + dp));
  return {std::move(gu), std::move(gp)};
}

}  // namespace detail

/// Gradient of J_a at (du, dp): the u part as an L2 function, the p part as a vector.
/// The costate solve is the transposed sensitivity sweep of `pullback`.
inline std::pair<GridSignal, Vector> aux_gradient(const AuxProblem& aux, const GridSignal& du, const Vector& dp) {
  return detail::aux_gradient_from_dy(aux, du, dp, sensitivity_apply(aux.lin, du, dp));
}

struct GdSettings {
  double tol = 1e-6;
  std::size_t max_iter = 500;
  double armijo_beta = 0.3;
  double armijo_sigma = 1e-4;
  std::size_t max_backtracks = 40;
  double min_rel_decrease = 1e-10;
};

/// Steepest descent on J_a with Armijo backtracking from step 1.
/// Stops when |J_a| <= tol, grad norm <= tol (1 + |J_a|), the relative
/// decrease drops below min_rel_decrease, or max_iter is reached.
inline AuxSolution solve_aux_gd(const AuxProblem& aux, GridSignal du, Vector dp, const GdSettings& s) {
  if (!(s.tol > 0.0)) throw InvalidArgument("solve_aux_gd: tol must be positive");
  if (!(s.armijo_beta > 0.0 && s.armijo_beta < 1.0 && s.armijo_sigma > 0.0 && s.armijo_sigma < 1.0))
    throw InvalidArgument("solve_aux_gd: Armijo parameters must lie in (0,1)");
  if (aux.p_fixed) dp = detail::zero_dp(aux);
  const auto& lin = aux.lin;

  GridSignal dy = sensitivity_apply(lin, du, dp);
  double J = aux_cost_from_dy(aux, du, dp, dy);
  AuxSolution out{du, dp, J, 0, {}, "max_iter", false};

  for (std::size_t it = 0;; ++it) {
    auto [gu, gp] = detail::aux_gradient_from_dy(aux, du, dp, dy);
    const double g2 = l2_norm_sq(gu) + gp.squaredNorm();
    const double gnorm = std::sqrt(g2);
    out.diagnostics.push_back(InnerIterate{it, J, gnorm, 0.0});
    if (std::abs(J) <= s.tol) {
      out.stop_reason = "cost_tolerance";
      break;
    }
    if (gnorm <= s.tol * (1.0 + std::abs(J))) {
      out.stop_reason = "gradient_tolerance";
      break;
    }
    if (it >= s.max_iter) break;

    // J_a is quadratic and S' linear, so the trial outputs are dy + step * S'(d).
    const GridSignal ddu = gu * -1.0;
    const Vector ddp = -gp;
    const GridSignal ddy = sensitivity_apply(lin, ddu, ddp);
    double step = 1.0;
    bool accepted = false;
    for (std::size_t m = 0; m <= s.max_backtracks; ++m) {
      const GridSignal tu = du + step * ddu;
      const Vector tp = dp + step * ddp;
      const GridSignal ty = dy + step * ddy;
      const double Jt = aux_cost_from_dy(aux, tu, tp, ty);
      if (Jt <= J - s.armijo_sigma * step * g2) {
        const double decrease = J - Jt;
        du = tu;
        dp = tp;
        dy = ty;
        J = Jt;
        accepted = true;
        out.diagnostics.back().step = step;
        if (decrease < s.min_rel_decrease * std::max(1.0, std::abs(J))) {
          out.iterations = it + 1;
          auto [fu, fp] = detail::aux_gradient_from_dy(aux, du, dp, dy);
          out.diagnostics.push_back(InnerIterate{it + 1, J, std::sqrt(l2_norm_sq(fu) + fp.squaredNorm()), 0.0});
          out.du = du;
          out.dp = dp;
          out.cost = J;
          out.stop_reason = "relative_decrease";
          return out;
        }
        break;
      }
      step *= s.armijo_beta;
    }
    if (!accepted) {
      out.stalled = true;
      out.stop_reason = "armijo_stall";
      break;
    }
    out.iterations = it + 1;
  }
  out.du = std::move(du);
  out.dp = std::move(dp);
  out.cost = J;
  return out;
}

inline AuxSolution solve_aux_gd(const AuxProblem& aux, const GdSettings& s = {}) {
  return solve_aux_gd(aux, GridSignal::zeros(aux.lin.grid, aux.lin.nu), detail::zero_dp(aux), s);
}

/// Grid-sampled matrices of the Riccati solution.
struct RiccatiSolveArtifacts {
  GridMatrixFunction P;
  GridSignal beta;
  GridMatrixFunction F;
  GridMatrixFunction R;
  GridMatrixFunction Z;
  GridMatrixFunction Qtilde;
  GridMatrixFunction Qhat;
  Matrix That;
  Matrix Ttilde;
  GridSignal k;
  GridSignal phi;
  /// Nodes where Qhat has an eigenvalue below -1e-8 (scaled); plus 1 if That does.
  std::size_t psd_violations = 0;
  /// RK4 substeps per interval used for P and beta.
  std::size_t substeps = 0;
  double min_Qhat_eigenvalue = 0.0;
  std::vector<std::string> warnings;
};

namespace detail {

/// Riccati coefficients at one time instant.
struct RiccatiCoeffs {
  Matrix At;    // A - Bu R^-1 Z^T C
  Matrix S;     // Bu R^-1 Bu^T
  Matrix W;     // C^T Qt C
  Matrix Rinv;
  Matrix R;
  Matrix Z;
  Matrix Qt;
  Vector phi;   // -Bu R^-1 k + Bu R^-1 Z^T r
  Vector c;     // C^T Qt r + C^T Z R^-1 k
  Vector k;
  Vector v;     // feedforward part of the control law
  Matrix K;     // feedback gain of the control law, given P
};

inline Matrix spd_inverse(const Matrix& R, double t) {
  Eigen::LLT<Matrix> llt(R);
  if (llt.info() != Eigen::Success)
    throw NotPositiveDefinite("R(t) is not positive definite at t = " + std::to_string(t));
  return llt.solve(Matrix::Identity(R.rows(), R.cols()));
}

inline RiccatiCoeffs riccati_coeffs(const AuxProblem& aux, const Matrix& A, const Matrix& Bu, const Matrix& C,
                                    const Matrix& Du, const Vector& r, const Vector& u, double t) {
  RiccatiCoeffs c;
  const auto nu = Du.cols();
  c.R = Du.transpose() * aux.Q * Du + aux.alpha_u * Matrix::Identity(nu, nu);
  c.Rinv = spd_inverse(c.R, t);
  c.Z = aux.Q * Du;
  c.Qt = aux.Q - c.Z * c.Rinv * c.Z.transpose();
  c.At = A - Bu * c.Rinv * c.Z.transpose() * C;
  c.S = Bu * c.Rinv * Bu.transpose();
  c.W = C.transpose() * c.Qt * C;
  c.k = aux.alpha_u * u;
  c.phi = -Bu * (c.Rinv * c.k) + Bu * (c.Rinv * (c.Z.transpose() * r));
  c.c = C.transpose() * (c.Qt * r) + C.transpose() * (c.Z * (c.Rinv * c.k));
  return c;
}

/// Completes K and v from P, beta at the same instant.
inline void control_law(RiccatiCoeffs& c, const Matrix& Bu, const Matrix& C, const Vector& r, const Matrix& P,
                        const Vector& beta) {
  c.K = -c.Rinv * Bu.transpose() * P - c.Rinv * c.Z.transpose() * C;
  c.v = -c.Rinv * (Bu.transpose() * beta) + c.Rinv * (c.Z.transpose() * r) - c.Rinv * c.k;
}

inline double min_eigenvalue(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace detail

/// Node-wise R, Z, Qtilde, Qhat, k and the terminal That, Ttilde.
/// Qhat and That are only used for the positive semi-definiteness check, which
/// records warnings rather than failing. R not positive definite throws.
inline RiccatiSolveArtifacts assemble_riccati_data(const AuxProblem& aux) {
  const auto& lin = aux.lin;
  const auto& grid = lin.grid;
  const auto nx = static_cast<Eigen::Index>(lin.nx);
  const auto nu = static_cast<Eigen::Index>(lin.nu);
  const auto ny = static_cast<Eigen::Index>(lin.ny);
  if (!(aux.alpha_u > 0.0)) throw NotPositiveDefinite("Riccati method requires alpha_u > 0");

  std::vector<Matrix> R, Z, Qt, Qh;
  Matrix ks(static_cast<Eigen::Index>(grid.node_count()), nu);
  Matrix phis(static_cast<Eigen::Index>(grid.node_count()), nx);
  std::size_t violations = 0;
  double min_eig = std::numeric_limits<double>::infinity();
  std::vector<std::string> warnings;
  for (std::size_t n = 0; n < grid.node_count(); ++n) {
    const double t = grid.node(n);
    const Vector r = lin.r.at(n);
    auto c = detail::riccati_coeffs(aux, lin.A.at(n), lin.Bu.at(n), lin.C.at(n), lin.Du.at(n), r, lin.u_k.at(n), t);
    const Matrix& C = lin.C.at(n);
    Matrix qh(nx + 1, nx + 1);
    qh.topLeftCorner(nx, nx) = c.W;
    const Vector off = -C.transpose() * (c.Qt * r) - C.transpose() * (c.Z * (c.Rinv * c.k));
    qh.topRightCorner(nx, 1) = off;
    qh.bottomLeftCorner(1, nx) = off.transpose();
    qh(nx, nx) = r.dot(c.Qt * r) + 2.0 * r.dot(c.Z * (c.Rinv * c.k)) - c.k.dot(c.Rinv * c.k);
    const double e = detail::min_eigenvalue(qh);
    min_eig = std::min(min_eig, e);
    if (e < -1e-8 * std::max(1.0, qh.norm())) ++violations;
    ks.row(static_cast<Eigen::Index>(n)) = c.k.transpose();
    phis.row(static_cast<Eigen::Index>(n)) = c.phi.transpose();
    R.push_back(std::move(c.R));
    Z.push_back(std::move(c.Z));
    Qt.push_back(std::move(c.Qt));
    Qh.push_back(std::move(qh));
  }
  if (violations > 0)
    warnings.push_back("Qhat(t) is not positive semi-definite at " + std::to_string(violations) + " of " +
                       std::to_string(grid.node_count()) + " nodes (min eigenvalue " + std::to_string(min_eig) + ")");

  const std::size_t N = grid.n_steps();
  const Matrix& CN = lin.C.at(N);
  const Matrix& DuN = lin.Du.at(N);
  const Matrix Zt = aux.T * DuN;
  const Matrix Rt = DuN.transpose() * aux.T * DuN;
  const Matrix Tt = aux.T - Zt * Rt.completeOrthogonalDecomposition().pseudoInverse() * Zt.transpose();
  const Vector rN = lin.r.at(N);
  Matrix th(nx + 1, nx + 1);
  th.topLeftCorner(nx, nx) = CN.transpose() * Tt * CN;
  th.topRightCorner(nx, 1) = -CN.transpose() * (Tt * rN);
  th.bottomLeftCorner(1, nx) = th.topRightCorner(nx, 1).transpose();
  th(nx, nx) = rN.dot(Tt * rN);
  if (detail::min_eigenvalue(th) < -1e-8 * std::max(1.0, th.norm())) {
    ++violations;
    warnings.push_back("That is not positive semi-definite");
  }

  const std::size_t nxs = lin.nx, nus = lin.nu, nys = lin.ny;
  (void)ny;
  std::vector<Matrix> zeros_x(grid.node_count(), Matrix::Zero(nx, nx));
  std::vector<Matrix> zeros_f(grid.node_count(), Matrix::Zero(nu, nx));
  return RiccatiSolveArtifacts{GridMatrixFunction(grid, nxs, nxs, std::move(zeros_x)),
                               GridSignal::zeros(grid, nxs),
                               GridMatrixFunction(grid, nus, nxs, std::move(zeros_f)),
                               GridMatrixFunction(grid, nus, nus, std::move(R)),
                               GridMatrixFunction(grid, nys, nus, std::move(Z)),
                               GridMatrixFunction(grid, nys, nys, std::move(Qt)),
                               GridMatrixFunction(grid, nxs + 1, nxs + 1, std::move(Qh)),
                               std::move(th),
                               Tt,
                               GridSignal(grid, std::move(ks)),
                               GridSignal(grid, std::move(phis)),
                               violations,
                               0,
                               min_eig,
                               std::move(warnings)};
}

struct RiccatiSettings {
  /// RK4 substeps per grid interval for P, beta and the closed loop; 0 = automatic.
  std::size_t substeps = 0;
  /// Automatic choice keeps h * |lambda| <= this for the Hamiltonian eigenvalues.
  double max_step_radius = 0.5;
};

/// Substeps per interval such that h times the largest Hamiltonian eigenvalue
/// modulus (sampled at every node) stays below `radius`; never fewer than the
/// state integration uses.
inline std::size_t riccati_substeps(const AuxProblem& aux, double radius) {
  const auto& lin = aux.lin;
  const auto nx = static_cast<Eigen::Index>(lin.nx);
  double rho = 0.0;
  for (std::size_t n = 0; n < lin.grid.node_count(); ++n) {
    const auto c = detail::riccati_coeffs(aux, lin.A.at(n), lin.Bu.at(n), lin.C.at(n), lin.Du.at(n), lin.r.at(n),
                                          lin.u_k.at(n), lin.grid.node(n));
    Matrix H(2 * nx, 2 * nx);
    H << c.At, -c.S, -c.W, -c.At.transpose();
    Eigen::EigenSolver<Matrix> es(H, false);
    rho = std::max(rho, es.eigenvalues().cwiseAbs().maxCoeff());
  }
  const auto need = static_cast<std::size_t>(std::ceil(lin.grid.dt() * rho / radius));
  return std::max(lin.substeps, need);
}

/// One-shot Riccati solution of the p-fixed auxiliary problem:
/// (a) P backward from C^T Tt C, (b) beta backward from -C^T Tt r jointly with P,
/// (c) closed-loop dx forward, (d) du from the feedback law at the nodes.
inline std::pair<AuxSolution, RiccatiSolveArtifacts> solve_aux_riccati(const AuxProblem& aux,
                                                                       const RiccatiSettings& settings = {}) {
  if (!aux.p_fixed) throw InvalidArgument("solve_aux_riccati: requires a p-fixed auxiliary problem");
  RiccatiSolveArtifacts art = assemble_riccati_data(aux);
  const auto& lin = aux.lin;
  const auto& grid = lin.grid;
  const std::size_t M = settings.substeps > 0 ? settings.substeps : riccati_substeps(aux, settings.max_step_radius);
  art.substeps = M;
  const auto nx = static_cast<Eigen::Index>(lin.nx);
  const auto nu = static_cast<Eigen::Index>(lin.nu);
  const Eigen::Index nP = nx * nx;

  // Coefficients at the nodes, interpolated linearly in between.
  struct Coeffs {
    Matrix A, Bu, At, S, W, G, KC;  // G = R^-1 Bu^T, KC = -R^-1 Z^T C
    Vector phi, c, vr;              // vr = R^-1 Z^T r - R^-1 k
  };
  std::vector<Coeffs> table;
  table.reserve(grid.node_count());
  for (std::size_t n = 0; n < grid.node_count(); ++n) {
    const Matrix& Bu = lin.Bu.at(n);
    const Matrix& C = lin.C.at(n);
    const Vector r = lin.r.at(n);
    auto c = detail::riccati_coeffs(aux, lin.A.at(n), Bu, C, lin.Du.at(n), r, lin.u_k.at(n), grid.node(n));
    table.push_back(Coeffs{lin.A.at(n), Bu, c.At, c.S, c.W, c.Rinv * Bu.transpose(), -c.Rinv * c.Z.transpose() * C,
                           c.phi, c.c, c.Rinv * (c.Z.transpose() * r) - c.Rinv * c.k});
  }
  auto coeffs_at = [&](double t) -> Coeffs {
    t = std::clamp(t, grid.t0(), grid.tf());
    auto [i, th] = grid.locate(t);
    const Coeffs& a = table[i];
    if (th == 0.0) return a;
    const Coeffs& b = table[i + 1];
    if (th == 1.0) return b;
    const double w = 1.0 - th;
    return Coeffs{w * a.A + th * b.A,   w * a.Bu + th * b.Bu, w * a.At + th * b.At,   w * a.S + th * b.S,
                  w * a.W + th * b.W,   w * a.G + th * b.G,   w * a.KC + th * b.KC,   w * a.phi + th * b.phi,
                  w * a.c + th * b.c,   w * a.vr + th * b.vr};
  };
  auto rhs_with = [&](const Coeffs& c, const Vector& z) -> Vector {
    const Matrix P = detail::unflatten(z.head(nP), nx, nx);
    const Vector beta = z.tail(nx);
    const Matrix SP = c.S * P;
    const Matrix dP = -P * c.At - c.At.transpose() * P + P * SP - c.W;
    const Vector db = -(c.At - SP).transpose() * beta - P * c.phi + c.c;
    Vector out(nP + nx);
    out.head(nP) = detail::flatten(dP);
    out.tail(nx) = db;
    return out;
  };
  // one RK4 step of size hm backward from time tb to tb - hm
  auto back_step = [&](double tb, const Vector& z, double hm) -> Vector {
    const Coeffs c0 = coeffs_at(tb);
    const Coeffs c1 = coeffs_at(tb - 0.5 * hm);
    const Coeffs c2 = coeffs_at(tb - hm);
    const Vector k1 = -rhs_with(c0, z);
    const Vector k2 = -rhs_with(c1, z + 0.5 * hm * k1);
    const Vector k3 = -rhs_with(c1, z + 0.5 * hm * k2);
    const Vector k4 = -rhs_with(c2, z + hm * k3);
    return z + (hm / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  };

  const std::size_t N = grid.n_steps();
  const Matrix& CN = lin.C.at(N);
  Vector zT(nP + nx);
  zT.head(nP) = detail::flatten(CN.transpose() * art.Ttilde * CN);
  zT.tail(nx) = -CN.transpose() * (art.Ttilde * lin.r.at(N));

  // Backward sweep. Each substep is split into micro steps where the closed
  // loop A - S P is fast (the layer at tf when T > 0).
  auto symmetrize = [&](Vector& z) {
    Eigen::Map<Matrix> P(z.data(), nx, nx);
    const Matrix sym = 0.5 * (P + P.transpose());
    P = sym;
  };
  auto micro_count = [&](double t, const Vector& z, double hs) {
    const Coeffs c = coeffs_at(t);
    const Matrix P = detail::unflatten(z.head(nP), nx, nx);
    Eigen::EigenSolver<Matrix> es(c.At - c.S * P, false);
    const double rate = 2.0 * es.eigenvalues().cwiseAbs().maxCoeff();
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(hs * rate / settings.max_step_radius)));
  };
  const double hs = grid.dt() / static_cast<double>(M);
  auto substep_start = [&](std::size_t q) {
    const std::size_t i = q / M;
    return grid.node(i) + static_cast<double>(q - i * M) * hs;
  };
  // sub[q]: values at the micro-step boundaries of substep q, increasing time
  std::vector<std::vector<Vector>> sub(N * M);
  Vector z = zT;
  for (std::size_t q = N * M; q-- > 0;) {
    const double tb = (q + 1 == N * M) ? grid.tf() : substep_start(q + 1);
    std::size_t micro = micro_count(tb, z, hs);
    std::vector<Vector> vals;
    for (int attempt = 0; attempt < 2; ++attempt) {
      vals.assign(1, z);
      const double hm = hs / static_cast<double>(micro);
      Vector w = z;
      for (std::size_t m = 0; m < micro; ++m) {
        w = back_step(tb - static_cast<double>(m) * hm, w, hm);
        symmetrize(w);
        vals.push_back(w);
      }
      detail::check_state(w, tb - hs);
      const std::size_t again = micro_count(tb - hs, w, hs);
      if (again <= micro) break;
      micro = again;
    }
    z = vals.back();
    std::reverse(vals.begin(), vals.end());
    sub[q] = std::move(vals);
  }

  // (c) closed loop, (d) control law. Node values of du are the hat-function
  // projection of the feedback control, integrated along the micro steps.
  Matrix xs = Matrix::Zero(static_cast<Eigen::Index>(grid.node_count()), nx);
  Matrix proj = Matrix::Zero(static_cast<Eigen::Index>(grid.node_count()), nu);
  Vector x = Vector::Zero(nx);
  auto law = [&](const Coeffs& c, const Vector& zt, const Vector& xv) -> Vector {
    const Matrix P = detail::unflatten(zt.head(nP), nx, nx);
    return (c.KC - c.G * P) * xv - c.G * zt.tail(nx) + c.vr;
  };
  auto field = [&](const Coeffs& c, const Vector& zt, const Vector& xv) -> Vector {
    return c.A * xv + c.Bu * law(c, zt, xv);
  };
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < M; ++j) {
      const std::size_t q = i * M + j;
      const auto& vals = sub[q];
      const std::size_t micro = vals.size() - 1;
      const double hm = hs / static_cast<double>(micro);
      const double tq = substep_start(q);
      Coeffs ca = coeffs_at(tq);
      for (std::size_t m = 0; m < micro; ++m) {
        const double ta = tq + static_cast<double>(m) * hm;
        const double tb = ta + hm;
        const Coeffs cm = coeffs_at(ta + 0.5 * hm);
        Coeffs cb = coeffs_at(tb);
        const Vector& za = vals[m];
        const Vector& zb = vals[m + 1];
        // cubic Hermite at the micro-step midpoint
        const Vector zm = 0.5 * (za + zb) + (hm / 8.0) * (rhs_with(ca, za) - rhs_with(cb, zb));
        const Vector ua = law(ca, za, x);
        const Vector k1 = field(ca, za, x);
        const Vector k2 = field(cm, zm, x + 0.5 * hm * k1);
        const Vector k3 = field(cm, zm, x + 0.5 * hm * k2);
        const Vector k4 = field(cb, zb, x + hm * k3);
        x += (hm / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        const Vector ub = law(cb, zb, x);
        const double tha = std::clamp((ta - grid.node(i)) / grid.dt(), 0.0, 1.0);
        const double thb = std::clamp((tb - grid.node(i)) / grid.dt(), 0.0, 1.0);
        const auto ri = static_cast<Eigen::Index>(i);
        proj.row(ri) += (0.5 * hm * ((1.0 - tha) * ua + (1.0 - thb) * ub)).transpose();
        proj.row(ri + 1) += (0.5 * hm * (tha * ua + thb * ub)).transpose();
        ca = std::move(cb);
      }
      detail::check_state(x, tq + hs);
    }
    xs.row(static_cast<Eigen::Index>(i + 1)) = x.transpose();
  }

  std::vector<Matrix> Ps, Fs;
  Matrix betas(static_cast<Eigen::Index>(grid.node_count()), nx);
  for (std::size_t n = 0; n < grid.node_count(); ++n) {
    const Vector& zn = n < N ? sub[n * M].front() : sub.back().back();
    const Matrix P = detail::unflatten(zn.head(nP), nx, nx);
    auto c = detail::riccati_coeffs(aux, lin.A.at(n), lin.Bu.at(n), lin.C.at(n), lin.Du.at(n), lin.r.at(n),
                                    lin.u_k.at(n), grid.node(n));
    betas.row(static_cast<Eigen::Index>(n)) = zn.tail(nx).transpose();
    Fs.push_back(-c.Rinv * lin.Bu.at(n).transpose() * P);
    Ps.push_back(P);
  }
  art.P = GridMatrixFunction(grid, lin.nx, lin.nx, std::move(Ps));
  art.F = GridMatrixFunction(grid, lin.nu, lin.nx, std::move(Fs));
  art.beta = GridSignal(grid, std::move(betas));

  GridSignal du = riesz(grid, std::move(proj));
  const Vector dp = detail::zero_dp(aux);
  const double J = aux_cost(aux, du, dp);
  AuxSolution sol{std::move(du), dp, J, 1, {InnerIterate{0, J, 0.0, 1.0}}, "riccati", false};
  return {std::move(sol), std::move(art)};
}

}  // namespace gnoc
