#pragma once

/// @file
/// @brief Projected Gauss-Newton outer loop, the direct function-space gradient
/// baseline, and the per-iteration descent certificates.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gnoc/aux_solvers.hpp"

namespace gnoc {

enum class InnerSolver { gradient_descent, riccati };

enum class Termination { tolerance, stationary, max_iter, stall };

inline std::string to_string(InnerSolver s) { return s == InnerSolver::riccati ? "riccati" : "gradient_descent"; }

inline std::string to_string(Termination t) {
  switch (t) {
    case Termination::tolerance: return "tolerance";
    case Termination::stationary: return "stationary";
    case Termination::max_iter: return "max_iter";
    case Termination::stall: return "stall";
  }
  return "unknown";
}

struct GaussNewtonConfig {
  double J_tol = 1e-8;
  std::size_t max_outer = 10;
  double armijo_beta = 0.75;
  double armijo_sigma = 1e-4;
  std::size_t max_backtracks = 50;
  /// Outer loop stalls when an accepted step lowers J by less than this fraction.
  double min_rel_progress = 1e-10;
  InnerSolver inner = InnerSolver::riccati;
  GdSettings gd;
  /// Starting dp of the inner gradient descent (zero when empty).
  std::optional<Vector> inner_dp0;
  /// Keep y of every iterate in the report.
  bool keep_outputs = true;

  void validate(const TrackingProblem& prob) const {
    if (!(J_tol > 0.0)) throw InvalidArgument("GaussNewtonConfig: J_tol must be positive");
    if (!(armijo_beta > 0.0 && armijo_beta < 1.0 && armijo_sigma > 0.0 && armijo_sigma < 1.0))
      throw InvalidArgument("GaussNewtonConfig: Armijo parameters must lie in (0,1)");
    if (inner == InnerSolver::riccati && !prob.reduced())
      throw InvalidArgument("GaussNewtonConfig: the Riccati inner solver requires p_fixed");
    if (inner == InnerSolver::riccati && !(prob.alpha_u > 0.0))
      throw NotPositiveDefinite("GaussNewtonConfig: the Riccati inner solver requires alpha_u > 0");
    if (inner_dp0 && static_cast<std::size_t>(inner_dp0->size()) != prob.model.np)
      throw DimensionError("GaussNewtonConfig: inner_dp0 dimension");
  }
};

/// One outer iterate. gamma and the step data describe the step taken FROM this iterate.
struct IterationRecord {
  std::size_t k = 0;
  CostBreakdown cost;
  Vector p;
  double gamma = 0.0;
  std::size_t backtracks = 0;
  /// J'(u_k, p_k)(du_k, dp_k)
  double directional_derivative = 0.0;
  double du_norm = 0.0;
  double dp_norm = 0.0;
  std::size_t inner_iterations = 0;
  std::string inner_stop;
  double inner_cost = 0.0;
  /// A search direction was computed from this iterate (accepted or not).
  bool has_direction = false;
  bool stepped = false;
};

struct SolveReport {
  std::string method;
  std::vector<IterationRecord> iterates;
  InputPair final;
  GridSignal y_final;
  Termination termination = Termination::max_iter;
  std::string message;
  /// y of every iterate, when kept.
  std::vector<GridSignal> outputs;
  /// Inner diagnostics of every outer step.
  std::vector<std::vector<InnerIterate>> inner;
  std::vector<std::string> warnings;
  /// Q = I, T = 0, p fixed, no bounds on u.
  bool theorem_setting = false;
  double alpha_u = 0.0;
};

namespace detail {

inline IterationRecord record(std::size_t k, const CostBreakdown& cost, const Vector& p) {
  IterationRecord r;
  r.k = k;
  r.cost = cost;
  r.p = p;
  return r;
}

inline bool in_theorem_setting(const TrackingProblem& prob) {
  const auto ny = prob.Q.rows();
  return prob.reduced() && prob.Q.isApprox(Matrix::Identity(ny, ny), 0.0) && prob.T.isZero(0.0) &&
         prob.bounds.u_unbounded();
}

inline InputPair step_input(const InputPair& in, double gamma, const GridSignal& du, const Vector& dp) {
  return InputPair(in.u + gamma * du, in.p + gamma * dp);
}

struct LineSearchResult {
  bool accepted = false;
  double gamma = 0.0;
  std::size_t backtracks = 0;
  InputPair trial;
  Simulation sim;
  CostBreakdown cost;
};

/// Armijo over projected trial points with the unprojected directional derivative.
/// A trial must also lower J strictly, which matters only when dJ >= 0.
inline std::optional<LineSearchResult> projected_armijo(const TrackingProblem& prob, const InputPair& in, double J,
                                                        double dJ, const GridSignal& du, const Vector& dp,
                                                        double beta, double sigma, std::size_t max_backtracks) {
  double gamma = 1.0;
  for (std::size_t i = 0; i <= max_backtracks; ++i) {
    InputPair trial = project(step_input(in, gamma, du, dp), prob.bounds);
    if (prob.reduced()) trial.p = in.p;
    try {
      Simulation sim = simulate(prob, trial);
      CostBreakdown c = cost_from_output(prob, trial, sim.y);
      if (c.total <= J + sigma * gamma * dJ && c.total < J)
        return LineSearchResult{true, gamma, i, std::move(trial), std::move(sim), c};
    } catch (const DivergenceError&) {
      // trial blew up: shorten the step
    }
    gamma *= beta;
  }
  return std::nullopt;
}

}  // namespace detail

/// Projected Gauss-Newton: linearize, solve the auxiliary problem with the
/// configured inner solver, backtrack over projected trial points.
inline SolveReport gauss_newton_solve(const TrackingProblem& prob, const InputPair& start, const GaussNewtonConfig& cfg) {
  prob.validate();
  cfg.validate(prob);
  InputPair in = project(prob.effective(start), prob.bounds);
  Simulation sim = simulate(prob, in);
  CostBreakdown cost = cost_from_output(prob, in, sim.y);

  SolveReport rep{"gauss_newton", {}, in, sim.y, Termination::max_iter, "", {}, {}, {},
                  detail::in_theorem_setting(prob), prob.alpha_u};
  for (std::size_t k = 0;; ++k) {
    rep.iterates.push_back(detail::record(k, cost, in.p));
    if (cfg.keep_outputs) rep.outputs.push_back(sim.y);
    auto& rec = rep.iterates.back();
    if (cost.total <= cfg.J_tol) {
      rep.termination = Termination::tolerance;
      rep.message = "J <= J_tol";
      break;
    }
    if (k >= cfg.max_outer) {
      rep.termination = Termination::max_iter;
      rep.message = "reached max_outer";
      break;
    }

    LinearizedModel lin = linearize(prob, in);
    const CostGradient grad = cost_gradient(prob, lin);
    AuxProblem aux = make_aux_problem(prob, std::move(lin));
    AuxSolution inner = [&] {
      if (cfg.inner == InnerSolver::riccati) {
        auto [sol, art] = solve_aux_riccati(aux);
        for (auto& w : art.warnings) rep.warnings.push_back("k=" + std::to_string(k) + ": " + w);
        return std::move(sol);
      }
      Vector dp0 = cfg.inner_dp0 ? *cfg.inner_dp0 : Vector::Zero(static_cast<Eigen::Index>(prob.model.np));
      return solve_aux_gd(aux, GridSignal::zeros(prob.grid, prob.model.nu), dp0, cfg.gd);
    }();
    rep.inner.push_back(inner.diagnostics);
    if (inner.du.values().isZero(0.0) && inner.dp.isZero(0.0)) {
      rep.termination = Termination::stationary;
      rep.message = "auxiliary problem returned a zero step";
      break;
    }

    const double dJ = grad.apply(inner.du, inner.dp);
    rec.directional_derivative = dJ;
    rec.du_norm = l2_norm(inner.du);
    rec.dp_norm = inner.dp.norm();
    rec.inner_iterations = inner.iterations;
    rec.inner_stop = inner.stop_reason;
    rec.inner_cost = inner.cost;
    rec.has_direction = true;
    auto ls = detail::projected_armijo(prob, in, cost.total, dJ, inner.du, inner.dp, cfg.armijo_beta,
                                       cfg.armijo_sigma, cfg.max_backtracks);
    if (!ls) {
      rep.termination = Termination::stall;
      rep.message = "Armijo backtracking exhausted";
      break;
    }
    rec.gamma = ls->gamma;
    rec.backtracks = ls->backtracks;
    rec.stepped = true;
    const double progress = cost.total - ls->cost.total;
    in = std::move(ls->trial);
    sim = std::move(ls->sim);
    cost = ls->cost;
    if (progress < cfg.min_rel_progress * std::abs(cost.total)) {
      rep.iterates.push_back(detail::record(k + 1, cost, in.p));
      if (cfg.keep_outputs) rep.outputs.push_back(sim.y);
      rep.termination = Termination::stall;
      rep.message = "relative progress below floor";
      break;
    }
  }
  rep.final = in;
  rep.y_final = sim.y;
  return rep;
}

struct DirectGradientConfig {
  double J_tol = 1e-8;
  std::size_t max_iter = 50;
  double armijo_beta = 0.75;
  double armijo_sigma = 1e-4;
  std::size_t max_backtracks = 50;
  double min_rel_progress = 1e-10;
  bool keep_outputs = false;
};

/// Steepest descent on the nonlinear J: d = -grad J, projected Armijo from gamma = 1.
inline SolveReport direct_gradient_solve(const TrackingProblem& prob, const InputPair& start,
                                         const DirectGradientConfig& cfg) {
  prob.validate();
  InputPair in = project(prob.effective(start), prob.bounds);
  Simulation sim = simulate(prob, in);
  CostBreakdown cost = cost_from_output(prob, in, sim.y);
  SolveReport rep{"direct_gradient", {}, in, sim.y, Termination::max_iter, "", {}, {}, {},
                  detail::in_theorem_setting(prob), prob.alpha_u};
  for (std::size_t k = 0;; ++k) {
    rep.iterates.push_back(detail::record(k, cost, in.p));
    if (cfg.keep_outputs) rep.outputs.push_back(sim.y);
    auto& rec = rep.iterates.back();
    if (cost.total <= cfg.J_tol) {
      rep.termination = Termination::tolerance;
      rep.message = "J <= J_tol";
      break;
    }
    if (k >= cfg.max_iter) {
      rep.termination = Termination::max_iter;
      rep.message = "reached max_iter";
      break;
    }
    const CostGradient g = cost_gradient(prob, in);
    const GridSignal du = g.u * -1.0;
    const Vector dp = -g.p;
    const double dJ = g.apply(du, dp);
    rec.directional_derivative = dJ;
    rec.du_norm = l2_norm(du);
    rec.dp_norm = dp.norm();
    if (!(dJ < 0.0)) {
      rep.termination = Termination::stall;
      rep.message = "zero gradient";
      break;
    }
    rec.has_direction = true;
    auto ls = detail::projected_armijo(prob, in, cost.total, dJ, du, dp, cfg.armijo_beta, cfg.armijo_sigma,
                                       cfg.max_backtracks);
    if (!ls) {
      rep.termination = Termination::stall;
      rep.message = "Armijo backtracking exhausted";
      break;
    }
    rec.gamma = ls->gamma;
    rec.backtracks = ls->backtracks;
    rec.stepped = true;
    const double progress = cost.total - ls->cost.total;
    in = std::move(ls->trial);
    sim = std::move(ls->sim);
    cost = ls->cost;
    if (progress < cfg.min_rel_progress * std::abs(cost.total)) {
      rep.iterates.push_back(detail::record(k + 1, cost, in.p));
      if (cfg.keep_outputs) rep.outputs.push_back(sim.y);
      rep.termination = Termination::stall;
      rep.message = "relative progress below floor";
      break;
    }
  }
  rep.final = in;
  rep.y_final = sim.y;
  return rep;
}

struct Certificate {
  std::size_t k = 0;
  double directional_derivative = 0.0;
  bool descent = false;
  /// J_{k+1} < J_k
  bool monotone = false;
  /// |du| + J'(du)/|du|
  double step_length_ratio = 0.0;
  /// J'(du) + alpha_u |du|^2; <= 0 in the theorem's setting
  double coercivity_margin = 0.0;
  bool coercivity_checked = false;
  bool coercivity_ok = true;
};

struct CertificateSummary {
  std::vector<Certificate> items;
  bool all_descent = true;
  bool all_monotone = true;
  bool coercivity_ok = true;
};

/// Descent sign, monotonicity, step-length ratio and (in the theorem's setting)
/// the coercivity bound J'(du) <= -alpha_u |du|^2, for every iterate that
/// produced a search direction, including a final rejected one.
/// `rel_slack` absorbs rounding in the coercivity comparison, relative to |J'|.
inline CertificateSummary descent_certificates(const SolveReport& rep, double rel_slack = 1e-8) {
  CertificateSummary out;
  for (std::size_t i = 0; i < rep.iterates.size(); ++i) {
    const auto& it = rep.iterates[i];
    if (!it.has_direction) continue;
    Certificate c;
    c.k = it.k;
    c.directional_derivative = it.directional_derivative;
    c.descent = it.directional_derivative < 0.0;
    c.monotone = it.stepped && i + 1 < rep.iterates.size() && rep.iterates[i + 1].cost.total < it.cost.total;
    c.step_length_ratio = it.du_norm > 0.0 ? it.du_norm + it.directional_derivative / it.du_norm : 0.0;
    c.coercivity_margin = it.directional_derivative + rep.alpha_u * it.du_norm * it.du_norm;
    if (rep.theorem_setting) {
      c.coercivity_checked = true;
      c.coercivity_ok = c.coercivity_margin <= rel_slack * std::abs(it.directional_derivative);
    }
    out.all_descent = out.all_descent && c.descent;
    out.all_monotone = out.all_monotone && c.monotone;
    out.coercivity_ok = out.coercivity_ok && c.coercivity_ok;
    out.items.push_back(c);
  }
  return out;
}

}  // namespace gnoc
