// Acceptance criteria. Prints one PASS/FAIL line per criterion.
// Usage: acceptance [N ...]   (no arguments: all criteria)

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gnoc/experiment.hpp"
#include "qp_oracle.hpp"

using namespace gnoc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double limit_s;
  std::function<Outcome()> run;
};

std::string config(const std::string& name) { return std::string(GNOC_SOURCE_DIR) + "/configs/" + name; }

Experiment experiment(const std::string& name) { return build_experiment(load_config(config(name))); }

std::string fmt(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.3g", v);
  return b;
}

bool strictly_decreasing(const SolveReport& rep) {
  for (std::size_t i = 1; i < rep.iterates.size(); ++i)
    if (!(rep.iterates[i].cost.total < rep.iterates[i - 1].cost.total)) return false;
  return true;
}

std::string j_trace(const SolveReport& rep) {
  std::string s;
  for (const auto& it : rep.iterates) s += (s.empty() ? "" : " ") + fmt(it.cost.total);
  return s;
}

// Linear test problem shared by criteria 5 and 9.
struct LinearCase {
  LinearModelMatrices lm{Matrix{{0.0, 1.0}, {-4.0, -0.8}}, Matrix{{0.0}, {1.0}}, {}, Matrix{{1.0, 0.0}}, {}, {},
                         Vector{{0.5, 0.0}}};
  TimeGrid grid{0.0, 2.0, 40};
  double alpha = 0.05;

  TrackingProblem problem() const {
    auto y = GridSignal::from_function(grid, 1, [](double t) { return Vector::Constant(1, 0.3 * std::sin(1.5 * t) + 0.1 * t); });
    return TrackingProblem{linear_model(lm), grid, y, Matrix::Identity(1, 1), Matrix::Zero(1, 1), alpha, 0.0,
                           BoxBounds::unbounded(1, 0), Vector()};
  }
  GaussNewtonConfig solver() const {
    GaussNewtonConfig c;
    c.inner = InnerSolver::gradient_descent;
    c.gd.tol = 1e-8;
    c.gd.max_iter = 20000;
    c.gd.min_rel_decrease = 0.0;
    c.max_outer = 2;
    c.J_tol = 1e-14;
    return c;
  }
  SolveReport solve() const { return gauss_newton_solve(problem(), InputPair(GridSignal::zeros(grid, 1), Vector()), solver()); }
};

// Outcome of the certificate check on one run.
std::string certificate_line(const char* label, const SolveReport& rep, bool& ok) {
  const auto cert = descent_certificates(rep);
  double worst = -std::numeric_limits<double>::infinity(), margin = -std::numeric_limits<double>::infinity();
  for (const auto& c : cert.items) {
    worst = std::max(worst, c.directional_derivative);
    margin = std::max(margin, c.coercivity_margin);
  }
  const bool run_ok = !cert.items.empty() && cert.all_descent && cert.coercivity_ok;
  ok = ok && run_ok;
  std::string s = std::string(label) + ": " + std::to_string(cert.items.size()) + " directions, max J' " + fmt(worst);
  if (rep.theorem_setting) s += ", max J'+a|du|^2 " + fmt(margin);
  return s + (run_ok ? " ok" : " FAIL");
}

// ---------------------------------------------------------------------------

Outcome c1_adjoint() {
  auto ex = experiment("experiment2.cfg");
  const auto lin = linearize(ex.problem, InputPair(GridSignal::zeros(ex.grid, 1), ex.start.p));
  std::mt19937_64 rng(1);
  const auto ac = adjoint_identity_check(lin, rng, 20, Vector::Zero(1));
  return {ac.worst <= 1e-6, "worst |<S'du,dy> - <du,S'*dy>| / (|du||dy|) = " + fmt(ac.worst) + " over 20 pairs"};
}

Outcome c2_gradients() {
  auto ex = experiment("experiment1.cfg");
  const auto& prob = ex.problem;
  const InputPair at = ex.start;
  std::mt19937_64 rng(2);
  const Vector p_scale = at.p.cwiseAbs() * 1e-3;
  const double u_scale = max_abs(ex.reference.inputs.u);
  const auto lin = linearize(prob, at);
  const auto aux = make_aux_problem(prob, lin);

  const auto dirs_a = random_directions(rng, prob, 5, u_scale, p_scale);
  const GridSignal du0 = detail::random_signal(rng, prob.grid, 1, u_scale);
  const Vector dp0 = Vector::Zero(1);
  auto [gu, gp] = aux_gradient(aux, du0, dp0);
  auto Ja = [&](const GridSignal& d, const Vector& p) { return aux_cost(aux, du0 + d, dp0 + p); };
  auto dJa = [&](const GridSignal& d, const Vector& p) { return l2_inner(gu, d) + gp.dot(p); };
  const double a3 = directional_fd_error(Ja, dJa, dirs_a, 1e-3), a4 = directional_fd_error(Ja, dJa, dirs_a, 1e-4);

  const auto dirs_j = random_directions(rng, prob, 5, u_scale, p_scale);
  const CostGradient g = cost_gradient(prob, lin);
  auto J = [&](const GridSignal& d, const Vector& p) { return evaluate_cost(prob, InputPair(at.u + d, at.p + p)).total; };
  auto dJ = [&](const GridSignal& d, const Vector& p) { return g.apply(d, p); };
  const double j3 = directional_fd_error(J, dJ, dirs_j, 1e-3), j4 = directional_fd_error(J, dJ, dirs_j, 1e-4);

  // error must not grow from eps 1e-3 to 1e-4 unless it already sits at rounding level
  auto decays = [](double e3, double e4) { return e4 <= e3 || e3 <= 1e-8; };
  const bool ok = a4 <= 1e-4 && j4 <= 1e-4 && decays(a3, a4) && decays(j3, j4);
  return {ok, "aux: eps 1e-3 " + fmt(a3) + ", 1e-4 " + fmt(a4) + "; J: eps 1e-3 " + fmt(j3) + ", 1e-4 " + fmt(j4)};
}

Outcome c3_inner_equivalence() {
  auto ex = experiment("experiment2_theorem.cfg");
  const auto lin = linearize(ex.problem, ex.start);
  const auto aux = make_aux_problem(ex.problem, lin);
  auto [rs, art] = solve_aux_riccati(aux);
  GdSettings s;
  s.tol = 1e-9;
  s.max_iter = 5000;
  s.min_rel_decrease = 0.0;
  const auto gd = solve_aux_gd(aux, s);
  const double diff = l2_norm(rs.du - gd.du) / l2_norm(gd.du);
  const double res = normal_equation_parts(lin, rs.du, ex.problem.alpha_u).relative_to_rhs();
  const double res_gd = normal_equation_parts(lin, gd.du, ex.problem.alpha_u).relative_to_rhs();
  return {diff <= 1e-2 && res <= 1e-3,
          "rel L2 |du_ric - du_gd| = " + fmt(diff) + " (tol 1e-2); Riccati normal residual " + fmt(res) +
              " (tol 1e-3); GD " + std::to_string(gd.iterations) + " its (" + gd.stop_reason + "), GD normal residual " +
              fmt(res_gd)};
}

Outcome c4_riccati_vs_qp() {
  LinearModelMatrices lm{Matrix{{-1.0}}, Matrix{{1.0}}, {}, Matrix{{1.0}}, {}, {}, Vector{{0.0}}};
  const TimeGrid grid(0.0, 1.0, 49);
  const auto y = GridSignal::from_function(grid, 1, [](double t) { return Vector::Constant(1, std::sin(2.0 * std::numbers::pi * t)); });
  std::string detail;
  bool ok = false;
  for (double alpha : {1.0, 0.1}) {
    TrackingProblem prob{linear_model(lm), grid, y, Matrix::Identity(1, 1), Matrix::Zero(1, 1), alpha, 0.0,
                         BoxBounds::unbounded(1, 0), Vector()};
    const auto aux = make_aux_problem(prob, linearize(prob, InputPair(GridSignal::zeros(grid, 1), Vector())));
    auto [sol, art] = solve_aux_riccati(aux);
    const auto qp = oracle::solve(lm, grid, y, prob.Q, prob.T, alpha);
    const double err = (sol.du.values() - qp.U).cwiseAbs().maxCoeff();
    if (alpha == 1.0) {
      ok = err <= 1e-3;
      detail = "alpha 1: max |du - U_qp| = " + fmt(err) + " (tol 1e-3)";
    } else {
      detail += "; info, alpha 0.1: " + fmt(err);
    }
  }
  return {ok, detail};
}

Outcome c5_linear_exactness() {
  LinearCase lc;
  const auto prob = lc.problem();
  const auto rep = lc.solve();
  const auto qp = oracle::solve(lc.lm, lc.grid, prob.y_ref, prob.Q, prob.T, lc.alpha);
  if (rep.iterates.size() < 2) return {false, "no step taken"};
  const double J1 = rep.iterates[1].cost.total;
  const double rel = std::abs(J1 - qp.J) / qp.J;
  const double gain = rep.iterates.size() > 2 ? J1 - rep.iterates[2].cost.total : 0.0;
  const bool ok = rep.iterates[0].gamma == 1.0 && rel <= 1e-6 && gain < 1e-10;
  return {ok, "gamma0 " + fmt(rep.iterates[0].gamma) + ", |J1 - J_qp|/J_qp = " + fmt(rel) + ", J1 - J2 = " + fmt(gain) +
                  " (" + to_string(rep.termination) + ")"};
}

Outcome c6_experiment2() {
  auto ex = experiment("experiment2.cfg");
  const auto rep = gauss_newton_solve(ex.problem, ex.start, ex.gn);
  const double ratio = rep.iterates.back().cost.total / rep.iterates.front().cost.total;
  const bool ok = strictly_decreasing(rep) && rep.iterates.back().k == 5 && ratio <= 0.01;
  return {ok, "J: " + j_trace(rep) + "; J5/J0 = " + fmt(ratio)};
}

Outcome c7_experiment1() {
  auto ex = experiment("experiment1.cfg");
  const auto rep = gauss_newton_solve(ex.problem, ex.start, ex.gn);
  bool in_bounds = true;
  for (const auto& it : rep.iterates)
    in_bounds = in_bounds && (it.p.array() >= ex.problem.bounds.p_low.array()).all() &&
                (it.p.array() <= ex.problem.bounds.p_up.array()).all();
  const double ratio = rep.iterates.back().cost.total / rep.iterates.front().cost.total;
  const bool ok = strictly_decreasing(rep) && in_bounds && rep.iterates.back().k == 7 && ratio <= 0.05;
  return {ok, "J: " + j_trace(rep) + "; last k " + std::to_string(rep.iterates.back().k) + " (" +
                  to_string(rep.termination) + "); J_last/J0 = " + fmt(ratio) + "; p in bounds " +
                  (in_bounds ? "yes" : "no")};
}

Outcome c8_comparison() {
  auto ex = experiment("experiment2.cfg");
  GaussNewtonConfig gn = ex.gn;
  gn.max_outer = 5;
  gn.keep_outputs = false;
  DirectGradientConfig dg = ex.dg;
  dg.max_iter = 50;
  const auto a = gauss_newton_solve(ex.problem, ex.start, gn);
  const auto b = direct_gradient_solve(ex.problem, ex.start, dg);
  const double Jgn = a.iterates.back().cost.total, Jgd = b.iterates.back().cost.total;
  return {a.iterates.back().k == 5 && Jgn < Jgd,
          "GN J after " + std::to_string(a.iterates.back().k) + " = " + fmt(Jgn) + ", GD J after " +
              std::to_string(b.iterates.back().k) + " = " + fmt(Jgd)};
}

Outcome c9_certificates() {
  bool ok = true;
  std::string d = certificate_line("linear", LinearCase{}.solve(), ok);
  {
    auto ex = experiment("experiment2_theorem.cfg");
    d += "; " + certificate_line("exp2 Q=I T=0", gauss_newton_solve(ex.problem, ex.start, ex.gn), ok);
  }
  {
    auto ex = experiment("experiment1.cfg");
    d += "; " + certificate_line("exp1", gauss_newton_solve(ex.problem, ex.start, ex.gn), ok);
  }
  return {ok, d};
}

int run_cli(const std::string& args) {
  const int rc = std::system((std::string(GNOC_CLI) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Outcome c10_infrastructure() {
  std::string d;
  bool ok = true;
  {
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> U(-3.0, 3.0);
    const TimeGrid g(0.0, 1.0, 8);
    std::size_t bad = 0;
    for (int c = 0; c < 10000; ++c) {
      BoxBounds b = BoxBounds::unbounded(2, 2);
      for (int j = 0; j < 2; ++j) {
        double l = U(rng), h = U(rng);
        if (l > h) std::swap(l, h);
        b.u_low(j) = l, b.u_up(j) = h;
        l = U(rng), h = U(rng);
        if (l > h) std::swap(l, h);
        b.p_low(j) = l, b.p_up(j) = h;
      }
      auto draw = [&] {
        Matrix m(9, 2);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = U(rng);
        return InputPair(GridSignal(g, m), Vector{{U(rng), U(rng)}});
      };
      const InputPair x = draw(), y = draw();
      const InputPair px = project(x, b), py = project(y, b), ppx = project(px, b);
      const double dxy = std::sqrt(l2_norm_sq(x.u - y.u) + (x.p - y.p).squaredNorm());
      const double dp = std::sqrt(l2_norm_sq(px.u - py.u) + (px.p - py.p).squaredNorm());
      if (!(ppx.u.values() == px.u.values() && ppx.p == px.p) || dp > dxy * (1.0 + 1e-14) || !is_feasible(px, b)) ++bad;
    }
    ok = ok && bad == 0;
    d += "projection: " + std::to_string(bad) + "/10000 violations";
  }
  {
    auto f = [](double, const Vector& x) -> Vector { return x; };
    auto err = [&](std::size_t n) {
      return std::abs(integrate_forward(f, Vector::Ones(1), TimeGrid(0.0, 1.0, n), 1).values()(static_cast<Eigen::Index>(n), 0) -
                      std::exp(1.0));
    };
    const double r = err(16) / err(32);
    ok = ok && r > 14.0 && r < 18.0;
    d += "; RK4 ratio " + fmt(r);
  }
  {
    auto err = [](std::size_t n) {
      const TimeGrid g(0.0, 1.0, n);
      Vector s(static_cast<Eigen::Index>(g.node_count()));
      for (std::size_t k = 0; k < g.node_count(); ++k) s(static_cast<Eigen::Index>(k)) = std::exp(g.node(k));
      return std::abs(trapezoid(g, s) - (std::exp(1.0) - 1.0));
    };
    const double r = err(16) / err(32);
    ok = ok && r > 3.8 && r < 4.2;
    d += "; trapezoid ratio " + fmt(r);
  }
  {
    const auto base = fs::temp_directory_path() / "gnoc_acceptance_rerun";
    fs::remove_all(base);
    std::size_t files = 0, differing = 0;
    for (const char* cmd : {"simulate", "solve", "compare", "verify"}) {
      const auto a = base / cmd / "a", b = base / cmd / "b";
      const int ra = run_cli(std::string(cmd) + " --config " + config("linear.cfg") + " --out " + a.string());
      const int rb = run_cli(std::string(cmd) + " --config " + config("linear.cfg") + " --out " + b.string());
      if (ra != rb || (ra != 0 && ra != 3)) {
        ++differing;
        continue;
      }
      for (const auto& e : fs::directory_iterator(a)) {
        ++files;
        if (slurp(e.path()) != slurp(b / e.path().filename())) ++differing;
      }
    }
    ok = ok && differing == 0 && files > 0;
    d += "; CLI reruns: " + std::to_string(files) + " files, " + std::to_string(differing) + " differing";
  }
  return {ok, d};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "adjoint identity", 30, c1_adjoint},
      {2, "gradient fidelity", 120, c2_gradients},
      {3, "inner-solver equivalence", 120, c3_inner_equivalence},
      {4, "Riccati vs brute-force QP", 5, c4_riccati_vs_qp},
      {5, "linear-model exactness", 10, c5_linear_exactness},
      {6, "experiment-2 analog", 300, c6_experiment2},
      {7, "experiment-1 analog", 900, c7_experiment1},
      {8, "comparison study", 1200, c8_comparison},
      {9, "convergence certificates", 1200, c9_certificates},
      {10, "infrastructure properties", 60, c10_infrastructure},
  };
  std::vector<int> pick;
  for (int i = 1; i < argc; ++i) pick.push_back(std::atoi(argv[i]));
  bool all_pass = true;
  for (const auto& c : all) {
    if (!pick.empty() && std::find(pick.begin(), pick.end(), c.id) == pick.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.limit_s;
    const bool pass = o.pass && in_time;
    all_pass = all_pass && pass;
    std::printf("%s criterion %d (%s): %s [%.1f s, limit %.0f s%s]\n", pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), secs, c.limit_s, in_time ? "" : ", exceeded");
    std::fflush(stdout);
  }
  return all_pass ? 0 : 1;
}
