#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gnoc/gnoc.hpp"
#include "qp_oracle.hpp"

using namespace gnoc;

namespace {

const Vector kPref = Vector::Constant(1, kQuarterCarReferenceStiffness);

TrackingProblem quarter_car(const TimeGrid& g, double q, double t, bool p_fixed) {
  auto m = quarter_car_model({});
  auto ref = generate_reference(m, InputPair(road_profile(RoadProfileSpec{}, g), kPref), g);
  return TrackingProblem{m, g, ref.y, Matrix::Constant(1, 1, q), Matrix::Constant(1, 1, t), 30, 1e-10,
                         BoxBounds::unbounded(1, 1), p_fixed ? std::optional<Vector>(kPref) : std::nullopt};
}

// Scalar LQ problem x' = -x + u, y = x on [0, 1] with 50 nodes.
struct ScalarLq {
  LinearModelMatrices lm{Matrix{{-1.0}}, Matrix{{1.0}}, {}, Matrix{{1.0}}, {}, {}, Vector{{0.0}}};
  TimeGrid grid{0.0, 1.0, 49};
  double alpha = 1.0;
  Matrix Q = Matrix::Identity(1, 1);
  Matrix T = Matrix::Zero(1, 1);

  GridSignal y_ref() const {
    return GridSignal::from_function(grid, 1, [](double t) { return Vector::Constant(1, std::sin(2.0 * std::numbers::pi * t)); });
  }
  TrackingProblem problem() const {
    return TrackingProblem{linear_model(lm), grid, y_ref(), Q, T, alpha, 0.0, BoxBounds::unbounded(1, 0), Vector()};
  }
};

}  // namespace

TEST(AuxGradient, MatchesCentralDifferencesJoint) {
  TimeGrid g(0.0, 5.0, 500);
  auto prob = quarter_car(g, 0.1, 0.001, false);
  auto aux = make_aux_problem(prob, linearize(prob, InputPair(GridSignal::zeros(g, 1), kPref)));
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  auto du0 = GridSignal::from_function(g, 1, [&](double t) { return Vector::Constant(1, 0.01 * std::sin(3 * t)); });
  const Vector dp0 = Vector::Constant(1, 1e3);
  auto [gu, gp] = aux_gradient(aux, du0, dp0);
  for (int i = 0; i < 5; ++i) {
    const double a = n(rng), w = 1 + 4 * std::abs(n(rng));
    auto d = GridSignal::from_function(g, 1, [&](double t) { return Vector::Constant(1, 0.01 * a * std::cos(w * t)); });
    const Vector dp = Vector::Constant(1, 300.0 * n(rng));
    const double e = 1e-3;
    const double fd = (aux_cost(aux, du0 + d * e, dp0 + e * dp) - aux_cost(aux, du0 + d * -e, dp0 - e * dp)) / (2 * e);
    EXPECT_NEAR(fd, l2_inner(gu, d) + gp.dot(dp), 1e-7 * std::abs(fd));
  }
}

TEST(AuxCost, AtZeroStepEqualsTrackingCost) {
  TimeGrid g(0.0, 2.0, 200);
  auto prob = quarter_car(g, 0.1, 0.001, false);
  const InputPair at(GridSignal::constant(g, Vector::Constant(1, 0.01)), kPref);
  auto aux = make_aux_problem(prob, linearize(prob, at));
  EXPECT_NEAR(aux_cost(aux, GridSignal::zeros(g, 1), Vector::Zero(1)), evaluate_cost(prob, at).total, 1e-12);
}

TEST(GradientDescent, ConvergesToDiscreteQpOptimum) {
  ScalarLq s;
  auto prob = s.problem();
  auto aux = make_aux_problem(prob, linearize(prob, InputPair(GridSignal::zeros(s.grid, 1), Vector())));
  GdSettings gs;
  gs.tol = 1e-12;
  gs.max_iter = 5000;
  gs.min_rel_decrease = 0.0;
  auto sol = solve_aux_gd(aux, gs);
  auto qp = oracle::solve(s.lm, s.grid, s.y_ref(), s.Q, s.T, s.alpha);
  EXPECT_LT((sol.du.values() - qp.U).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_NEAR(sol.cost, qp.J, 1e-8 * qp.J);
  EXPECT_EQ(sol.diagnostics.front().iter, 0u);
  for (std::size_t i = 1; i < sol.diagnostics.size(); ++i)
    EXPECT_LE(sol.diagnostics[i].J_alpha, sol.diagnostics[i - 1].J_alpha);
}

TEST(GradientDescent, StopsImmediatelyOnZeroResidual) {
  TimeGrid g(0.0, 1.0, 100);
  auto m = quarter_car_model({});
  auto ref = generate_reference(m, InputPair(GridSignal::zeros(g, 1), kPref), g);
  TrackingProblem prob{m, g, ref.y, Matrix::Identity(1, 1), Matrix::Zero(1, 1), 1.0, 0.0, BoxBounds::unbounded(1, 1), kPref};
  auto aux = make_aux_problem(prob, linearize(prob, InputPair(GridSignal::zeros(g, 1), kPref)));
  auto sol = solve_aux_gd(aux);
  EXPECT_EQ(sol.iterations, 0u);
  EXPECT_EQ(sol.stop_reason, "cost_tolerance");
}

TEST(Riccati, MatchesBruteForceQpOnScalarProblem) {
  ScalarLq s;
  auto prob = s.problem();
  auto aux = make_aux_problem(prob, linearize(prob, InputPair(GridSignal::zeros(s.grid, 1), Vector())));
  auto [sol, art] = solve_aux_riccati(aux);
  auto qp = oracle::solve(s.lm, s.grid, s.y_ref(), s.Q, s.T, s.alpha);
  EXPECT_LT((sol.du.values() - qp.U).cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_EQ(sol.stop_reason, "riccati");
}

TEST(Riccati, GapToDiscreteOptimumShrinksUnderRefinement) {
  // Interior nodes close at second order, the two end nodes at first order.
  double prev_mid = 0.0, prev_end = 0.0;
  for (std::size_t n : {49u, 98u, 196u}) {
    ScalarLq s;
    s.alpha = 0.1;
    s.grid = TimeGrid(0.0, 1.0, n);
    auto prob = s.problem();
    auto aux = make_aux_problem(prob, linearize(prob, InputPair(GridSignal::zeros(s.grid, 1), Vector())));
    auto [sol, art] = solve_aux_riccati(aux);
    auto qp = oracle::solve(s.lm, s.grid, s.y_ref(), s.Q, s.T, s.alpha);
    const Matrix d = (sol.du.values() - qp.U).cwiseAbs();
    const double mid = d.middleRows(n / 4, n / 2).maxCoeff();
    const double end = std::max(d(0, 0), d(d.rows() - 1, 0));
    if (prev_mid > 0.0) {
      EXPECT_GT(prev_mid / mid, 3.5);
      EXPECT_GT(prev_end / end, 1.8);
    }
    prev_mid = mid;
    prev_end = end;
  }
}

TEST(Riccati, TerminalConditionAndSymmetry) {
  ScalarLq s;
  s.T = Matrix::Constant(1, 1, 0.5);
  s.lm = LinearModelMatrices{Matrix{{0.0, 1.0}, {-2.0, -0.5}}, Matrix{{0.0}, {1.0}}, {}, Matrix{{1.0, 0.5}}, {}, {}, {}};
  auto prob = s.problem();
  auto aux = make_aux_problem(prob, linearize(prob, InputPair(GridSignal::zeros(s.grid, 1), Vector())));
  auto [sol, art] = solve_aux_riccati(aux);
  const Matrix C = s.lm.C;
  EXPECT_EQ(art.P.at(s.grid.n_steps()), Matrix(C.transpose() * art.Ttilde * C));
  for (std::size_t k = 0; k < s.grid.node_count(); ++k) EXPECT_LT((art.P.at(k) - art.P.at(k).transpose()).norm(), 1e-12);
  EXPECT_EQ(art.Ttilde, s.T);  // Du = 0
}

TEST(Riccati, RejectsFreeParameterAndZeroRegularization) {
  TimeGrid g(0.0, 1.0, 100);
  auto free = quarter_car(g, 0.1, 0.0, false);
  auto aux = make_aux_problem(free, linearize(free, InputPair(GridSignal::zeros(g, 1), kPref)));
  EXPECT_THROW(solve_aux_riccati(aux), InvalidArgument);
  auto fixed = quarter_car(g, 0.1, 0.0, true);
  fixed.alpha_u = 0.0;
  auto aux0 = make_aux_problem(fixed, linearize(fixed, InputPair(GridSignal::zeros(g, 1), kPref)));
  EXPECT_THROW(solve_aux_riccati(aux0), NotPositiveDefinite);
}

TEST(Riccati, NormalResidualBeatsRandomControls) {
  ScalarLq s;
  auto prob = s.problem();
  auto lin = linearize(prob, InputPair(GridSignal::zeros(s.grid, 1), Vector()));
  auto [sol, art] = solve_aux_riccati(make_aux_problem(prob, lin));
  const double r = normal_equation_residual(lin, sol.du, s.alpha);
  EXPECT_LE(r, 1e-3);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n;
  for (int i = 0; i < 10; ++i) {
    Matrix v(static_cast<Eigen::Index>(s.grid.node_count()), 1);
    for (Eigen::Index k = 0; k < v.rows(); ++k) v(k, 0) = n(rng);
    EXPECT_GT(normal_equation_residual(lin, GridSignal(s.grid, v), s.alpha), r);
  }
}

TEST(Riccati, OptimalityGapOnQuarterCarShrinksAtSecondOrder) {
  // The Riccati law is the optimum of the continuous problem; its gradient on
  // the discretized problem vanishes as O(dt^2) under grid refinement.
  std::vector<double> rel;
  for (std::size_t n : {200u, 400u, 800u}) {
    TimeGrid g(0.0, 2.0, n);
    auto prob = quarter_car(g, 0.1, 0.0, true);
    auto aux = make_aux_problem(prob, linearize(prob, InputPair(GridSignal::zeros(g, 1), kPref)));
    auto [sol, art] = solve_aux_riccati(aux);
    auto [g1, p1] = aux_gradient(aux, sol.du, Vector::Zero(1));
    auto [g0, p0] = aux_gradient(aux, GridSignal::zeros(g, 1), Vector::Zero(1));
    rel.push_back(l2_norm(g1) / l2_norm(g0));
  }
  EXPECT_GT(rel[0] / rel[1], 3.0);
  EXPECT_GT(rel[1] / rel[2], 3.0);
  EXPECT_LT(rel[2], 0.01);
}

TEST(Riccati, AutomaticSubstepsFollowHamiltonianSpectrum) {
  TimeGrid g(0.0, 1.0, 100);
  auto lo = quarter_car(g, 0.1, 0.0, true);
  auto hi = quarter_car(g, 1.0, 0.0, true);
  auto alo = make_aux_problem(lo, linearize(lo, InputPair(GridSignal::zeros(g, 1), kPref)));
  auto ahi = make_aux_problem(hi, linearize(hi, InputPair(GridSignal::zeros(g, 1), kPref)));
  const auto mlo = riccati_substeps(alo, 0.5), mhi = riccati_substeps(ahi, 0.5);
  EXPECT_GT(mlo, kDefaultSubsteps);
  EXPECT_GT(mhi, mlo);
}
