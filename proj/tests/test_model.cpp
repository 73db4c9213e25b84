#include <gtest/gtest.h>

#include <random>

#include "gnoc/model.hpp"

using namespace gnoc;

namespace {

Vector p_ref() { return Vector::Constant(1, kQuarterCarReferenceStiffness); }

}  // namespace

TEST(QuarterCar, KiloConversion) {
  auto q = QuarterCarParams::from_kilo(3600, 380, 1000, 34, 40);
  EXPECT_DOUBLE_EQ(q.k2, 1.0e6);
  EXPECT_DOUBLE_EQ(q.d1, 3.4e4);
  EXPECT_THROW(quarter_car_model(QuarterCarParams{-1, 380, 1e6, 3.4e4, 40}), InvalidArgument);
}

TEST(QuarterCar, RestStateIsEquilibrium) {
  auto m = quarter_car_model({});
  EXPECT_EQ(m.nx, 4u);
  EXPECT_EQ(m.ny, 1u);
  const Vector x = Vector::Zero(4), u = Vector::Zero(1);
  EXPECT_LT(m.f(0.0, x, u, p_ref()).norm(), 1e-15);
  EXPECT_LT(m.h(0.0, x, u, p_ref()).norm(), 1e-15);
}

TEST(QuarterCar, OutputIsUpperBodyAcceleration) {
  auto m = quarter_car_model({});
  const Vector x{{0.01, -0.02, 0.3, -0.1}}, u = Vector::Constant(1, 0.04);
  const Vector dx = m.f(0.0, x, u, p_ref());
  EXPECT_NEAR(m.h(0.0, x, u, p_ref())(0), dx(2), 1e-12);
}

TEST(QuarterCar, AnalyticJacobiansMatchFiniteDifferences) {
  auto m = quarter_car_model({});
  std::mt19937_64 rng(11);
  const auto c = check_jacobians(m, rng, 50, 0.1, 0.05, p_ref());
  EXPECT_LT(c.worst, 1e-6) << c.worst_name;
}

TEST(QuarterCar, FaultyJacobianIsDetected) {
  auto m = quarter_car_model({});
  auto fx = m.f_x;
  m.f_x = [fx](double t, const Vector& x, const Vector& u, const Vector& p) -> Matrix { return 1.1 * fx(t, x, u, p); };
  std::mt19937_64 rng(3);
  const auto c = check_jacobians(m, rng, 5, 0.1, 0.05, p_ref());
  EXPECT_GT(c.worst, 1e-3);
  EXPECT_EQ(c.worst_name, "f_x");
}

TEST(LinearModel, FillsDefaultsAndChecksShapes) {
  auto m = linear_model({Matrix{{-1.0}}, Matrix{{2.0}}, {}, Matrix{{1.0}}, {}, {}, {}});
  EXPECT_EQ(m.np, 0u);
  EXPECT_EQ(m.x0.size(), 1);
  EXPECT_NEAR(m.f(0.0, Vector::Constant(1, 1.0), Vector::Constant(1, 1.0), Vector())(0), 1.0, 1e-15);
  EXPECT_THROW(linear_model({Matrix::Zero(2, 2), Matrix::Zero(3, 1), {}, Matrix::Zero(1, 2), {}, {}, {}}),
               DimensionError);
}

TEST(LinearModel, ParameterEntersAffinely) {
  auto m = linear_model({Matrix{{0.0}}, Matrix{{1.0}}, Matrix{{3.0}}, Matrix{{1.0}}, Matrix{{0.0}}, Matrix{{2.0}}, {}});
  const Vector x = Vector::Zero(1), u = Vector::Zero(1), p = Vector::Constant(1, 0.5);
  EXPECT_DOUBLE_EQ(m.f(0.0, x, u, p)(0), 1.5);
  EXPECT_DOUBLE_EQ(m.h(0.0, x, u, p)(0), 1.0);
  std::mt19937_64 rng(5);
  EXPECT_LT(check_jacobians(m, rng, 5, 1.0, 1.0, Vector::Constant(1, 1.0)).worst, 1e-8);
}

TEST(FiniteDifferenceModel, WrapsArbitraryDynamics) {
  ModelFn f = [](double, const Vector& x, const Vector& u, const Vector& p) -> Vector {
    return Vector::Constant(1, -p(0) * std::sin(x(0)) + u(0));
  };
  ModelFn h = [](double, const Vector& x, const Vector&, const Vector&) -> Vector { return x; };
  auto m = finite_difference_jacobians(f, h, 1, 1, 1, 1, Vector::Zero(1));
  const Vector x = Vector::Constant(1, 0.3), u = Vector::Zero(1), p = Vector::Constant(1, 2.0);
  EXPECT_NEAR(m.f_x(0.0, x, u, p)(0, 0), -2.0 * std::cos(0.3), 1e-8);
  EXPECT_NEAR(m.f_p(0.0, x, u, p)(0, 0), -std::sin(0.3), 1e-8);
}

TEST(InputToOutput, LinearScalarModelMatchesClosedForm) {
  // x' = -x + u with u = 1, x(0) = 0 -> x = 1 - e^{-t}
  auto m = linear_model({Matrix{{-1.0}}, Matrix{{1.0}}, {}, Matrix{{1.0}}, {}, {}, {}});
  TimeGrid g(0.0, 2.0, 40);
  InputPair in(GridSignal::constant(g, Vector::Constant(1, 1.0)), Vector());
  auto y = input_to_output(m, in, g);
  for (std::size_t k = 0; k < g.node_count(); ++k) EXPECT_NEAR(y.at(k)(0), 1.0 - std::exp(-g.node(k)), 1e-9);
  EXPECT_THROW(input_to_output(m, InputPair(GridSignal::zeros(g, 2), Vector()), g), DimensionError);
}
