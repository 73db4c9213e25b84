#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "gnoc/gnoc.hpp"

using namespace gnoc;
namespace fs = std::filesystem;

namespace {

// Hand-rolled generators over a seeded engine.
struct Gen {
  std::mt19937_64 rng;
  explicit Gen(std::uint64_t seed) : rng(seed) {}

  double uniform(double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }
  std::size_t index(std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); }
  bool coin() { return uniform(0.0, 1.0) < 0.5; }

  TimeGrid grid() {
    const double t0 = uniform(-2.0, 2.0);
    return TimeGrid(t0, t0 + uniform(0.1, 5.0), index(1, 30));
  }
  GridSignal signal(const TimeGrid& g, std::size_t dim, double scale) {
    Matrix v(static_cast<Eigen::Index>(g.node_count()), static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = scale * uniform(-1.0, 1.0);
    return GridSignal(g, std::move(v));
  }
  Vector vector(std::size_t n, double scale) {
    Vector v(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = scale * uniform(-1.0, 1.0);
    return v;
  }
  // Bounds with a mix of finite, one-sided and absent entries.
  void bound_pair(double& lo, double& up) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    const double a = uniform(-2.0, 2.0), b = uniform(-2.0, 2.0);
    lo = std::min(a, b);
    up = std::max(a, b);
    const auto kind = index(0, 3);
    if (kind == 1) lo = -inf;
    if (kind == 2) up = inf;
    if (kind == 3) lo = -inf, up = inf;
  }
  BoxBounds bounds(std::size_t nu, std::size_t np) {
    BoxBounds b = BoxBounds::unbounded(nu, np);
    for (std::size_t j = 0; j < nu; ++j) bound_pair(b.u_low(static_cast<Eigen::Index>(j)), b.u_up(static_cast<Eigen::Index>(j)));
    for (std::size_t j = 0; j < np; ++j) bound_pair(b.p_low(static_cast<Eigen::Index>(j)), b.p_up(static_cast<Eigen::Index>(j)));
    return b;
  }
};

double pair_distance(const InputPair& a, const InputPair& b) {
  return std::sqrt(l2_norm_sq(a.u - b.u) + (a.p - b.p).squaredNorm());
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

}  // namespace

TEST(Property, ProjectionIdempotentNonExpansiveFeasible) {
  Gen gen(20240601);
  for (int c = 0; c < 10000; ++c) {
    const TimeGrid g = gen.grid();
    const std::size_t nu = gen.index(1, 3), np = gen.index(0, 3);
    const BoxBounds b = gen.bounds(nu, np);
    const InputPair x(gen.signal(g, nu, 3.0), gen.vector(np, 3.0));
    const InputPair y(gen.signal(g, nu, 3.0), gen.vector(np, 3.0));
    const InputPair px = project(x, b), py = project(y, b);
    ASSERT_TRUE(is_feasible(px, b));
    const InputPair ppx = project(px, b);
    ASSERT_EQ(ppx.u.values(), px.u.values());
    ASSERT_EQ(ppx.p, px.p);
    ASSERT_LE(pair_distance(px, py), pair_distance(x, y) * (1.0 + 1e-14));
  }
}

TEST(Property, Rk4IsFourthOrderOnExponential) {
  auto f = [](double, const Vector& x) -> Vector { return x; };
  double prev = 0.0;
  for (std::size_t n : {8u, 16u, 32u, 64u}) {
    const TimeGrid g(0.0, 1.0, n);
    const auto traj = integrate_forward(f, Vector::Ones(1), g, 1);
    const double err = std::abs(traj.values()(static_cast<Eigen::Index>(n), 0) - std::exp(1.0));
    if (prev > 0.0) EXPECT_NEAR(prev / err, 16.0, 1.0);
    prev = err;
  }
}

TEST(Property, TrapezoidIsSecondOrder) {
  Gen gen(3);
  for (int c = 0; c < 20; ++c) {
    const double w = gen.uniform(0.5, 3.0), t0 = gen.uniform(-1.0, 1.0), len = gen.uniform(0.5, 2.0);
    const double exact = (std::sin(w * (t0 + len)) - std::sin(w * t0)) / w;
    double prev = 0.0;
    for (std::size_t n : {16u, 32u, 64u}) {
      const TimeGrid g(t0, t0 + len, n);
      Vector s(static_cast<Eigen::Index>(g.node_count()));
      for (std::size_t k = 0; k < g.node_count(); ++k) s(static_cast<Eigen::Index>(k)) = std::cos(w * g.node(k));
      const double err = std::abs(trapezoid(g, s) - exact);
      if (prev > 0.0) EXPECT_NEAR(prev / err, 4.0, 0.1);
      prev = err;
    }
  }
}

TEST(Property, CsvRoundTripIsExact) {
  Gen gen(17);
  for (int c = 0; c < 200; ++c) {
    const TimeGrid g = gen.grid();
    GridSignal s = gen.signal(g, gen.index(1, 4), std::pow(10.0, gen.uniform(-300.0, 300.0)));
    std::stringstream ss;
    write_csv(ss, s);
    const GridSignal back = read_csv(ss);
    ASSERT_TRUE(back.grid() == g);
    ASSERT_EQ(back.values(), s.values());
  }
}

TEST(Property, SensitivityIsLinearAndAuxCostCoercive) {
  Gen gen(99);
  const auto model = quarter_car_model({});
  const Vector pref = Vector::Constant(1, kQuarterCarReferenceStiffness);
  for (int c = 0; c < 10; ++c) {
    const TimeGrid g(0.0, gen.uniform(0.5, 2.0), gen.index(20, 120));
    const GridSignal uref = gen.signal(g, 1, 0.03);
    const auto ref = generate_reference(model, InputPair(uref, pref), g);
    const double alpha = gen.uniform(0.1, 50.0);
    TrackingProblem prob{model, g, ref.y, Matrix::Constant(1, 1, gen.uniform(0.05, 2.0)),
                         Matrix::Constant(1, 1, gen.uniform(0.0, 0.1)), alpha, 0.0, BoxBounds::unbounded(1, 1), pref};
    const InputPair at(gen.signal(g, 1, 0.02), pref);
    const auto lin = linearize(prob, at);
    const GridSignal a = gen.signal(g, 1, 0.01), b = gen.signal(g, 1, 0.01);
    const double s = gen.uniform(-3.0, 3.0);
    const Vector z = Vector::Zero(1);
    const GridSignal lhs = sensitivity_apply(lin, a + s * b, z);
    const GridSignal rhs = sensitivity_apply(lin, a, z) + s * sensitivity_apply(lin, b, z);
    EXPECT_LE(max_abs(lhs - rhs), 1e-12 * std::max(1e-300, max_abs(lhs)) + 1e-300);

    const auto aux = make_aux_problem(prob, lin);
    const double second = aux_cost(aux, a + b, z) + aux_cost(aux, a - b, z) - 2.0 * aux_cost(aux, a, z);
    EXPECT_GE(second, alpha * l2_norm_sq(b) * (1.0 - 1e-9));
  }
}

TEST(Property, CliRerunsAreByteIdentical) {
  const std::string cfg = std::string(GNOC_SOURCE_DIR) + "/tests/fixtures/small.cfg";
  for (const char* cmd : {"simulate", "solve", "compare", "verify"}) {
    SCOPED_TRACE(cmd);
    const auto base = fs::temp_directory_path() / (std::string("gnoc_rerun_") + cmd);
    fs::remove_all(base);
    const auto a = base / "a", b = base / "b";
    const int ra = run_cli(std::string(cmd) + " --config " + cfg + " --out " + a.string() + " --seed 5");
    const int rb = run_cli(std::string(cmd) + " --config " + cfg + " --out " + b.string() + " --seed 5");
    ASSERT_TRUE(ra == 0 || ra == 3);
    EXPECT_EQ(ra, rb);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(a)) {
      ++files;
      EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path().filename();
    }
    EXPECT_GT(files, 0u);
  }
}
