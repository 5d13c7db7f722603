#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "phenowave/parabolic.hpp"

using namespace phenowave;

namespace {

PresetSpec preset(const std::string& name, json params = json::object()) { return PresetSpec{name, std::move(params)}; }

struct Model {
  PhenotypeGrid grid;
  KernelMatrix M, K;
  FitnessProfile a;
  Model(int n, const std::string& a_name, PresetSpec k = preset("constant"))
      : grid(build_grid_1d(-1.0, 1.0, n)),
        M(make_mutation_kernel(preset("uniform"), grid)),
        K(make_competition_kernel(k, grid)),
        a(make_fitness(preset(a_name), grid)) {}
};

const Model& smooth() {
  static const Model m(21, "one_minus_quadratic");
  return m;
}

const SimulationResult& spreading_run() {
  static const SimulationResult r = [] {
    const auto& m = smooth();
    return simulate(ParabolicModel{m.grid, m.M, m.K, m.a, 0.25, 1e-2, 0.0});
  }();
  return r;
}

SimulationState homogeneous(const Vector& profile, int nx, double dt) {
  SimulationState s;
  s.x = Vector::LinSpaced(nx, -2.0, 2.0);
  s.hx = s.x[1] - s.x[0];
  s.u = profile.replicate(1, nx);
  s.dt = dt;
  return s;
}

}  // namespace

TEST(Step, ZeroStaysZero) {
  const auto& m = smooth();
  const ParabolicModel pm{m.grid, m.M, m.K, m.a, 0.25, 1e-2, 0.0};
  auto s = homogeneous(Vector::Zero(21), 11, 0.05);
  for (int k = 0; k < 10; ++k) step(pm, s);
  EXPECT_EQ(s.u.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Step, LinearizedEigenprofileGrowsAtEigenRate) {
  const auto& m = smooth();
  const double eps = 1e-2;
  const ParabolicModel pm{m.grid, m.M, m.K, m.a, 0.25, eps, 0.0, true};
  const auto e = eigen_regularized(m.grid, m.M, m.a, 0.25, eps);
  auto s = homogeneous(e.phi, 5, 1e-3);
  const Integrator integ(pm, s.x, s.dt);
  const double m0 = s.total_mass(m.grid);
  while (s.t < 1.0 - 1e-9) integ.step(s);
  const double growth = s.total_mass(m.grid) / m0;
  EXPECT_NEAR(growth / std::exp(-e.lambda * s.t), 1.0, 0.02);
  EXPECT_NEAR(std::log(growth) / s.t, -e.lambda, 0.02 * -e.lambda);
}

TEST(Step, SeparableStationaryStateDoesNotDrift) {
  const Model m(41, "one_minus_quadratic", preset("y_independent", {{"c0", 1.0}, {"c2", 0.5}}));
  const double eps = 1e-2;
  const auto p = solve_stationary(m.grid, m.M, m.K, m.a, 0.25, eps, 0.0);
  const ParabolicModel pm{m.grid, m.M, m.K, m.a, 0.25, eps, 0.0};
  auto s = homogeneous(p.values(), 9, 0.02);
  const Integrator integ(pm, s.x, s.dt);
  while (s.t < 1.0 - 1e-9) integ.step(s);
  EXPECT_LE((s.u.col(4) - p.values()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Step, RejectsOversizedSteps) {
  const auto& m = smooth();
  const ParabolicModel pm{m.grid, m.M, m.K, m.a, 0.25, 1e-2, 0.0};
  auto s = homogeneous(Vector::Constant(21, 0.5), 5, 0.5);
  try {
    step(pm, s);
    FAIL();
  } catch (const PreconditionError& e) {
    EXPECT_STREQ(e.what(), "reduce dt");
  }
}

TEST(Front, StepProfile) {
  const Vector x = Vector::LinSpaced(101, -5.0, 5.0);
  Vector mass(101);
  for (Eigen::Index j = 0; j < 101; ++j) mass[j] = x[j] <= 3.0 + 1e-12 ? 1.0 : 0.0;
  const auto f = front_position(x, mass, 0.5);
  EXPECT_TRUE(f.attained);
  EXPECT_NEAR(f.x, 3.0, x[1] - x[0]);
  const auto above = front_position(x, mass, 2.0);
  EXPECT_FALSE(above.attained);
  EXPECT_EQ(above.x, -5.0);
}

TEST(Front, LinearInterpolation) {
  const Vector x = Vector::LinSpaced(3, 0.0, 2.0);
  const Vector mass = (Vector(3) << 1.0, 0.6, 0.2).finished();
  EXPECT_NEAR(front_position(x, mass, 0.5).x, 1.25, 1e-15);
}

TEST(Speed, SyntheticLinearHistory) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> noise(0.0, 1e-3);
  std::vector<FrontSample> h;
  for (int k = 0; k <= 400; ++k) h.push_back({0.1 * k, 2.0 * 0.1 * k + noise(rng)});
  const auto e = estimate_speed(h, 0.5, 1000.0);
  EXPECT_NEAR(e.c, 2.0, 1e-3);
  EXPECT_LT(e.std_error, 1e-3);
  EXPECT_FALSE(e.contaminated);
  EXPECT_EQ(e.samples, 201u);
}

TEST(Speed, EdgeContaminationAndShortHistory) {
  std::vector<FrontSample> h;
  for (int k = 0; k <= 100; ++k) h.push_back({0.1 * k, 2.0 * 0.1 * k});
  EXPECT_TRUE(estimate_speed(h, 0.5, 22.0).contaminated);
  EXPECT_FALSE(estimate_speed(h, 0.5, 30.0).contaminated);
  h.resize(30);
  EXPECT_THROW(estimate_speed(h, 0.5, 100.0), PreconditionError);
}

TEST(Simulation, SpreadsAtMinimalSpeed) {
  const auto& r = spreading_run();
  ASSERT_TRUE(r.estimate.has_value());
  EXPECT_NEAR(r.estimate->c, r.c_star, 0.05 * r.c_star);
  EXPECT_LT(r.estimate->std_error, 0.01 * r.estimate->c);
  EXPECT_FALSE(r.estimate->contaminated);
  EXPECT_LE(r.state.clipped_ratio_max, 1e-12);
  EXPECT_EQ(r.state.mass_alarms, 0);
  EXPECT_GE(r.state.u.minCoeff(), 0.0);
}

TEST(Simulation, FrontAdvances) {
  const auto& h = spreading_run().state.history;
  ASSERT_GT(h.size(), 100u);
  for (std::size_t k = 1; k < h.size(); ++k) EXPECT_GE(h[k].x, h[k - 1].x);
}

TEST(Simulation, FullWindowIncludesTransient) {
  const auto& r = spreading_run();
  const auto half = estimate_speed(r.state.history, 0.5, r.X);
  const auto full = estimate_speed(r.state.history, 1.0, r.X);
  EXPECT_GT(full.std_error, half.std_error);
}

TEST(Simulation, Deterministic) {
  const auto& m = smooth();
  const ParabolicModel pm{m.grid, m.M, m.K, m.a, 0.25, 1e-2, 0.0};
  SimulationOptions o;
  o.tmax = 5.0;
  const auto a = simulate(pm, o), b = simulate(pm, o);
  ASSERT_EQ(a.state.history.size(), b.state.history.size());
  for (std::size_t k = 0; k < a.state.history.size(); ++k) EXPECT_EQ(a.state.history[k].x, b.state.history[k].x);
  EXPECT_EQ((a.state.u - b.state.u).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Order, HalvedDataStayBelow) {
  const auto& m = smooth();
  const double b0 = beta0_constant(m.M, m.K, m.a, 0.25);
  const ParabolicModel pm{m.grid, m.M, m.K, m.a, 0.25, 1e-2, b0};
  const double region = 0.25 * m.M.lower_bound / m.K.upper_bound;
  const Vector x = simulation_x(20.0, 0.2);
  Matrix high = Matrix::Zero(21, x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) high.col(j).setConstant(0.9 * region * std::exp(-x[j] * x[j]));
  const auto v = order_preservation_test(pm, x, 0.5 * high, high, 10.0);
  EXPECT_TRUE(v.applicable);
  EXPECT_FALSE(v.skipped) << v.notice;
  EXPECT_TRUE(v.pass);
  EXPECT_GE(v.min_gap, -1e-8);
  const auto same = order_preservation_test(pm, x, high, high, 2.0);
  EXPECT_TRUE(same.pass);
  EXPECT_EQ(same.min_gap, 0.0);
}

TEST(Order, NotApplicableWithoutSelfCompetition) {
  const auto& m = smooth();
  const ParabolicModel pm{m.grid, m.M, m.K, m.a, 0.25, 1e-2, 0.0};
  const Vector x = simulation_x(5.0, 0.5);
  const Matrix u = Matrix::Constant(21, x.size(), 0.01);
  const auto v = order_preservation_test(pm, x, u, u, 1.0);
  EXPECT_TRUE(v.skipped);
  EXPECT_FALSE(v.applicable);
}

TEST(Order, RejectsUnorderedOrLargeData) {
  const auto& m = smooth();
  const double b0 = beta0_constant(m.M, m.K, m.a, 0.25);
  const ParabolicModel pm{m.grid, m.M, m.K, m.a, 0.25, 1e-2, b0};
  const Vector x = simulation_x(5.0, 0.5);
  const Matrix u = Matrix::Constant(21, x.size(), 0.01);
  EXPECT_THROW(order_preservation_test(pm, x, 2.0 * u, u, 1.0), PreconditionError);
  EXPECT_THROW(order_preservation_test(pm, x, u, 100.0 * u, 1.0), PreconditionError);
}
