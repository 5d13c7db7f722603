#include <gtest/gtest.h>

#include <cmath>

#include "phenowave/stationary.hpp"

using namespace phenowave;

namespace {

PresetSpec preset(const std::string& name, json params = json::object()) { return PresetSpec{name, std::move(params)}; }

struct Model {
  PhenotypeGrid grid;
  KernelMatrix M, K;
  FitnessProfile a;
  Model(int n, const std::string& a_name, PresetSpec k = preset("constant", {{"value", 1.0}}),
        PresetSpec m = preset("uniform"))
      : grid(build_grid_1d(-1.0, 1.0, n)),
        M(make_mutation_kernel(m, grid)),
        K(make_competition_kernel(k, grid)),
        a(make_fitness(preset(a_name), grid)) {}
};

}  // namespace

TEST(Stationary, UnitCompetitionGivesScaledEigenvector) {
  Model m(101, "one_minus_sqrt_abs");
  for (double eps : {1e-1, 1e-3}) {
    auto s = solve_stationary(m.grid, m.M, m.K, m.a, 0.25, eps, 0.0);
    auto e = eigen_regularized(m.grid, m.M, m.a, 0.25, eps);
    EXPECT_LE(s.residual, 1e-9);
    EXPECT_LE((s.values() + e.lambda * e.phi).cwiseAbs().maxCoeff(), 1e-8 * s.values().maxCoeff());
  }
}

TEST(Stationary, SeparableKernelApproachesLimitingEigenvector) {
  Model m(201, "one_minus_sqrt_abs", preset("y_independent", {{"c0", 1.0}, {"c2", 0.5}}));
  const double mu = 0.75;
  auto e0 = eigen_nonlocal(m.grid, m.M, m.a, mu);
  const Vector target = -e0.lambda * normalize_k_mass_one(m.grid, m.K, e0.phi);
  double prev = 1e300;
  for (double eps : {1e-2, 1e-3, 1e-4}) {
    auto s = solve_stationary(m.grid, m.M, m.K, m.a, mu, eps, 0.0);
    double err = 0.0;
    for (Eigen::Index i = 0; i < target.size(); ++i)
      if (std::abs(m.grid.node(static_cast<std::size_t>(i))[0]) > 0.1)
        err = std::max(err, std::abs(s.values()[i] - target[i]));
    err /= target.maxCoeff();
    EXPECT_LT(err, prev);
    prev = err;
    // K-mass of p equals -lambda^eps exactly for a y-independent kernel
    EXPECT_NEAR(apply_star(m.K, s.p)[0], -s.lambda_eps, 1e-9);
  }
  EXPECT_LT(prev, 0.01);
}

TEST(Stationary, SelfCompetitionCapsTheProfile) {
  Model m(101, "one_minus_sqrt_abs");
  const double b0 = beta0_constant(m.M, m.K, m.a, 0.25);
  EXPECT_DOUBLE_EQ(b0, 8.0);
  for (double beta : {b0, 2.0 * b0, 0.5}) {
    auto s = solve_stationary(m.grid, m.M, m.K, m.a, 0.25, 1e-2, beta);
    EXPECT_LE(s.values().maxCoeff(), m.a.sup_a / beta + 1e-8);
    EXPECT_GT(s.values().minCoeff(), 0.0);
  }
}

TEST(Stationary, ExtinctionBranchReturnsZero) {
  auto g = build_grid_1d(-1.0, 1.0, 41);
  auto M = make_mutation_kernel(preset("uniform"), g);
  auto K = make_competition_kernel(preset("constant", {{"value", 1.0}}), g);
  auto a = make_fitness(preset("one_minus_quadratic", {{"sup", -0.5}}), g);
  auto s = solve_stationary(g, M, K, a, 0.25, 1e-2, 0.0);
  EXPECT_TRUE(s.zero_branch);
  EXPECT_EQ(s.values().cwiseAbs().maxCoeff(), 0.0);
  auto rep = mass_bounds(s.p, s.lambda_eps, a.sup_a, K.lower_bound, K.upper_bound);
  EXPECT_FALSE(rep.valid);
  EXPECT_EQ(rep.note, "nontrivial solve required");
}

TEST(Stationary, BorderlineEigenvalueIsRefused) {
  auto g = build_grid_1d(-1.0, 1.0, 21);
  auto M = make_mutation_kernel(preset("uniform"), g);
  auto K = make_competition_kernel(preset("constant", {{"value", 1.0}}), g);
  auto a = make_fitness(preset("constant", {{"value", 0.0}}), g);
  EXPECT_THROW(solve_stationary(g, M, K, a, 0.25, 1e-2, 0.0), PreconditionError);
}

TEST(Stationary, MassBoundsAndScaling) {
  Model m(101, "one_minus_sqrt_abs");
  Model m2(101, "one_minus_sqrt_abs", preset("constant", {{"value", 2.0}}));
  for (double eps : {1e-2, 1e-3}) {
    auto s = solve_stationary(m.grid, m.M, m.K, m.a, 0.25, eps, 0.0);
    auto r = mass_bounds(s.p, s.lambda_eps, m.a.sup_a, m.K.lower_bound, m.K.upper_bound);
    EXPECT_TRUE(r.valid) << r.lower_slack << " " << r.upper_slack;
    EXPECT_NEAR(r.upper, 1.0, 1e-15);
    auto s2 = solve_stationary(m2.grid, m2.M, m2.K, m2.a, 0.25, eps, 0.0);
    auto r2 = mass_bounds(s2.p, s2.lambda_eps, m2.a.sup_a, m2.K.lower_bound, m2.K.upper_bound);
    EXPECT_TRUE(r2.valid);
    EXPECT_NEAR(r2.lower, 0.5 * r.lower, 1e-12);
    EXPECT_NEAR(r2.upper, 0.5 * r.upper, 1e-12);
  }
}

TEST(Stationary, EvenPresetGivesEvenSolution) {
  Model m(101, "one_minus_abs", preset("y_independent", {{"c0", 1.0}, {"c2", 1.0}}),
          preset("gaussian_renormalized", {{"sigma", 0.3}}));
  auto s = solve_stationary(m.grid, m.M, m.K, m.a, 0.25, 1e-2, 0.0);
  const auto n = s.values().size();
  for (Eigen::Index i = 0; i < n; ++i) EXPECT_NEAR(s.values()[i], s.values()[n - 1 - i], 1e-8);
}

TEST(Stationary, MassDoesNotGrowWithSelfCompetition) {
  Model m(101, "one_minus_sqrt_abs", preset("y_independent", {{"c0", 1.0}, {"c2", 0.5}}));
  double prev = 1e300;
  for (double beta : {0.0, 0.5, 2.0, 8.0, 32.0}) {
    auto s = solve_stationary(m.grid, m.M, m.K, m.a, 0.25, 1e-2, beta);
    const double mass = s.p.total_mass();
    EXPECT_LE(mass, prev + 1e-10);
    prev = mass;
  }
}

TEST(Stationary, HomotopyRecoversFromPoorGuess) {
  Model m(101, "one_minus_sqrt_abs", preset("y_independent", {{"c0", 1.0}, {"c2", 0.5}}));
  StationaryOptions opt;
  opt.initial = Vector::Constant(static_cast<Eigen::Index>(m.grid.size()), 1e3);
  opt.max_iter = 3;
  opt.try_eigen_guess = false;
  auto s = solve_stationary(m.grid, m.M, m.K, m.a, 0.25, 1e-2, 0.0, opt);
  EXPECT_TRUE(s.used_homotopy);
  auto ref = solve_stationary(m.grid, m.M, m.K, m.a, 0.25, 1e-2, 0.0);
  EXPECT_LE((s.values() - ref.values()).cwiseAbs().maxCoeff(), 1e-7 * ref.values().maxCoeff());
}

TEST(Stationary, LowerBoundConstant) {
  Model m(201, "one_minus_sqrt_abs");
  auto c = rho_beta_constant(m.grid, m.M, m.K, m.a, 0.25, 1.0, 0.1);
  EXPECT_GT(c.eta, 0.0);
  EXPECT_GT(c.rho_beta, 0.0);
  EXPECT_LE(c.lambda_delta, 0.75 * c.lambda1);
  EXPECT_NEAR(c.delta_cap, 0.125, 1e-15);
  // formula evaluated independently
  const double first = 0.5 * c.eta / (2.0 * 1.0 * 0.5);
  const double second = -c.lambda1 * c.eta / (4.0 * 1.0 * 0.25 * 0.5 + 2.0 * c.eta);
  EXPECT_NEAR(c.rho_beta, std::min(first, second) * 0.25 * 0.5 / (1.0 + 0.25), 1e-14);

  double prev = c.rho_beta;
  for (double beta : {2.0, 4.0, 8.0, 16.0, 64.0}) {
    const double r = rho_beta_constant(m.grid, m.M, m.K, m.a, 0.25, beta, 0.1).rho_beta;
    EXPECT_LE(r, prev);
    prev = r;
  }
  EXPECT_LT(prev, c.rho_beta);
  const double r1 = rho_beta_constant(m.grid, m.M, m.K, m.a, 0.25, 1e3, 0.1).rho_beta;
  const double r2 = rho_beta_constant(m.grid, m.M, m.K, m.a, 0.25, 1e4, 0.1).rho_beta;
  EXPECT_NEAR(std::log10(r2 / r1), -1.0, 1e-2);

  EXPECT_THROW(rho_beta_constant(m.grid, m.M, m.K, m.a, 0.25, 1.0, 0.125), PreconditionError);
  auto d = rho_beta_constant(m.grid, m.M, m.K, m.a, 0.25, 1.0, std::nullopt, 1e-2);
  EXPECT_NEAR(d.delta, 0.1, 1e-15);
  ASSERT_TRUE(d.l0.has_value());
  EXPECT_NEAR(*d.c_star_eps, 2.0 * std::sqrt(-*d.lambda_eps), 1e-15);
  EXPECT_NEAR(*d.tau0, -*d.lambda_eps / 2.0, 1e-15);
}

TEST(Stationary, StationarySolutionStaysAboveLowerBound) {
  Model m(101, "one_minus_sqrt_abs");
  const double beta = 2.0;
  auto c = rho_beta_constant(m.grid, m.M, m.K, m.a, 0.25, beta);
  auto s = solve_stationary(m.grid, m.M, m.K, m.a, 0.25, 1e-3, beta);
  EXPECT_GE(s.values().minCoeff(), c.rho_beta);
}

TEST(Stationary, SingleEntrySweepMatchesDirectSolve) {
  Model m(101, "one_minus_sqrt_abs");
  auto rep = viscosity_sweep(m.grid, m.M, m.K, m.a, 0.25, 0.0, {1e-2});
  ASSERT_EQ(rep.entries.size(), 1u);
  auto s = solve_stationary(m.grid, m.M, m.K, m.a, 0.25, 1e-2, 0.0);
  EXPECT_NEAR(rep.entries[0].mass, s.p.total_mass(), 1e-12);
  EXPECT_THROW(viscosity_sweep(m.grid, m.M, m.K, m.a, 0.25, 0.0, {1e-3, 1e-2}), PreconditionError);
}

TEST(Stationary, ConcentrationDichotomy) {
  Model m(201, "one_minus_sqrt_abs");
  const std::vector<double> eps = {1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6};
  auto low = viscosity_sweep(m.grid, m.M, m.K, m.a, 0.25, 0.0, eps);
  for (const auto& e : low.entries) {
    ASSERT_TRUE(e.ok) << e.error;
    EXPECT_GE(e.mass, -e.lambda_eps - 1e-8);
  }
  // the eps -> 0 bound is approached from below
  EXPECT_NEAR(low.entries.back().mass, low.mass_lower_bound, 0.05);
  auto v_low = concentration_detector(low, m.K, m.a, 0.25, 0.5);
  EXPECT_EQ(v_low.label, "concentrating");
  EXPECT_TRUE(v_low.b_max_in_omega0);
  EXPECT_TRUE(v_low.pointwise_ok);

  auto high = viscosity_sweep(m.grid, m.M, m.K, m.a, 0.75, 0.0, eps);
  auto v_high = concentration_detector(high, m.K, m.a);
  EXPECT_EQ(v_high.label, "not concentrating");
  EXPECT_LT(high.entries.back().sup, 2.0);
}

TEST(Stationary, DetectorPointwiseInequalityWithGrowingKernel) {
  auto g = build_grid_1d(-1.0, 1.0, 101);
  const auto n = static_cast<Eigen::Index>(g.size());
  Matrix kv(n, n);
  for (Eigen::Index i = 0; i < n; ++i) kv.row(i).setConstant(1.0 + g.radius(static_cast<std::size_t>(i)));
  auto K = kernel_from_values(kv);
  auto M = make_mutation_kernel(preset("uniform"), g);
  auto a = make_fitness(preset("one_minus_sqrt_abs"), g);
  auto rep = viscosity_sweep(g, M, K, a, 0.25, 0.0, {1e-2, 1e-3});
  auto v = concentration_detector(rep, K, a);
  EXPECT_TRUE(v.pointwise_ok);
  EXPECT_GE(v.pointwise_margin, -1e-12);
  EXPECT_TRUE(v.b_max_in_omega0);

  Matrix bad(n, n);
  for (Eigen::Index i = 0; i < n; ++i) bad.row(i).setConstant(2.0 - g.radius(static_cast<std::size_t>(i)));
  EXPECT_EQ(concentration_detector(rep, kernel_from_values(bad), a).label, "not applicable");
}
