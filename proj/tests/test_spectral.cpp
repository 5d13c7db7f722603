#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "phenowave/spectral.hpp"
#include "phenowave/validation.hpp"

using namespace phenowave;

namespace {

PresetSpec preset(const std::string& name, json params = json::object()) { return PresetSpec{name, std::move(params)}; }

struct Standard {
  PhenotypeGrid grid;
  KernelMatrix M;
  FitnessProfile a;
  explicit Standard(int n, const std::string& a_preset = "one_minus_sqrt_abs", json a_params = json::object())
      : grid(build_grid_1d(-1.0, 1.0, n)),
        M(make_mutation_kernel(preset("uniform"), grid)),
        a(make_fitness(preset(a_preset, std::move(a_params)), grid)) {}
};

// Random positive instance on a tiny grid: tabulated kernel, random fitness.
struct RandomInstance {
  PhenotypeGrid grid;
  KernelMatrix M;
  FitnessProfile a;
  double mu, eps;
  RandomInstance(std::mt19937_64& rng, int n)
      : grid(build_grid_1d(-1.0, 1.0, n)), M(), a(), mu(0.0), eps(0.0) {
    std::uniform_real_distribution<double> u(0.1, 2.0);
    json rows = json::array();
    for (int i = 0; i < n; ++i) {
      std::vector<double> row;
      for (int j = 0; j < n; ++j) row.push_back(u(rng));
      rows.push_back(row);
    }
    M = make_mutation_kernel(preset("tabulated", {{"values", rows}}), grid);
    Vector av(n);
    for (int i = 0; i < n; ++i) av[i] = u(rng) - 1.0;
    a = make_fitness_from_values(grid, av, false);
    mu = u(rng);
    eps = u(rng) * 0.05;
  }
};

}  // namespace

TEST(Spectral, ConstantFitnessHasExactPair) {
  auto g = build_grid_1d(-1.0, 1.0, 41);
  auto a = make_fitness(preset("constant", {{"value", 0.7}}), g);
  auto U = make_mutation_kernel(preset("uniform"), g);
  for (double eps : {1e-1, 1e-3}) {
    auto r = eigen_regularized(g, U, a, 0.4, eps);
    EXPECT_NEAR(r.lambda, -0.7, 1e-12);
    EXPECT_LE((r.phi.array() - 0.5).abs().maxCoeff(), 1e-10);
  }
  // Column normalization alone makes the constant a left eigenvector, so the
  // eigenvalue stays exact while the profile need not be flat.
  auto G = make_mutation_kernel(preset("gaussian_renormalized", {{"sigma", 0.3}}), g);
  EXPECT_NEAR(eigen_regularized(g, G, a, 0.4, 1e-2).lambda, -0.7, 1e-10);
  EXPECT_NEAR(eigen_nonlocal(g, G, a, 0.4).lambda, -0.7, 1e-10);
}

TEST(Spectral, MatchesDeterminantScanOnRandomInstances) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    RandomInstance inst(rng, 3 + trial % 6);
    const Matrix A = mutation_selection_matrix(inst.grid, inst.M, inst.a.values, inst.mu, inst.eps);
    const double oracle = det_scan_eigen(A, 20000);
    auto r = eigen_regularized(inst.grid, inst.M, inst.a, inst.mu, inst.eps);
    auto rep = OracleReport::compare("det_scan", "random", {oracle}, {-r.lambda}, 1e-8);
    EXPECT_TRUE(rep.pass) << rep.to_json().dump();
  }
}

TEST(Spectral, InvariantsHoldOnPresets) {
  for (const char* name : {"one_minus_sqrt_abs", "one_minus_abs", "one_minus_quadratic"}) {
    Standard s(101, name);
    for (double eps : {1e-1, 1e-3}) {
      auto r = eigen_regularized(s.grid, s.M, s.a, 0.25, eps);
      EXPECT_GT(r.phi.minCoeff(), 0.0);
      EXPECT_LE(r.residual, 1e-10);
      EXPECT_NEAR(s.grid.integrate(r.phi), 1.0, 1e-12);
      EXPECT_LE(std::abs(r.integral_identity), 1e-8);
      EXPECT_GE(r.lambda, -s.a.sup_a - 1e-12);
      EXPECT_LE(r.lambda, -s.a.inf_a + 1e-12);
    }
    auto r0 = eigen_nonlocal(s.grid, s.M, s.a, 0.25);
    EXPECT_LE(r0.lambda, -(s.a.sup_a - 0.25) + 1e-10);
  }
}

TEST(Spectral, FitnessShiftMovesEigenvalueExactly) {
  Standard s(81);
  Standard t(81, "one_minus_sqrt_abs", {{"sup", 1.3}});
  auto r1 = eigen_nonlocal(s.grid, s.M, s.a, 0.25);
  auto r2 = eigen_nonlocal(t.grid, t.M, t.a, 0.25);
  EXPECT_NEAR(r2.lambda - r1.lambda, -0.3, 1e-9);
  EXPECT_LE((r2.phi - r1.phi).cwiseAbs().maxCoeff(), 1e-6 * r1.phi.maxCoeff());
}

TEST(Spectral, ViscousEigenvalueDecreasesTowardLimit) {
  Standard s(201);
  double prev = 0.0;
  bool first = true;
  for (double eps : {1e-1, 1e-2, 1e-3, 1e-4}) {
    auto r = eigen_regularized(s.grid, s.M, s.a, 0.25, eps);
    if (!first) EXPECT_LT(r.lambda, prev);
    prev = r.lambda;
    first = false;
  }
  EXPECT_LT(prev, -0.6);
  EXPECT_GT(prev, -0.78);
}

TEST(Spectral, LinearFitnessKeepsStrictGap) {
  for (int n : {101, 201, 401}) {
    Standard s(n, "one_minus_abs");
    auto r = eigen_nonlocal(s.grid, s.M, s.a, 0.25);
    EXPECT_LT(r.lambda, -0.75 - 1e-2) << n;
  }
}

TEST(Spectral, SqrtFitnessConcentratesUnderRefinement) {
  double prev_peak = 0.0, prev_lambda = 0.0;
  for (int n : {101, 201, 401}) {
    Standard s(n);
    auto r = eigen_nonlocal(s.grid, s.M, s.a, 0.25);
    const double peak = r.phi[static_cast<Eigen::Index>(s.grid.origin_index())];
    EXPECT_EQ(static_cast<std::size_t>(std::distance(r.phi.data(),
                                                     std::max_element(r.phi.data(), r.phi.data() + r.phi.size()))),
              s.grid.origin_index());
    if (n > 101) {
      EXPECT_GT(peak, 1.5 * prev_peak);
      EXPECT_GT(r.lambda, prev_lambda);
    }
    EXPECT_LT(std::abs(r.lambda + 0.75), 0.02);
    prev_peak = peak;
    prev_lambda = r.lambda;
  }
}

TEST(Spectral, CriticalRateOfStandardPreset) {
  Standard s(4001);
  auto c = gamma1_and_mucrit(s.grid, s.M, s.a);
  EXPECT_NEAR(c.gamma1, 2.0, 0.02);
  EXPECT_NEAR(c.mu0, 0.5, 0.005);
}

TEST(Spectral, RankOneKernelPerronValueIsDirectSum) {
  auto g = build_grid_1d(-1.0, 1.0, 61);
  const auto n = static_cast<Eigen::Index>(g.size());
  Vector prof(n);
  for (Eigen::Index i = 0; i < n; ++i) prof[i] = 1.0 + 0.5 * std::cos(M_PI * g.node(static_cast<std::size_t>(i))[0]);
  prof /= g.integrate(prof);
  json rows = json::array();
  for (Eigen::Index i = 0; i < n; ++i) rows.push_back(std::vector<double>(static_cast<std::size_t>(n), prof[i]));
  auto M = make_mutation_kernel(preset("tabulated", {{"values", rows}}), g);
  auto a = make_fitness(preset("one_minus_sqrt_abs"), g);
  auto op = assemble_M1(g, M, a);
  double direct = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) direct += op.singular_weights[j] * prof[j];
  EXPECT_NEAR(gamma1_and_mucrit(g, M, a).gamma1, direct, 1e-9 * direct);
}

TEST(Spectral, SteeperFitnessDoesNotLowerCriticalRate) {
  Standard flat(401);
  Standard steep(401, "one_minus_sqrt_abs", {{"scale", 2.0}});
  const double mu_flat = gamma1_and_mucrit(flat.grid, flat.M, flat.a).mu0;
  const double mu_steep = gamma1_and_mucrit(steep.grid, steep.M, steep.a).mu0;
  EXPECT_GE(mu_steep, mu_flat);
  EXPECT_NEAR(mu_steep, 2.0 * mu_flat, 1e-9);
}

TEST(Spectral, TrichotomyLabels) {
  EXPECT_EQ(classify_trichotomy(2.0, 0.25, -0.75, 1.0).label, Regime::singular);
  EXPECT_EQ(classify_trichotomy(2.0, 0.75, -0.43, 1.0).label, Regime::continuous);
  EXPECT_TRUE(classify_trichotomy(2.0, 0.75, -0.43, 1.0).consistent);
  EXPECT_EQ(classify_trichotomy(2.0, 0.5 * (1.0 + 5e-7), -0.5, 1.0).label, Regime::l1_critical);
  EXPECT_EQ(classify_trichotomy(2.0, 0.5 * (1.0 + 5e-6), -0.5, 1.0).label, Regime::continuous);
  EXPECT_FALSE(classify_trichotomy(2.0, 0.25, -0.9, 1.0).consistent);
  EXPECT_THROW(classify_trichotomy(0.0, 0.25, -0.75, 1.0), PreconditionError);
}

TEST(Spectral, SingularEigenvectorSatisfiesWeakEquation) {
  Standard s(401);
  auto se = singular_eigenvector(s.grid, s.M, s.a, 0.25);
  EXPECT_NEAR(se.phi.total_mass(), 1.0, 1e-12);
  EXPECT_GT(se.atom_mass, 0.0);
  EXPECT_LT(se.atom_mass, 1.0);
  ASSERT_EQ(se.phi.atoms.size(), 1u);
  EXPECT_EQ(se.phi.atoms[0].node, s.grid.origin_index());
  EXPECT_DOUBLE_EQ(se.lambda, -0.75);
  auto tests = y_test_functions(s.grid, 20);
  EXPECT_EQ(tests.size(), 28u);
  EXPECT_LE(weak_eigen_residual(s.grid, s.M, s.a, 0.25, se.lambda, se.phi, tests), 1e-8);
  // a wrong eigenvalue is detected
  EXPECT_GT(weak_eigen_residual(s.grid, s.M, s.a, 0.25, -0.7, se.phi, tests), 1e-3);
}

TEST(Spectral, SingularDensityFollowsInverseSquareRoot) {
  Standard s(801);
  auto se = singular_eigenvector(s.grid, s.M, s.a, 0.25);
  // least-squares slope of log density against log |y| on 0.05 <= y <= 0.9
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int m = 0;
  for (std::size_t i = 0; i < s.grid.size(); ++i) {
    const double y = s.grid.node(i)[0];
    if (y < 0.05 || y > 0.9) continue;
    const double lx = std::log(y), ly = std::log(se.phi.ac[static_cast<Eigen::Index>(i)]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++m;
  }
  EXPECT_NEAR((m * sxy - sx * sy) / (m * sxx - sx * sx), -0.5, 0.02);
}

TEST(Spectral, SingularAtomTakesAllMassAsMutationVanishes) {
  Standard s(201);
  double prev = 0.0;
  for (double mu : {0.2, 0.1, 0.05, 0.01}) {
    const double mass = singular_eigenvector(s.grid, s.M, s.a, mu).atom_mass;
    EXPECT_GT(mass, prev);
    prev = mass;
  }
  EXPECT_GT(prev, 0.95);
}

TEST(Spectral, SingularEigenvectorRejectsContinuousRegime) {
  Standard s(201);
  EXPECT_THROW(singular_eigenvector(s.grid, s.M, s.a, 0.75), PreconditionError);
  auto g = build_grid_1d(-1.0, 1.0, 21);
  Vector av(21);
  for (int i = 0; i < 21; ++i) av[i] = (i == 10 || i == 12) ? 1.0 : 0.5;
  auto a2 = make_fitness_from_values(g, av, true);
  EXPECT_THROW(singular_eigenvector(g, make_mutation_kernel(preset("uniform"), g), a2, 0.1), PreconditionError);
}

TEST(Spectral, ContinuousEigenvectorPassesWeakTest) {
  Standard s(201, "one_minus_quadratic");
  auto r = eigen_regularized(s.grid, s.M, s.a, 0.25, 1e-2);
  auto tests = y_test_functions(s.grid, 20);
  EXPECT_LE(weak_eigen_residual(s.grid, s.M, s.a, 0.25, r.lambda, as_profile(s.grid, r), tests, 1e-2), 1e-8);
}

TEST(Spectral, MinimalSpeed) {
  EXPECT_DOUBLE_EQ(minimal_speed(-1.0), 2.0);
  EXPECT_NEAR(minimal_speed(-0.75), 1.7320508, 1e-7);
  EXPECT_THROW(minimal_speed(0.0), PreconditionError);
  try {
    minimal_speed(0.0);
  } catch (const PreconditionError& e) {
    EXPECT_STREQ(e.what(), "no positive speed: population does not persist");
  }
}

TEST(Spectral, RegularizedRequiresPositiveViscosity) {
  Standard s(21);
  EXPECT_THROW(eigen_regularized(s.grid, s.M, s.a, 0.25, 0.0), PreconditionError);
}

TEST(Spectral, TwoDimensionalPresetIsPositive) {
  auto g = build_grid(2, {{-1.0, 1.0}, {-1.0, 1.0}}, 15);
  auto M = make_mutation_kernel(preset("uniform"), g);
  auto a = make_fitness(preset("one_minus_abs"), g);
  auto r = eigen_regularized(g, M, a, 0.25, 1e-2);
  EXPECT_GT(r.phi.minCoeff(), 0.0);
  EXPECT_LE(std::abs(r.integral_identity), 1e-8);
  auto c = gamma1_and_mucrit(g, M, a);
  EXPECT_GT(c.gamma1, 0.0);
}
