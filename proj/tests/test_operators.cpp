#include <gtest/gtest.h>

#include <cmath>

#include "phenowave/operators.hpp"

using namespace phenowave;

namespace {

PresetSpec preset(const std::string& name, json params = json::object()) { return PresetSpec{name, std::move(params)}; }

}  // namespace

TEST(Operators, UniformMutationKernelIsHalf) {
  auto g = build_grid_1d(-1.0, 1.0, 21);
  auto M = make_mutation_kernel(preset("uniform"), g);
  EXPECT_LE((M.values.array() - 0.5).abs().maxCoeff(), 1e-15);
  Eigen::RowVectorXd cs = g.weights().transpose() * M.values;
  EXPECT_LE((cs.array() - 1.0).abs().maxCoeff(), 1e-12);
  EXPECT_DOUBLE_EQ(M.lower_bound, 0.5);
  EXPECT_DOUBLE_EQ(M.upper_bound, 0.5);
}

TEST(Operators, SqrtFitnessExtremes) {
  auto g = build_grid_1d(-1.0, 1.0, 21);
  auto a = make_fitness(preset("one_minus_sqrt_abs"), g);
  EXPECT_DOUBLE_EQ(a.sup_a, 1.0);
  EXPECT_DOUBLE_EQ(a.inf_a, 0.0);
  ASSERT_EQ(a.omega0.size(), 1u);
  EXPECT_EQ(a.omega0[0], g.origin_index());
  EXPECT_TRUE(a.integrable);
  EXPECT_FALSE(make_fitness(preset("one_minus_abs"), g).integrable);
  EXPECT_FALSE(make_fitness(preset("one_minus_quadratic"), g).integrable);
  auto g2 = build_grid(2, {{-1, 1}, {-1, 1}}, 9);
  EXPECT_TRUE(make_fitness(preset("one_minus_abs"), g2).integrable);
}

TEST(Operators, GaussianRenormalizationMatchesFineQuadrature) {
  auto g = build_grid_1d(-1.0, 1.0, 41);
  const double sigma = 0.3;
  auto M = make_mutation_kernel(preset("gaussian_renormalized", {{"sigma", sigma}}), g);
  Eigen::RowVectorXd cs = g.weights().transpose() * M.values;
  EXPECT_LE((cs.array() - 1.0).abs().maxCoeff(), 1e-12);

  // independent check of the pre-normalization column defect at the boundary column z = -1:
  // the truncated Gaussian integrates to 0.5*(erf(2/(sqrt2 sigma)) - erf(0)) = ~0.5
  const double exact = 0.5 * std::erf(2.0 / (std::sqrt(2.0) * sigma));
  EXPECT_NEAR(M.column_deviation_before, 1.0 - exact, 5e-3);
  EXPECT_GT(M.column_deviation_before, 0.4);
}

TEST(Operators, StarOfConstantAndAtom) {
  auto g = build_grid_1d(-1.0, 1.0, 31);
  const auto n = static_cast<Eigen::Index>(g.size());
  auto M = make_mutation_kernel(preset("uniform"), g);
  Vector one = Vector::Ones(n);
  EXPECT_LE((apply_star(M, g, one).array() - 1.0).abs().maxCoeff(), 1e-12);

  MeasureProfile atom(Vector::Zero(n), g.weights());
  atom.atoms.push_back({g.origin_index(), 0.3});
  auto Mg = make_mutation_kernel(preset("gaussian_renormalized", {{"sigma", 0.4}}), g);
  Vector r = apply_star(Mg, atom);
  for (Eigen::Index i = 0; i < n; ++i)
    EXPECT_NEAR(r[i], 0.3 * Mg.values(i, static_cast<Eigen::Index>(g.origin_index())), 1e-15);

  auto K = make_competition_kernel(preset("constant", {{"value", 1.0}}), g);
  Vector h(n);
  for (Eigen::Index i = 0; i < n; ++i) h[i] = 0.75 + g.node(static_cast<std::size_t>(i))[0];  // odd part integrates to 0
  EXPECT_LE((apply_star(K, g, h).array() - 1.5).abs().maxCoeff(), 1e-12);
  h /= 2.0;
  EXPECT_LE((apply_star(K, g, h).array() - 0.75).abs().maxCoeff(), 1e-12);
}

TEST(Operators, StarIsLinear) {
  auto g = build_grid_1d(-1.0, 1.0, 25);
  const auto n = static_cast<Eigen::Index>(g.size());
  auto M = make_mutation_kernel(preset("gaussian_renormalized", {{"sigma", 0.2}}), g);
  Vector g1 = Vector::LinSpaced(n, 0.0, 1.0), g2 = Vector::LinSpaced(n, 2.0, -1.0).cwiseAbs();
  const double alpha = -1.7;
  Vector lhs = apply_star(M, g, alpha * g1 + g2);
  Vector rhs = alpha * apply_star(M, g, g1) + apply_star(M, g, g2);
  EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Operators, StarRejectsMismatchedGrid) {
  auto g = build_grid_1d(-1.0, 1.0, 25);
  auto M = make_mutation_kernel(preset("uniform"), g);
  EXPECT_THROW(apply_star(M, g, Vector::Ones(10)), PreconditionError);
}

TEST(Operators, M1RowSumsApproachTwo) {
  double prev = 0.0;
  for (int n : {101, 401, 1601}) {
    auto g = build_grid_1d(-1.0, 1.0, n);
    auto M = make_mutation_kernel(preset("uniform"), g);
    auto a = make_fitness(preset("one_minus_sqrt_abs"), g);
    auto op = assemble_M1(g, M, a);
    EXPECT_GE(op.matrix.minCoeff(), 0.0);
    const double rs = op.matrix.row(0).sum();
    EXPECT_LE((op.matrix.rowwise().sum().array() - rs).abs().maxCoeff(), 1e-12);
    if (n > 101) EXPECT_LT(std::abs(rs - 2.0), std::abs(prev - 2.0));
    prev = rs;
  }
  EXPECT_NEAR(prev, 2.0, 0.02);
}

TEST(Operators, M1Preconditions) {
  auto g = build_grid_1d(-1.0, 1.0, 51);
  auto M = make_mutation_kernel(preset("uniform"), g);
  EXPECT_THROW(assemble_M1(g, M, make_fitness(preset("one_minus_abs"), g)), PreconditionError);
  EXPECT_THROW(assemble_M1(g, M, make_fitness(preset("constant", {{"value", 1.0}}), g)), PreconditionError);
  EXPECT_THROW(assemble_M1(g, M, make_fitness(preset("one_minus_sqrt_abs"), g), SingularRule::none), PreconditionError);
  try {
    assemble_M1(g, M, make_fitness(preset("one_minus_abs"), g));
  } catch (const PreconditionError& e) {
    EXPECT_STREQ(e.what(), "weight not integrable — γ₁ undefined");
  }
}

TEST(Operators, SingularWeightsReproduceLebesgueAwayFromMaximum) {
  auto g = build_grid_1d(-1.0, 1.0, 41);
  auto M = make_mutation_kernel(preset("uniform"), g);
  auto a = make_fitness(preset("one_minus_sqrt_abs"), g);
  auto op = assemble_M1(g, M, a);
  const auto k = static_cast<Eigen::Index>(g.origin_index());
  EXPECT_EQ(op.singular_weights[k], 0.0);
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(g.size()); ++i)
    if (std::abs(i - k) > 1) EXPECT_NEAR(op.lebesgue[i], g.weights()[i], 1e-15);
  // the redistributed cell changes the total reference volume by O(h)
  EXPECT_NEAR(op.lebesgue.sum(), 2.0, 1.5 * g.spacing(0));
}

TEST(Operators, KernelPositivityEnforced) {
  auto g = build_grid_1d(-1.0, 1.0, 5);
  json bad = json::array();
  for (int i = 0; i < 5; ++i) bad.push_back(std::vector<double>{1, 1, 0, 1, 1});
  EXPECT_THROW(make_competition_kernel(preset("general_tabulated", {{"values", bad}}), g), PreconditionError);
  try {
    make_competition_kernel(preset("constant", {{"value", -1.0}}), g);
  } catch (const PreconditionError& e) {
    EXPECT_STREQ(e.what(), "K: kernel positivity violated");
  }
  EXPECT_THROW(make_mutation_kernel(preset("uniform", {{"sigma", 1.0}}), g), ConfigError);
  EXPECT_THROW(make_mutation_kernel(preset("lorentzian"), g), ConfigError);
}

TEST(Operators, AssumptionReport) {
  auto g = build_grid_1d(-1.0, 1.0, 101);
  ModelConfig cfg;
  cfg.mu = 0.25;
  auto k = assemble_kernels(cfg, g);
  auto rep = check_assumptions(cfg, g, k.M, k.K, k.a);
  const auto* item6 = rep.find("mutation_rate_bound");
  ASSERT_NE(item6, nullptr);
  EXPECT_TRUE(item6->pass);
  EXPECT_NEAR(item6->margin, 0.75, 1e-12);
  const auto* dom = rep.find("competition_dominance");
  ASSERT_NE(dom, nullptr);
  EXPECT_TRUE(dom->pass);
  EXPECT_DOUBLE_EQ(dom->margin, 0.0);
  EXPECT_TRUE(rep.all_pass());

  cfg.mu = 1.5;
  auto bad = check_assumptions(cfg, g, k.M, k.K, k.a);
  EXPECT_FALSE(bad.find("mutation_rate_bound")->pass);
}

TEST(Operators, DominanceDetectsViolation) {
  auto g = build_grid_1d(-1.0, 1.0, 21);
  const auto n = static_cast<Eigen::Index>(g.size());
  Matrix kv(n, n);
  for (Eigen::Index i = 0; i < n; ++i) kv.row(i).setConstant(2.0 - g.radius(static_cast<std::size_t>(i)));
  ModelConfig cfg;
  auto k = assemble_kernels(cfg, g);
  auto rep = check_assumptions(cfg, g, k.M, kernel_from_values(kv), k.a);
  EXPECT_FALSE(rep.find("competition_dominance")->pass);
  EXPECT_LT(rep.find("competition_dominance")->margin, 0.0);
}
