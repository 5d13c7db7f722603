#pragma once

// Principal eigenpairs, the critical mutation rate, and singular eigenvectors.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "phenowave/error.hpp"
#include "phenowave/grid.hpp"
#include "phenowave/measure.hpp"
#include "phenowave/operators.hpp"
#include "phenowave/perron.hpp"

namespace phenowave {

enum class Normalization { mass_one, sup_one, k_mass_one };

inline std::string to_string(Normalization n) {
  switch (n) {
    case Normalization::mass_one: return "mass-one";
    case Normalization::sup_one: return "sup-one";
    case Normalization::k_mass_one: return "K-mass-one";
  }
  return "?";
}

struct SpectralResult {
  double lambda = 0.0;
  Vector phi;
  Normalization normalization = Normalization::mass_one;
  /// Relative eigen-equation residual ||A phi - Lambda phi||_inf / ||phi||_inf.
  double residual = 0.0;
  int iterations = 0;
  /// sum_i w_i (lambda + a_i) phi_i
  double integral_identity = 0.0;
  std::size_t grid_size = 0;
};

/// eps * Laplacian + mu * (M W - I) + diag(a); its Perron value is -lambda.
inline Matrix mutation_selection_matrix(const PhenotypeGrid& grid, const KernelMatrix& M, const Vector& a, double mu,
                                        double eps) {
  const auto n = static_cast<Eigen::Index>(grid.size());
  if (M.size() != grid.size() || a.size() != n) throw PreconditionError("operator assembly: grid mismatch");
  Matrix A = mu * (M.values * grid.weights().asDiagonal());
  A.diagonal().array() += a.array() - mu;
  if (eps > 0.0) A += eps * grid.dense_laplacian();
  return A;
}

inline Vector normalize_mass_one(const PhenotypeGrid& grid, const Vector& phi) { return phi / grid.integrate(phi); }

/// Scales phi so that int K(y, z) phi(z) dz = 1; requires K(y, z) = K(z).
inline Vector normalize_k_mass_one(const PhenotypeGrid& grid, const KernelMatrix& K, const Vector& phi) {
  if (!is_y_independent(K)) throw PreconditionError("K-mass normalization needs a y-independent competition kernel");
  return phi / K.values.row(0).dot(grid.weights().cwiseProduct(phi));
}

namespace detail {

inline SpectralResult principal_pair(const PhenotypeGrid& grid, const KernelMatrix& M, const FitnessProfile& a,
                                     double mu, double eps, const PerronOptions& opt) {
  const Matrix A = mutation_selection_matrix(grid, M, a.values, mu, eps);
  const PerronPair pp = perron(A, opt);
  SpectralResult r;
  r.lambda = -pp.value;
  r.phi = normalize_mass_one(grid, pp.vector);
  r.normalization = Normalization::mass_one;
  r.residual = pp.residual;
  r.iterations = pp.iterations;
  r.integral_identity = grid.weights().dot(((r.lambda + a.values.array()) * r.phi.array()).matrix());
  r.grid_size = grid.size();
  if (!(r.phi.minCoeff() > 0.0)) throw SolverError("principal eigenvector lost positivity", r.residual);
  return r;
}

}  // namespace detail

/// Principal pair of the viscous problem, eps > 0, mass-one eigenvector.
inline SpectralResult eigen_regularized(const PhenotypeGrid& grid, const KernelMatrix& M, const FitnessProfile& a,
                                        double mu, double eps, const PerronOptions& opt = {}) {
  if (!(eps > 0.0)) throw PreconditionError("eigen_regularized requires eps > 0");
  return detail::principal_pair(grid, M, a, mu, eps, opt);
}

/// Principal pair of the purely nonlocal problem on the fixed grid.
inline SpectralResult eigen_nonlocal(const PhenotypeGrid& grid, const KernelMatrix& M, const FitnessProfile& a,
                                     double mu, const PerronOptions& opt = {}) {
  SpectralResult r = detail::principal_pair(grid, M, a, mu, 0.0, opt);
  if (r.lambda > -(a.sup_a - mu) + 1e-10)
    throw SolverError("nonlocal eigenvalue above -(sup a - mu): Perron value below the diagonal bound", r.residual);
  return r;
}

struct CriticalRate {
  double gamma1 = 0.0;
  double mu0 = 0.0;
  double residual = 0.0;
  int iterations = 0;
  std::size_t grid_size = 0;
};

/// Perron value of the singular-weight operator (mu = 1) and mu0 = 1/gamma1.
inline CriticalRate gamma1_and_mucrit(const PhenotypeGrid& grid, const KernelMatrix& M, const FitnessProfile& a,
                                      const PerronOptions& opt = {}) {
  const SingularOperator op = assemble_M1(grid, M, a);
  const PerronPair pp = perron(op.matrix, opt);
  if (!(pp.value > 0.0)) throw SolverError("singular-weight operator has nonpositive Perron value", pp.residual);
  return CriticalRate{pp.value, 1.0 / pp.value, pp.residual, pp.iterations, grid.size()};
}

enum class Regime { continuous, l1_critical, singular };

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::continuous: return "continuous";
    case Regime::l1_critical: return "L1-critical";
    case Regime::singular: return "singular";
  }
  return "?";
}

struct Trichotomy {
  Regime label = Regime::singular;
  double mu_gamma = 0.0;
  /// -(sup a - mu) - lambda1; strictly positive exactly in the continuous regime.
  double lambda_gap = 0.0;
  /// Label agrees with the eigenvalue test at the given gap tolerance.
  bool consistent = true;
};

/// Labels the regime from mu * gamma1 against 1 (relative band `tol`).
///
/// The cross-check compares against the eigenvalue gap: on a finite grid the
/// singular regime still shows a small positive gap, so `gap_tol` sets the
/// level above which the gap counts as strict.
inline Trichotomy classify_trichotomy(double gamma1, double mu, double lambda1, double sup_a, double tol = 1e-6,
                                      double gap_tol = 1e-2) {
  if (!(gamma1 > 0.0)) throw PreconditionError("classify_trichotomy requires gamma1 > 0");
  Trichotomy t;
  t.mu_gamma = mu * gamma1;
  if (std::abs(t.mu_gamma - 1.0) <= tol)
    t.label = Regime::l1_critical;
  else
    t.label = t.mu_gamma > 1.0 ? Regime::continuous : Regime::singular;
  t.lambda_gap = -(sup_a - mu) - lambda1;
  if (t.label != Regime::l1_critical) t.consistent = (t.label == Regime::continuous) == (t.lambda_gap > gap_tol);
  return t;
}

struct SingularEigenvector {
  MeasureProfile phi;
  double lambda = 0.0;
  /// M * phi at the nodes.
  Vector aux;
  double atom_mass = 0.0;
  double gamma1 = 0.0;
};

/// Measure eigenvector with one atom at the fitness maximum (mu * gamma1 < 1).
inline SingularEigenvector singular_eigenvector(const PhenotypeGrid& grid, const KernelMatrix& M,
                                                const FitnessProfile& a, double mu, const PerronOptions& opt = {}) {
  const SingularOperator op = assemble_M1(grid, M, a);
  if (op.omega0.size() != 1) throw PreconditionError("singular eigenvector needs exactly one maximizer node");
  const double gamma1 = perron(op.matrix, opt).value;
  if (mu * gamma1 >= 1.0) throw PreconditionError("no singular eigenvector in this regime");

  const auto n = static_cast<Eigen::Index>(grid.size());
  const auto k = static_cast<Eigen::Index>(op.omega0.front());
  Matrix sys = -mu * op.matrix;
  sys.diagonal().array() += 1.0;
  Vector psi = sys.partialPivLu().solve(Vector(M.values.col(k)));

  Vector ac = Vector::Zero(n);
  for (Eigen::Index j = 0; j < n; ++j)
    if (j != k) ac[j] = mu * psi[j] / (a.sup_a - a.values[j]);
  const double total = op.lebesgue.dot(ac) + 1.0;

  SingularEigenvector out;
  out.phi = MeasureProfile(ac / total, op.lebesgue);
  out.phi.atoms.push_back(Atom{op.omega0.front(), 1.0 / total});
  out.aux = psi / total;
  out.atom_mass = 1.0 / total;
  out.lambda = -(a.sup_a - mu);
  out.gamma1 = gamma1;
  return out;
}

/// Eigenvector as a measure profile on the grid quadrature.
inline MeasureProfile as_profile(const PhenotypeGrid& grid, const SpectralResult& r) {
  return MeasureProfile::from_density(grid, r.phi);
}

/// Rescales a measure so that int K(z) phi(dz) = 1 (y-independent K).
inline MeasureProfile normalize_k_mass_one(const KernelMatrix& K, const MeasureProfile& phi) {
  if (!is_y_independent(K)) throw PreconditionError("K-mass normalization needs a y-independent competition kernel");
  return phi.scaled(1.0 / K.values.row(0).dot(phi.node_masses()));
}

/// Zero-flux cosine modes followed by random smooth combinations of them.
inline std::vector<Vector> y_test_functions(const PhenotypeGrid& grid, int random_count = 20,
                                            std::uint64_t seed = 20240917) {
  const auto n = static_cast<Eigen::Index>(grid.size());
  const int modes = 8;
  auto mode = [&](int k0, int k1) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& y = grid.node(static_cast<std::size_t>(i));
      const auto& b0 = grid.bounds()[0];
      double f = std::cos(k0 * M_PI * (y[0] - b0.lo) / b0.length());
      if (grid.dimension() == 2) {
        const auto& b1 = grid.bounds()[1];
        f *= std::cos(k1 * M_PI * (y[1] - b1.lo) / b1.length());
      }
      v[i] = f;
    }
    return v;
  };

  std::vector<Vector> basis;
  if (grid.dimension() == 1) {
    for (int k = 0; k < modes; ++k) basis.push_back(mode(k, 0));
  } else {
    for (int k0 = 0; k0 < 3; ++k0)
      for (int k1 = 0; k1 < 3; ++k1)
        if (k0 + k1 < 4) basis.push_back(mode(k0, k1));
  }

  std::vector<Vector> out = basis;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coef(-1.0, 1.0);
  for (int r = 0; r < random_count; ++r) {
    Vector v = Vector::Zero(n);
    for (std::size_t b = 0; b < basis.size(); ++b) v += coef(rng) / (1.0 + static_cast<double>(b)) * basis[b];
    out.push_back(v / v.cwiseAbs().maxCoeff());
  }
  return out;
}

/// Max over test functions of the weak eigen-equation defect
///   mu int (M*phi) psi dy - mu int psi dphi + int (a + lambda) psi dphi + eps int (Lap psi) dphi.
/// The dy integral uses the profile's own reference weights.
inline double weak_eigen_residual(const PhenotypeGrid& grid, const KernelMatrix& M, const FitnessProfile& a,
                                  double mu, double lambda, const MeasureProfile& phi, const std::vector<Vector>& tests,
                                  double eps = 0.0) {
  const Vector m = phi.node_masses();
  const Vector star = M.values * m;
  double worst = 0.0;
  for (const auto& psi : tests) {
    double r = mu * phi.quadrature.dot(psi.cwiseProduct(star));
    r += ((a.values.array() - mu + lambda) * psi.array() * m.array()).sum();
    if (eps > 0.0) r += eps * (grid.laplacian() * psi).dot(m);
    worst = std::max(worst, std::abs(r));
  }
  return worst;
}

/// c* = 2 sqrt(-lambda1).
inline double minimal_speed(double lambda1) {
  if (!(lambda1 < 0.0)) throw PreconditionError("no positive speed: population does not persist");
  return 2.0 * std::sqrt(-lambda1);
}

}  // namespace phenowave
