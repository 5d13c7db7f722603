#pragma once

// Stationary states of the competition model with optional self-competition,
// explicit bound constants, the vanishing-viscosity sweep and a concentration
// detector.

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "phenowave/error.hpp"
#include "phenowave/grid.hpp"
#include "phenowave/measure.hpp"
#include "phenowave/operators.hpp"
#include "phenowave/spectral.hpp"

namespace phenowave {

struct StationaryOptions {
  double tol = 1e-9;
  int max_iter = 60;
  int max_halvings = 30;
  bool allow_homotopy = true;
  /// Also try the eigenvector guess when a warm start is given.
  bool try_eigen_guess = true;
  /// Warm start; the eigenvector guess is used when empty.
  std::optional<Vector> initial;
  PerronOptions perron;
};

struct StationaryResult {
  MeasureProfile p;
  double lambda_eps = 0.0;
  double residual = 0.0;
  int iterations = 0;
  bool zero_branch = false;
  bool used_homotopy = false;

  const Vector& values() const { return p.ac; }
};

/// F(p) = eps Lap p + mu (M*p - p) + p (a - K*p - beta p)
inline Vector stationary_residual(const PhenotypeGrid& grid, const KernelMatrix& M, const KernelMatrix& K,
                                  const FitnessProfile& a, double mu, double eps, double beta, const Vector& p) {
  const Vector wp = grid.weights().cwiseProduct(p);
  Vector f = mu * (M.values * wp - p);
  f.array() += p.array() * (a.values - K.values * wp - beta * p).array();
  if (eps > 0.0) f += eps * (grid.laplacian() * p);
  return f;
}

namespace detail {

inline Matrix stationary_jacobian(const PhenotypeGrid& grid, const KernelMatrix& M, const KernelMatrix& K,
                                  const FitnessProfile& a, double mu, double eps, double beta, const Vector& p) {
  const auto& w = grid.weights();
  const Vector kp = K.values * w.cwiseProduct(p);
  Matrix J = mu * (M.values * w.asDiagonal());
  J -= p.asDiagonal() * (K.values * w.asDiagonal());
  J.diagonal().array() += -mu + a.values.array() - kp.array() - 2.0 * beta * p.array();
  if (eps > 0.0) J += eps * grid.dense_laplacian();
  return J;
}

struct NewtonOutcome {
  Vector p;
  double residual;
  int iterations;
  bool converged;
};

// A root with negligible mass is the trivial branch, not a solution.
inline NewtonOutcome stationary_newton(const PhenotypeGrid& grid, const KernelMatrix& M, const KernelMatrix& K,
                                       const FitnessProfile& a, double mu, double eps, double beta, Vector p,
                                       const StationaryOptions& opt, double mass_floor) {
  Vector f = stationary_residual(grid, M, K, a, mu, eps, beta, p);
  double r = f.cwiseAbs().maxCoeff();
  int it = 0;
  for (; it < opt.max_iter && r > opt.tol; ++it) {
    const Matrix J = stationary_jacobian(grid, M, K, a, mu, eps, beta, p);
    const Vector step = J.partialPivLu().solve(-f);
    if (!step.allFinite()) break;
    double t = 1.0;
    bool accepted = false;
    for (int h = 0; h <= opt.max_halvings; ++h, t *= 0.5) {
      Vector trial = p + t * step;
      if (!(trial.minCoeff() > 0.0)) continue;
      Vector ft = stationary_residual(grid, M, K, a, mu, eps, beta, trial);
      const double rt = ft.cwiseAbs().maxCoeff();
      if (rt < (1.0 - 1e-4 * t) * r || rt <= opt.tol) {
        p = std::move(trial);
        f = std::move(ft);
        r = rt;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  const bool nontrivial = grid.integrate(p) >= mass_floor;
  return NewtonOutcome{std::move(p), r, it, r <= opt.tol && nontrivial};
}

}  // namespace detail

/// Positive solution of the regularized stationary problem.
///
/// Returns the zero profile when the principal eigenvalue is positive. Newton
/// starts from the warm start if given, then from max(0.1, -lambda) phi with
/// phi of unit mass; on failure the solve is restarted at a large
/// self-competition weight and continued back to beta.
inline StationaryResult solve_stationary(const PhenotypeGrid& grid, const KernelMatrix& M, const KernelMatrix& K,
                                         const FitnessProfile& a, double mu, double eps, double beta,
                                         const StationaryOptions& opt = {}) {
  if (!(eps > 0.0)) throw PreconditionError("solve_stationary requires eps > 0");
  if (!(beta >= 0.0)) throw PreconditionError("solve_stationary requires beta >= 0");
  const auto eig = eigen_regularized(grid, M, a, mu, eps, opt.perron);

  StationaryResult out;
  out.lambda_eps = eig.lambda;
  const auto n = static_cast<Eigen::Index>(grid.size());
  if (std::abs(eig.lambda) <= 1e-8)
    throw PreconditionError("principal eigenvalue within 1e-8 of 0: borderline persistence is not handled");
  if (eig.lambda > 0.0) {
    out.p = MeasureProfile::from_density(grid, Vector::Zero(n));
    out.zero_branch = true;
    return out;
  }

  const double floor = 1e-6 * (-eig.lambda) / (K.upper_bound + beta);
  std::vector<Vector> guesses;
  if (opt.initial) guesses.push_back(*opt.initial);
  if (!opt.initial || opt.try_eigen_guess) guesses.push_back(std::max(0.1, -eig.lambda) * eig.phi);
  detail::NewtonOutcome res{guesses.front(), std::numeric_limits<double>::infinity(), 0, false};
  int total = 0;
  for (const auto& g : guesses) {
    auto attempt = detail::stationary_newton(grid, M, K, a, mu, eps, beta, g, opt, floor);
    total += attempt.iterations;
    if (attempt.converged || attempt.residual < res.residual) res = std::move(attempt);
    if (res.converged) break;
  }

  if (!res.converged && opt.allow_homotopy) {
    out.used_homotopy = true;
    StationaryOptions hopt = opt;
    hopt.max_iter = std::max(opt.max_iter, 40);
    // at large beta the solution sits near sup a / beta and Newton is benign
    const double beta0 = K.upper_bound * a.sup_a / (mu * M.lower_bound);
    const double beta_hi = std::max({4.0 * beta0, 4.0 * beta, 1.0});
    Vector p = (a.sup_a / beta_hi) * eig.phi / eig.phi.maxCoeff();
    auto start = detail::stationary_newton(grid, M, K, a, mu, eps, beta_hi, p, hopt, floor);
    total += start.iterations;
    if (start.converged) {
      p = start.p;
      double s = 0.0, ds = 0.1;
      int steps = 0;
      while (s < 1.0 && steps++ < 400 && ds > 1e-6) {
        const double s_next = std::min(1.0, s + ds);
        const double b = (1.0 - s_next) * beta_hi + s_next * beta;
        auto step = detail::stationary_newton(grid, M, K, a, mu, eps, b, p, hopt, floor);
        total += step.iterations;
        if (step.converged) {
          p = step.p;
          s = s_next;
          ds = std::min(0.5, 1.5 * ds);
        } else {
          ds *= 0.5;
        }
      }
      if (s >= 1.0) {
        const double r = stationary_residual(grid, M, K, a, mu, eps, beta, p).cwiseAbs().maxCoeff();
        res = detail::NewtonOutcome{p, r, 0, r <= opt.tol && grid.integrate(p) >= floor};
      }
    }
  }

  if (!res.converged)
    throw SolverError("stationary Newton diverged (best residual " + std::to_string(res.residual) + ")", res.residual);
  if (!(res.p.minCoeff() > 0.0)) throw SolverError("stationary solution lost positivity", res.residual);

  out.p = MeasureProfile::from_density(grid, res.p);
  out.residual = res.residual;
  out.iterations = total;
  return out;
}

struct MassBoundsReport {
  double mass = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double lower_slack = 0.0;
  double upper_slack = 0.0;
  bool valid = false;
  std::string note;
};

/// Checks -lambda_eps / kinf <= int p <= sup a / k0.
inline MassBoundsReport mass_bounds(const MeasureProfile& p, double lambda_eps, double sup_a, double k0, double kinf,
                                    double tol = 1e-8) {
  MassBoundsReport r;
  r.mass = p.total_mass();
  r.lower = -lambda_eps / kinf;
  r.upper = sup_a / k0;
  r.lower_slack = r.mass - r.lower;
  r.upper_slack = r.upper - r.mass;
  if (!(r.mass > 0.0)) {
    r.note = "nontrivial solve required";
    return r;
  }
  r.valid = r.lower_slack >= -tol && r.upper_slack >= -tol;
  r.note = r.valid ? "within bounds" : "mass bound violated";
  return r;
}

struct DerivedConstants {
  double beta0 = 0.0;
  double delta = 0.0;
  double delta_cap = 0.0;
  double lambda1 = 0.0;
  double lambda_delta = 0.0;
  double eta = 0.0;
  double rho_beta = 0.0;
  /// Set when a viscosity is supplied.
  std::optional<double> lambda_eps;
  std::optional<double> l0;
  std::optional<double> tau0;
  std::optional<double> c_star_eps;
};

/// beta0 = kinf sup a / (mu m0).
inline double beta0_constant(const KernelMatrix& M, const KernelMatrix& K, const FitnessProfile& a, double mu) {
  return K.upper_bound * a.sup_a / (mu * M.lower_bound);
}

/// Box constants from the viscous eigenvalue: l0, tau0, c*_eps.
inline void fill_box_constants(DerivedConstants& c, double lambda_eps) {
  if (!(lambda_eps < 0.0)) throw PreconditionError("box constants need a negative principal eigenvalue");
  c.lambda_eps = lambda_eps;
  c.l0 = M_PI / std::sqrt(-lambda_eps);
  c.tau0 = -lambda_eps / 2.0;
  c.c_star_eps = minimal_speed(lambda_eps);
}

/// Lower-bound constant for stationary solutions of the beta-model.
///
/// delta defaults to 0.8 of its admissibility cap
/// 0.5 min(mu, sup a - inf a, sup a - sup_boundary a+ - mu).
inline DerivedConstants rho_beta_constant(const PhenotypeGrid& grid, const KernelMatrix& M, const KernelMatrix& K,
                                          const FitnessProfile& a, double mu, double beta,
                                          std::optional<double> delta = std::nullopt,
                                          std::optional<double> eps = std::nullopt, const PerronOptions& opt = {}) {
  DerivedConstants c;
  c.beta0 = beta0_constant(M, K, a, mu);
  c.lambda1 = eigen_nonlocal(grid, M, a, mu, opt).lambda;
  if (!(c.lambda1 < 0.0)) throw PreconditionError("lower-bound constant needs lambda1 < 0");

  const double edge = a.sup_a - a.boundary_sup_positive(grid) - mu;
  c.delta_cap = 0.5 * std::min({mu, a.sup_a - a.inf_a, edge});
  c.delta = delta.value_or(0.8 * c.delta_cap);
  if (!(c.delta > 0.0)) throw PreconditionError("delta must be positive");
  if (!(c.delta < 0.5 * mu)) throw PreconditionError("inadmissible delta: violates delta < mu/2");
  if (!(c.delta < 0.5 * (a.sup_a - a.inf_a))) throw PreconditionError("inadmissible delta: violates delta < (sup a - inf a)/2");
  if (!(c.delta < 0.5 * edge))
    throw PreconditionError("inadmissible delta: violates delta < (sup a - sup_boundary a+ - mu)/2");

  const Vector truncated = a.values.cwiseMin(a.sup_a - c.delta);
  const FitnessProfile ad = make_fitness_from_values(grid, truncated, false);
  c.lambda_delta = eigen_nonlocal(grid, M, ad, mu, opt).lambda;
  if (!(c.lambda_delta <= 0.75 * c.lambda1))
    throw PreconditionError("inadmissible delta: violates lambda^{delta,0} <= 3 lambda1 / 4");
  c.eta = -c.lambda_delta - a.sup_a + c.delta + mu;
  if (!(c.eta > 0.0)) throw PreconditionError("inadmissible delta: eta is not positive");

  const double m0 = M.lower_bound, minf = M.upper_bound, kinf = K.upper_bound;
  const double first = m0 * c.eta / (2.0 * kinf * minf);
  const double second = (-c.lambda1) * c.eta / (4.0 * beta * mu * minf + 2.0 * c.eta * kinf);
  c.rho_beta = std::min(first, second) * mu * m0 / (a.sup_a - a.inf_a + mu);

  if (eps) fill_box_constants(c, eigen_regularized(grid, M, a, mu, *eps, opt).lambda);
  return c;
}

// -- vanishing viscosity -----------------------------------------------------

struct SweepEntry {
  double eps = 0.0;
  double lambda_eps = 0.0;
  double mass = 0.0;
  double sup = 0.0;
  double window_fraction = 0.0;
  double residual = 0.0;
  bool ok = false;
  std::string error;
};

struct SweepReport {
  std::vector<SweepEntry> entries;
  double lambda1 = 0.0;
  /// -lambda1 / kinf
  double mass_lower_bound = 0.0;
  /// Finest successful solution, standing in for the weak limit.
  std::optional<MeasureProfile> limit;
  int window_cells = 3;
};

/// Nodes within the window of `cells` cells per axis centred on each maximizer.
inline std::vector<std::size_t> concentration_window(const PhenotypeGrid& grid, const FitnessProfile& a, int cells) {
  const int half = cells / 2;
  std::vector<bool> in(grid.size(), false);
  for (auto k : a.omega0) {
    const auto c = grid.multi_index(k);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const auto m = grid.multi_index(i);
      bool inside = true;
      for (int ax = 0; ax < grid.dimension(); ++ax)
        inside = inside && std::abs(m[static_cast<std::size_t>(ax)] - c[static_cast<std::size_t>(ax)]) <= half;
      if (inside) in[i] = true;
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (in[i]) out.push_back(i);
  return out;
}

inline double window_fraction(const MeasureProfile& p, const std::vector<std::size_t>& window) {
  const Vector m = p.node_masses();
  const double total = m.sum();
  if (!(total > 0.0)) return 0.0;
  double s = 0.0;
  for (auto i : window) s += m[static_cast<Eigen::Index>(i)];
  return s / total;
}

/// Stationary solves along a decreasing viscosity list, warm-started.
inline SweepReport viscosity_sweep(const PhenotypeGrid& grid, const KernelMatrix& M, const KernelMatrix& K,
                                   const FitnessProfile& a, double mu, double beta, const std::vector<double>& eps_list,
                                   int window_cells = 3, const StationaryOptions& base = {}) {
  for (std::size_t k = 1; k < eps_list.size(); ++k)
    if (!(eps_list[k] < eps_list[k - 1])) throw PreconditionError("viscosity list must be decreasing");
  SweepReport rep;
  rep.window_cells = window_cells;
  rep.lambda1 = eigen_nonlocal(grid, M, a, mu, base.perron).lambda;
  if (!(rep.lambda1 < 0.0)) throw PreconditionError("viscosity sweep needs lambda1 < 0");
  rep.mass_lower_bound = -rep.lambda1 / K.upper_bound;
  const auto window = concentration_window(grid, a, window_cells);

  std::optional<Vector> warm;
  for (double eps : eps_list) {
    SweepEntry e;
    e.eps = eps;
    try {
      StationaryOptions opt = base;
      if (warm) opt.initial = warm;
      auto s = solve_stationary(grid, M, K, a, mu, eps, beta, opt);
      e.lambda_eps = s.lambda_eps;
      e.mass = s.p.total_mass();
      e.sup = s.p.ac.maxCoeff();
      e.window_fraction = window_fraction(s.p, window);
      e.residual = s.residual;
      e.ok = !s.zero_branch;
      if (s.zero_branch) e.error = "zero profile";
      if (e.ok) {
        warm = s.p.ac;
        rep.limit = s.p;
      }
    } catch (const Error& err) {
      e.ok = false;
      e.error = err.what();
    }
    rep.entries.push_back(e);
  }
  return rep;
}

struct ConcentrationVerdict {
  std::string label;
  bool fractions_nondecreasing = false;
  double final_fraction = 0.0;
  double threshold = 0.25;
  /// sup of b = a - K*p is attained on the maximizer set of a.
  bool b_max_in_omega0 = false;
  /// min over nodes of (sup b - b) - (sup a - a); nonnegative when the pointwise inequality holds.
  double pointwise_margin = 0.0;
  bool pointwise_ok = false;
  std::optional<double> mu0;
};

/// Concentration verdict from a viscosity sweep.
inline ConcentrationVerdict concentration_detector(const SweepReport& sweep, const KernelMatrix& K,
                                                   const FitnessProfile& a,
                                                   double threshold = 0.25, std::optional<double> mu0 = std::nullopt) {
  ConcentrationVerdict v;
  v.threshold = threshold;
  v.mu0 = mu0;

  if (!a.omega0.empty()) {
    const auto row0 = K.values.row(static_cast<Eigen::Index>(a.omega0.front()));
    for (Eigen::Index i = 0; i < K.values.rows(); ++i)
      if ((K.values.row(i) - row0).minCoeff() < -1e-14) {
        v.label = "not applicable";
        return v;
      }
  }
  std::vector<double> fr;
  for (const auto& e : sweep.entries)
    if (e.ok) fr.push_back(e.window_fraction);
  if (fr.empty() || !sweep.limit) {
    v.label = "not applicable";
    return v;
  }
  v.fractions_nondecreasing = true;
  for (std::size_t k = 1; k < fr.size(); ++k) v.fractions_nondecreasing = v.fractions_nondecreasing && fr[k] >= fr[k - 1];
  v.final_fraction = fr.back();

  const Vector b = a.values - apply_star(K, *sweep.limit);
  const double sup_b = b.maxCoeff();
  v.b_max_in_omega0 = false;
  for (auto k : a.omega0) v.b_max_in_omega0 = v.b_max_in_omega0 || sup_b - b[static_cast<Eigen::Index>(k)] <= 1e-12 * std::max(1.0, std::abs(sup_b));
  v.pointwise_margin = ((sup_b - b.array()) - (a.sup_a - a.values.array())).minCoeff();
  v.pointwise_ok = v.pointwise_margin >= -1e-12;

  v.label = (v.fractions_nondecreasing && v.final_fraction >= threshold) ? "concentrating" : "not concentrating";
  return v;
}

}  // namespace phenowave
