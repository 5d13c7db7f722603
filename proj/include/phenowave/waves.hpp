#pragma once

// Traveling waves: the box problem with speed selection, extension to the
// line, the KPP front, the separated singular wave, and the weak residual.

#include <Eigen/LU>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "phenowave/parallel.hpp"
#include "phenowave/stationary.hpp"

namespace phenowave {

enum class WaveKind { regularized, separated_singular };

inline std::string to_string(WaveKind k) {
  return k == WaveKind::regularized ? "regularized" : "separated-singular";
}

struct WaveMeta {
  double eps = 0.0;
  double beta = 0.0;
  double l = 0.0;
  double tau = 0.0;
};

/// Discrete transition kernel u(x_j, dy) on a uniform x grid.
struct WaveProfile {
  double c = 0.0;
  Vector x;
  WaveKind kind = WaveKind::regularized;
  /// Regularized kind: column j is the density at x_j.
  Matrix density;
  /// Separated kind: the measure at x_j.
  std::vector<MeasureProfile> slices;
  Vector p_left;
  WaveMeta meta;
  double residual = 0.0;
  int iterations = 0;
  /// Set by extend_line when the speeds did not settle.
  bool unconverged = false;

  std::size_t nx() const { return static_cast<std::size_t>(x.size()); }
  double hx() const { return x.size() > 1 ? x[1] - x[0] : 0.0; }

  MeasureProfile slice(const PhenotypeGrid& grid, std::size_t j) const {
    if (kind == WaveKind::separated_singular) return slices.at(j);
    return MeasureProfile::from_density(grid, density.col(static_cast<Eigen::Index>(j)));
  }

  /// Per-node masses of slice j (density times weights, plus atoms).
  Vector node_masses(const PhenotypeGrid& grid, std::size_t j) const {
    if (kind == WaveKind::separated_singular) return slices.at(j).node_masses();
    return grid.weights().cwiseProduct(density.col(static_cast<Eigen::Index>(j)));
  }

  /// Total mass of every slice.
  Vector slice_masses(const PhenotypeGrid& grid) const {
    Vector m(x.size());
    for (std::size_t j = 0; j < nx(); ++j) m[static_cast<Eigen::Index>(j)] = node_masses(grid, j).sum();
    return m;
  }
};

inline Vector uniform_x(double l, std::size_t nx) {
  if (nx < 3) throw PreconditionError("wave grid needs at least 3 x nodes");
  return Vector::LinSpaced(static_cast<Eigen::Index>(nx), -l, l);
}

/// Number of x nodes on [-l, l] with at least `per_decay` nodes per length 2/c.
inline std::size_t x_nodes_for(double l, double c, int per_decay = 40) {
  const double h = 2.0 / (per_decay * c);
  auto n = static_cast<std::size_t>(std::ceil(2.0 * l / h)) + 1;
  if (n % 2 == 0) ++n;
  return n;
}

// -- test functions ----------------------------------------------------------

/// C-infinity bump with peak 1 at s = 0, zero for |s| >= 1.
inline double bump(double s) { return std::abs(s) < 1.0 ? std::exp(1.0 - 1.0 / (1.0 - s * s)) : 0.0; }

struct TestFunction {
  Vector chi;
  Vector xi;
  double center = 0.0;
  double halfwidth = 0.0;
};

/// psi(x_j, y_i) = chi_j xi_i.
struct TestFunctionSet {
  Vector x;
  std::vector<TestFunction> members;

  std::size_t size() const { return members.size(); }
};

inline TestFunctionSet make_test_functions(const PhenotypeGrid& grid, const Vector& x, const std::vector<double>& centers,
                                           double halfwidth, int y_profiles = 8) {
  const double h = x[1] - x[0];
  for (double c0 : centers)
    if (c0 - halfwidth < x[1] - 1e-12 * h || c0 + halfwidth > x[x.size() - 2] + 1e-12 * h)
      throw PreconditionError("test function support leaves the wave window");
  std::vector<Vector> ys = y_test_functions(grid, y_profiles);
  ys.resize(static_cast<std::size_t>(y_profiles));

  TestFunctionSet set;
  set.x = x;
  for (double c0 : centers) {
    Vector chi(x.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) chi[j] = bump((x[j] - c0) / halfwidth);
    for (const auto& xi : ys) set.members.push_back(TestFunction{chi, xi, c0, halfwidth});
  }
  return set;
}

/// Three x-windows at -0.4 l, 0, 0.4 l of half-width 0.3 l, times eight y-profiles.
inline TestFunctionSet default_test_functions(const PhenotypeGrid& grid, const Vector& x) {
  const double l = x[x.size() - 1];
  return make_test_functions(grid, x, {-0.4 * l, 0.0, 0.4 * l}, 0.3 * l);
}

// -- weak form ---------------------------------------------------------------

/// Weak-form defect for each test function:
///   sum_j h [ (c D0 chi - D2 chi)_j <xi, u_j> - chi_j <xi, R(u_j)> ]
/// where R(u) = mu (M*u - u) + u (a - K*u - beta u). The mutation pairing
/// uses the transposed kernel, int (M^T xi)(z) u(dz), with dy taken from the
/// slice's own quadrature. Atoms enter through kernel rows and columns at
/// their nodes.
inline std::vector<double> weak_residuals(const PhenotypeGrid& grid, const KernelMatrix& M, const KernelMatrix& K,
                                          const FitnessProfile& a, double mu, const WaveProfile& u,
                                          const TestFunctionSet& tests, double beta = 0.0) {
  if (tests.x.size() != u.x.size()) throw PreconditionError("test functions sampled on a different x grid");
  const std::size_t nx = u.nx();
  const double h = u.hx(), c = u.c;
  std::vector<double> out(tests.size(), 0.0);
  if (tests.size() == 0) return out;

  for (std::size_t j = 1; j + 1 < nx; ++j) {
    bool active = false;
    for (const auto& t : tests.members) active = active || t.chi[static_cast<Eigen::Index>(j)] != 0.0 ||
                                                 t.chi[static_cast<Eigen::Index>(j - 1)] != 0.0 ||
                                                 t.chi[static_cast<Eigen::Index>(j + 1)] != 0.0;
    if (!active) continue;
    const MeasureProfile s = u.slice(grid, j);
    const Vector m = s.node_masses();
    if (m.isZero(0.0)) continue;
    const Vector km = K.values * m;
    Vector beta_term = Vector::Zero(m.size());
    if (beta > 0.0) {
      if (!s.atoms.empty()) throw PreconditionError("self-competition is undefined on atoms");
      beta_term = beta * s.quadrature.cwiseProduct(s.ac.cwiseAbs2());
    }
    for (std::size_t k = 0; k < tests.size(); ++k) {
      const auto& t = tests.members[k];
      const auto jj = static_cast<Eigen::Index>(j);
      const double d0 = (t.chi[jj + 1] - t.chi[jj - 1]) / (2.0 * h);
      const double d2 = (t.chi[jj + 1] - 2.0 * t.chi[jj] + t.chi[jj - 1]) / (h * h);
      const double pair = t.xi.dot(m);
      double react = 0.0;
      if (t.chi[jj] != 0.0) {
        const Vector mt = M.values.transpose() * s.quadrature.cwiseProduct(t.xi);
        react = mu * mt.dot(m) - mu * pair + (a.values.cwiseProduct(t.xi)).dot(m) - t.xi.cwiseProduct(km).dot(m) -
                t.xi.dot(beta_term);
      }
      out[k] += h * ((c * d0 - d2) * pair - t.chi[jj] * react);
    }
  }
  for (auto& v : out) v = std::abs(v);
  return out;
}

inline double weak_residual(const PhenotypeGrid& grid, const KernelMatrix& M, const KernelMatrix& K,
                            const FitnessProfile& a, double mu, const WaveProfile& u, const TestFunctionSet& tests,
                            double beta = 0.0) {
  const auto r = weak_residuals(grid, M, K, a, mu, u, tests, beta);
  return r.empty() ? 0.0 : *std::max_element(r.begin(), r.end());
}

/// sup over |x_j| <= l0 and all y of K*u + beta u.
inline double normalization_N(const PhenotypeGrid& grid, const KernelMatrix& K, const WaveProfile& u, double l0) {
  const double l = u.x[u.x.size() - 1];
  if (l0 > l) throw PreconditionError("normalization window exceeds the wave domain");
  double sup = 0.0;
  for (std::size_t j = 0; j < u.nx(); ++j) {
    if (std::abs(u.x[static_cast<Eigen::Index>(j)]) > l0) continue;
    Vector v = K.values * u.node_masses(grid, j);
    if (u.meta.beta > 0.0) v += u.meta.beta * u.slice(grid, j).ac;
    sup = std::max(sup, v.maxCoeff());
  }
  return sup;
}

// -- box problem -------------------------------------------------------------

struct BoxOptions {
  double tol = 1e-9;
  int max_iter = 80;
  int max_halvings = 30;
  /// Extra full Newton steps after tol is met, kept while they halve the residual.
  int polish_steps = 4;
  /// 0: use nodes_per_decay nodes per decay length 2/c*_eps.
  std::size_t nx = 0;
  int nodes_per_decay = 40;
  /// Starting iterate (n x nx); boundary columns are overwritten.
  std::optional<Matrix> initial;
};

namespace detail {

/// Discrete box problem: central differences in x, grid Laplacian in y.
struct BoxSystem {
  const PhenotypeGrid& grid;
  const KernelMatrix& M;
  const KernelMatrix& K;
  const FitnessProfile& a;
  double mu, eps, beta, c, h;
  Matrix MW, KW, lap;

  BoxSystem(const PhenotypeGrid& g, const KernelMatrix& m, const KernelMatrix& k, const FitnessProfile& fa, double mu_,
            double eps_, double beta_, double c_, double h_)
      : grid(g), M(m), K(k), a(fa), mu(mu_), eps(eps_), beta(beta_), c(c_), h(h_) {
    MW = M.values * g.weights().asDiagonal();
    KW = K.values * g.weights().asDiagonal();
    lap = g.dense_laplacian();
  }

  double lower() const { return 1.0 / (h * h) - c / (2.0 * h); }
  double upper() const { return 1.0 / (h * h) + c / (2.0 * h); }

  /// Interior columns of F; boundary columns are zero.
  Matrix residual(const Matrix& U) const {
    const Eigen::Index n = U.rows(), nx = U.cols();
    Matrix F = Matrix::Zero(n, nx);
    for (Eigen::Index j = 1; j + 1 < nx; ++j) {
      const Vector u = U.col(j);
      Vector f = lower() * U.col(j - 1) + upper() * U.col(j + 1) - (2.0 / (h * h)) * u;
      f += mu * (MW * u - u);
      if (eps > 0.0) f += eps * (lap * u);
      const Vector ku = KW * u;
      for (Eigen::Index i = 0; i < n; ++i)
        if (u[i] > 0.0) f[i] += u[i] * (a.values[i] - ku[i] - beta * u[i]);
      F.col(j) = f;
    }
    return F;
  }

  Matrix block(const Vector& u) const {
    const Eigen::Index n = u.size();
    Matrix B = mu * MW;
    B.diagonal().array() -= mu + 2.0 / (h * h);
    if (eps > 0.0) B += eps * lap;
    const Vector ku = KW * u;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!(u[i] > 0.0)) continue;
      B.row(i) -= u[i] * KW.row(i);
      B(i, i) += a.values[i] - ku[i] - 2.0 * beta * u[i];
    }
    return B;
  }

  /// Block LU of the interior Jacobian (block Thomas elimination).
  struct Factor {
    std::vector<Eigen::PartialPivLU<Matrix>> lus;
    double lo = 0.0, up = 0.0;

    /// Solves J d = rhs; boundary columns of rhs are ignored and of d are zero.
    Matrix apply(const Matrix& rhs) const {
      const auto m = static_cast<Eigen::Index>(lus.size());
      const Eigen::Index n = rhs.rows();
      Matrix y(n, m);
      for (Eigen::Index k = 0; k < m; ++k) {
        Vector r = rhs.col(k + 1);
        if (k > 0) r -= lo * lus[static_cast<std::size_t>(k - 1)].solve(Vector(y.col(k - 1)));
        y.col(k) = r;
      }
      Matrix d = Matrix::Zero(n, m + 2);
      for (Eigen::Index k = m - 1; k >= 0; --k) {
        Vector r = y.col(k);
        if (k + 1 < m) r -= up * d.col(k + 2);
        d.col(k + 1) = lus[static_cast<std::size_t>(k)].solve(r);
      }
      return d;
    }
  };

  Factor factor(const Matrix& U) const {
    const Eigen::Index m = U.cols() - 2;
    Factor f;
    f.lo = lower();
    f.up = upper();
    f.lus.resize(static_cast<std::size_t>(m));
    for (Eigen::Index k = 0; k < m; ++k) {
      Matrix D = block(U.col(k + 1));
      if (k > 0) D -= (f.lo * f.up) * f.lus[static_cast<std::size_t>(k - 1)].inverse();
      f.lus[static_cast<std::size_t>(k)].compute(D);
    }
    return f;
  }

  Matrix solve(const Matrix& U, const Matrix& rhs) const { return factor(U).apply(rhs); }
};

struct BoxOutcome {
  Matrix U;
  double residual = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

inline BoxOutcome box_newton(const BoxSystem& sys, Matrix U, const BoxOptions& opt, double max_step) {
  // the line search uses the 2-norm; convergence is judged in the max norm
  Matrix F = sys.residual(U);
  double r = F.cwiseAbs().maxCoeff(), merit = F.norm();
  BoxOutcome out;
  int polish = 0;
  for (int it = 0; it < opt.max_iter; ++it) {
    if (r <= opt.tol && polish >= opt.polish_steps) break;
    const bool polishing = r <= opt.tol;
    const Matrix d = sys.solve(U, -F);
    double t = polishing ? 1.0 : max_step;
    bool accepted = false;
    Matrix trial, Ft;
    for (int k = 0; k <= opt.max_halvings; ++k, t *= 0.5) {
      trial = U + t * d;
      Ft = sys.residual(trial);
      accepted = polishing ? Ft.cwiseAbs().maxCoeff() <= 0.5 * r : Ft.norm() <= (1.0 - 1e-4 * t) * merit;
      if (accepted || polishing) break;
    }
    ++out.iterations;
    if (!accepted) break;
    if (polishing) ++polish;
    U = std::move(trial);
    F = std::move(Ft);
    r = F.cwiseAbs().maxCoeff();
    merit = F.norm();
  }
  out.U = std::move(U);
  out.residual = r;
  out.converged = r <= opt.tol;
  return out;
}

}  // namespace detail

/// Solves the box problem on [-l, l] at speed c with u(-l) = p_left, u(l) = 0.
///
/// The reaction term is switched off where u <= 0. Newton uses an Armijo line
/// search on the 2-norm residual; a final dip below -1e-10 scale triggers one
/// damped retry and then "positivity lost". Without a starting iterate, a
/// failed cold start falls back to continuation in c from c = 0.
inline WaveProfile solve_box(const PhenotypeGrid& grid, const KernelMatrix& M, const KernelMatrix& K,
                             const FitnessProfile& a, double mu, double eps, double beta, double c, double l,
                             const Vector& p_left, const BoxOptions& opt = {}) {
  if (!(eps > 0.0)) throw PreconditionError("solve_box requires eps > 0");
  if (!(l > 0.0)) throw PreconditionError("solve_box requires l > 0");
  const auto n = static_cast<Eigen::Index>(grid.size());
  if (p_left.size() != n) throw PreconditionError("solve_box: left profile does not match the grid");

  std::size_t nx = opt.nx;
  if (nx == 0) {
    const double lam = eigen_regularized(grid, M, a, mu, eps).lambda;
    nx = x_nodes_for(l, minimal_speed(lam), opt.nodes_per_decay);
  }
  WaveProfile w;
  w.c = c;
  w.x = uniform_x(l, nx);
  w.kind = WaveKind::regularized;
  w.p_left = p_left;
  w.meta = WaveMeta{eps, beta, l, 0.0};
  const auto cols = static_cast<Eigen::Index>(nx);
  if (p_left.isZero(0.0)) {
    w.density = Matrix::Zero(n, cols);
    return w;
  }

  Matrix U0(n, cols);
  if (opt.initial) {
    if (opt.initial->rows() != n || opt.initial->cols() != cols)
      throw PreconditionError("solve_box: initial iterate has the wrong shape");
    U0 = *opt.initial;
  } else {
    for (Eigen::Index j = 0; j < cols; ++j) {
      const double xj = w.x[j];
      U0.col(j) = (1.0 - std::exp(-(l - xj))) * std::exp(-0.5 * c * (xj + l)) * p_left;
    }
  }
  U0.col(0) = p_left;
  U0.col(cols - 1).setZero();

  const detail::BoxSystem sys(grid, M, K, a, mu, eps, beta, c, w.hx());
  const double scale = p_left.cwiseAbs().maxCoeff();
  auto res = detail::box_newton(sys, U0, opt, 1.0);
  if (res.converged && res.U.minCoeff() < -1e-10 * scale) res = detail::box_newton(sys, U0, opt, 0.5);
  if (!res.converged && !opt.initial && c > 0.0) {
    // continuation in c from the static box, which the cold guess reaches
    BoxOptions step = opt;
    step.polish_steps = 0;
    double c_done = 0.0, dc = c / 8.0;
    Matrix V0 = U0;
    for (Eigen::Index j = 1; j + 1 < cols; ++j) V0.col(j) = (1.0 - std::exp(-(l - w.x[j]))) * p_left;
    auto from_zero = detail::box_newton(detail::BoxSystem(grid, M, K, a, mu, eps, beta, 0.0, w.hx()), V0, step, 1.0);
    bool ok = from_zero.converged;
    Matrix U = std::move(from_zero.U);
    while (ok && c_done < c) {
      const double next = std::min(c, c_done + dc);
      auto r = detail::box_newton(detail::BoxSystem(grid, M, K, a, mu, eps, beta, next, w.hx()), U, step, 1.0);
      if (r.converged) {
        U = std::move(r.U);
        c_done = next;
        dc *= 1.5;
      } else if ((dc *= 0.5) < 1e-6 * c) {
        ok = false;
      }
    }
    if (ok) res = detail::box_newton(sys, U, opt, 1.0);
  }
  if (!res.converged)
    throw SolverError("box Newton did not converge (residual " + std::to_string(res.residual) + ")", res.residual);
  if (res.U.minCoeff() < -1e-10 * scale) throw SolverError("positivity lost", res.residual);

  res.U = res.U.cwiseMax(0.0);
  w.density = std::move(res.U);
  w.residual = sys.residual(w.density).cwiseAbs().maxCoeff();
  w.iterations = res.iterations;
  return w;
}

// -- speed selection ---------------------------------------------------------

/// Everything the box problem needs at fixed (mu, eps, beta).
struct WaveSetup {
  PhenotypeGrid grid;
  KernelMatrix M;
  KernelMatrix K;
  FitnessProfile a;
  double mu = 0.0;
  double eps = 0.0;
  double beta = 0.0;
  double lambda_eps = 0.0;
  double c_star = 0.0;
  double l0 = 0.0;
  double tau0 = 0.0;
  double beta0 = 0.0;
  /// Mass-one viscous eigenvector.
  Vector phi;
  /// Left boundary state.
  Vector p;
};

inline WaveSetup prepare_wave(const PhenotypeGrid& grid, const KernelMatrix& M, const KernelMatrix& K,
                              const FitnessProfile& a, double mu, double eps, double beta) {
  if (!(eps > 0.0)) throw PreconditionError("waves require eps > 0");
  WaveSetup s{grid, M, K, a, mu, eps, beta};
  const auto eig = eigen_regularized(grid, M, a, mu, eps);
  s.lambda_eps = eig.lambda;
  s.c_star = minimal_speed(eig.lambda);
  s.l0 = M_PI / std::sqrt(-eig.lambda);
  s.tau0 = -eig.lambda / 2.0;
  s.beta0 = beta0_constant(M, K, a, mu);
  s.phi = eig.phi;
  // a tight left state keeps the plateau flat to rounding
  StationaryOptions sopt;
  sopt.tol = 1e-13;
  try {
    s.p = solve_stationary(grid, M, K, a, mu, eps, beta, sopt).values();
  } catch (const SolverError&) {
    s.p = solve_stationary(grid, M, K, a, mu, eps, beta).values();
  }
  return s;
}

/// l = l0 + (2/c*) ln(A (kinf mass(phi) + beta sup phi) 2/tau), doubled,
/// with A = sup p / inf phi.
inline double default_box_length(const WaveSetup& s, double tau) {
  const double A = s.p.maxCoeff() / s.phi.minCoeff();
  const double bracket = A * (s.K.upper_bound * s.grid.integrate(s.phi) + s.beta * s.phi.maxCoeff()) * 2.0 / tau;
  const double lbar = s.l0 + (2.0 / s.c_star) * std::log(std::max(bracket, 1.0));
  return 2.0 * lbar;
}

struct SpeedOptions {
  BoxOptions box;
  /// Scan points on [0, c*] used when beta < beta0.
  int scan_points = 16;
  double rel_tol = 1e-6;
  int max_bisections = 200;
  /// Use the scan even when beta >= beta0.
  bool force_scan = false;
  /// Skip the bordered solve and bisect directly.
  bool bisection_only = false;
};

struct SpeedResult {
  double c = 0.0;
  WaveProfile wave;
  double n_value = 0.0;
  double n_at_zero = 0.0;
  double n_at_cstar = 0.0;
  double bracket_lo = 0.0;
  double bracket_hi = 0.0;
  int solves = 0;
  bool used_scan = false;
  /// "bordered" or "bisection".
  std::string method;
};

namespace detail {

struct WindowArgmax {
  Eigen::Index col = 0;
  Eigen::Index row = 0;
  double value = 0.0;
};

/// Discrete normalization functional on the interior columns with |x| <= l0.
inline WindowArgmax window_argmax(const Matrix& KW, double beta, const Vector& x, const Matrix& U, double l0) {
  WindowArgmax best{0, 0, -std::numeric_limits<double>::infinity()};
  for (Eigen::Index j = 0; j < U.cols(); ++j) {
    if (std::abs(x[j]) > l0) continue;
    const Vector v = KW * U.col(j) + beta * U.col(j);
    Eigen::Index i;
    const double m = v.maxCoeff(&i);
    if (m > best.value) best = {j, i, m};
  }
  return best;
}

struct BorderedOutcome {
  Matrix U;
  double c = 0.0;
  double residual = std::numeric_limits<double>::infinity();
  bool converged = false;
};

/// Newton on (u, c) with the normalization as the extra equation.
///
/// The fixed-c box problem becomes nearly translation invariant for long
/// boxes; pinning the level set removes that direction.
inline BorderedOutcome bordered_speed_solve(const WaveSetup& s, const Vector& x, double tau, Matrix U, double c,
                                            double c_max, const BoxOptions& opt) {
  const double h = x[1] - x[0];
  const Eigen::Index n = U.rows(), nx = U.cols();
  auto eval = [&](const Matrix& V, double cc, Matrix& F, WindowArgmax& am) {
    const BoxSystem sys(s.grid, s.M, s.K, s.a, s.mu, s.eps, s.beta, cc, h);
    F = sys.residual(V);
    am = window_argmax(sys.KW, s.beta, x, V, s.l0);
    const double g = am.value - tau;
    return std::sqrt(F.squaredNorm() + g * g);
  };
  BorderedOutcome out;
  Matrix F;
  WindowArgmax am;
  double merit = eval(U, c, F, am);
  int polish = 0;
  for (int it = 0; it < opt.max_iter; ++it) {
    const double r = F.cwiseAbs().maxCoeff(), g = am.value - tau;
    const bool met = r <= opt.tol && std::abs(g) <= 1e-12 * tau;
    if (met && polish >= opt.polish_steps) break;
    const BoxSystem sys(s.grid, s.M, s.K, s.a, s.mu, s.eps, s.beta, c, h);
    const auto fac = sys.factor(U);
    Matrix b = Matrix::Zero(n, nx);
    for (Eigen::Index j = 1; j + 1 < nx; ++j) b.col(j) = (U.col(j + 1) - U.col(j - 1)) / (2.0 * h);
    const Matrix z1 = fac.apply(-F), z2 = fac.apply(b);
    Vector grow = sys.KW.row(am.row).transpose();
    grow[am.row] += s.beta;
    const double denom = grow.dot(z2.col(am.col));
    if (!(std::abs(denom) > 0.0)) break;
    const double dc = (g + grow.dot(z1.col(am.col))) / denom;
    const Matrix dU = z1 - dc * z2;

    bool accepted = false;
    double t = 1.0;
    for (int k = 0; k <= opt.max_halvings; ++k, t *= 0.5) {
      const double ct = c + t * dc;
      if (!(ct > 0.0) || ct > c_max) continue;
      Matrix Ut = U + t * dU, Ft;
      WindowArgmax at;
      const double mt = eval(Ut, ct, Ft, at);
      const bool ok = met ? mt <= 0.5 * merit : (mt <= (1.0 - 1e-4 * t) * merit || (r <= opt.tol && mt < merit));
      if (ok) {
        U = std::move(Ut);
        c = ct;
        F = std::move(Ft);
        am = at;
        merit = mt;
        accepted = true;
        break;
      }
      if (met) break;
    }
    if (!accepted) break;
    if (met) ++polish;
  }
  out.U = std::move(U);
  out.c = c;
  out.residual = F.cwiseAbs().maxCoeff();
  out.converged = out.residual <= opt.tol && std::abs(am.value - tau) <= 1e-9 * tau;
  return out;
}

}  // namespace detail

/// Speed c in (0, c*_eps) with N(u_c) = tau.
///
/// The bracket N(0) > tau > N(c*) is checked first (for beta < beta0 it is
/// found by a scan). The root is then located by a bordered Newton solve on
/// (u, c) and confirmed by a fixed-c solve; bisection on c is the fallback.
inline SpeedResult select_speed(const WaveSetup& s, double tau, double l, const SpeedOptions& opt = {}) {
  if (!(tau > 0.0) || tau > s.tau0 * (1.0 + 1e-12))
    throw PreconditionError("tau must lie in (0, tau0] with tau0 = -lambda_eps/2");
  if (!(l > s.l0)) throw PreconditionError("box half-length must exceed l0 = pi / sqrt(-lambda_eps)");

  BoxOptions bopt = opt.box;
  if (bopt.nx == 0) bopt.nx = x_nodes_for(l, s.c_star, bopt.nodes_per_decay);
  SpeedResult out;
  auto solve = [&](double c, const std::optional<Matrix>& warm) {
    BoxOptions o = bopt;
    o.initial = warm;
    WaveProfile w = solve_box(s.grid, s.M, s.K, s.a, s.mu, s.eps, s.beta, c, l, s.p, o);
    w.meta.tau = tau;
    ++out.solves;
    return w;
  };
  auto N = [&](const WaveProfile& w) { return normalization_N(s.grid, s.K, w, s.l0); };

  WaveProfile lo_w = solve(0.0, std::nullopt);
  out.n_at_zero = N(lo_w);
  double lo = 0.0, hi = s.c_star;
  WaveProfile hi_w;
  double n_lo = out.n_at_zero, n_hi = 0.0;

  if (s.beta >= s.beta0 && !opt.force_scan) {
    hi_w = solve(s.c_star, std::nullopt);
    n_hi = out.n_at_cstar = N(hi_w);
    if (!(n_lo > tau && n_hi < tau)) throw SolverError("normalization bracket failed — increase l");
  } else {
    out.used_scan = true;
    bool found = false;
    WaveProfile prev = lo_w;
    double c_prev = 0.0, n_prev = n_lo;
    for (int k = 1; k <= opt.scan_points; ++k) {
      const double ck = s.c_star * k / opt.scan_points;
      WaveProfile wk = k == opt.scan_points ? solve(ck, std::nullopt) : solve(ck, prev.density);
      const double nk = N(wk);
      if (k == opt.scan_points) out.n_at_cstar = nk;
      if ((n_prev - tau) * (nk - tau) <= 0.0 && n_prev != nk) {
        lo = c_prev;
        lo_w = prev;
        n_lo = n_prev;
        hi = ck;
        hi_w = wk;
        n_hi = nk;
        found = true;
        break;
      }
      prev = std::move(wk);
      c_prev = ck;
      n_prev = nk;
    }
    if (!found) throw SolverError("normalization bracket failed — increase l");
  }
  out.bracket_lo = lo;
  out.bracket_hi = hi;

  auto finish = [&](WaveProfile w, double c, double nv, const char* method) {
    out.c = c;
    out.n_value = nv;
    out.wave = std::move(w);
    out.method = method;
    return out;
  };

  if (!opt.bisection_only) {
    // start from a logistic front whose level set sits where the normalization asks
    const Vector x = uniform_x(l, bopt.nx);
    const double kappa = 0.5 * s.c_star;
    const Vector plateau = s.K.values * s.grid.weights().cwiseProduct(s.p) + s.beta * s.p;
    const double np = plateau.maxCoeff();
    const double xf = -s.l0 - std::log(std::max(np / tau - 1.0, 1e-3)) / kappa;
    Matrix U0(s.p.size(), x.size());
    for (Eigen::Index j = 0; j < x.size(); ++j)
      U0.col(j) = (1.0 - std::exp(-kappa * (l - x[j]))) / (1.0 + std::exp(kappa * (x[j] - xf))) * s.p;
    U0.col(0) = s.p;
    const double ahead = std::max(l - xf, 1.0);
    const double c0 = std::clamp(s.c_star * (1.0 - M_PI * M_PI / (2.0 * (-s.lambda_eps) * ahead * ahead)), lo, hi);
    try {
      const auto b = detail::bordered_speed_solve(s, x, tau, U0, c0, s.c_star, bopt);
      if (b.converged && b.c > lo && b.c <= hi) {
        // confirmation only: polishing at fixed c would drift along the translation mode
        BoxOptions o = bopt;
        o.initial = b.U;
        o.polish_steps = 0;
        WaveProfile w = solve_box(s.grid, s.M, s.K, s.a, s.mu, s.eps, s.beta, b.c, l, s.p, o);
        w.meta.tau = tau;
        ++out.solves;
        const double nv = N(w);
        if (std::abs(nv - tau) <= opt.rel_tol * tau) return finish(std::move(w), b.c, nv, "bordered");
      }
    } catch (const SolverError&) {
    }
  }

  const bool decreasing = n_lo > n_hi;
  if (std::abs(n_lo - tau) <= opt.rel_tol * tau && lo > 0.0) return finish(lo_w, lo, n_lo, "bisection");
  if (std::abs(n_hi - tau) <= opt.rel_tol * tau) return finish(hi_w, hi, n_hi, "bisection");
  for (int it = 0; it < opt.max_bisections; ++it) {
    const double mid = 0.5 * (lo + hi);
    WaveProfile wm = solve(mid, lo_w.density);
    const double nm = N(wm);
    if (std::abs(nm - tau) <= opt.rel_tol * tau || hi - lo <= 1e-15 * s.c_star)
      return finish(std::move(wm), mid, nm, "bisection");
    if ((nm > tau) == decreasing) {
      lo = mid;
      lo_w = std::move(wm);
    } else {
      hi = mid;
    }
  }
  throw SolverError("speed bisection did not reach the normalization tolerance");
}

inline SpeedResult select_speed(const ModelConfig& config, double tau, double l, const SpeedOptions& opt = {}) {
  const PhenotypeGrid grid = config.make_grid();
  const Kernels k = assemble_kernels(config, grid);
  return select_speed(prepare_wave(grid, k.M, k.K, k.a, config.mu, config.eps, config.beta), tau, l, opt);
}

struct LineResult {
  double c = 0.0;
  WaveProfile wave;
  std::vector<double> lengths;
  std::vector<double> speeds;
  /// |c_last - c_previous|, absent for a single length.
  std::optional<double> cauchy_gap;
  bool converged = false;
};

/// Box solves over an increasing sequence of half-lengths; the last one is
/// returned, flagged unconverged unless the last two speeds agree to 1e-4 c*.
inline LineResult extend_line(const WaveSetup& s, double tau, const std::vector<double>& lengths,
                              const SpeedOptions& opt = {}) {
  if (lengths.empty()) throw PreconditionError("extend_line needs at least one length");
  for (std::size_t k = 1; k < lengths.size(); ++k)
    if (!(lengths[k] > lengths[k - 1])) throw PreconditionError("extend_line needs an increasing length sequence");

  std::vector<std::optional<SpeedResult>> runs(lengths.size());
  parallel_for(lengths.size(), [&](std::size_t k) { runs[k] = select_speed(s, tau, lengths[k], opt); });

  LineResult out;
  out.lengths = lengths;
  for (const auto& r : runs) out.speeds.push_back(r->c);
  out.c = out.speeds.back();
  out.wave = std::move(runs.back()->wave);
  if (lengths.size() == 1) {
    out.converged = true;
  } else {
    out.cauchy_gap = std::abs(out.speeds.back() - out.speeds[out.speeds.size() - 2]);
    out.converged = *out.cauchy_gap <= 1e-4 * s.c_star;
  }
  out.wave.unconverged = !out.converged;
  return out;
}

// -- diagnostics -------------------------------------------------------------

struct DiagnosticsReport {
  double right_tail_mass = 0.0;
  double right_tail_bound = 0.0;
  bool right_tail_ok = false;
  double left_plateau_min = 0.0;
  double rho_floor = 0.0;
  bool left_floor_ok = false;
  /// Max over unit windows of sup/inf slice mass, where the inf is positive.
  double harnack_max = 0.0;
  double tail_rate = std::numeric_limits<double>::quiet_NaN();
  double tail_rate_expected = 0.0;
  bool tail_rate_ok = false;
  double max_slice_mass = 0.0;
  double slice_mass_bound = 0.0;
  bool slice_mass_ok = false;
  std::vector<double> left_pairings;
  std::vector<double> right_pairings;
  bool limits_ok = false;
};

/// Least-squares slope of log(values) against x over nodes with x in [x0, x1].
inline double log_slope(const Vector& x, const Vector& values, double x0, double x1) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int m = 0;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    if (x[j] < x0 || x[j] > x1) continue;
    if (!(values[j] > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    const double y = std::log(values[j]);
    sx += x[j];
    sy += y;
    sxx += x[j] * x[j];
    sxy += x[j] * y;
    ++m;
  }
  if (m < 2) return std::numeric_limits<double>::quiet_NaN();
  return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

/// Reports on a wave computed on [-l, l].
///
/// The tail rate is fitted on [0.3 l, 0.7 l], where the algebraic corrections
/// from the front and from the right boundary roughly cancel.
inline DiagnosticsReport wave_diagnostics(const PhenotypeGrid& grid, const KernelMatrix& K, const FitnessProfile& a,
                                          const WaveProfile& u, double rho_floor) {
  DiagnosticsReport r;
  const Vector mass = u.slice_masses(grid);
  const double l = u.x[u.x.size() - 1], h = u.hx();
  const auto nx = static_cast<Eigen::Index>(u.nx());
  const double cap = a.sup_a / K.lower_bound;

  r.right_tail_bound = 1e-6 * cap;
  const auto tail_start = static_cast<Eigen::Index>(std::floor(0.9 * (nx - 1)));
  r.right_tail_mass = mass.tail(nx - tail_start).maxCoeff();
  r.right_tail_ok = r.right_tail_mass <= r.right_tail_bound;

  const auto plateau_end = static_cast<Eigen::Index>(std::ceil(0.1 * (nx - 1)));
  r.rho_floor = rho_floor;
  r.left_plateau_min = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j <= plateau_end; ++j) {
    const MeasureProfile sl = u.slice(grid, static_cast<std::size_t>(j));
    r.left_plateau_min = std::min(r.left_plateau_min, sl.ac.minCoeff());
  }
  r.left_floor_ok = r.left_plateau_min >= rho_floor - 1e-10;

  const auto win = std::max<Eigen::Index>(2, static_cast<Eigen::Index>(std::round(1.0 / h)));
  for (Eigen::Index j = 0; j + win <= nx; j += win) {
    const auto seg = mass.segment(j, win);
    if (seg.minCoeff() > 0.0) r.harnack_max = std::max(r.harnack_max, seg.maxCoeff() / seg.minCoeff());
  }

  r.tail_rate = -log_slope(u.x, mass, 0.3 * l, 0.7 * l);
  r.tail_rate_expected = 0.5 * u.c;
  r.tail_rate_ok = std::isfinite(r.tail_rate) && std::abs(r.tail_rate - r.tail_rate_expected) <= 0.1 * r.tail_rate_expected;

  r.max_slice_mass = mass.maxCoeff();
  r.slice_mass_bound = cap;
  r.slice_mass_ok = r.max_slice_mass <= cap + 1e-8;

  // positive test functions bump(x - s) x 1 at the five extreme shifts on each side
  const double hw = std::min(1.0, 0.05 * l);
  double bump_mass = 0.0;
  for (Eigen::Index j = 0; j < nx; ++j) bump_mass += h * bump(u.x[j] / hw);
  auto pairing = [&](double center) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < nx; ++j) acc += h * bump((u.x[j] - center) / hw) * mass[j];
    return acc;
  };
  r.limits_ok = true;
  for (int k = 0; k < 5; ++k) {
    const double shift = hw * (1.5 + k);
    r.left_pairings.push_back(pairing(-l + shift));
    r.right_pairings.push_back(pairing(l - shift));
    r.limits_ok = r.limits_ok && r.left_pairings.back() >= (rho_floor * grid.volume() * bump_mass) - 1e-10 &&
                  r.left_pairings.back() > 0.0 && r.right_pairings.back() <= 1e-6 * cap * bump_mass;
  }
  return r;
}

// -- KPP front and separated wave --------------------------------------------

struct KppFront {
  Vector x;
  Vector rho;
  double r = 0.0;
  double c = 0.0;
  double pin = 0.0;
  /// Max-norm of the discrete ODE and phase residuals.
  double residual = 0.0;
  /// Fitted exponential rate on [0.3 L, 0.7 L].
  double decay_rate = 0.0;
  bool monotone = false;
};

/// Front of -rho'' - c rho' = rho (r - rho) on [-L, L] with rho(0) = pin,
/// leaving r along the unstable direction at -L.
///
/// An RK4 trajectory leaving the saddle at r along its unstable direction,
/// shot so that it crosses pin at x = 0, seeds Newton on the central
/// difference equations.
inline KppFront kpp_front(double r, double c, double L, double pin, std::size_t n = 0) {
  if (!(r > 0.0)) throw PreconditionError("kpp_front requires r > 0");
  if (c < 2.0 * std::sqrt(r) * (1.0 - 1e-12)) throw PreconditionError("subcritical speed: positive front does not exist");
  if (!(pin > 0.0 && pin < r)) throw PreconditionError("kpp_front requires pin in (0, r)");
  if (!(L > 0.0)) throw PreconditionError("kpp_front requires L > 0");
  if (n == 0) n = x_nodes_for(L, std::max(c, 1.0), 40);
  if (n % 2 == 0) ++n;

  KppFront f;
  f.r = r;
  f.c = c;
  f.pin = pin;
  f.x = uniform_x(L, n);
  const double h = f.x[1] - f.x[0];
  const auto N = static_cast<Eigen::Index>(n), mid = N / 2;

  const double up = 0.5 * (-c + std::sqrt(c * c + 4.0 * r));
  auto shoot = [&](double log_eta, Vector& out) {
    auto rhs = [&](double y, double s) { return std::array<double, 2>{s, -c * s - y * (r - y)}; };
    double y = r - std::exp(log_eta), s = -up * std::exp(log_eta);
    out.resize(N);
    out[0] = y;
    for (Eigen::Index j = 1; j < N; ++j) {
      const auto k1 = rhs(y, s);
      const auto k2 = rhs(y + 0.5 * h * k1[0], s + 0.5 * h * k1[1]);
      const auto k3 = rhs(y + 0.5 * h * k2[0], s + 0.5 * h * k2[1]);
      const auto k4 = rhs(y + h * k3[0], s + h * k3[1]);
      y += h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]);
      s += h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]);
      out[j] = y;
    }
    return out[mid];
  };
  // rho(0) decreases as the initial deviation grows
  const double guess = std::log(r - pin) - up * L;
  double lo = guess - 30.0, hi = std::min(guess + 30.0, std::log(r - pin));
  Vector traj;
  for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
    const double m = 0.5 * (lo + hi);
    if (shoot(m, traj) > pin)
      lo = m;
    else
      hi = m;
  }
  shoot(0.5 * (lo + hi), traj);
  // past the pin the shot eventually leaves the stable manifold; continue it by the decaying mode
  Eigen::Index k = mid;
  while (k + 1 < N && traj[k + 1] > 0.0 && traj[k + 1] < traj[k]) ++k;
  Vector rho = traj;
  const double down = 0.5 * c;
  for (Eigen::Index j = k + 1; j < N; ++j)
    rho[j] = traj[k] * std::exp(-down * (f.x[j] - f.x[k])) * (L - f.x[j]) / (L - f.x[k]);
  rho = rho.cwiseMax(0.0);

  // Row 0 keeps rho_0 on the discrete unstable mode of the saddle, rho_1 - r = z (rho_0 - r),
  // where z > 1 solves the linearized recurrence. A free left value would leave that mode,
  // which decays into the interior, undetermined. The right end is free.
  const double qa = -1.0 / (h * h) - c / (2.0 * h), qb = 2.0 / (h * h) + r, qc = -1.0 / (h * h) + c / (2.0 * h);
  const double z = (-qb - std::sqrt(qb * qb - 4.0 * qa * qc)) / (2.0 * qa);
  auto residual = [&](const Vector& v) {
    Vector F(N);
    F[0] = (v[1] - r) - z * (v[0] - r);
    for (Eigen::Index j = 1; j + 1 < N; ++j)
      F[j] = -(v[j + 1] - 2.0 * v[j] + v[j - 1]) / (h * h) - c * (v[j + 1] - v[j - 1]) / (2.0 * h) - v[j] * (r - v[j]);
    F[N - 1] = v[mid] - pin;
    return F;
  };
  Vector F = residual(rho);
  double res = F.cwiseAbs().maxCoeff();
  for (int it = 0; it < 50 && res > 1e-13 * r; ++it) {
    std::vector<Eigen::Triplet<double>> trips;
    trips.emplace_back(0, 0, -z);
    trips.emplace_back(0, 1, 1.0);
    for (Eigen::Index j = 1; j + 1 < N; ++j) {
      trips.emplace_back(j, j - 1, -1.0 / (h * h) + c / (2.0 * h));
      trips.emplace_back(j, j, 2.0 / (h * h) - (r - 2.0 * rho[j]));
      trips.emplace_back(j, j + 1, -1.0 / (h * h) - c / (2.0 * h));
    }
    trips.emplace_back(N - 1, mid, 1.0);
    Eigen::SparseMatrix<double> J(N, N);
    J.setFromTriplets(trips.begin(), trips.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(J);
    if (lu.info() != Eigen::Success) throw SolverError("KPP front Jacobian is singular", res);
    const Vector d = lu.solve(-F);
    Vector next, Fn;
    double rn = std::numeric_limits<double>::infinity();
    for (double t = 1.0; t > 1e-6; t *= 0.5) {
      next = rho + t * d;
      Fn = residual(next);
      rn = Fn.cwiseAbs().maxCoeff();
      if (rn < res) break;
    }
    if (!(rn < res)) break;
    rho = std::move(next);
    F = Fn;
    res = rn;
  }
  f.rho = std::move(rho);
  f.residual = res;
  if (res > 1e-8) throw SolverError("KPP front Newton did not converge", res);
  if (std::abs(f.rho[0] - r) > 1e-6) throw PreconditionError("L too short: front has not reached r at -L");
  if (f.rho[N - 1] > 1e-8 * r) throw PreconditionError("L too short: front has not decayed at L");

  f.monotone = true;
  for (Eigen::Index j = 0; j + 1 < N; ++j) f.monotone = f.monotone && f.rho[j + 1] <= f.rho[j] + 1e-14 * r;
  f.decay_rate = -log_slope(f.x, f.rho, 0.3 * L, 0.7 * L);
  return f;
}

/// u(x, dy) = rho(x) phi(dy) for y-independent competition and K-mass-one phi.
inline WaveProfile separated_wave(const KernelMatrix& K, const MeasureProfile& phi, const KppFront& front) {
  if (!is_y_independent(K)) throw PreconditionError("separation of variables inapplicable");
  const double kmass = K.values.row(0).dot(phi.node_masses());
  if (std::abs(kmass - 1.0) > 1e-10) throw PreconditionError("separated wave needs a K-mass-one eigenvector");
  WaveProfile w;
  w.c = front.c;
  w.x = front.x;
  w.kind = WaveKind::separated_singular;
  w.slices.reserve(front.x.size());
  for (Eigen::Index j = 0; j < front.x.size(); ++j) w.slices.push_back(phi.scaled(front.rho[j]));
  w.p_left = front.rho[0] * phi.ac;
  w.meta = WaveMeta{0.0, 0.0, front.x[front.x.size() - 1], 0.0};
  w.residual = front.residual;
  return w;
}

}  // namespace phenowave
