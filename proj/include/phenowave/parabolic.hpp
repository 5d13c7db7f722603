#pragma once

// Time integration of the evolution problem on a truncated line, front
// tracking, spreading-speed estimation and the ordering test for the
// beta-modified dynamics.

#include <Eigen/LU>
#include <Eigen/SparseLU>

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "phenowave/spectral.hpp"
#include "phenowave/stationary.hpp"

namespace phenowave {

struct ParabolicModel {
  const PhenotypeGrid& grid;
  const KernelMatrix& M;
  const KernelMatrix& K;
  const FitnessProfile& a;
  double mu = 0.0;
  double eps = 0.0;
  double beta = 0.0;
  /// Drop competition (K = 0, beta = 0): the linear semigroup.
  bool linearized = false;
};

struct FrontSample {
  double t = 0.0;
  double x = 0.0;
};

struct SimulationState {
  double t = 0.0;
  Vector x;
  /// Column j is u(x_j, .).
  Matrix u;
  std::vector<FrontSample> history;
  double dt = 0.0;
  double hx = 0.0;
  double clipped_last = 0.0;
  double clipped_total = 0.0;
  /// Largest per-step ratio of clipped to total mass.
  double clipped_ratio_max = 0.0;
  int mass_alarms = 0;
  std::optional<double> first_alarm_time;
  long steps = 0;

  Vector slice_masses(const PhenotypeGrid& grid) const { return u.transpose() * grid.weights(); }
  double total_mass(const PhenotypeGrid& grid) const { return hx * slice_masses(grid).sum(); }
};

/// sup a + mu + kinf * (max slice mass) + beta * (max u), the explicit-part rate.
inline double explicit_rate(const ParabolicModel& m, double max_slice_mass, double max_u) {
  if (m.linearized) return m.a.sup_a + m.mu;
  return m.a.sup_a + m.mu + m.K.upper_bound * max_slice_mass + m.beta * max_u;
}

/// IMEX Euler: mutation and reaction explicit, then implicit x diffusion and
/// implicit y diffusion (eps > 0), zero flux in both directions.
class Integrator {
 public:
  Integrator(const ParabolicModel& model, const Vector& x, double dt) : m_(model), dt_(dt) {
    if (!(dt > 0.0)) throw PreconditionError("dt must be positive");
    if (x.size() < 3) throw PreconditionError("simulation needs at least 3 x nodes");
    h_ = x[1] - x[0];
    const Eigen::Index nx = x.size();
    std::vector<Eigen::Triplet<double>> trips;
    const double s = dt / (h_ * h_);
    for (Eigen::Index j = 0; j < nx; ++j) {
      trips.emplace_back(j, j, 1.0 + 2.0 * s);
      // mirrored ghost nodes at both ends
      if (j == 0) trips.emplace_back(j, 1, -2.0 * s);
      else if (j == nx - 1) trips.emplace_back(j, nx - 2, -2.0 * s);
      else {
        trips.emplace_back(j, j - 1, -s);
        trips.emplace_back(j, j + 1, -s);
      }
    }
    Eigen::SparseMatrix<double> Ax(nx, nx);
    Ax.setFromTriplets(trips.begin(), trips.end());
    xlu_.compute(Ax);
    if (xlu_.info() != Eigen::Success) throw SolverError("x diffusion factorization failed");
    if (m_.eps > 0.0) {
      Matrix Ay = -dt * m_.eps * m_.grid.dense_laplacian();
      Ay.diagonal().array() += 1.0;
      ylu_ = Ay.partialPivLu();
    }
    MW_ = m_.M.values * m_.grid.weights().asDiagonal();
    KW_ = m_.K.values * m_.grid.weights().asDiagonal();
  }

  double dt() const { return dt_; }

  void step(SimulationState& s) const {
    const Vector mass = s.slice_masses(m_.grid);
    const double rate = explicit_rate(m_, mass.maxCoeff(), s.u.maxCoeff());
    if (dt_ * rate > 0.5) throw PreconditionError("reduce dt");

    Matrix R = m_.mu * (MW_ * s.u - s.u) + s.u.cwiseProduct(m_.a.values.replicate(1, s.u.cols()));
    if (!m_.linearized) R -= s.u.cwiseProduct(KW_ * s.u) + m_.beta * s.u.cwiseAbs2();
    Matrix next = s.u + dt_ * R;
    next = Matrix(xlu_.solve(Matrix(next.transpose())).transpose());
    if (m_.eps > 0.0) next = ylu_.solve(next);

    const Vector w = m_.grid.weights();
    const double neg = -(w.transpose() * next.cwiseMin(0.0)).sum() * s.hx;
    next = next.cwiseMax(0.0);
    const double total = (w.transpose() * next).sum() * s.hx;
    s.clipped_last = neg;
    s.clipped_total += neg;
    if (total > 0.0) s.clipped_ratio_max = std::max(s.clipped_ratio_max, neg / total);
    s.u = std::move(next);
    s.t += dt_;
    ++s.steps;
  }

 private:
  const ParabolicModel& m_;
  double dt_ = 0.0;
  double h_ = 0.0;
  Eigen::SparseLU<Eigen::SparseMatrix<double>> xlu_;
  Eigen::PartialPivLU<Matrix> ylu_;
  Matrix MW_, KW_;
};

/// Single IMEX step with a fresh integrator.
inline void step(const ParabolicModel& model, SimulationState& s) { Integrator(model, s.x, s.dt).step(s); }

// -- front tracking ----------------------------------------------------------

struct FrontPosition {
  double x = 0.0;
  /// False when the level is never reached; x is then the left domain edge.
  bool attained = false;
};

/// Largest x with slice mass >= theta, interpolated linearly between nodes.
inline FrontPosition front_position(const Vector& x, const Vector& mass, double theta) {
  if (!(theta > 0.0)) throw PreconditionError("front level must be positive");
  for (Eigen::Index j = x.size() - 1; j >= 0; --j) {
    if (mass[j] < theta) continue;
    if (j == x.size() - 1) return {x[j], true};
    const double f = (mass[j] - theta) / (mass[j] - mass[j + 1]);
    return {x[j] + f * (x[j + 1] - x[j]), true};
  }
  return {x[0], false};
}

inline FrontPosition front_position(const SimulationState& s, const PhenotypeGrid& grid, double theta) {
  return front_position(s.x, s.slice_masses(grid), theta);
}

struct SpeedEstimate {
  double c = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
  double t_from = 0.0;
  double t_to = 0.0;
  /// Front within 5 decay lengths of the right edge during the fit window.
  bool contaminated = false;
  bool reliable = false;
};

/// Least-squares slope of x_f(t) over the last `window_fraction` of the run.
///
/// The decay length defaults to 2 / c_obs.
inline SpeedEstimate estimate_speed(const std::vector<FrontSample>& history, double window_fraction, double X,
                                    double decay_length = 0.0) {
  if (!(window_fraction > 0.0 && window_fraction <= 1.0)) throw PreconditionError("window fraction must lie in (0, 1]");
  if (history.size() < 2) throw PreconditionError("front history needs at least 20 samples in the fit window");
  const double t0 = history.front().t, t1 = history.back().t;
  const double from = t1 - window_fraction * (t1 - t0);
  double st = 0, sx = 0, stt = 0, stx = 0;
  std::size_t n = 0;
  for (const auto& p : history) {
    if (p.t < from) continue;
    st += p.t;
    sx += p.x;
    stt += p.t * p.t;
    stx += p.t * p.x;
    ++n;
  }
  if (n < 20) throw PreconditionError("front history needs at least 20 samples in the fit window");
  const double dn = static_cast<double>(n);
  const double Stt = stt - st * st / dn, Stx = stx - st * sx / dn;
  SpeedEstimate e;
  e.c = Stx / Stt;
  const double b = (sx - e.c * st) / dn;
  double ssr = 0.0, xmax = -std::numeric_limits<double>::infinity();
  for (const auto& p : history) {
    if (p.t < from) continue;
    const double r = p.x - (b + e.c * p.t);
    ssr += r * r;
    xmax = std::max(xmax, p.x);
  }
  e.std_error = std::sqrt(ssr / (dn - 2.0) / Stt);
  e.samples = n;
  e.t_from = from;
  e.t_to = t1;
  const double len = decay_length > 0.0 ? decay_length : (e.c > 0.0 ? 2.0 / e.c : 0.0);
  e.contaminated = xmax > X - 5.0 * len;
  e.reliable = !e.contaminated;
  return e;
}

// -- simulation --------------------------------------------------------------

struct SimulationOptions {
  double tmax = 60.0;
  /// 0: c* tmax + 10 decay lengths.
  double X = 0.0;
  double hx = 0.1;
  /// 0: 0.4 of the stability cap at slice mass 1.5 sup a / k0.
  double dt = 0.0;
  /// 0: 0.1 sup a / k0.
  double theta = 0.0;
  double window_fraction = 0.5;
  /// Soft mass alarm is armed after this time.
  double transient = 1.0;
  /// Starting field (n_y x n_x); default phi(y) times a half-Gaussian on x < 0.
  std::optional<Matrix> initial;
  /// Keep every k-th state (0: none).
  int snapshot_stride = 0;
};

struct Snapshot {
  double t = 0.0;
  Matrix u;
};

struct SimulationResult {
  SimulationState state;
  std::optional<SpeedEstimate> estimate;
  double lambda_eps = 0.0;
  double c_star = 0.0;
  double theta = 0.0;
  double X = 0.0;
  double dt_cap = 0.0;
  bool dt_halved = false;
  std::vector<Snapshot> snapshots;
};

/// Principal pair at the model's viscosity (eps = 0 allowed).
inline SpectralResult simulation_eigenpair(const ParabolicModel& m) {
  return m.eps > 0.0 ? eigen_regularized(m.grid, m.M, m.a, m.mu, m.eps)
                     : detail::principal_pair(m.grid, m.M, m.a, m.mu, 0.0, PerronOptions{});
}

inline Vector simulation_x(double X, double hx) {
  const auto n = static_cast<Eigen::Index>(std::ceil(2.0 * X / hx)) + 1;
  return Vector::LinSpaced(n, -X, X);
}

inline SimulationResult simulate(const ParabolicModel& m, const SimulationOptions& opt = {}) {
  if (!(opt.tmax > 0.0)) throw PreconditionError("tmax must be positive");
  if (!(opt.hx > 0.0)) throw PreconditionError("hx must be positive");
  SimulationResult out;
  const auto eig = simulation_eigenpair(m);
  out.lambda_eps = eig.lambda;
  out.c_star = minimal_speed(eig.lambda);
  const double cap_mass = m.a.sup_a / m.K.lower_bound;
  out.theta = opt.theta > 0.0 ? opt.theta : 0.1 * cap_mass;
  out.X = opt.X > 0.0 ? opt.X : out.c_star * opt.tmax + 10.0 * (2.0 / out.c_star);

  SimulationState& s = out.state;
  s.x = simulation_x(out.X, opt.hx);
  s.hx = s.x[1] - s.x[0];
  const auto n = static_cast<Eigen::Index>(m.grid.size());
  if (opt.initial) {
    if (opt.initial->rows() != n || opt.initial->cols() != s.x.size())
      throw PreconditionError("initial field has the wrong shape");
    s.u = *opt.initial;
  } else {
    const double amp = -eig.lambda / m.K.upper_bound;
    s.u = Matrix::Zero(n, s.x.size());
    for (Eigen::Index j = 0; j < s.x.size(); ++j)
      if (s.x[j] <= 0.0) s.u.col(j) = amp * std::exp(-0.5 * s.x[j] * s.x[j]) * eig.phi;
  }
  if (s.u.minCoeff() < 0.0) throw PreconditionError("initial field must be nonnegative");

  // the cap uses the alarm level so that it holds for the whole run
  const double max_u0 = std::max(s.u.maxCoeff(), m.beta > 0.0 ? m.a.sup_a / m.beta : 0.0);
  out.dt_cap = 0.5 / explicit_rate(m, 1.5 * cap_mass, max_u0);
  s.dt = opt.dt > 0.0 ? opt.dt : 0.4 * out.dt_cap;

  auto integrator = std::make_unique<Integrator>(m, s.x, s.dt);
  auto record = [&] {
    const auto f = front_position(s, m.grid, out.theta);
    if (f.attained) s.history.push_back({s.t, f.x});
  };
  record();
  while (s.t < opt.tmax - 1e-12 * opt.tmax) {
    integrator->step(s);
    if (opt.snapshot_stride > 0 && s.steps % opt.snapshot_stride == 0) out.snapshots.push_back({s.t, s.u});
    if (s.t > opt.transient && !m.linearized && s.slice_masses(m.grid).maxCoeff() > 1.5 * cap_mass) {
      if (s.mass_alarms++ == 0) s.first_alarm_time = s.t;
      if (!out.dt_halved && opt.dt == 0.0) {
        out.dt_halved = true;
        s.dt *= 0.5;
        integrator = std::make_unique<Integrator>(m, s.x, s.dt);
      }
    }
    record();
  }
  try {
    out.estimate = estimate_speed(s.history, opt.window_fraction, out.X, 2.0 / out.c_star);
  } catch (const PreconditionError&) {
  }
  return out;
}

// -- ordering ----------------------------------------------------------------

struct OrderVerdict {
  bool applicable = false;
  bool skipped = false;
  bool pass = false;
  std::string notice;
  /// min over samples and nodes of u_high - u_low.
  double min_gap = std::numeric_limits<double>::infinity();
  double t_reached = 0.0;
  long samples = 0;
};

/// Runs both data side by side and checks u_low <= u_high + 1e-8 after every
/// step while both remain below mu m0 / kinf.
inline OrderVerdict order_preservation_test(const ParabolicModel& m, const Vector& x, const Matrix& u_low,
                                            const Matrix& u_high, double tmax, double dt = 0.0) {
  OrderVerdict v;
  const double b0 = beta0_constant(m.M, m.K, m.a, m.mu);
  if (m.linearized || m.beta < b0) {
    v.skipped = true;
    v.notice = "not applicable: ordering is only tested for beta >= beta0";
    return v;
  }
  if (u_low.rows() != u_high.rows() || u_low.cols() != u_high.cols() || u_low.cols() != x.size())
    throw PreconditionError("initial data shapes differ");
  const double region = m.mu * m.M.lower_bound / m.K.upper_bound;
  if (u_low.minCoeff() < 0.0) throw PreconditionError("initial data must be nonnegative");
  if (u_high.maxCoeff() > region) throw PreconditionError("initial data leave the comparison region u <= mu m0 / kinf");
  if ((u_high - u_low).minCoeff() < 0.0) throw PreconditionError("initial data are not ordered");
  v.applicable = true;

  SimulationState lo, hi;
  lo.x = hi.x = x;
  lo.hx = hi.hx = x[1] - x[0];
  lo.u = u_low;
  hi.u = u_high;
  const double rate = explicit_rate(m, m.grid.volume() * region, region);
  lo.dt = hi.dt = dt > 0.0 ? dt : 0.4 * 0.5 / rate;
  const Integrator integ(m, x, lo.dt);
  v.pass = true;
  while (lo.t < tmax - 1e-12 * tmax) {
    integ.step(lo);
    integ.step(hi);
    ++v.samples;
    v.t_reached = lo.t;
    v.min_gap = std::min(v.min_gap, (hi.u - lo.u).minCoeff());
    if (v.min_gap < -1e-8) v.pass = false;
    if (std::max(lo.u.maxCoeff(), hi.u.maxCoeff()) > region) {
      v.skipped = true;
      v.notice = "comparison region exited at t = " + std::to_string(lo.t);
      break;
    }
  }
  return v;
}

}  // namespace phenowave
