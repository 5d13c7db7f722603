#pragma once

// Small-instance oracles, independent of the main solver paths.

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "phenowave/error.hpp"
#include "phenowave/grid.hpp"
#include "phenowave/perron.hpp"

namespace phenowave {

struct OracleReport {
  std::string oracle;
  std::string instance;
  std::vector<double> oracle_values;
  std::vector<double> main_values;
  double discrepancy = 0.0;
  double tolerance = 0.0;
  bool pass = false;

  /// Sets discrepancy = max |oracle - main| and the verdict.
  static OracleReport compare(std::string oracle, std::string instance, std::vector<double> oracle_values,
                              std::vector<double> main_values, double tolerance) {
    if (oracle_values.size() != main_values.size()) throw PreconditionError("oracle report: size mismatch");
    OracleReport r{std::move(oracle), std::move(instance), std::move(oracle_values), std::move(main_values), 0.0,
                   tolerance, false};
    for (std::size_t i = 0; i < r.oracle_values.size(); ++i)
      r.discrepancy = std::max(r.discrepancy, std::abs(r.oracle_values[i] - r.main_values[i]));
    r.pass = r.discrepancy <= tolerance;
    return r;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["oracle"] = oracle;
    j["instance"] = instance;
    j["oracle_values"] = oracle_values;
    j["main_values"] = main_values;
    j["discrepancy"] = discrepancy;
    j["tolerance"] = tolerance;
    j["pass"] = pass;
    return j;
  }

  void append_to(const std::string& path) const {
    std::ofstream out(path, std::ios::app);
    if (!out) throw Error("cannot open validation log " + path);
    out << to_json().dump() << '\n';
  }
};

/// Largest real root of det(A - s I) in [lo, hi], by scanning downward for a
/// sign change and bisecting to 1e-12.
inline double det_scan_eigen(const Matrix& A, double lo, double hi, int points = 4000) {
  const Eigen::Index n = A.rows();
  if (n == 0 || n != A.cols()) throw PreconditionError("det_scan_eigen: square matrix required");
  if (n > 12) throw PreconditionError("det_scan_eigen: dimension capped at 12");
  if (!(hi > lo) || points < 2) throw PreconditionError("det_scan_eigen: empty range");

  auto f = [&](double s) {
    Matrix B = A;
    B.diagonal().array() -= s;
    return B.partialPivLu().determinant();
  };
  auto sign = [](double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); };

  double upper = hi;
  double fu = f(upper);
  if (fu == 0.0) return upper;
  for (int k = 1; k < points; ++k) {
    const double s = hi - (hi - lo) * k / (points - 1);
    const double fs = f(s);
    if (fs == 0.0) return s;
    if (sign(fs) != sign(fu)) {
      double a = s, b = upper;
      const int sa = sign(fs);
      while (b - a > 1e-12) {
        const double m = 0.5 * (a + b);
        const double fm = f(m);
        if (fm == 0.0) return m;
        if (sign(fm) == sa)
          a = m;
        else
          b = m;
      }
      return 0.5 * (a + b);
    }
    upper = s;
    fu = fs;
  }
  throw PreconditionError("widen range");
}

/// Range version with Gershgorin bounds.
inline double det_scan_eigen(const Matrix& A, int points = 4000) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    const double off = A.row(i).cwiseAbs().sum() - std::abs(A(i, i));
    lo = std::min(lo, A(i, i) - off);
    hi = std::max(hi, A(i, i) + off);
  }
  const double pad = 1e-3 * std::max(1.0, hi - lo);
  return det_scan_eigen(A, lo - pad, hi + pad, points);
}

/// Random mutation-selection matrix mu (M - I) + diag(a) of dimension n with a
/// positive column-stochastic M, so the Perron root is simple.
inline Matrix random_selection_matrix(std::mt19937_64& rng, Eigen::Index n) {
  std::uniform_real_distribution<double> pos(0.05, 1.0), fit(-1.0, 1.0), rate(0.1, 2.0);
  Matrix M(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) M(i, j) = pos(rng);
  for (Eigen::Index j = 0; j < n; ++j) M.col(j) /= M.col(j).sum();
  const double mu = rate(rng);
  Matrix A = mu * (M - Matrix::Identity(n, n));
  for (Eigen::Index i = 0; i < n; ++i) A(i, i) += fit(rng);
  return A;
}

/// Perron solver against the determinant scan on `count` seeded instances of
/// dimension 2..max_dim.
inline std::vector<OracleReport> perron_oracle_suite(int count = 25, int max_dim = 8, std::uint64_t seed = 20240607,
                                                     double tolerance = 1e-8) {
  if (max_dim < 2 || max_dim > 12) throw PreconditionError("oracle suite dimension must lie in [2, 12]");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dim(2, max_dim);
  std::vector<OracleReport> out;
  for (int k = 0; k < count; ++k) {
    const int n = dim(rng);
    const Matrix A = random_selection_matrix(rng, n);
    PerronOptions opt;
    opt.tol = 1e-13;
    const double main = perron(A, opt).value;
    const double oracle = det_scan_eigen(A);
    out.push_back(OracleReport::compare("det_scan", "random_selection[" + std::to_string(k) + "] n=" + std::to_string(n),
                                        {oracle}, {main}, tolerance));
  }
  return out;
}

struct ConvergenceReport {
  std::vector<int> sizes;
  std::vector<double> values;
  std::vector<double> errors;
  double order = std::numeric_limits<double>::quiet_NaN();
  double fit_residual = 0.0;
  bool irregular = false;
  /// Every error is zero up to rounding.
  bool exact = false;
};

/// Fitted order of a grid quantity under refinement.
///
/// With a reference value the errors are |q(n) - ref|; otherwise successive
/// differences are used. Order is the least-squares slope of log error against
/// log h, with h proportional to 1/(n - 1).
inline ConvergenceReport richardson_quadrature_check(const std::function<double(int)>& quantity,
                                                     const std::vector<int>& sizes,
                                                     std::optional<double> reference = std::nullopt) {
  if (sizes.size() < 3) throw PreconditionError("convergence study needs at least 3 grid sizes");
  const double ratio = static_cast<double>(sizes[1] - 1) / (sizes[0] - 1);
  for (std::size_t k = 1; k < sizes.size(); ++k) {
    const double rk = static_cast<double>(sizes[k] - 1) / (sizes[k - 1] - 1);
    if (!(ratio > 1.0) || std::abs(rk - ratio) > 1e-9 * ratio)
      throw PreconditionError("grid sizes must form a geometric progression");
  }

  ConvergenceReport r;
  r.sizes = sizes;
  for (int n : sizes) r.values.push_back(quantity(n));
  std::vector<double> hs;
  if (reference) {
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      r.errors.push_back(std::abs(r.values[k] - *reference));
      hs.push_back(1.0 / (sizes[k] - 1));
    }
  } else {
    for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
      r.errors.push_back(std::abs(r.values[k + 1] - r.values[k]));
      hs.push_back(1.0 / (sizes[k] - 1));
    }
  }

  double scale = 1.0;
  for (double v : r.values) scale = std::max(scale, std::abs(v));
  const double roundoff = 16.0 * std::numeric_limits<double>::epsilon() * scale;
  r.exact = std::all_of(r.errors.begin(), r.errors.end(), [&](double e) { return e <= roundoff; });
  if (r.exact) return r;
  for (std::size_t k = 1; k < r.errors.size(); ++k) r.irregular = r.irregular || !(r.errors[k] < r.errors[k - 1]);
  if (r.irregular) return r;

  const std::size_t m = r.errors.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < m; ++k) {
    const double x = std::log(hs[k]), y = std::log(r.errors[k]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  const double icept = (sy - slope * sx) / m;
  double ss = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    const double d = std::log(r.errors[k]) - (icept + slope * std::log(hs[k]));
    ss += d * d;
  }
  r.order = slope;
  r.fit_residual = std::sqrt(ss / m);
  return r;
}

}  // namespace phenowave
