#pragma once

// Perron pair of an essentially nonnegative (Metzler) matrix.

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <limits>

#include "phenowave/error.hpp"
#include "phenowave/grid.hpp"

namespace phenowave {

struct PerronOptions {
  double tol = 1e-10;
  int max_iter = 100000;
  /// Power iterations attempted before switching to shift-invert refinement.
  int power_budget = 400;
  /// Shift-invert is skipped above this size (dense LU per step).
  Eigen::Index refine_max_size = 3000;
};

struct PerronPair {
  double value = 0.0;
  /// Positive eigenvector, scaled to unit sup norm.
  Vector vector;
  /// ||A x - value x||_inf / ||x||_inf
  double residual = std::numeric_limits<double>::infinity();
  int iterations = 0;
};

namespace detail {

struct PerronProbe {
  Vector ax;
  double rayleigh;
  double residual;
};

inline PerronProbe probe(const Matrix& A, const Vector& x) {
  PerronProbe p;
  p.ax = A * x;
  p.rayleigh = x.dot(p.ax) / x.squaredNorm();
  p.residual = (p.ax - p.rayleigh * x).cwiseAbs().maxCoeff() / x.cwiseAbs().maxCoeff();
  return p;
}

}  // namespace detail

/// Dominant eigenpair of a Metzler matrix.
///
/// Shifted power iteration first; if it stalls, Noda's iteration takes over:
/// the shift is the Collatz-Wielandt upper bound max_i (Ax)_i / x_i, so
/// (sI - A)^{-1} stays a nonnegative matrix and the iterate stays positive.
inline PerronPair perron(const Matrix& A, const PerronOptions& opt = {}) {
  const Eigen::Index n = A.rows();
  if (n == 0 || A.cols() != n) throw PreconditionError("perron: matrix must be square and nonempty");
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      if (i != j && A(i, j) < 0.0) throw PreconditionError("perron: negative off-diagonal entry");

  const double sigma = std::max(0.0, -A.diagonal().minCoeff());
  PerronPair out;
  Vector x = Vector::Ones(n);

  const int budget = n <= opt.refine_max_size ? std::min(opt.power_budget, opt.max_iter) : opt.max_iter;
  int it = 0;
  for (; it < budget; ++it) {
    auto p = detail::probe(A, x);
    out.value = p.rayleigh;
    out.residual = p.residual;
    if (p.residual <= opt.tol) {
      out.vector = x / x.maxCoeff();
      out.iterations = it;
      return out;
    }
    x = p.ax + sigma * x;
    x /= x.cwiseAbs().maxCoeff();
  }

  if (n <= opt.refine_max_size) {
    const double tiny = std::numeric_limits<double>::min();
    x = x.cwiseMax(tiny);
    for (; it < opt.max_iter; ++it) {
      auto p = detail::probe(A, x);
      out.value = p.rayleigh;
      out.residual = p.residual;
      if (p.residual <= opt.tol) break;
      const double upper = p.ax.cwiseQuotient(x).maxCoeff();
      const double s = upper + 1e-12 * (1.0 + std::abs(upper));
      Matrix shifted = -A;
      shifted.diagonal().array() += s;
      Vector y = shifted.partialPivLu().solve(x);
      if (!y.allFinite()) break;
      y = y.cwiseAbs();
      x = (y / y.maxCoeff()).cwiseMax(tiny);
    }
  }

  if (!(out.residual <= opt.tol))
    throw SolverError("Perron iteration did not converge (residual " + std::to_string(out.residual) + ")",
                      out.residual);
  out.vector = x / x.maxCoeff();
  out.iterations = it;
  return out;
}

}  // namespace phenowave
