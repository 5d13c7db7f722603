#pragma once

// Uniform tensor grids on the phenotype domain, with trapezoid quadrature and
// a zero-flux (mirrored ghost node) Laplacian.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "phenowave/error.hpp"

namespace phenowave {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct Interval {
  double lo = -1.0;
  double hi = 1.0;

  double length() const { return hi - lo; }
  bool contains_interior(double v) const { return lo < v && v < hi; }
};

using Point = std::array<double, 2>;

/// Discretized phenotype domain. Immutable after construction.
class PhenotypeGrid {
 public:
  PhenotypeGrid(int dimension, std::vector<Interval> bounds, std::vector<int> n_per_axis);

  int dimension() const { return dimension_; }
  std::size_t size() const { return static_cast<std::size_t>(weights_.size()); }
  const std::vector<Interval>& bounds() const { return bounds_; }
  const std::vector<int>& shape() const { return shape_; }
  double spacing(int axis) const { return spacing_[static_cast<std::size_t>(axis)]; }

  const Point& node(std::size_t i) const { return nodes_[i]; }
  const std::vector<Point>& nodes() const { return nodes_; }
  const Vector& weights() const { return weights_; }
  const SparseMatrix& laplacian() const { return laplacian_; }

  /// Lebesgue measure of the domain.
  double volume() const;

  /// Index of the node closest to the origin (candidate anchor for the fitness maximum).
  std::size_t origin_index() const { return origin_index_; }

  /// Per-axis integer coordinates of a flat node index (axis 0 varies fastest).
  std::array<int, 2> multi_index(std::size_t i) const;
  std::size_t flat_index(std::array<int, 2> idx) const;

  bool on_boundary(std::size_t i) const;

  /// Euclidean norm of a node's coordinates.
  double radius(std::size_t i) const;

  /// Weighted inner product sum_i w_i u_i v_i.
  double dot(const Vector& u, const Vector& v) const { return (weights_.array() * u.array() * v.array()).sum(); }
  double integrate(const Vector& u) const { return weights_.dot(u); }

  Matrix dense_laplacian() const { return Matrix(laplacian_); }

 private:
  int dimension_;
  std::vector<Interval> bounds_;
  std::vector<int> shape_;
  std::vector<double> spacing_;
  std::vector<Point> nodes_;
  Vector weights_;
  SparseMatrix laplacian_;
  std::size_t origin_index_ = 0;
};

/// Builds a uniform grid. Requires n >= 3 per axis and 0 strictly inside the bounds.
inline PhenotypeGrid build_grid(int dimension, const std::vector<Interval>& bounds, int n_per_axis) {
  return PhenotypeGrid(dimension, bounds, std::vector<int>(static_cast<std::size_t>(dimension), n_per_axis));
}

inline PhenotypeGrid build_grid_1d(double lo, double hi, int n) { return build_grid(1, {Interval{lo, hi}}, n); }

// ---------------------------------------------------------------------------

inline PhenotypeGrid::PhenotypeGrid(int dimension, std::vector<Interval> bounds, std::vector<int> n_per_axis)
    : dimension_(dimension), bounds_(std::move(bounds)), shape_(std::move(n_per_axis)) {
  if (dimension_ != 1 && dimension_ != 2) throw PreconditionError("grid dimension must be 1 or 2");
  if (bounds_.size() != static_cast<std::size_t>(dimension_) || shape_.size() != bounds_.size())
    throw PreconditionError("grid bounds/shape do not match dimension");
  for (std::size_t a = 0; a < bounds_.size(); ++a) {
    if (shape_[a] < 3) throw PreconditionError("degenerate grid");
    if (!(bounds_[a].hi > bounds_[a].lo)) throw PreconditionError("degenerate grid");
    if (!bounds_[a].contains_interior(0.0)) throw PreconditionError("origin not interior");
    spacing_.push_back(bounds_[a].length() / (shape_[a] - 1));
  }

  const int n0 = shape_[0];
  const int n1 = dimension_ == 2 ? shape_[1] : 1;
  const std::size_t n = static_cast<std::size_t>(n0) * static_cast<std::size_t>(n1);
  nodes_.resize(n);
  weights_.resize(static_cast<Eigen::Index>(n));

  auto coord = [&](int axis, int k) {
    const auto& b = bounds_[static_cast<std::size_t>(axis)];
    const int last = shape_[static_cast<std::size_t>(axis)] - 1;
    // pin the endpoints exactly
    if (k == last) return b.hi;
    return b.lo + k * spacing_[static_cast<std::size_t>(axis)];
  };
  auto trap = [&](int axis, int k) {
    const int last = shape_[static_cast<std::size_t>(axis)] - 1;
    const double h = spacing_[static_cast<std::size_t>(axis)];
    return (k == 0 || k == last) ? 0.5 * h : h;
  };

  double best = std::numeric_limits<double>::infinity();
  for (int j = 0; j < n1; ++j) {
    for (int i = 0; i < n0; ++i) {
      const std::size_t idx = static_cast<std::size_t>(i) + static_cast<std::size_t>(n0) * static_cast<std::size_t>(j);
      Point p{coord(0, i), dimension_ == 2 ? coord(1, j) : 0.0};
      nodes_[idx] = p;
      double w = trap(0, i);
      if (dimension_ == 2) w *= trap(1, j);
      weights_[static_cast<Eigen::Index>(idx)] = w;
      const double r = std::hypot(p[0], p[1]);
      if (r < best) {
        best = r;
        origin_index_ = idx;
      }
    }
  }

  // Second differences per axis; the ghost node mirrors the first interior
  // neighbour, so boundary rows read 2(u_1 - u_0)/h^2.
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(n * static_cast<std::size_t>(1 + 2 * dimension_));
  for (std::size_t idx = 0; idx < n; ++idx) {
    const auto mi = multi_index(idx);
    for (int axis = 0; axis < dimension_; ++axis) {
      const double h2 = spacing_[static_cast<std::size_t>(axis)] * spacing_[static_cast<std::size_t>(axis)];
      const int k = mi[static_cast<std::size_t>(axis)];
      const int last = shape_[static_cast<std::size_t>(axis)] - 1;
      auto neighbour = [&](int dk) {
        auto m = mi;
        m[static_cast<std::size_t>(axis)] += dk;
        return static_cast<int>(flat_index(m));
      };
      const int row = static_cast<int>(idx);
      trips.emplace_back(row, row, -2.0 / h2);
      if (k == 0) {
        trips.emplace_back(row, neighbour(1), 2.0 / h2);
      } else if (k == last) {
        trips.emplace_back(row, neighbour(-1), 2.0 / h2);
      } else {
        trips.emplace_back(row, neighbour(-1), 1.0 / h2);
        trips.emplace_back(row, neighbour(1), 1.0 / h2);
      }
    }
  }
  laplacian_.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  laplacian_.setFromTriplets(trips.begin(), trips.end());
  laplacian_.makeCompressed();
}

inline double PhenotypeGrid::volume() const {
  double v = 1.0;
  for (const auto& b : bounds_) v *= b.length();
  return v;
}

inline std::array<int, 2> PhenotypeGrid::multi_index(std::size_t i) const {
  const auto n0 = static_cast<std::size_t>(shape_[0]);
  return {static_cast<int>(i % n0), static_cast<int>(i / n0)};
}

inline std::size_t PhenotypeGrid::flat_index(std::array<int, 2> idx) const {
  return static_cast<std::size_t>(idx[0]) + static_cast<std::size_t>(shape_[0]) * static_cast<std::size_t>(idx[1]);
}

inline bool PhenotypeGrid::on_boundary(std::size_t i) const {
  const auto mi = multi_index(i);
  for (int a = 0; a < dimension_; ++a) {
    const int k = mi[static_cast<std::size_t>(a)];
    if (k == 0 || k == shape_[static_cast<std::size_t>(a)] - 1) return true;
  }
  return false;
}

inline double PhenotypeGrid::radius(std::size_t i) const { return std::hypot(nodes_[i][0], nodes_[i][1]); }

}  // namespace phenowave
