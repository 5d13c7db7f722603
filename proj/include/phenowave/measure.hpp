#pragma once

#include <cstddef>
#include <vector>

#include "phenowave/grid.hpp"

namespace phenowave {

struct Atom {
  std::size_t node = 0;
  double mass = 0.0;
};

/// A nonnegative measure on the grid: a density part plus finitely many atoms.
///
/// The density `ac` is taken against `quadrature`, the reference weights that
/// stand in for dy. For ordinary profiles these are the grid's trapezoid
/// weights. Profiles built around a singular point carry their own weights,
/// with the singular node excluded and its cell redistributed.
struct MeasureProfile {
  Vector ac;
  std::vector<Atom> atoms;
  Vector quadrature;

  MeasureProfile() = default;
  MeasureProfile(Vector density, Vector weights) : ac(std::move(density)), quadrature(std::move(weights)) {}

  static MeasureProfile from_density(const PhenotypeGrid& grid, Vector density) {
    return MeasureProfile(std::move(density), grid.weights());
  }

  std::size_t size() const { return static_cast<std::size_t>(ac.size()); }

  /// Mass carried by each node: quadrature * density, plus atoms.
  Vector node_masses() const {
    Vector m = quadrature.cwiseProduct(ac);
    for (const auto& at : atoms) m[static_cast<Eigen::Index>(at.node)] += at.mass;
    return m;
  }

  double ac_mass() const { return quadrature.dot(ac); }

  double atom_mass() const {
    double s = 0.0;
    for (const auto& at : atoms) s += at.mass;
    return s;
  }

  double total_mass() const { return ac_mass() + atom_mass(); }

  /// Integral of a node function against the measure.
  double integrate(const Vector& f) const { return node_masses().dot(f); }

  MeasureProfile scaled(double factor) const {
    MeasureProfile out = *this;
    out.ac *= factor;
    for (auto& at : out.atoms) at.mass *= factor;
    return out;
  }
};

}  // namespace phenowave
