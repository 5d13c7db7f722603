#pragma once

// Kernels, fitness, and the singular-weight operator on a phenotype grid.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "phenowave/error.hpp"
#include "phenowave/grid.hpp"
#include "phenowave/measure.hpp"

namespace phenowave {

using json = nlohmann::json;

/// A named, parameterized function preset (see README for the catalogue).
struct PresetSpec {
  std::string preset;
  json params = json::object();
};

struct KernelMatrix {
  Matrix values;
  double lower_bound = 0.0;
  double upper_bound = 0.0;
  bool normalized = false;
  /// Max over columns of |sum_i w_i M_ij - 1| before renormalization (mutation kernel only).
  double column_deviation_before = 0.0;

  std::size_t size() const { return static_cast<std::size_t>(values.rows()); }
};

struct FitnessProfile {
  Vector values;
  double sup_a = 0.0;
  double inf_a = 0.0;
  std::vector<std::size_t> omega0;
  /// Whether 1/(sup a - a) is integrable on the domain; carried by the preset.
  bool integrable = false;
  /// Off-grid evaluation, used by the singular quadrature.
  std::function<double(const Point&)> eval;

  /// sup over boundary nodes of max(a, 0).
  double boundary_sup_positive(const PhenotypeGrid& grid) const {
    double s = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i)
      if (grid.on_boundary(i)) s = std::max(s, values[static_cast<Eigen::Index>(i)]);
    return s;
  }

  bool is_constant() const { return values.maxCoeff() - values.minCoeff() <= 1e-12; }
};

struct Tolerances {
  double eigen = 1e-10;
  int eigen_max_iter = 100000;
  double newton = 1e-9;
  int newton_max_iter = 60;
  double trichotomy_band = 1e-6;
};

struct GridSpec {
  int dim = 1;
  std::vector<Interval> bounds{Interval{-1.0, 1.0}};
  int n = 201;
};

struct WaveSpec {
  std::optional<double> l;
  std::optional<double> tau;
};

struct ModelConfig {
  GridSpec grid;
  double mu = 0.25;
  double eps = 1e-3;
  double beta = 0.0;
  PresetSpec a{"one_minus_sqrt_abs", json::object()};
  PresetSpec M{"uniform", json::object()};
  PresetSpec K{"constant", json::object()};
  WaveSpec wave;
  Tolerances tol;

  void validate() const {
    if (!(mu > 0.0)) throw ConfigError("mu must be > 0");
    if (!(eps >= 0.0)) throw ConfigError("eps must be >= 0");
    if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
    if (wave.l && !(*wave.l > 0.0)) throw ConfigError("wave.l must be > 0");
    if (wave.tau && !(*wave.tau > 0.0)) throw ConfigError("wave.tau must be > 0");
  }

  PhenotypeGrid make_grid() const { return build_grid(grid.dim, grid.bounds, grid.n); }
};

struct Kernels {
  KernelMatrix M;
  KernelMatrix K;
  FitnessProfile a;
};

namespace detail {

inline double param(const json& p, const char* key, double fallback) {
  if (!p.contains(key)) return fallback;
  if (!p.at(key).is_number()) throw ConfigError(std::string("preset parameter '") + key + "' must be a number");
  return p.at(key).get<double>();
}

inline void reject_unknown(const json& p, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!p.is_object()) throw ConfigError(where + ": params must be an object");
  for (auto it = p.begin(); it != p.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok) throw ConfigError(where + ": unknown parameter '" + it.key() + "'");
  }
}

inline Matrix table_matrix(const json& p, std::size_t n, const std::string& where) {
  if (!p.contains("values") || !p.at("values").is_array()) throw ConfigError(where + ": 'values' table required");
  const auto& rows = p.at("values");
  if (rows.size() != n) throw ConfigError(where + ": table must be " + std::to_string(n) + "x" + std::to_string(n));
  Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (!rows[i].is_array() || rows[i].size() != n) throw ConfigError(where + ": ragged table");
    for (std::size_t j = 0; j < n; ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j].get<double>();
  }
  return m;
}

/// Piecewise-linear (1D) or bilinear (2D) interpolation of node values.
inline std::function<double(const Point&)> interpolant(const PhenotypeGrid& grid, Vector values) {
  return [grid, v = std::move(values)](const Point& p) {
    std::array<int, 2> k{0, 0};
    std::array<double, 2> t{0.0, 0.0};
    for (int axis = 0; axis < grid.dimension(); ++axis) {
      const auto& b = grid.bounds()[static_cast<std::size_t>(axis)];
      const int last = grid.shape()[static_cast<std::size_t>(axis)] - 1;
      double s = (std::clamp(p[static_cast<std::size_t>(axis)], b.lo, b.hi) - b.lo) / grid.spacing(axis);
      int i = std::min(static_cast<int>(std::floor(s)), last - 1);
      k[static_cast<std::size_t>(axis)] = i;
      t[static_cast<std::size_t>(axis)] = s - i;
    }
    auto at = [&](int i, int j) { return v[static_cast<Eigen::Index>(grid.flat_index({i, j}))]; };
    if (grid.dimension() == 1) return (1.0 - t[0]) * at(k[0], 0) + t[0] * at(k[0] + 1, 0);
    return (1.0 - t[0]) * (1.0 - t[1]) * at(k[0], k[1]) + t[0] * (1.0 - t[1]) * at(k[0] + 1, k[1]) +
           (1.0 - t[0]) * t[1] * at(k[0], k[1] + 1) + t[0] * t[1] * at(k[0] + 1, k[1] + 1);
  };
}

}  // namespace detail

/// Builds the fitness profile from its preset.
///
/// Power-law presets read a(y) = sup - scale * |y|^p with p = 1/2, 1, 2; the
/// integrability of 1/(sup a - a) is then p < dimension.
inline FitnessProfile make_fitness(const PresetSpec& spec, const PhenotypeGrid& grid) {
  FitnessProfile f;
  const std::size_t n = grid.size();
  f.values.resize(static_cast<Eigen::Index>(n));

  auto power_law = [&](double p) {
    detail::reject_unknown(spec.params, {"sup", "scale"}, "a." + spec.preset);
    const double top = detail::param(spec.params, "sup", 1.0);
    const double scale = detail::param(spec.params, "scale", 1.0);
    if (!(scale > 0.0)) throw ConfigError("a." + spec.preset + ": scale must be > 0");
    f.eval = [top, scale, p](const Point& y) { return top - scale * std::pow(std::hypot(y[0], y[1]), p); };
    f.integrable = p < grid.dimension();
  };

  if (spec.preset == "one_minus_sqrt_abs") {
    power_law(0.5);
  } else if (spec.preset == "one_minus_abs") {
    power_law(1.0);
  } else if (spec.preset == "one_minus_quadratic") {
    power_law(2.0);
  } else if (spec.preset == "constant") {
    detail::reject_unknown(spec.params, {"value"}, "a.constant");
    const double v = detail::param(spec.params, "value", 1.0);
    f.eval = [v](const Point&) { return v; };
    f.integrable = false;
  } else if (spec.preset == "tabulated") {
    detail::reject_unknown(spec.params, {"values", "integrable"}, "a.tabulated");
    if (!spec.params.contains("values") || spec.params.at("values").size() != n)
      throw ConfigError("a.tabulated: 'values' must have one entry per node");
    Vector v(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) v[static_cast<Eigen::Index>(i)] = spec.params.at("values")[i].get<double>();
    f.integrable = spec.params.value("integrable", false);
    f.eval = detail::interpolant(grid, v);
  } else {
    throw ConfigError("unknown fitness preset '" + spec.preset + "'");
  }

  for (std::size_t i = 0; i < n; ++i) f.values[static_cast<Eigen::Index>(i)] = f.eval(grid.node(i));
  f.sup_a = f.values.maxCoeff();
  f.inf_a = f.values.minCoeff();
  for (std::size_t i = 0; i < n; ++i)
    if (f.sup_a - f.values[static_cast<Eigen::Index>(i)] <= 1e-12) f.omega0.push_back(i);
  return f;
}

/// Fitness profile from explicit node values (test and tooling entry point).
inline FitnessProfile make_fitness_from_values(const PhenotypeGrid& grid, Vector values, bool integrable) {
  PresetSpec spec{"tabulated", json::object()};
  spec.params["integrable"] = integrable;
  spec.params["values"] = std::vector<double>(values.data(), values.data() + values.size());
  return make_fitness(spec, grid);
}

namespace detail {

inline KernelMatrix finish_kernel(Matrix values, const std::string& what) {
  KernelMatrix k;
  if (!(values.minCoeff() > 0.0) || !values.allFinite()) throw PreconditionError(what + ": kernel positivity violated");
  k.lower_bound = values.minCoeff();
  k.upper_bound = values.maxCoeff();
  k.values = std::move(values);
  return k;
}

}  // namespace detail

/// Mutation kernel, renormalized so that every column integrates to one.
inline KernelMatrix make_mutation_kernel(const PresetSpec& spec, const PhenotypeGrid& grid) {
  const auto n = static_cast<Eigen::Index>(grid.size());
  Matrix m(n, n);
  if (spec.preset == "uniform") {
    detail::reject_unknown(spec.params, {}, "M.uniform");
    m.setConstant(1.0 / grid.volume());
  } else if (spec.preset == "gaussian_renormalized") {
    detail::reject_unknown(spec.params, {"sigma"}, "M.gaussian_renormalized");
    const double sigma = detail::param(spec.params, "sigma", 0.2);
    if (!(sigma > 0.0)) throw ConfigError("M.gaussian_renormalized: sigma must be > 0");
    const double norm = std::pow(2.0 * M_PI * sigma * sigma, 0.5 * grid.dimension());
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        const auto& y = grid.node(static_cast<std::size_t>(i));
        const auto& z = grid.node(static_cast<std::size_t>(j));
        const double d2 = (y[0] - z[0]) * (y[0] - z[0]) + (y[1] - z[1]) * (y[1] - z[1]);
        m(i, j) = std::exp(-0.5 * d2 / (sigma * sigma)) / norm;
      }
  } else if (spec.preset == "tabulated") {
    detail::reject_unknown(spec.params, {"values"}, "M.tabulated");
    m = detail::table_matrix(spec.params, grid.size(), "M.tabulated");
  } else {
    throw ConfigError("unknown mutation kernel preset '" + spec.preset + "'");
  }
  if (!(m.minCoeff() > 0.0)) throw PreconditionError("M: kernel positivity violated");

  const Eigen::RowVectorXd colsum = grid.weights().transpose() * m;
  double dev = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) dev = std::max(dev, std::abs(colsum[j] - 1.0));
  for (Eigen::Index j = 0; j < n; ++j) m.col(j) /= colsum[j];

  KernelMatrix k = detail::finish_kernel(std::move(m), "M");
  k.normalized = true;
  k.column_deviation_before = dev;
  return k;
}

inline KernelMatrix make_competition_kernel(const PresetSpec& spec, const PhenotypeGrid& grid) {
  const auto n = static_cast<Eigen::Index>(grid.size());
  Matrix k(n, n);
  if (spec.preset == "constant") {
    detail::reject_unknown(spec.params, {"value"}, "K.constant");
    k.setConstant(detail::param(spec.params, "value", 1.0));
  } else if (spec.preset == "y_independent") {
    // K(y, z) = c0 + c2 |z|^2
    detail::reject_unknown(spec.params, {"c0", "c2"}, "K.y_independent");
    const double c0 = detail::param(spec.params, "c0", 1.0);
    const double c2 = detail::param(spec.params, "c2", 0.0);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double r = grid.radius(static_cast<std::size_t>(j));
      k.col(j).setConstant(c0 + c2 * r * r);
    }
  } else if (spec.preset == "general_tabulated") {
    detail::reject_unknown(spec.params, {"values"}, "K.general_tabulated");
    k = detail::table_matrix(spec.params, grid.size(), "K.general_tabulated");
  } else {
    throw ConfigError("unknown competition kernel preset '" + spec.preset + "'");
  }
  return detail::finish_kernel(std::move(k), "K");
}

inline KernelMatrix kernel_from_values(Matrix values) { return detail::finish_kernel(std::move(values), "kernel"); }

/// Samples all model functions on the grid.
inline Kernels assemble_kernels(const ModelConfig& config, const PhenotypeGrid& grid) {
  config.validate();
  return Kernels{make_mutation_kernel(config.M, grid), make_competition_kernel(config.K, grid),
                 make_fitness(config.a, grid)};
}

/// True when every column of K is constant, i.e. K(y, z) = K(z).
inline bool is_y_independent(const KernelMatrix& k, double tol = 1e-14) {
  for (Eigen::Index j = 0; j < k.values.cols(); ++j) {
    const double ref = k.values(0, j);
    if ((k.values.col(j).array() - ref).abs().maxCoeff() > tol * std::max(1.0, std::abs(ref))) return false;
  }
  return true;
}

// -- star operation ----------------------------------------------------------

/// (f * g)(y_i) for a node density g taken against the grid weights.
inline Vector apply_star(const KernelMatrix& kernel, const PhenotypeGrid& grid, const Vector& g) {
  if (static_cast<std::size_t>(g.size()) != grid.size() || kernel.size() != grid.size())
    throw PreconditionError("apply_star: grid mismatch");
  return kernel.values * grid.weights().cwiseProduct(g);
}

/// (f * g)(y_i) for a measure: density part plus kernel evaluated at the atoms.
inline Vector apply_star(const KernelMatrix& kernel, const MeasureProfile& g) {
  if (g.size() != kernel.size() || static_cast<std::size_t>(g.quadrature.size()) != kernel.size())
    throw PreconditionError("apply_star: grid mismatch");
  return kernel.values * g.node_masses();
}

// -- singular-weight operator ------------------------------------------------

enum class SingularRule { none, midpoint_redistribute };

struct SingularOperator {
  /// Entry (i, j) = M(y_i, y_j) * singular_weights_j.
  Matrix matrix;
  /// Quadrature weights for z -> psi(z) / (sup a - a(z)); zero on the maximizer nodes.
  Vector singular_weights;
  /// The matching reference weights for dy: singular_weights * (sup a - a).
  Vector lebesgue;
  std::vector<std::size_t> omega0;
};

/// Assembles the discrete operator psi -> int M(y,z) psi(z) / (sup a - a(z)) dz.
///
/// Maximizer nodes are removed from the quadrature. Each cell around such a
/// node is split into 2^d sub-cells; the weight is evaluated at each sub-cell
/// midpoint and the resulting mass is attached to the adjacent node in that
/// direction.
inline SingularOperator assemble_M1(const PhenotypeGrid& grid, const KernelMatrix& M, const FitnessProfile& a,
                                    SingularRule rule = SingularRule::midpoint_redistribute) {
  if (a.is_constant()) throw PreconditionError("fitness is constant: singular weight undefined");
  if (!a.integrable) throw PreconditionError("weight not integrable — γ₁ undefined");
  if (rule == SingularRule::none && !a.omega0.empty())
    throw PreconditionError("node lies in the fitness maximum set but no singular rule was given");

  const auto n = static_cast<Eigen::Index>(grid.size());
  std::vector<bool> in_omega0(grid.size(), false);
  for (auto k : a.omega0) in_omega0[k] = true;

  Vector sw = Vector::Zero(n);
  for (Eigen::Index j = 0; j < n; ++j)
    if (!in_omega0[static_cast<std::size_t>(j)]) sw[j] = grid.weights()[j] / (a.sup_a - a.values[j]);

  const int d = grid.dimension();
  for (auto k : a.omega0) {
    if (grid.on_boundary(k)) throw PreconditionError("fitness maximum on the domain boundary: singular rule undefined");
    const auto mi = grid.multi_index(k);
    const Point& y0 = grid.node(k);
    for (int corner = 0; corner < (1 << d); ++corner) {
      Point mid = y0;
      auto target = mi;
      double vol = 1.0;
      for (int axis = 0; axis < d; ++axis) {
        const int s = (corner >> axis) & 1 ? 1 : -1;
        const double h = grid.spacing(axis);
        mid[static_cast<std::size_t>(axis)] += s * 0.25 * h;
        target[static_cast<std::size_t>(axis)] += s;
        vol *= 0.5 * h;
      }
      const std::size_t t = grid.flat_index(target);
      if (in_omega0[t]) throw PreconditionError("adjacent maximizer nodes are not supported by the singular rule");
      const double gap = a.sup_a - a.eval(mid);
      if (!(gap > 0.0)) throw PreconditionError("singular rule: weight not finite at sub-cell midpoint");
      sw[static_cast<Eigen::Index>(t)] += vol / gap;
    }
  }

  SingularOperator op;
  op.matrix = M.values * sw.asDiagonal();
  op.singular_weights = sw;
  op.lebesgue = sw.cwiseProduct((a.sup_a - a.values.array()).matrix());
  op.omega0 = a.omega0;
  return op;
}

// -- assumption checks -------------------------------------------------------

struct AssumptionCheck {
  std::string name;
  bool pass = false;
  double margin = 0.0;
  std::string note;
};

struct AssumptionReport {
  std::vector<AssumptionCheck> checks;

  bool all_pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.pass; });
  }
  const AssumptionCheck* find(const std::string& name) const {
    for (const auto& c : checks)
      if (c.name == name) return &c;
    return nullptr;
  }
};

/// Evaluates the standing hypotheses. Never throws; failures are reported.
inline AssumptionReport check_assumptions(const ModelConfig& config, const PhenotypeGrid& grid, const KernelMatrix& M,
                                          const KernelMatrix& K, const FitnessProfile& a) {
  AssumptionReport r;
  const double w_dev = [&] {
    const Eigen::RowVectorXd cs = grid.weights().transpose() * M.values;
    return (cs.array() - 1.0).abs().maxCoeff();
  }();
  r.checks.push_back({"mutation_kernel", M.lower_bound > 0.0 && w_dev <= 1e-12, M.lower_bound,
                      "positive with columns integrating to one"});
  r.checks.push_back({"competition_kernel", K.lower_bound > 0.0, K.lower_bound, "0 < k0 <= K <= kinf"});
  r.checks.push_back({"fitness_nonconstant", !a.is_constant() && a.sup_a > 0.0, a.sup_a - a.inf_a,
                      "a non-constant with sup a > 0"});

  bool interior = !a.omega0.empty();
  for (auto k : a.omega0) interior = interior && !grid.on_boundary(k);
  r.checks.push_back({"maximizers_interior", interior, static_cast<double>(a.omega0.size()),
                      interior ? "maximizer set compactly inside the domain" : "maximizer on the boundary (flagged)"});

  const double bound = a.sup_a - a.boundary_sup_positive(grid);
  r.checks.push_back({"mutation_rate_bound", config.mu > 0.0 && config.mu < bound, bound - config.mu,
                      "0 < mu < sup a - sup over boundary of a+"});

  r.checks.push_back({"weight_integrable", a.integrable, 0.0, "1/(sup a - a) integrable (carried by preset)"});

  // K(y0, z) <= K(y, z) for all y, z
  double dom_margin = std::numeric_limits<double>::infinity();
  if (!a.omega0.empty()) {
    const auto row0 = K.values.row(static_cast<Eigen::Index>(a.omega0.front()));
    for (Eigen::Index i = 0; i < K.values.rows(); ++i)
      dom_margin = std::min(dom_margin, (K.values.row(i) - row0).minCoeff());
  }
  r.checks.push_back({"competition_dominance", a.integrable && dom_margin >= -1e-14, dom_margin,
                      "maximizer trait suffers least from competition"});
  return r;
}

}  // namespace phenowave
