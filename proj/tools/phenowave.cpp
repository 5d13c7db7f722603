// phenowave command-line front end.

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "phenowave/phenowave.hpp"

namespace fs = std::filesystem;
using namespace phenowave;

namespace {

struct Overrides {
  std::optional<double> eps, beta, mu, l, tau, tmax, dt, c;
};

struct PlotEntry {
  std::string file;
  std::string columns;
  std::string title;
};

struct Run {
  std::string subcommand;
  std::string config_path;
  fs::path out;
  bool gnuplot = false;
  Overrides ov;
  ModelConfig cfg;
  json resolved;
  std::vector<PlotEntry> plots;
  std::ostringstream summary;

  std::optional<PhenotypeGrid> grid_;
  std::optional<Kernels> kernels_;

  const PhenotypeGrid& grid() {
    if (!grid_) grid_ = cfg.make_grid();
    return *grid_;
  }
  const Kernels& kernels() {
    if (!kernels_) kernels_ = assemble_kernels(cfg, grid());
    return *kernels_;
  }

  void line(const std::string& key, double v) { summary << key << ": " << format_double(v) << '\n'; }
  void line(const std::string& key, const std::string& v) { summary << key << ": " << v << '\n'; }
  void plot(std::string file, std::string columns, std::string title) {
    plots.push_back({std::move(file), std::move(columns), std::move(title)});
  }
};

std::vector<std::string> node_header(const PhenotypeGrid& g) {
  return g.dimension() == 1 ? std::vector<std::string>{"y"} : std::vector<std::string>{"y", "y2"};
}

void node_cells(const PhenotypeGrid& g, std::size_t i, std::vector<CsvCell>& row) {
  row.push_back(g.node(i)[0]);
  if (g.dimension() == 2) row.push_back(g.node(i)[1]);
}

std::vector<std::string> with(std::vector<std::string> head, std::initializer_list<std::string> tail) {
  head.insert(head.end(), tail);
  return head;
}

/// Nodal profile: density plus node mass, with atoms marked.
void write_profile(Run& run, const std::string& name, const MeasureProfile& p) {
  const auto& g = run.grid();
  CsvWriter csv(run.out / name, with(node_header(g), {"density", "node_mass", "kind"}));
  const Vector mass = p.node_masses();
  for (std::size_t i = 0; i < g.size(); ++i) {
    std::vector<CsvCell> row;
    node_cells(g, i, row);
    row.push_back(p.ac[static_cast<Eigen::Index>(i)]);
    row.push_back(mass[static_cast<Eigen::Index>(i)]);
    row.push_back(std::string("density"));
    csv.row(row);
  }
  for (const auto& at : p.atoms) {
    std::vector<CsvCell> row;
    node_cells(g, at.node, row);
    row.push_back(std::numeric_limits<double>::quiet_NaN());
    row.push_back(at.mass);
    row.push_back(std::string("atom"));
    csv.row(row);
  }
  if (g.dimension() == 1) run.plot(name, "1:2", name);
}

nlohmann::json atoms_json(const PhenotypeGrid& g, const MeasureProfile& p) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& at : p.atoms) a.push_back({{"node", at.node}, {"y", g.node(at.node)[0]}, {"mass", at.mass}});
  return a;
}

/// Wave field as x,y,value,kind, thinned in x to about 400 columns.
void write_wave(Run& run, const std::string& name, const WaveProfile& w) {
  const auto& g = run.grid();
  std::vector<std::string> head{"x"};
  for (const auto& h : node_header(g)) head.push_back(h);
  head.insert(head.end(), {"value", "kind"});
  CsvWriter csv(run.out / name, head);
  const std::size_t stride = std::max<std::size_t>(1, (w.nx() + 399) / 400);
  for (std::size_t j = 0; j < w.nx(); j += stride) {
    const MeasureProfile s = w.slice(g, j);
    for (std::size_t i = 0; i < g.size(); ++i) {
      std::vector<CsvCell> row{w.x[static_cast<Eigen::Index>(j)]};
      node_cells(g, i, row);
      row.push_back(s.ac[static_cast<Eigen::Index>(i)]);
      row.push_back(std::string("density"));
      csv.row(row);
    }
    for (const auto& at : s.atoms) {
      std::vector<CsvCell> row{w.x[static_cast<Eigen::Index>(j)]};
      node_cells(g, at.node, row);
      row.push_back(at.mass);
      row.push_back(std::string("atom"));
      csv.row(row);
    }
  }
  // slice masses for a 1-D plot
  const std::string mname = name.substr(0, name.find('.')) + "_mass.csv";
  CsvWriter m(run.out / mname, {"x", "mass"});
  const Vector mass = w.slice_masses(g);
  for (Eigen::Index j = 0; j < w.x.size(); ++j) m.row({w.x[j], mass[j]});
  run.plot(mname, "1:2", "slice mass");
}

nlohmann::json wave_json(const WaveProfile& w) {
  return {{"c", w.c},
          {"kind", to_string(w.kind)},
          {"nx", w.nx()},
          {"hx", w.hx()},
          {"l", w.x.size() ? w.x[w.x.size() - 1] : 0.0},
          {"residual", json_number(w.residual)},
          {"iterations", w.iterations},
          {"unconverged", w.unconverged}};
}

// -- subcommands ---------------------------------------------------------------

int cmd_eigen(Run& run) {
  const auto& g = run.grid();
  const auto& k = run.kernels();
  const double eps = run.cfg.eps;
  PerronOptions opt;
  opt.tol = run.cfg.tol.eigen;
  opt.max_iter = run.cfg.tol.eigen_max_iter;
  const SpectralResult r = eps > 0.0 ? eigen_regularized(g, k.M, k.a, run.cfg.mu, eps, opt)
                                     : eigen_nonlocal(g, k.M, k.a, run.cfg.mu, opt);
  nlohmann::json j{{"lambda", r.lambda},
                   {"residual", r.residual},
                   {"iterations", r.iterations},
                   {"integral_identity", r.integral_identity},
                   {"normalization", to_string(r.normalization)},
                   {"eps", eps},
                   {"mu", run.cfg.mu},
                   {"grid_size", r.grid_size},
                   {"c_star", r.lambda < 0.0 ? json(minimal_speed(r.lambda)) : json(nullptr)}};
  write_json(run.out / "eigen.json", j);
  write_profile(run, "phi.csv", MeasureProfile::from_density(g, r.phi));
  run.line("lambda", r.lambda);
  run.line("residual", r.residual);
  return 0;
}

int cmd_mucrit(Run& run) {
  const auto& k = run.kernels();
  PerronOptions opt;
  opt.tol = run.cfg.tol.eigen;
  const CriticalRate r = gamma1_and_mucrit(run.grid(), k.M, k.a, opt);
  write_json(run.out / "mucrit.json",
             {{"gamma1", r.gamma1}, {"mu0", r.mu0}, {"residual", r.residual}, {"iterations", r.iterations},
              {"grid_size", r.grid_size}});
  run.line("gamma1", r.gamma1);
  run.line("mu0", r.mu0);
  return 0;
}

int cmd_classify(Run& run) {
  const auto& g = run.grid();
  const auto& k = run.kernels();
  const CriticalRate cr = gamma1_and_mucrit(g, k.M, k.a);
  const double lambda1 = eigen_nonlocal(g, k.M, k.a, run.cfg.mu).lambda;
  const Trichotomy t = classify_trichotomy(cr.gamma1, run.cfg.mu, lambda1, k.a.sup_a, run.cfg.tol.trichotomy_band);
  const AssumptionReport ar = check_assumptions(run.cfg, g, k.M, k.K, k.a);
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : ar.checks)
    checks.push_back({{"name", c.name}, {"pass", c.pass}, {"margin", json_number(c.margin)}, {"note", c.note}});
  write_json(run.out / "classify.json", {{"regime", to_string(t.label)},
                                         {"mu_gamma1", t.mu_gamma},
                                         {"gamma1", cr.gamma1},
                                         {"mu0", cr.mu0},
                                         {"lambda1", lambda1},
                                         {"lambda_gap", t.lambda_gap},
                                         {"consistent", t.consistent},
                                         {"assumptions", checks}});
  run.line("regime", to_string(t.label));
  run.line("mu*gamma1", t.mu_gamma);
  run.line("lambda1", lambda1);
  run.line("consistent", t.consistent ? "yes" : "no");
  return 0;
}

int cmd_singular_eigvec(Run& run) {
  const auto& g = run.grid();
  const auto& k = run.kernels();
  const SingularEigenvector s = singular_eigenvector(g, k.M, k.a, run.cfg.mu);
  write_json(run.out / "singular.json", {{"lambda", s.lambda},
                                         {"gamma1", s.gamma1},
                                         {"atom_mass", s.atom_mass},
                                         {"ac_mass", s.phi.ac_mass()},
                                         {"atoms", atoms_json(g, s.phi)},
                                         {"weak_residual", weak_eigen_residual(g, k.M, k.a, run.cfg.mu, s.lambda, s.phi,
                                                                               y_test_functions(g))}});
  write_profile(run, "phi.csv", s.phi);
  run.line("lambda", s.lambda);
  run.line("atom_mass", s.atom_mass);
  return 0;
}

int cmd_stationary(Run& run) {
  const auto& g = run.grid();
  const auto& k = run.kernels();
  StationaryOptions opt;
  opt.tol = run.cfg.tol.newton;
  opt.max_iter = run.cfg.tol.newton_max_iter;
  const StationaryResult r = solve_stationary(g, k.M, k.K, k.a, run.cfg.mu, run.cfg.eps, run.cfg.beta, opt);
  const MassBoundsReport mb = mass_bounds(r.p, r.lambda_eps, k.a.sup_a, k.K.lower_bound, k.K.upper_bound);
  write_json(run.out / "stationary.json", {{"lambda_eps", r.lambda_eps},
                                           {"residual", r.residual},
                                           {"iterations", r.iterations},
                                           {"zero_branch", r.zero_branch},
                                           {"used_homotopy", r.used_homotopy},
                                           {"mass", r.p.total_mass()},
                                           {"sup", r.p.ac.maxCoeff()},
                                           {"mass_bounds",
                                            {{"lower", mb.lower},
                                             {"upper", mb.upper},
                                             {"valid", mb.valid},
                                             {"note", mb.note}}}});
  write_profile(run, "p.csv", r.p);
  run.line("mass", r.p.total_mass());
  run.line("residual", r.residual);
  run.line("mass_bounds", mb.note);
  return 0;
}

int cmd_visc_sweep(Run& run) {
  const auto& g = run.grid();
  const auto& k = run.kernels();
  std::vector<double> eps_list{1e-1, 1e-2, 1e-3, 1e-4};
  if (run.ov.eps) {
    if (!(*run.ov.eps > 0.0)) throw PreconditionError("visc-sweep needs eps > 0");
    eps_list.clear();
    for (int d = 1; std::pow(10.0, -d) >= *run.ov.eps * (1.0 - 1e-9); ++d) eps_list.push_back(std::pow(10.0, -d));
    if (eps_list.empty() || std::abs(eps_list.back() - *run.ov.eps) > 1e-12 * *run.ov.eps) eps_list.push_back(*run.ov.eps);
  }
  const SweepReport rep = viscosity_sweep(g, k.M, k.K, k.a, run.cfg.mu, run.cfg.beta, eps_list);
  const ConcentrationVerdict v = concentration_detector(rep, k.K, k.a);
  CsvWriter csv(run.out / "sweep.csv", {"eps", "lambda_eps", "gap", "mass", "sup", "window_fraction", "residual", "ok"});
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : rep.entries) {
    csv.row({e.eps, e.lambda_eps, std::abs(e.lambda_eps - rep.lambda1), e.mass, e.sup, e.window_fraction, e.residual,
             static_cast<long long>(e.ok)});
    entries.push_back({{"eps", e.eps}, {"ok", e.ok}, {"error", e.error}});
  }
  run.plot("sweep.csv", "1:3", "|lambda_eps - lambda1|");
  write_json(run.out / "sweep.json", {{"lambda1", rep.lambda1},
                                      {"label", v.label},
                                      {"fractions_nondecreasing", v.fractions_nondecreasing},
                                      {"final_fraction", v.final_fraction},
                                      {"pointwise_ok", v.pointwise_ok},
                                      {"entries", entries}});
  if (rep.limit) write_profile(run, "limit.csv", *rep.limit);
  run.line("lambda1", rep.lambda1);
  run.line("label", v.label);
  return 0;
}

int cmd_rho_beta(Run& run) {
  const auto& k = run.kernels();
  std::optional<double> eps;
  if (run.cfg.eps > 0.0) eps = run.cfg.eps;
  const DerivedConstants c = rho_beta_constant(run.grid(), k.M, k.K, k.a, run.cfg.mu, run.cfg.beta, std::nullopt, eps);
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  write_json(run.out / "rho_beta.json", {{"beta0", c.beta0},
                                         {"delta", c.delta},
                                         {"delta_cap", c.delta_cap},
                                         {"lambda1", c.lambda1},
                                         {"lambda_delta", c.lambda_delta},
                                         {"eta", c.eta},
                                         {"rho_beta", c.rho_beta},
                                         {"lambda_eps", opt(c.lambda_eps)},
                                         {"l0", opt(c.l0)},
                                         {"tau0", opt(c.tau0)},
                                         {"c_star_eps", opt(c.c_star_eps)}});
  run.line("beta0", c.beta0);
  run.line("rho_beta", c.rho_beta);
  return 0;
}

WaveSetup wave_setup(Run& run) {
  const auto& k = run.kernels();
  return prepare_wave(run.grid(), k.M, k.K, k.a, run.cfg.mu, run.cfg.eps, run.cfg.beta);
}

double wave_tau(const Run& run, const WaveSetup& s) { return run.cfg.wave.tau.value_or(0.5 * s.tau0); }

nlohmann::json setup_json(const WaveSetup& s) {
  return {{"lambda_eps", s.lambda_eps}, {"c_star", s.c_star}, {"l0", s.l0}, {"tau0", s.tau0}, {"beta0", s.beta0}};
}

int cmd_wave_box(Run& run) {
  const WaveSetup s = wave_setup(run);
  const double c = run.ov.c.value_or(0.5 * s.c_star);
  const double l = run.cfg.wave.l.value_or(default_box_length(s, wave_tau(run, s)));
  BoxOptions opt;
  opt.tol = run.cfg.tol.newton;
  const WaveProfile w = solve_box(s.grid, s.M, s.K, s.a, s.mu, s.eps, s.beta, c, l, s.p, opt);
  nlohmann::json j = wave_json(w);
  j["setup"] = setup_json(s);
  j["N"] = l >= s.l0 ? json(normalization_N(s.grid, s.K, w, s.l0)) : json(nullptr);
  write_json(run.out / "wave_box.json", j);
  write_wave(run, "wave.csv", w);
  run.line("c", c);
  run.line("l", l);
  run.line("residual", w.residual);
  return 0;
}

int cmd_wave_speed(Run& run) {
  const WaveSetup s = wave_setup(run);
  const double tau = wave_tau(run, s);
  const double l = run.cfg.wave.l.value_or(std::max(default_box_length(s, tau), 4.0 * s.l0));
  const SpeedResult r = select_speed(s, tau, l);
  nlohmann::json j = wave_json(r.wave);
  j["setup"] = setup_json(s);
  j["tau"] = tau;
  j["N"] = r.n_value;
  j["N_at_zero"] = r.n_at_zero;
  j["N_at_cstar"] = r.n_at_cstar;
  j["bracket"] = {r.bracket_lo, r.bracket_hi};
  j["solves"] = r.solves;
  j["used_scan"] = r.used_scan;
  j["method"] = r.method;
  write_json(run.out / "wave_speed.json", j);
  write_wave(run, "wave.csv", r.wave);
  run.line("c", r.c);
  run.line("c_star", s.c_star);
  run.line("l", l);
  return 0;
}

int cmd_wave_line(Run& run) {
  const WaveSetup s = wave_setup(run);
  const double tau = wave_tau(run, s);
  std::vector<double> lengths{4.0 * s.l0, 8.0 * s.l0, 16.0 * s.l0};
  if (run.cfg.wave.l) lengths = {*run.cfg.wave.l / 4.0, *run.cfg.wave.l / 2.0, *run.cfg.wave.l};
  const LineResult r = extend_line(s, tau, lengths);

  double floor = 0.0;
  try {
    floor = rho_beta_constant(s.grid, s.M, s.K, s.a, s.mu, s.beta, std::nullopt, s.eps).rho_beta;
  } catch (const PreconditionError&) {
  }
  const DiagnosticsReport d = wave_diagnostics(s.grid, s.K, s.a, r.wave, floor);

  CsvWriter csv(run.out / "line.csv", {"l", "c"});
  for (std::size_t k = 0; k < r.lengths.size(); ++k) csv.row({r.lengths[k], r.speeds[k]});
  run.plot("line.csv", "1:2", "c(l)");
  nlohmann::json j = wave_json(r.wave);
  j["setup"] = setup_json(s);
  j["tau"] = tau;
  j["lengths"] = r.lengths;
  j["speeds"] = r.speeds;
  j["cauchy_gap"] = r.cauchy_gap ? json(*r.cauchy_gap) : json(nullptr);
  j["converged"] = r.converged;
  j["diagnostics"] = {{"right_tail_mass", d.right_tail_mass},
                      {"right_tail_ok", d.right_tail_ok},
                      {"left_plateau_min", d.left_plateau_min},
                      {"rho_floor", d.rho_floor},
                      {"left_floor_ok", d.left_floor_ok},
                      {"tail_rate", json_number(d.tail_rate)},
                      {"tail_rate_expected", d.tail_rate_expected},
                      {"tail_rate_ok", d.tail_rate_ok},
                      {"max_slice_mass", d.max_slice_mass},
                      {"slice_mass_ok", d.slice_mass_ok},
                      {"limits_ok", d.limits_ok}};
  write_json(run.out / "wave_line.json", j);
  write_wave(run, "wave.csv", r.wave);
  run.line("c", r.c);
  run.line("c_star", s.c_star);
  run.line("converged", r.converged ? "yes" : "no");
  return 0;
}

/// Nonlocal eigenpair as a measure: singular construction below mu0, else the
/// Perron vector. K-mass one.
std::pair<MeasureProfile, double> kpp_eigen(Run& run) {
  const auto& g = run.grid();
  const auto& k = run.kernels();
  const CriticalRate cr = gamma1_and_mucrit(g, k.M, k.a);
  if (run.cfg.mu * cr.gamma1 < 1.0 && k.a.omega0.size() == 1) {
    const SingularEigenvector s = singular_eigenvector(g, k.M, k.a, run.cfg.mu);
    return {normalize_k_mass_one(k.K, s.phi), s.lambda};
  }
  const SpectralResult r = eigen_nonlocal(g, k.M, k.a, run.cfg.mu);
  return {normalize_k_mass_one(k.K, as_profile(g, r)), r.lambda};
}

KppFront front_for(Run& run, double lambda1) {
  if (!(lambda1 < 0.0)) throw PreconditionError("front needs lambda1 < 0");
  const double r = -lambda1;
  const double c = run.ov.c.value_or(2.0 * std::sqrt(r));
  const double L = run.cfg.wave.l.value_or(60.0 / std::sqrt(r));
  return kpp_front(r, c, L, 0.5 * r);
}

void write_front(Run& run, const KppFront& f) {
  CsvWriter csv(run.out / "front.csv", {"x", "rho"});
  for (Eigen::Index j = 0; j < f.x.size(); ++j) csv.row({f.x[j], f.rho[j]});
  run.plot("front.csv", "1:2", "rho");
}

nlohmann::json front_json(const KppFront& f) {
  return {{"r", f.r},          {"c", f.c},
          {"pin", f.pin},      {"L", f.x[f.x.size() - 1]},
          {"residual", f.residual}, {"decay_rate", f.decay_rate},
          {"decay_expected", f.c / 2.0}, {"monotone", f.monotone}};
}

int cmd_kpp_front(Run& run) {
  const auto& k = run.kernels();
  const double lambda1 = eigen_nonlocal(run.grid(), k.M, k.a, run.cfg.mu).lambda;
  const KppFront f = front_for(run, lambda1);
  write_json(run.out / "kpp_front.json", front_json(f));
  write_front(run, f);
  run.line("r", f.r);
  run.line("c", f.c);
  run.line("decay_rate", f.decay_rate);
  return 0;
}

int cmd_singular_wave(Run& run) {
  const auto& g = run.grid();
  const auto& k = run.kernels();
  const auto [phi, lambda1] = kpp_eigen(run);
  const KppFront f = front_for(run, lambda1);
  const WaveProfile w = separated_wave(k.K, phi, f);
  const double res = weak_residual(g, k.M, k.K, k.a, run.cfg.mu, w, default_test_functions(g, w.x));
  nlohmann::json j = wave_json(w);
  j["lambda1"] = lambda1;
  j["front"] = front_json(f);
  j["weak_residual"] = res;
  j["atoms"] = atoms_json(g, phi);
  write_json(run.out / "singular_wave.json", j);
  write_wave(run, "wave.csv", w);
  write_front(run, f);
  run.line("c", w.c);
  run.line("atom_mass", phi.atom_mass());
  run.line("weak_residual", res);
  return 0;
}

int cmd_simulate(Run& run) {
  const auto& k = run.kernels();
  const ParabolicModel model{run.grid(), k.M, k.K, k.a, run.cfg.mu, run.cfg.eps, run.cfg.beta};
  SimulationOptions opt;
  if (run.ov.tmax) opt.tmax = *run.ov.tmax;
  if (run.ov.dt) opt.dt = *run.ov.dt;
  const SimulationResult r = simulate(model, opt);
  const SimulationState& s = r.state;

  CsvWriter front(run.out / "front.csv", {"t", "x"});
  for (const auto& h : s.history) front.row({h.t, h.x});
  run.plot("front.csv", "1:2", "front position");
  CsvWriter mass(run.out / "final_mass.csv", {"x", "mass"});
  const Vector m = s.slice_masses(run.grid());
  for (Eigen::Index j = 0; j < s.x.size(); ++j) mass.row({s.x[j], m[j]});
  run.plot("final_mass.csv", "1:2", "mass at tmax");

  nlohmann::json est = nullptr;
  if (r.estimate)
    est = {{"c_obs", r.estimate->c},
           {"std_error", r.estimate->std_error},
           {"samples", r.estimate->samples},
           {"t_from", r.estimate->t_from},
           {"t_to", r.estimate->t_to},
           {"contaminated", r.estimate->contaminated},
           {"reliable", r.estimate->reliable}};
  write_json(run.out / "speed.json", {{"estimate", est},
                                      {"lambda_eps", r.lambda_eps},
                                      {"c_star", r.c_star},
                                      {"theta", r.theta},
                                      {"X", r.X},
                                      {"hx", s.hx},
                                      {"dt", s.dt},
                                      {"dt_cap", r.dt_cap},
                                      {"dt_halved", r.dt_halved},
                                      {"t", s.t},
                                      {"steps", s.steps},
                                      {"clipped_total", s.clipped_total},
                                      {"clipped_ratio_max", s.clipped_ratio_max},
                                      {"mass_alarms", s.mass_alarms}});
  run.line("c_star", r.c_star);
  if (r.estimate) {
    run.line("c_obs", r.estimate->c);
    run.line("std_error", r.estimate->std_error);
    run.line("contaminated", r.estimate->contaminated ? "yes" : "no");
  } else {
    run.line("c_obs", "unavailable (too few front samples)");
  }
  return 0;
}

int cmd_validate(Run& run) {
  const auto reports = perron_oracle_suite(25, 8);
  const fs::path log = run.out / "oracle_log.jsonl";
  fs::remove(log);
  int failed = 0;
  double worst = 0.0;
  for (const auto& r : reports) {
    r.append_to(log.string());
    failed += !r.pass;
    worst = std::max(worst, r.discrepancy);
  }
  write_json(run.out / "validate.json",
             {{"instances", reports.size()}, {"failed", failed}, {"max_discrepancy", worst}, {"tolerance", 1e-8}});
  run.line("instances", static_cast<double>(reports.size()));
  run.line("failed", static_cast<double>(failed));
  run.line("max_discrepancy", worst);
  return failed ? 1 : 0;
}

void write_gnuplot(const Run& run) {
  std::ofstream gp(run.out / "plot.gp");
  gp << "set datafile separator ','\nset key autotitle columnhead\nset terminal pngcairo size 900,600\n";
  for (std::size_t k = 0; k < run.plots.size(); ++k) {
    const auto& p = run.plots[k];
    gp << "set output '" << p.file.substr(0, p.file.rfind('.')) << ".png'\n";
    gp << "plot '" << p.file << "' using " << p.columns << " with lines title '" << p.title << "'\n";
  }
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<std::string, std::pair<std::string, std::function<int(Run&)>>> commands{
      {"eigen", {"principal eigenpair (viscous when eps > 0)", cmd_eigen}},
      {"mucrit", {"gamma1 and the critical mutation rate", cmd_mucrit}},
      {"classify", {"continuous / L1-critical / singular regime", cmd_classify}},
      {"singular-eigvec", {"measure eigenvector with an atom", cmd_singular_eigvec}},
      {"stationary", {"stationary solution and mass bounds", cmd_stationary}},
      {"visc-sweep", {"stationary solves along decreasing eps", cmd_visc_sweep}},
      {"rho-beta", {"derived constants of the beta model", cmd_rho_beta}},
      {"wave-box", {"box traveling wave at fixed speed", cmd_wave_box}},
      {"wave-speed", {"speed selection on one box", cmd_wave_speed}},
      {"wave-line", {"speed selection over growing boxes", cmd_wave_line}},
      {"singular-wave", {"separated wave rho(x) phi(dy)", cmd_singular_wave}},
      {"kpp-front", {"scalar KPP front", cmd_kpp_front}},
      {"simulate", {"time-dependent run and spreading speed", cmd_simulate}},
      {"validate", {"Perron solver against the determinant oracle", cmd_validate}},
  };

  CLI::App app{"Traveling waves and eigenproblems for nonlocal mutation-selection models", "phenowave"};
  app.require_subcommand(1);
  Run run;
  std::string out_dir = "./out";
  for (const auto& [name, entry] : commands) {
    CLI::App* sub = app.add_subcommand(name, entry.first);
    sub->add_option("--config", run.config_path, "JSON configuration file")->required();
    sub->add_option("--out", out_dir, "output directory")->capture_default_str();
    sub->add_option("--eps", run.ov.eps, "viscosity");
    sub->add_option("--beta", run.ov.beta, "self-competition");
    sub->add_option("--mu", run.ov.mu, "mutation rate");
    sub->add_option("--l", run.ov.l, "box half-length");
    sub->add_option("--tau", run.ov.tau, "normalization level");
    sub->add_option("--tmax", run.ov.tmax, "final time");
    sub->add_option("--dt", run.ov.dt, "time step");
    if (name == "wave-box" || name == "kpp-front" || name == "singular-wave") sub->add_option("--c", run.ov.c, "speed");
    sub->add_flag("--emit-gnuplot", run.gnuplot, "write plot.gp next to the CSV files");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (e.get_exit_code() == 0) return 0;
    if (code != 0) std::cerr << app.help();
    return 2;
  }
  run.subcommand = app.get_subcommands().front()->get_name();
  run.out = out_dir;

  const auto t0 = std::chrono::steady_clock::now();
  RunManifest manifest;
  manifest.subcommand = run.subcommand;
  manifest.config_path = run.config_path;
  manifest.output_dir = run.out.string();
  manifest.started_at = utc_now();

  int code = 0;
  try {
    fs::create_directories(run.out);
  } catch (const std::exception& e) {
    std::cerr << "error: cannot create output directory: " << e.what() << '\n';
    return 1;
  }
  try {
    run.cfg = load_config(run.config_path);
    if (run.ov.eps) run.cfg.eps = *run.ov.eps;
    if (run.ov.beta) run.cfg.beta = *run.ov.beta;
    if (run.ov.mu) run.cfg.mu = *run.ov.mu;
    if (run.ov.l) run.cfg.wave.l = *run.ov.l;
    if (run.ov.tau) run.cfg.wave.tau = *run.ov.tau;
    run.cfg.validate();
    run.resolved = config_to_json(run.cfg);
    nlohmann::json extra = nlohmann::json::object();
    if (run.ov.tmax) extra["tmax"] = *run.ov.tmax;
    if (run.ov.dt) extra["dt"] = *run.ov.dt;
    if (run.ov.c) extra["c"] = *run.ov.c;
    if (!extra.empty()) run.resolved["run"] = extra;
    manifest.config_hash = config_hash(run.resolved);
    write_json(run.out / "config.resolved.json", run.resolved);

    code = commands.at(run.subcommand).second(run);
    manifest.message = code == 0 ? "ok" : "check failed";
    std::cout << run.subcommand << '\n' << run.summary.str();
    if (run.gnuplot) write_gnuplot(run);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n\n" << app.get_subcommand(run.subcommand)->help();
    manifest.message = std::string("config error: ") + e.what();
    code = 2;
  } catch (const SolverError& e) {
    std::cerr << "solver error: " << e.what() << " (last residual " << e.last_residual() << ")\n";
    manifest.message = std::string("solver error: ") + e.what();
    code = 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    manifest.message = std::string("error: ") + e.what();
    code = 1;
  }

  manifest.exit_code = code;
  manifest.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  try {
    write_json(run.out / "manifest.json", manifest.to_json());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    if (code == 0) code = 1;
  }
  return code;
}
