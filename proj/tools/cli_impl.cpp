#include "cli_impl.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fadebif/csvio.hpp"
#include "fadebif/montecarlo.hpp"
#include "fadebif/sde.hpp"

namespace fadebif::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct ConfigError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------- figures
// Scenario manifest for the reproduce-figure command.  Captions omit some
// parameter values; the "assumptions" entries record what this manifest
// pins down instead of hardcoding it silently.
const char* kFigureManifest = R"JSON({
  "figures": [
    {
      "index": 1,
      "title": "linear system, |z(t)| sample paths, panels mu=0 and mu=1",
      "t1": 1e4, "dt": 5e-3,
      "assumptions": ["caption gives only x(1)=0.4, y(1)=0; lambda = -1 and +1 per panel"],
      "panels": [
        {"label": "a_lambda_m1", "system": "builtin:ex0?lambda=-1&mu=0", "starts": [[0.4, 0.0]], "paths": 4, "statistic": "absz"},
        {"label": "a_lambda_p1", "system": "builtin:ex0?lambda=1&mu=0", "starts": [[0.4, 0.0]], "paths": 4, "statistic": "absz"},
        {"label": "b_lambda_m1", "system": "builtin:ex0?lambda=-1&mu=1", "starts": [[0.4, 0.0]], "paths": 6, "statistic": "absz"},
        {"label": "b_lambda_p1", "system": "builtin:ex0?lambda=1&mu=1", "starts": [[0.4, 0.0]], "paths": 6, "statistic": "absz"}
      ]
    },
    {
      "index": 2,
      "title": "pendulum, h=p=1, q=2: stability follows the sign of lambda",
      "t1": 1e4, "dt": 5e-3,
      "assumptions": ["lambda = -1 and +1 per panel"],
      "panels": [
        {"label": "a_lambda_m1", "system": "builtin:ex1?h=1&p=1&q=2&lambda=-1&mu=0", "starts": [[0.4, 0.0]], "paths": 4, "statistic": "absz"},
        {"label": "a_lambda_p1", "system": "builtin:ex1?h=1&p=1&q=2&lambda=1&mu=0", "starts": [[0.4, 0.0]], "paths": 4, "statistic": "absz"},
        {"label": "b_lambda_m1", "system": "builtin:ex1?h=1&p=1&q=2&lambda=-1&mu=1", "starts": [[0.4, 0.0]], "paths": 6, "statistic": "absz"},
        {"label": "b_lambda_p1", "system": "builtin:ex1?h=1&p=1&q=2&lambda=1&mu=1", "starts": [[0.4, 0.0]], "paths": 6, "statistic": "absz"}
      ]
    },
    {
      "index": 3,
      "title": "pendulum, h=q=2, p=1: critical shift and t^{-1/4} envelope",
      "t1": 1e4, "dt": 5e-3,
      "assumptions": ["panel b uses lambda=-1, mu=1; reference curve |z(1)| t^{-1/4}"],
      "panels": [
        {"label": "a_lambda_m1", "system": "builtin:ex1?h=2&p=1&q=2&lambda=-1&mu=0", "starts": [[0.4, 0.0]], "paths": 4, "statistic": "absz"},
        {"label": "a_lambda_p1", "system": "builtin:ex1?h=2&p=1&q=2&lambda=1&mu=0", "starts": [[0.4, 0.0]], "paths": 4, "statistic": "absz"},
        {"label": "b_lambda_m1", "system": "builtin:ex1?h=2&p=1&q=2&lambda=-1&mu=1", "starts": [[0.4, 0.0]], "paths": 6, "statistic": "absz",
         "reference": {"type": "power", "coefficient": 0.4, "exponent": -0.25}}
      ]
    },
    {
      "index": 4,
      "title": "ex2, a2=1, a4=-5/4, b1=4, b2=1: weighted stability, t^{-3/8} envelope",
      "t1": 1e4, "dt": 5e-3,
      "assumptions": [],
      "panels": [
        {"label": "main", "system": "builtin:ex2?a2=1&a4=-1.25&b1=4&b2=1", "starts": [[0.4, 0.0]], "paths": 6, "statistic": "absz",
         "reference": {"type": "power", "coefficient": 0.4, "exponent": -0.375}}
      ]
    },
    {
      "index": 5,
      "title": "ex2, a2=a4=0.1, b1=0, b2=1: instability",
      "t1": 1e4, "dt": 5e-3,
      "assumptions": [],
      "panels": [
        {"label": "main", "system": "builtin:ex2?a2=0.1&a4=0.1&b1=0&b2=1", "starts": [[0.4, 0.0]], "paths": 6, "statistic": "absz"}
      ]
    },
    {
      "index": 6,
      "title": "ex2, a2=-2, a4=-1/4, b1=1, b2=1: H0(z(t)) tracks u* t^{-1/2}",
      "t1": 1e4, "dt": 5e-3,
      "assumptions": ["'various initial data' pinned to x(1) in {0.2, 0.4, 0.8, 1.2}, y(1)=0"],
      "panels": [
        {"label": "main", "system": "builtin:ex2?a2=-2&a4=-0.25&b1=1&b2=1",
         "starts": [[0.2, 0.0], [0.4, 0.0], [0.8, 0.0], [1.2, 0.0]], "paths": 2, "statistic": "energy",
         "reference": {"type": "power", "coefficient": 1.0, "exponent": -0.5}}
      ]
    },
    {
      "index": 7,
      "title": "ex3, a1=1, a2=-2, mu=1/2: paths level off near sqrt(3)",
      "t1": 1e4, "dt": 5e-3,
      "assumptions": ["initial radii pinned to |z(1)| in {0.5, 1.7, 2.5}"],
      "panels": [
        {"label": "main", "system": "builtin:ex3?a1=1&a2=-2&mu=0.5",
         "starts": [[0.5, 0.0], [1.7, 0.0], [2.5, 0.0]], "paths": 2, "statistic": "absz",
         "reference": {"type": "const", "value": 1.7320508075688772}}
      ]
    }
  ]
})JSON";

// ---------------------------------------------------------------- helpers

pert::SdeSystem load_system(const std::string& ref) {
  if (ref.rfind("builtin:", 0) == 0) return pert::system_from_uri(ref);
  std::ifstream in(ref);
  if (!in) throw Error("cannot open system definition file '" + ref + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return pert::system_from_json_text(buf.str());
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory '" + dir + "': " + ec.message());
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

// Applies --config JSON values to options the user did not pass on the
// command line.
class ConfigBinder {
 public:
  void bind(CLI::Option* opt, double* var, std::string key) {
    entries_.push_back({opt, [var](const json& v) { *var = v.get<double>(); }, std::move(key)});
  }
  void bind(CLI::Option* opt, int* var, std::string key) {
    entries_.push_back({opt, [var](const json& v) { *var = v.get<int>(); }, std::move(key)});
  }
  void bind(CLI::Option* opt, std::uint64_t* var, std::string key) {
    entries_.push_back(
        {opt, [var](const json& v) { *var = v.get<std::uint64_t>(); }, std::move(key)});
  }
  void bind(CLI::Option* opt, std::string* var, std::string key) {
    entries_.push_back(
        {opt, [var](const json& v) { *var = v.get<std::string>(); }, std::move(key)});
  }

  void apply(const json& cfg) const {
    for (const auto& e : entries_) {
      if (e.opt->count() > 0) continue;
      if (cfg.contains(e.key)) e.assign(cfg.at(e.key));
    }
    for (auto it = cfg.begin(); it != cfg.end(); ++it) {
      bool known = false;
      for (const auto& e : entries_)
        if (e.key == it.key()) known = true;
      if (!known) throw ConfigError("unknown config key '" + it.key() + "'");
    }
  }

 private:
  struct Entry {
    CLI::Option* opt;
    std::function<void(const json&)> assign;
    std::string key;
  };
  std::vector<Entry> entries_;
};

struct GlobalOptions {
  std::string config_path;
  std::string out = ".";
  std::uint64_t seed = 42;
  int jobs = 0;
  bool dry_run = false;
};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

void write_ensemble_csvs(const sde::Ensemble& ens, const std::string& dir) {
  auto hdr = csv::run_header(ens.system_name, ens.system_params, ens.config.seed, ens.config.dt);
  const char* names[2] = {"summary_absz.csv", "summary_energy.csv"};
  for (int which = 0; which < 2; ++which) {
    csv::Writer w(join_path(dir, names[which]));
    w.comment(hdr);
    w.header({"t", "q05", "q25", "q50", "q75", "q95"});
    const auto& q = which == 0 ? ens.summary.absz_q : ens.summary.energy_q;
    for (std::size_t ti = 0; ti < ens.summary.times.size(); ++ti) {
      double row[6] = {ens.summary.times[ti], q[0][ti], q[1][ti], q[2][ti], q[3][ti], q[4][ti]};
      w.row(row);
    }
  }
}

void write_path_csv(const sde::Path& path, const pert::SdeSystem& sys, double dt,
                    const std::string& file) {
  csv::Writer w(file);
  w.comment(csv::run_header(sys.name, sys.params, path.seed_used, dt));
  w.header({"t", "x", "y", "absz", "E", "phi"});
  for (std::size_t i = 0; i < path.times.size(); ++i) {
    double row[6] = {path.times[i], path.x[i],      path.y[i],
                     path.absz[i],  path.energy[i], path.phi[i]};
    w.row(row);
  }
}

std::vector<double> build_e_grid(const pert::SdeSystem& sys, const ClassifyOptions& opt,
                                 avg::FitWindow w) {
  auto grid = avg::log_spaced(w.lo, w.hi, opt.n_fit_points);
  double upper = 0.9 * sys.ham.e0() * 0.98;
  if (upper > w.hi * 1.1) {
    auto tail = avg::log_spaced(w.hi * 1.1, upper, opt.n_upper_points);
    grid.insert(grid.end(), tail.begin(), tail.end());
  }
  return grid;
}

json fit_to_json(const avg::ExponentFit& fit) {
  json j;
  j["n"] = fit.n;
  switch (fit.case_tag) {
    case avg::CaseTag::Linear: j["case"] = "LINEAR"; break;
    case avg::CaseTag::Nonlinear: j["case"] = "NONLINEAR"; break;
    case avg::CaseTag::Cycle: j["case"] = "CYCLE"; break;
    case avg::CaseTag::Degenerate: j["case"] = "DEGENERATE"; break;
  }
  if (fit.m) j["m"] = *fit.m;
  if (fit.l) j["l"] = *fit.l;
  if (fit.lambda_n) j["lambda_n"] = *fit.lambda_n;
  if (fit.lambda_nm) j["lambda_nm"] = *fit.lambda_nm;
  if (fit.lambda_nl) j["lambda_nl"] = *fit.lambda_nl;
  json slopes = json::array();
  for (auto [k, s] : fit.raw_slopes) slopes.push_back({{"k", k}, {"slope", s}});
  j["raw_slopes"] = slopes;
  return j;
}

}  // namespace

ClassificationResult classify_system(const pert::SdeSystem& sys, const ClassifyOptions& opt) {
  avg::FitWindow window = opt.fit_lo > 0.0 ? avg::FitWindow{opt.fit_lo, opt.fit_hi}
                                           : avg::default_fit_window(sys.ham.e0());
  auto e_grid = build_e_grid(sys, opt, window);
  ham::OrbitCache cache(sys.ham);
  auto tables = avg::energy_angle_coefficients(sys, cache, e_grid, opt.n_phi);
  int order = opt.order > 0 ? opt.order : sys.pert.k_max;
  ClassificationResult res;
  res.drift = avg::averaging_recursion(tables, order);
  res.fit = avg::fit_exponents(res.drift, window);
  try {
    res.noise = pert::estimate_noise_bound(sys);
  } catch (const pert::NoBound&) {
    res.noise = std::nullopt;
  }
  const int q = sys.pert.q;
  switch (res.fit.case_tag) {
    case avg::CaseTag::Linear:
      res.verdicts.push_back(cls::classify_linear(res.fit, q, res.noise, opt.kappa));
      break;
    case avg::CaseTag::Cycle: {
      res.verdicts.push_back(cls::classify_linear(res.fit, q, res.noise, opt.kappa));
      if (res.fit.n == q)
        res.verdicts.push_back(cls::classify_cycle(res.drift, res.fit, q));
      else {
        cls::StabilityVerdict v;
        v.kind = cls::Kind::Inconclusive;
        v.notes.push_back("Lambda_n changes sign but n != q; cycle theorem does not apply");
        res.verdicts.push_back(v);
      }
      break;
    }
    case avg::CaseTag::Nonlinear:
      res.verdicts.push_back(cls::classify_nonlinear(res.fit, q, res.noise, opt.kappa));
      break;
    case avg::CaseTag::Degenerate: {
      cls::StabilityVerdict v;
      v.kind = cls::Kind::Inconclusive;
      v.notes.push_back("all averaged drifts vanish up to the computed order");
      res.verdicts.push_back(v);
      break;
    }
  }
  return res;
}

namespace {

// ---------------------------------------------------------------- commands

int cmd_orbit(const GlobalOptions& g, const std::string& system_ref, double emin, double emax,
              int n_energies, int n_phi, bool dry_run) {
  auto sys = load_system(system_ref);
  if (emin <= 0.0) emin = emax / n_energies;
  if (dry_run) {
    std::cout << "orbit: system=" << sys.name << " emin=" << emin << " emax=" << emax
              << " energies=" << n_energies << " n_phi=" << n_phi << " out=" << g.out << "\n";
    return 0;
  }
  ensure_dir(g.out);
  std::vector<double> e_grid(static_cast<std::size_t>(n_energies));
  for (int i = 0; i < n_energies; ++i)
    e_grid[static_cast<std::size_t>(i)] =
        emin + (emax - emin) * static_cast<double>(i) / std::max(1, n_energies - 1);

  auto curve = ham::frequency_curve(sys.ham, e_grid, n_phi);
  {
    csv::Writer w(join_path(g.out, "frequency.csv"));
    w.comment(csv::run_header(sys.name, sys.params, g.seed, 0.0));
    w.header({"E", "nu"});
    for (auto [e, nu] : curve) {
      double row[2] = {e, nu};
      w.row(row);
    }
  }
  for (std::size_t i = 0; i < e_grid.size(); ++i) {
    auto orbit = ham::compute_orbit(sys.ham, e_grid[i], n_phi);
    std::ostringstream name;
    name << "orbit_" << i << ".csv";
    csv::Writer w(join_path(g.out, name.str()));
    w.comment("E=" + csv::format_double(orbit.energy) + " T=" + csv::format_double(orbit.period) +
              " nu=" + csv::format_double(orbit.frequency));
    w.header({"phi", "x", "y", "dEx", "dEy"});
    for (int ip = 0; ip < orbit.n_phi; ++ip) {
      double row[5] = {kTwoPi * ip / orbit.n_phi, orbit.x[ip], orbit.y[ip], orbit.dex[ip],
                       orbit.dey[ip]};
      w.row(row);
    }
  }
  // small-E behavior against the nu(E) = 1 - E/8 + O(E^2) expansion
  double e_small = std::min(0.2, 0.1 * emax);
  double nu_small = ham::compute_orbit(sys.ham, e_small, n_phi).frequency;
  std::cout << "nu(" << e_small << ") = " << nu_small << ", 1 - E/8 = " << 1.0 - e_small / 8.0
            << ", difference = " << nu_small - (1.0 - e_small / 8.0) << "\n";
  std::cout << "wrote " << e_grid.size() << " orbit files and frequency.csv to " << g.out << "\n";
  return 0;
}

int cmd_average(const GlobalOptions& g, const std::string& system_ref, ClassifyOptions opt,
                bool dry_run) {
  auto sys = load_system(system_ref);
  if (dry_run) {
    std::cout << "average: system=" << sys.name << " order="
              << (opt.order > 0 ? opt.order : sys.pert.k_max) << " out=" << g.out << "\n";
    return 0;
  }
  ensure_dir(g.out);
  auto res = classify_system(sys, opt);
  for (int k = 1; k <= res.drift.order_N; ++k) {
    std::ostringstream name;
    name << "lambda_" << k << ".csv";
    csv::Writer w(join_path(g.out, name.str()));
    w.comment(csv::run_header(sys.name, sys.params, g.seed, 0.0));
    w.header({"E", "Lambda_" + std::to_string(k)});
    for (std::size_t i = 0; i < res.drift.e_grid.size(); ++i) {
      double row[2] = {res.drift.e_grid[i], res.drift.lambda[static_cast<std::size_t>(k - 1)][i]};
      w.row(row);
    }
  }
  std::ofstream fit_out(join_path(g.out, "exponent_fit.json"));
  fit_out << fit_to_json(res.fit).dump(2) << "\n";
  std::cout << "wrote lambda_k.csv (k <= " << res.drift.order_N << ") and exponent_fit.json to "
            << g.out << "\n";
  return 0;
}

int cmd_classify(const GlobalOptions& g, const std::string& system_ref, ClassifyOptions opt,
                 bool dry_run) {
  auto sys = load_system(system_ref);
  if (dry_run) {
    std::cout << "classify: system=" << sys.name << " kappa=" << opt.kappa << " out=" << g.out
              << "\n";
    return 0;
  }
  ensure_dir(g.out);
  auto res = classify_system(sys, opt);

  json report;
  report["system"] = sys.name;
  report["params"] = sys.params;
  report["fit"] = fit_to_json(res.fit);
  if (res.noise)
    report["noise"] = {{"mu", res.noise->mu}, {"sigma", res.noise->sigma}};
  json verdicts = json::array();
  for (const auto& v : res.verdicts) verdicts.push_back(json::parse(cls::to_json(v)));
  report["verdicts"] = verdicts;
  std::ofstream out(join_path(g.out, "verdict.json"));
  out << report.dump(2) << "\n";

  std::cout << "system " << sys.name << ": n=" << res.fit.n;
  if (res.fit.lambda_n) std::cout << ", lambda_n=" << *res.fit.lambda_n;
  if (res.fit.lambda_nm) std::cout << ", lambda_nm=" << *res.fit.lambda_nm;
  if (res.fit.lambda_nl) std::cout << ", lambda_nl=" << *res.fit.lambda_nl;
  if (res.noise) std::cout << ", noise mu=" << res.noise->mu << " sigma=" << res.noise->sigma;
  std::cout << "\n";
  bool conclusive = false;
  for (const auto& v : res.verdicts) {
    std::cout << "  " << cls::kind_name(v.kind);
    if (!v.theorem.empty()) std::cout << " (" << v.theorem << ")";
    if (v.cycle_energy) std::cout << ", c=" << *v.cycle_energy;
    if (v.u_star) std::cout << ", u*=" << *v.u_star;
    if (v.weight)
      std::cout << ", weight gamma_" << v.weight->n << "^" << v.weight->prefactor
                << (v.weight->extra != 0.0 ? " * t^{theta/2}" : "");
    for (const auto& note : v.notes) std::cout << "; " << note;
    std::cout << "\n";
    if (v.kind != cls::Kind::Inconclusive) conclusive = true;
  }
  return conclusive ? 0 : 4;
}

int cmd_simulate(const GlobalOptions& g, const std::string& system_ref, double t1, double dt,
                 double z0x, double z0y, int n_paths, int record_stride,
                 const std::string& scheme, bool dry_run) {
  auto sys = load_system(system_ref);
  sde::EnsembleConfig cfg;
  cfg.t1 = t1;
  cfg.dt = dt;
  cfg.seed = g.seed;
  cfg.z0 = {z0x, z0y};
  cfg.record_stride = record_stride;
  cfg.n_paths = n_paths;
  cfg.jobs = g.jobs;
  if (scheme == "em")
    cfg.scheme = sde::Scheme::EulerMaruyama;
  else if (scheme == "split")
    cfg.scheme = sde::Scheme::SplitStep;
  else
    throw Error("unknown scheme '" + scheme + "' (use em or split)");
  if (dry_run) {
    std::cout << "simulate: system=" << sys.name << " t1=" << t1 << " dt=" << dt
              << " paths=" << n_paths << " seed=" << g.seed << " scheme=" << scheme
              << " out=" << g.out << "\n";
    return 0;
  }
  ensure_dir(g.out);
  if (n_paths == 1) {
    auto path = sde::simulate_path(sys, cfg);
    write_path_csv(path, sys, dt, join_path(g.out, "path.csv"));
    std::cout << "wrote path.csv (" << path.times.size() << " rows)"
              << (path.flags.truncated() ? " [truncated]" : "") << "\n";
  } else {
    auto ens = sde::simulate_ensemble(sys, cfg);
    write_ensemble_csvs(ens, g.out);
    std::cout << "wrote summary_absz.csv and summary_energy.csv (" << ens.summary.times.size()
              << " rows, " << n_paths << " paths, " << ens.truncated_count << " truncated)\n";
  }
  return 0;
}

int cmd_exit_prob(const GlobalOptions& g, const std::string& system_ref, double t1, double dt,
                  double z0x, double z0y, int n_paths, double epsilon, int weight_n,
                  int weight_q, double weight_prefactor, double weight_extra, bool dry_run) {
  auto sys = load_system(system_ref);
  sde::EnsembleConfig cfg;
  cfg.t1 = t1;
  cfg.dt = dt;
  cfg.seed = g.seed;
  cfg.z0 = {z0x, z0y};
  cfg.n_paths = n_paths;
  cfg.jobs = g.jobs;
  std::optional<cls::WeightFunction> weight;
  if (weight_n > 0) {
    weight = cls::WeightFunction{weight_n, weight_q, weight_prefactor, weight_extra};
    cfg.probe_weights.push_back(*weight);
  }
  if (dry_run) {
    std::cout << "exit-prob: system=" << sys.name << " epsilon=" << epsilon
              << " paths=" << n_paths << " out=" << g.out << "\n";
    return 0;
  }
  ensure_dir(g.out);
  auto ens = sde::simulate_ensemble(sys, cfg);
  auto est = mc::exit_probability(ens, epsilon, weight);
  json j;
  j["system"] = sys.name;
  j["params"] = sys.params;
  j["epsilon"] = epsilon;
  j["probability"] = est.probability;
  j["ci"] = {est.ci.lo, est.ci.hi};
  j["n_paths"] = est.n_paths;
  j["exceedances"] = est.exceedances;
  j["truncated"] = est.truncated;
  j["seed"] = g.seed;
  j["t1"] = t1;
  j["dt"] = dt;
  if (weight)
    j["weight"] = {{"n", weight->n}, {"q", weight->q}, {"prefactor", weight->prefactor},
                   {"extra", weight->extra}};
  std::ofstream out(join_path(g.out, "exit_prob.json"));
  out << j.dump(2) << "\n";
  std::cout << "P(sup |z| gamma > " << epsilon << ") = " << est.probability << "  CI[95%] = ["
            << est.ci.lo << ", " << est.ci.hi << "]  (" << est.truncated << " truncated)\n";
  return 0;
}

int cmd_reproduce_figure(const GlobalOptions& g, int index, const std::string& manifest_path,
                         bool dry_run) {
  json manifest;
  if (!manifest_path.empty()) {
    std::ifstream in(manifest_path);
    if (!in) throw Error("cannot open manifest '" + manifest_path + "'");
    manifest = json::parse(in);
  } else {
    manifest = json::parse(kFigureManifest);
  }
  const json* figure = nullptr;
  for (const auto& f : manifest.at("figures"))
    if (f.at("index").get<int>() == index) figure = &f;
  if (!figure) throw Error("no figure with index " + std::to_string(index) + " in the manifest");

  if (dry_run) {
    std::cout << "reproduce-figure " << index << ": " << figure->at("title").get<std::string>()
              << "\n";
    for (const auto& a : figure->value("assumptions", json::array()))
      std::cout << "  assumption: " << a.get<std::string>() << "\n";
    return 0;
  }
  ensure_dir(g.out);

  const double t1 = figure->at("t1").get<double>();
  const double dt = figure->at("dt").get<double>();
  for (const auto& panel : figure->at("panels")) {
    auto sys = load_system(panel.at("system").get<std::string>());
    ham::AngleAtlas atlas(sys.ham);
    const auto starts = panel.at("starts");
    const int paths_per_start = panel.at("paths").get<int>();
    const bool energy_stat = panel.at("statistic").get<std::string>() == "energy";

    sde::SimulationConfig cfg;
    cfg.t1 = t1;
    cfg.dt = dt;
    cfg.seed = g.seed + static_cast<std::uint64_t>(index) * 1000;
    auto n_steps = static_cast<std::uint64_t>(std::ceil((t1 - cfg.t0) / dt));
    cfg.record_stride = static_cast<int>(std::max<std::uint64_t>(1, n_steps / 2000));

    std::vector<std::vector<double>> columns;
    std::vector<std::string> names{"t"};
    std::vector<double> times;
    std::uint64_t path_index = 0;
    for (std::size_t si = 0; si < starts.size(); ++si) {
      cfg.z0 = {starts[si][0].get<double>(), starts[si][1].get<double>()};
      for (int p = 0; p < paths_per_start; ++p, ++path_index) {
        auto path = sde::simulate_path(sys, cfg, path_index, &atlas);
        if (times.empty()) times = path.times;
        std::vector<double> col(times.size(), std::numeric_limits<double>::quiet_NaN());
        const auto& src = energy_stat ? path.energy : path.absz;
        for (std::size_t i = 0; i < src.size() && i < col.size(); ++i) col[i] = src[i];
        columns.push_back(std::move(col));
        std::ostringstream nm;
        nm << "s" << si << "_p" << p;
        names.push_back(nm.str());
      }
    }
    if (panel.contains("reference")) {
      const auto& ref = panel.at("reference");
      std::vector<double> col(times.size());
      if (ref.at("type") == "power") {
        double c = ref.at("coefficient").get<double>(), e = ref.at("exponent").get<double>();
        for (std::size_t i = 0; i < times.size(); ++i) col[i] = c * std::pow(times[i], e);
      } else {
        double v = ref.at("value").get<double>();
        for (std::size_t i = 0; i < times.size(); ++i) col[i] = v;
      }
      columns.push_back(std::move(col));
      names.push_back("ref");
    }
    std::ostringstream file;
    file << "fig" << index << "_" << panel.at("label").get<std::string>() << ".csv";
    csv::Writer w(join_path(g.out, file.str()));
    w.comment(csv::run_header(sys.name, sys.params, cfg.seed, dt));
    w.header(names);
    std::vector<double> row(columns.size() + 1);
    for (std::size_t i = 0; i < times.size(); ++i) {
      row[0] = times[i];
      for (std::size_t c = 0; c < columns.size(); ++c) row[c + 1] = columns[c][i];
      w.row(row);
    }
    std::cout << "wrote " << file.str() << "\n";
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"averaging-based stability analysis of asymptotically autonomous planar SDEs"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand name

  GlobalOptions g;
  app.add_option("--config", g.config_path, "JSON config file (flags take precedence)");
  auto* seed_opt = app.add_option("--seed", g.seed, "master seed");
  auto* jobs_opt = app.add_option("--jobs", g.jobs, "worker cap (0: hardware)");
  auto* out_opt = app.add_option("--out", g.out, "output directory");
  bool dry_run = false;
  app.add_flag("--dry-run", dry_run, "validate configuration and print the resolved pipeline");

  ConfigBinder binder;
  binder.bind(seed_opt, &g.seed, "seed");
  binder.bind(jobs_opt, &g.jobs, "jobs");
  binder.bind(out_opt, &g.out, "out");

  std::string system_ref;
  ClassifyOptions copt;

  auto add_system_opt = [&](CLI::App* cmd) {
    auto* o = cmd->add_option("--system", system_ref,
                              "registry URI (builtin:ex1?...) or system definition file");
    binder.bind(o, &system_ref, "system");
    return o;
  };
  auto add_classify_opts = [&](CLI::App* cmd) {
    binder.bind(cmd->add_option("--order", copt.order, "averaging order N (0: series k_max)"),
                &copt.order, "order");
    binder.bind(cmd->add_option("--nphi", copt.n_phi, "angle grid size (power of two)"),
                &copt.n_phi, "nphi");
    binder.bind(cmd->add_option("--fit-lo", copt.fit_lo, "fit window lower edge"), &copt.fit_lo,
                "fit_lo");
    binder.bind(cmd->add_option("--fit-hi", copt.fit_hi, "fit window upper edge"), &copt.fit_hi,
                "fit_hi");
    binder.bind(cmd->add_option("--kappa", copt.kappa, "weight parameter kappa in (0,1)"),
                &copt.kappa, "kappa");
  };

  // orbit
  auto* orbit = app.add_subcommand("orbit", "periodic orbits and the frequency curve");
  double emin = 0.0, emax = 1.0;
  int n_energies = 16, n_phi = 256;
  add_system_opt(orbit);
  binder.bind(orbit->add_option("--emin", emin, "lowest energy"), &emin, "emin");
  binder.bind(orbit->add_option("--emax", emax, "highest energy"), &emax, "emax");
  binder.bind(orbit->add_option("--energies", n_energies, "grid size"), &n_energies, "energies");
  binder.bind(orbit->add_option("--nphi", n_phi, "angle grid size"), &n_phi, "nphi");

  // average
  auto* average = app.add_subcommand("average", "energy-angle averaging: Lambda_k tables + fit");
  add_system_opt(average);
  add_classify_opts(average);

  // classify
  auto* classify = app.add_subcommand("classify", "stability verdict for the origin");
  add_system_opt(classify);
  add_classify_opts(classify);

  // simulate
  auto* simulate = app.add_subcommand("simulate", "seeded path / ensemble simulation");
  double t1 = 1e3, dt = 1e-3, z0x = 0.4, z0y = 0.0;
  int n_paths = 1, record_stride = 1;
  std::string scheme = "split";
  add_system_opt(simulate);
  binder.bind(simulate->add_option("--t1", t1, "end time"), &t1, "t1");
  binder.bind(simulate->add_option("--dt", dt, "step size"), &dt, "dt");
  binder.bind(simulate->add_option("--z0x", z0x, "initial x"), &z0x, "z0x");
  binder.bind(simulate->add_option("--z0y", z0y, "initial y"), &z0y, "z0y");
  binder.bind(simulate->add_option("--paths", n_paths, "number of paths"), &n_paths, "paths");
  binder.bind(simulate->add_option("--record-stride", record_stride, "output thinning"),
              &record_stride, "record_stride");
  binder.bind(simulate->add_option("--scheme", scheme, "em | split"), &scheme, "scheme");

  // exit-prob
  auto* exitp = app.add_subcommand("exit-prob", "weighted exit probability of an ensemble");
  double epsilon = 1.0;
  int weight_n = 0, weight_q = 2;
  double weight_prefactor = 0.0, weight_extra = 0.0;
  add_system_opt(exitp);
  binder.bind(exitp->add_option("--t1", t1, "end time"), &t1, "t1");
  binder.bind(exitp->add_option("--dt", dt, "step size"), &dt, "dt");
  binder.bind(exitp->add_option("--z0x", z0x, "initial x"), &z0x, "z0x");
  binder.bind(exitp->add_option("--z0y", z0y, "initial y"), &z0y, "z0y");
  binder.bind(exitp->add_option("--paths", n_paths, "number of paths"), &n_paths, "paths");
  binder.bind(exitp->add_option("--epsilon", epsilon, "exit threshold"), &epsilon, "epsilon");
  binder.bind(exitp->add_option("--weight-n", weight_n, "weight order n (0: unit weight)"),
              &weight_n, "weight_n");
  binder.bind(exitp->add_option("--weight-q", weight_q, "weight denominator q"), &weight_q,
              "weight_q");
  binder.bind(exitp->add_option("--weight-prefactor", weight_prefactor, "gamma_n exponent"),
              &weight_prefactor, "weight_prefactor");
  binder.bind(exitp->add_option("--weight-extra", weight_extra, "extra t^{x/2} exponent"),
              &weight_extra, "weight_extra");

  // reproduce-figure
  auto* fig = app.add_subcommand("reproduce-figure", "CSV bundles for the documented scenarios");
  int fig_index = 1;
  std::string manifest_path;
  fig->add_option("index", fig_index, "figure index 1..7")->required();
  binder.bind(fig->add_option("--manifest", manifest_path, "override the built-in manifest"),
              &manifest_path, "manifest");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << e.what() << "\n";
    return 2;
  }

  try {
    binder.apply(load_config(g.config_path));

    if (orbit->parsed()) return cmd_orbit(g, system_ref, emin, emax, n_energies, n_phi, dry_run);
    if (average->parsed()) return cmd_average(g, system_ref, copt, dry_run);
    if (classify->parsed()) return cmd_classify(g, system_ref, copt, dry_run);
    if (simulate->parsed())
      return cmd_simulate(g, system_ref, t1, dt, z0x, z0y, n_paths, record_stride, scheme,
                          dry_run);
    if (exitp->parsed())
      return cmd_exit_prob(g, system_ref, t1, dt, z0x, z0y, n_paths, epsilon, weight_n, weight_q,
                           weight_prefactor, weight_extra, dry_run);
    if (fig->parsed()) return cmd_reproduce_figure(g, fig_index, manifest_path, dry_run);
    return 2;
  } catch (const pert::UnknownName& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const pert::MissingParam& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const expr::ParseError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const avg::FitAmbiguous& e) {
    std::cerr << "numeric failure: " << e.what() << " (raw slope " << e.raw_slope << ")\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace fadebif::cli
