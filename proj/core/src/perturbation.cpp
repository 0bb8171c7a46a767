#include "fadebif/perturbation.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

namespace fadebif::pert {

namespace {

const std::vector<double> kCheckTimes = {1.0, 10.0, 1e3, 1e6};

double require_param(const std::map<std::string, double>& params, const std::string& key,
                     const std::string& entry) {
  auto it = params.find(key);
  if (it == params.end())
    throw MissingParam("registry entry '" + entry + "' needs parameter '" + key + "'");
  return it->second;
}

ham::LimitingHamiltonian harmonic_ham() {
  return ham::LimitingHamiltonian(expr::Expr::parse("(x^2 + y^2)/2"), 3.0, 4.0);
}

ham::LimitingHamiltonian pendulum_ham() {
  return ham::LimitingHamiltonian(expr::Expr::parse("1 - cos(x) + y^2/2"), 2.8, 1.8);
}

}  // namespace

void PerturbationSeries::validate(const ham::LimitingHamiltonian& ham) const {
  for (const auto& [k, field] : h_terms) {
    if (std::abs(field.dx.eval(0.0, 0.0)) > 1e-12 || std::abs(field.dy.eval(0.0, 0.0)) > 1e-12) {
      std::ostringstream msg;
      msg << "grad H_" << k << "(0,0) != 0";
      throw OriginViolation(msg.str());
    }
  }
  for (const auto& [k, f] : f_terms) {
    if (std::abs(f.eval(0.0, 0.0)) > 1e-12) {
      std::ostringstream msg;
      msg << "F_" << k << "(0,0) != 0";
      throw OriginViolation(msg.str());
    }
  }
  for (const auto& [ijk, b] : b_terms) {
    if (std::abs(b.eval(0.0, 0.0)) > 1e-12) {
      std::ostringstream msg;
      msg << "B_" << ijk[0] << "," << ijk[1] << "," << ijk[2] << "(0,0) != 0";
      throw OriginViolation(msg.str());
    }
  }
  // Grid Lipschitz estimate of the induced coefficients; a check, not a proof.
  const double r = ham.r();
  const double h = 1e-5 * r;
  double worst = 0.0;
  auto probe = [&](const expr::Expr& e) {
    const int n = 41;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        double x = -r + 2.0 * r * i / (n - 1);
        double y = -r + 2.0 * r * j / (n - 1);
        double gx = (e.eval(x + h, y) - e.eval(x - h, y)) / (2.0 * h);
        double gy = (e.eval(x, y + h) - e.eval(x, y - h)) / (2.0 * h);
        double g = std::hypot(gx, gy);
        if (!std::isfinite(g)) worst = std::numeric_limits<double>::infinity();
        worst = std::max(worst, g);
      }
    }
  };
  for (const auto& [k, field] : h_terms) {
    probe(field.dx);
    probe(field.dy);
  }
  for (const auto& [k, f] : f_terms) probe(f);
  for (const auto& [ijk, b] : b_terms) probe(b);
  if (!std::isfinite(worst) || worst > 1e8) {
    std::ostringstream msg;
    msg << "grid Lipschitz estimate diverges (max |grad| = " << worst << ")";
    throw LipschitzViolation(msg.str());
  }
}

void SdeSystem::build_plan() {
  auto plan = std::make_shared<Plan>();
  for (const auto& [k, field] : pert.h_terms) {
    if (k > pert.k_max) continue;
    plan->terms.push_back({k, 0, field.dy});
    plan->terms.push_back({k, 1, expr::Expr::constant(0.0) - field.dx});
    plan->k_used = std::max(plan->k_used, k);
  }
  for (const auto& [k, f] : pert.f_terms) {
    if (k > pert.k_max) continue;
    plan->terms.push_back({k, 1, f});
    plan->k_used = std::max(plan->k_used, k);
  }
  for (const auto& [ijk, b] : pert.b_terms) {
    if (ijk[2] > pert.k_max) continue;
    plan->terms.push_back({ijk[2], 2 + (ijk[0] - 1) * 2 + (ijk[1] - 1), b});
    plan->k_used = std::max(plan->k_used, ijk[2]);
  }
  plan_ = std::move(plan);
}

void SdeSystem::pert_eval(const Vec2& z, double t, Vec2& drift_out, Mat2& diff_out) const {
  drift_out = {};
  diff_out = {};
  const Plan& plan = *plan_;
  if (plan.terms.empty()) return;
  double u;
  switch (pert.q) {
    case 1: u = 1.0 / t; break;
    case 2: u = 1.0 / std::sqrt(t); break;
    case 4: u = 1.0 / std::sqrt(std::sqrt(t)); break;
    default: u = std::pow(t, -1.0 / static_cast<double>(pert.q));
  }
  double upow[16];
  upow[0] = 1.0;
  for (int k = 1; k <= plan.k_used; ++k) upow[k] = upow[k - 1] * u;
  double slots[6] = {0, 0, 0, 0, 0, 0};
  for (const auto& term : plan.terms)
    slots[term.slot] += upow[term.k] * term.field.eval(z.x, z.y);
  drift_out = {slots[0], slots[1]};
  diff_out = {slots[2], slots[3], slots[4], slots[5]};
}

Vec2 SdeSystem::drift(const Vec2& z, double t) const {
  Vec2 d = pert_drift(z, t);
  Vec2 g = ham.grad(z.x, z.y);
  return {g.y + d.x, -g.x + d.y};
}

Vec2 SdeSystem::pert_drift(const Vec2& z, double t) const {
  Vec2 d;
  Mat2 m;
  pert_eval(z, t, d, m);
  return d;
}

Mat2 SdeSystem::diffusion(const Vec2& z, double t) const {
  Vec2 d;
  Mat2 m;
  pert_eval(z, t, d, m);
  return m;
}

SdeSystem assemble_system(ham::LimitingHamiltonian ham, PerturbationSeries pert) {
  ham.validate();
  pert.validate(ham);
  if (pert.k_max > 12) throw Error("k_max too large (limit 12)");
  SdeSystem sys{std::move(ham), std::move(pert)};
  sys.build_plan();
  for (double t : kCheckTimes) {
    Vec2 b = sys.drift({0.0, 0.0}, t);
    Mat2 B = sys.diffusion({0.0, 0.0}, t);
    if (b.norm() > 1e-12 || std::sqrt(B.trace_tt()) > 1e-12)
      throw OriginViolation("assembled drift/diffusion do not vanish at the origin");
  }
  return sys;
}

NoiseBound estimate_noise_bound(const SdeSystem& sys, const NoiseGrid& grid) {
  const int q = sys.pert.q;
  const int k_hi = 2 * sys.pert.k_max;
  const double r = sys.ham.r();

  std::vector<double> times(grid.n_time);
  for (int i = 0; i < grid.n_time; ++i)
    times[i] = grid.t_lo * std::pow(grid.t_hi / grid.t_lo,
                                    static_cast<double>(i) / (grid.n_time - 1));

  // ratio(z) = tr(B^T B) / |z|^2 per time slice, max over the spatial grid
  std::vector<double> slice_max(times.size(), 0.0);
  bool any_noise = false;
  for (std::size_t ti = 0; ti < times.size(); ++ti) {
    double m = 0.0;
    for (int ri = 0; ri < grid.n_radial; ++ri) {
      double rad = 1e-6 * std::pow(r / 1e-6, static_cast<double>(ri) / (grid.n_radial - 1));
      for (int ai = 0; ai < grid.n_angle; ++ai) {
        double ang = kTwoPi * ai / grid.n_angle;
        Vec2 z{rad * std::cos(ang), rad * std::sin(ang)};
        double tr = sys.diffusion(z, times[ti]).trace_tt();
        m = std::max(m, tr / (rad * rad));
      }
    }
    slice_max[ti] = m;
    if (m > 0.0) any_noise = true;
  }

  NoiseBound best;
  best.q = q;
  if (!any_noise) {  // zero diffusion: mu = 0, convention: largest candidate
    best.mu = 0.0;
    best.sigma_num = k_hi;
    best.sigma = static_cast<double>(k_hi) / q;
    return best;
  }

  bool found = false;
  for (int k = 1; k <= k_hi; ++k) {
    double sigma = static_cast<double>(k) / q;
    double first = slice_max.front() * std::pow(times.front(), sigma);
    double last = slice_max.back() * std::pow(times.back(), sigma);
    if (last <= first * (1.0 + 1e-6)) {
      double mu2 = 0.0;
      for (std::size_t ti = 0; ti < times.size(); ++ti)
        mu2 = std::max(mu2, slice_max[ti] * std::pow(times[ti], sigma));
      best.mu = std::sqrt(mu2);
      best.sigma = sigma;
      best.sigma_num = k;
      found = true;
    }
  }
  if (!found)
    throw NoBound("tr(B^T B) t^sigma / |z|^2 grows with t for every candidate sigma");
  return best;
}

SdeSystem registry_get(const std::string& name, const std::map<std::string, double>& params) {
  using expr::Expr;
  if (name == "ex0") {
    double lambda = require_param(params, "lambda", name);
    double mu = require_param(params, "mu", name);
    PerturbationSeries p;
    p.q = 2;
    p.k_max = 4;
    std::map<std::string, double> c{{"lambda", lambda}, {"mu", mu}};
    p.f_terms.emplace(2, Expr::parse("lambda*y", c));
    p.b_terms.emplace(std::array<int, 3>{2, 2, 1}, Expr::parse("mu*x", c));
    SdeSystem sys = assemble_system(harmonic_ham(), std::move(p));
    sys.name = name;
    sys.params = params;
    double lam2 = lambda + 0.5 * mu * mu;
    sys.reference_drifts.push_back(
        {2, [lam2](double v) { return lam2 * v; }, "(lambda + mu^2/2) v"});
    sys.reference_exponents.push_back({2, 1, lam2});
    return sys;
  }
  if (name == "ex1") {
    double h = require_param(params, "h", name);
    double pp = require_param(params, "p", name);
    double qq = require_param(params, "q", name);
    double lambda = require_param(params, "lambda", name);
    double mu = require_param(params, "mu", name);
    int hi = static_cast<int>(h), pi = static_cast<int>(pp), qi = static_cast<int>(qq);
    if (hi < 1 || pi < 1 || qi < 1 || hi > qi || pi > qi)
      throw MissingParam("ex1 requires integers 0 < h, p <= q");
    PerturbationSeries p;
    p.q = qi;
    p.k_max = std::max(4, std::max(qi, 2 * pi));
    std::map<std::string, double> c{{"lambda", lambda}, {"mu", mu}};
    p.f_terms.emplace(hi, Expr::parse("lambda*y", c));
    p.b_terms.emplace(std::array<int, 3>{2, 2, pi}, Expr::parse("mu*sin(x)", c));
    SdeSystem sys = assemble_system(pendulum_ham(), std::move(p));
    sys.name = name;
    sys.params = params;
    if (hi == 2 * pi) {
      sys.reference_exponents.push_back({hi, 1, lambda + 0.5 * mu * mu});
    } else {
      sys.reference_exponents.push_back({hi, 1, lambda});
      if (mu != 0.0) sys.reference_exponents.push_back({2 * pi, 1, 0.5 * mu * mu});
    }
    return sys;
  }
  if (name == "ex2") {
    double a2 = require_param(params, "a2", name);
    double a4 = require_param(params, "a4", name);
    double b1 = require_param(params, "b1", name);
    double b2 = require_param(params, "b2", name);
    PerturbationSeries p;
    p.q = 4;
    p.k_max = 4;
    std::map<std::string, double> c{{"a2", a2}, {"a4", a4}, {"b1", b1}, {"b2", b2}};
    p.f_terms.emplace(2, Expr::parse("a2*x^2*y/(1 + x^2)", c));
    p.f_terms.emplace(4, Expr::parse("a4*y", c));
    p.b_terms.emplace(std::array<int, 3>{2, 2, 1}, Expr::parse("b1*x*y/sqrt(1 + x^2)", c));
    p.b_terms.emplace(std::array<int, 3>{2, 2, 2}, Expr::parse("b2*x", c));
    SdeSystem sys = assemble_system(pendulum_ham(), std::move(p));
    sys.name = name;
    sys.params = params;
    sys.reference_exponents.push_back({2, 2, (2.0 * a2 + b1 * b1) / 4.0});
    sys.reference_exponents.push_back({4, 1, (2.0 * a4 + b2 * b2) / 2.0});
    return sys;
  }
  if (name == "ex3") {
    double a1 = require_param(params, "a1", name);
    double a2 = require_param(params, "a2", name);
    double mu = require_param(params, "mu", name);
    PerturbationSeries p;
    p.q = 2;
    p.k_max = 4;
    std::map<std::string, double> c{{"a1", a1}, {"a2", a2}, {"mu", mu}};
    p.f_terms.emplace(2, Expr::parse("(a1 + a2*x^2)*y/(1 + x^2 + y^2)", c));
    p.b_terms.emplace(std::array<int, 3>{2, 2, 1}, Expr::parse("mu*x", c));
    SdeSystem sys = assemble_system(harmonic_ham(), std::move(p));
    sys.name = name;
    sys.params = params;
    double mu2 = mu * mu;
    sys.reference_drifts.push_back(
        {2,
         [a1, a2, mu2](double v) {
           return v * (2.0 * a1 + mu2 + v * (a2 + 2.0 * mu2)) / (2.0 * (1.0 + 2.0 * v));
         },
         "v (2 a1 + mu^2 + v (a2 + 2 mu^2)) / (2 (1 + 2v))"});
    sys.reference_exponents.push_back({2, 1, a1 + 0.5 * mu2});
    return sys;
  }
  throw UnknownName("unknown registry entry '" + name + "'");
}

SdeSystem system_from_uri(const std::string& uri) {
  const std::string prefix = "builtin:";
  if (uri.rfind(prefix, 0) != 0) throw UnknownName("system URI must start with 'builtin:'");
  std::string rest = uri.substr(prefix.size());
  std::string name = rest;
  std::map<std::string, double> params;
  auto qpos = rest.find('?');
  if (qpos != std::string::npos) {
    name = rest.substr(0, qpos);
    std::string query = rest.substr(qpos + 1);
    std::size_t pos = 0;
    while (pos < query.size()) {
      auto amp = query.find('&', pos);
      std::string kv = query.substr(pos, amp == std::string::npos ? std::string::npos : amp - pos);
      auto eq = kv.find('=');
      if (eq == std::string::npos) throw MissingParam("bad query fragment '" + kv + "'");
      params[kv.substr(0, eq)] = std::stod(kv.substr(eq + 1));
      if (amp == std::string::npos) break;
      pos = amp + 1;
    }
  }
  return registry_get(name, params);
}

SdeSystem system_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw Error(std::string("system definition is not valid JSON: ") + e.what());
  }
  if (!j.contains("q") || !j.contains("H0") || !j.contains("r") || !j.contains("E0"))
    throw MissingParam("system definition needs keys q, H0, r, E0");
  ham::LimitingHamiltonian ham(expr::Expr::parse(j.at("H0").get<std::string>()),
                               j.at("r").get<double>(), j.at("E0").get<double>());
  PerturbationSeries p;
  p.q = j.at("q").get<int>();
  p.k_max = j.value("k_max", 4);
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    int k = 0, bi = 0, bj = 0;
    if (std::sscanf(key.c_str(), "H[%d]", &k) == 1) {
      p.h_terms.emplace(k, expr::Field::from(expr::Expr::parse(it->get<std::string>())));
      p.k_max = std::max(p.k_max, k);
    } else if (std::sscanf(key.c_str(), "F[%d]", &k) == 1) {
      p.f_terms.emplace(k, expr::Expr::parse(it->get<std::string>()));
      p.k_max = std::max(p.k_max, k);
    } else if (std::sscanf(key.c_str(), "B[%d][%d][%d]", &bi, &bj, &k) == 3) {
      if (bi < 1 || bi > 2 || bj < 1 || bj > 2)
        throw Error("diffusion index out of range in key '" + key + "'");
      p.b_terms.emplace(std::array<int, 3>{bi, bj, k}, expr::Expr::parse(it->get<std::string>()));
      p.k_max = std::max(p.k_max, k);
    }
  }
  SdeSystem sys = assemble_system(std::move(ham), std::move(p));
  sys.name = j.value("name", std::string("custom"));
  return sys;
}

}  // namespace fadebif::pert
