#include "fadebif/hamiltonian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "fadebif/gridmath.hpp"

namespace fadebif::ham {

namespace {

constexpr int kRefSteps = 4096;       // RK4 steps per period in the sampling pass
constexpr double kMaxReturnTime = 400.0 * kPi;

struct State {
  double x, y;
};

inline State rhs(const LimitingHamiltonian& ham, const State& s) {
  return {ham.dy(s.x, s.y), -ham.dx(s.x, s.y)};
}

inline State rk4(const LimitingHamiltonian& ham, const State& s, double h) {
  State k1 = rhs(ham, s);
  State k2 = rhs(ham, {s.x + 0.5 * h * k1.x, s.y + 0.5 * h * k1.y});
  State k3 = rhs(ham, {s.x + 0.5 * h * k2.x, s.y + 0.5 * h * k2.y});
  State k4 = rhs(ham, {s.x + h * k3.x, s.y + h * k3.y});
  return {s.x + h / 6.0 * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x),
          s.y + h / 6.0 * (k1.y + 2.0 * k2.y + 2.0 * k3.y + k4.y)};
}

// One Henon step: integrate with y as the independent variable from (x, y)
// down to y = 0, returning x and the elapsed time.
std::pair<double, double> henon_to_section(const LimitingHamiltonian& ham, const State& s) {
  struct Aug {
    double x, t;
  };
  auto f = [&](const Aug& a, double yv) -> Aug {
    State d = rhs(ham, {a.x, yv});
    return {d.x / d.y, 1.0 / d.y};
  };
  double h = -s.y;
  Aug a{s.x, 0.0};
  Aug k1 = f(a, s.y);
  Aug k2 = f({a.x + 0.5 * h * k1.x, a.t + 0.5 * h * k1.t}, s.y + 0.5 * h);
  Aug k3 = f({a.x + 0.5 * h * k2.x, a.t + 0.5 * h * k2.t}, s.y + 0.5 * h);
  Aug k4 = f({a.x + h * k3.x, a.t + h * k3.t}, s.y + h);
  double x_end = a.x + h / 6.0 * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x);
  double t_end = a.t + h / 6.0 * (k1.t + 2.0 * k2.t + 2.0 * k3.t + k4.t);
  return {x_end, t_end};
}

// First return time to the section y = 0, x > 0 (crossing from y > 0).
double return_time(const LimitingHamiltonian& ham, double x0, double h) {
  State s{x0, 0.0};
  double t = 0.0;
  for (;;) {
    State next = rk4(ham, s, h);
    double tn = t + h;
    if (s.y > 0.0 && next.y <= 0.0 && s.x > 0.0) {
      auto [xs, dt] = henon_to_section(ham, s);
      (void)xs;
      return t + dt;
    }
    if (tn > kMaxReturnTime)
      throw NoReturn("orbit failed to return to the section (separatrix proximity?)");
    s = next;
    t = tn;
  }
}

double period_of(const LimitingHamiltonian& ham, double E) {
  double x0 = level_point(ham, E);
  double t1 = return_time(ham, x0, kTwoPi / 512.0);
  return return_time(ham, x0, t1 / static_cast<double>(kRefSteps));
}

struct RawOrbit {
  double period;
  std::vector<double> x, y;
  std::vector<double> vx, vy;  // d/dE of the fixed-time solution along the orbit
};

// Full state (x, y) plus the variational pair (vx, vy) = d(x,y)/dE of the
// fixed-time flow, advanced with one RK4 step.
struct AugState {
  double x, y, vx, vy;
};

AugState aug_rhs(const LimitingHamiltonian& ham, const AugState& s) {
  double hxx = ham.dxx(s.x, s.y), hxy = ham.dxy(s.x, s.y), hyy = ham.dyy(s.x, s.y);
  return {ham.dy(s.x, s.y), -ham.dx(s.x, s.y), hxy * s.vx + hyy * s.vy,
          -hxx * s.vx - hxy * s.vy};
}

AugState aug_rk4(const LimitingHamiltonian& ham, const AugState& s, double h) {
  auto add = [](const AugState& a, const AugState& b, double f) {
    return AugState{a.x + f * b.x, a.y + f * b.y, a.vx + f * b.vx, a.vy + f * b.vy};
  };
  AugState k1 = aug_rhs(ham, s);
  AugState k2 = aug_rhs(ham, add(s, k1, 0.5 * h));
  AugState k3 = aug_rhs(ham, add(s, k2, 0.5 * h));
  AugState k4 = aug_rhs(ham, add(s, k3, h));
  AugState out = s;
  out.x += h / 6.0 * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x);
  out.y += h / 6.0 * (k1.y + 2.0 * k2.y + 2.0 * k3.y + k4.y);
  out.vx += h / 6.0 * (k1.vx + 2.0 * k2.vx + 2.0 * k3.vx + k4.vx);
  out.vy += h / 6.0 * (k1.vy + 2.0 * k2.vy + 2.0 * k3.vy + k4.vy);
  return out;
}

// Integrates one closed orbit and resamples it at n_phi uniform angles.
// Two passes fix the period (coarse, then one refined pass whose step is
// tied to the coarse estimate), after which the sampling pass lands on the
// angle nodes exactly because the step divides the period.
RawOrbit sample_orbit(const LimitingHamiltonian& ham, double E, int n_phi) {
  double x0 = level_point(ham, E);
  double t1 = return_time(ham, x0, kTwoPi / 512.0);
  double period = return_time(ham, x0, t1 / static_cast<double>(kRefSteps));

  const int steps = std::max(kRefSteps, 16 * n_phi);
  const int stride = steps / n_phi;
  const double h = period / static_cast<double>(steps);

  RawOrbit orbit;
  orbit.period = period;
  orbit.x.resize(n_phi);
  orbit.y.resize(n_phi);
  orbit.vx.resize(n_phi);
  orbit.vy.resize(n_phi);
  AugState s{x0, 0.0, 1.0 / ham.dx(x0, 0.0), 0.0};
  double max_drift = 0.0;
  for (int i = 0; i < steps; ++i) {
    if (i % stride == 0) {
      int node = i / stride;
      orbit.x[node] = s.x;
      orbit.y[node] = s.y;
      orbit.vx[node] = s.vx;
      orbit.vy[node] = s.vy;
      max_drift = std::max(max_drift, std::abs(ham.value(s.x, s.y) - E));
    }
    s = aug_rk4(ham, s, h);
  }
  double closure = std::hypot(s.x - x0, s.y - 0.0);
  if (max_drift > kTolOrbit || closure > 1e4 * kTolOrbit) {
    std::ostringstream msg;
    msg << "orbit at E=" << E << " exceeded tolerance: energy drift " << max_drift
        << ", closure " << closure;
    throw ToleranceFailure(msg.str());
  }
  return orbit;
}

// dX/dE at fixed angle: the fixed-time variational derivative plus the
// phase correction from the energy dependence of the frequency.
void angle_derivatives(const LimitingHamiltonian& ham, const RawOrbit& o, double nu, double dnu,
                       std::vector<double>& dex, std::vector<double>& dey) {
  const int n = static_cast<int>(o.x.size());
  dex.resize(n);
  dey.resize(n);
  for (int i = 0; i < n; ++i) {
    double phi = kTwoPi * i / n;
    double shift = phi * dnu / (nu * nu);
    dex[i] = o.vx[i] - shift * ham.dy(o.x[i], o.y[i]);
    dey[i] = o.vy[i] + shift * ham.dx(o.x[i], o.y[i]);
  }
}

}  // namespace

LimitingHamiltonian::LimitingHamiltonian(expr::Expr h0, double r, double e0)
    : h0_(std::move(h0)),
      dh0dx_(h0_.derivative(expr::Var::X)),
      dh0dy_(h0_.derivative(expr::Var::Y)),
      d2xx_(dh0dx_.derivative(expr::Var::X)),
      d2xy_(dh0dx_.derivative(expr::Var::Y)),
      d2yy_(dh0dy_.derivative(expr::Var::Y)),
      r_(r),
      e0_(e0) {
  if (r_ <= 0.0 || e0_ <= 0.0) throw BadHamiltonian("r and E0 must be positive");
  // Cheap structural probe; lets the SDE stepper use the exact rotation.
  harmonic_ = true;
  for (double ang = 0.3; ang < kTwoPi && harmonic_; ang += 1.1) {
    for (double rad : {0.5 * r_, 0.9 * r_}) {
      double xx = rad * std::cos(ang), yy = rad * std::sin(ang);
      if (std::abs(value(xx, yy) - 0.5 * (xx * xx + yy * yy)) > 1e-13 * (1.0 + rad * rad)) {
        harmonic_ = false;
        break;
      }
    }
  }
}

void LimitingHamiltonian::validate() const {
  if (std::abs(value(0.0, 0.0)) > 1e-12) throw BadHamiltonian("H0(0,0) != 0");
  Vec2 g = grad(0.0, 0.0);
  if (g.norm() > 1e-10) throw BadHamiltonian("grad H0(0,0) != 0");
  // the |z|^2/2 normalization pins the Hessian at the origin to the identity
  if (std::abs(dxx(0.0, 0.0) - 1.0) > 1e-10 || std::abs(dyy(0.0, 0.0) - 1.0) > 1e-10 ||
      std::abs(dxy(0.0, 0.0)) > 1e-10)
    throw BadHamiltonian("H0 is not |z|^2/2 + O(|z|^3) near the origin");
  double c_max = 0.0;
  for (double rad = 1e-3; rad <= 0.25 * r_; rad *= 1.9) {
    for (int k = 0; k < 16; ++k) {
      double ang = kTwoPi * k / 16.0;
      double xx = rad * std::cos(ang), yy = rad * std::sin(ang);
      double dev = std::abs(value(xx, yy) - 0.5 * rad * rad);
      c_max = std::max(c_max, dev / (rad * rad * rad));
    }
  }
  if (!std::isfinite(c_max) || c_max > 1e3)
    throw BadHamiltonian("|H0 - |z|^2/2| / |z|^3 is unbounded on the sample grid");
}

double level_point(const LimitingHamiltonian& ham, double E) {
  auto f = [&](double x) { return ham.value(x, 0.0) - E; };
  // Bracket by scanning (0, r]; the family need not make h0(x,0) monotone.
  const int nseg = 256;
  double lo = 0.0, hi = 0.0;
  double prev_x = 1e-12 * ham.r(), prev_f = f(prev_x);
  for (int i = 1; i <= nseg; ++i) {
    double xx = ham.r() * static_cast<double>(i) / nseg;
    double fx = f(xx);
    if (prev_f <= 0.0 && fx >= 0.0) {
      lo = prev_x;
      hi = xx;
      break;
    }
    prev_x = xx;
    prev_f = fx;
  }
  if (hi == 0.0) {
    std::ostringstream msg;
    msg << "no root of H0(x,0)=" << E << " on (0, " << ham.r() << "]";
    throw NoLevelPoint(msg.str());
  }
  for (int it = 0; it < 200 && hi - lo > 1e-16 * (1.0 + hi); ++it) {
    double mid = 0.5 * (lo + hi);
    (f(mid) <= 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

PeriodicOrbit compute_orbit(const LimitingHamiltonian& ham, double E, int n_phi) {
  if (!(E > 0.0)) throw Error("compute_orbit: E must be positive");
  if (n_phi < 32 || (n_phi & (n_phi - 1)) != 0)
    throw Error("compute_orbit: n_phi must be a power of two >= 32");
  if (E > 0.9 * ham.e0()) {
    std::ostringstream msg;
    msg << "E=" << E << " rejected: beyond 0.9*E0=" << 0.9 * ham.e0()
        << " (separatrix guard)";
    throw SeparatrixGuard(msg.str());
  }

  double dE = std::min(std::max(1e-4, 1e-3 * E), E / 3.0);
  RawOrbit mid = sample_orbit(ham, E, n_phi);
  RawOrbit lo = sample_orbit(ham, E - dE, n_phi);
  RawOrbit hi = sample_orbit(ham, E + dE, n_phi);
  // dnu at all three bundle energies as central differences of the same
  // spacing, so the second differences below see a uniform error form
  double nu_m2 = kTwoPi / period_of(ham, E - 2.0 * dE);
  double nu_p2 = kTwoPi / period_of(ham, E + 2.0 * dE);
  double nu_lo = kTwoPi / lo.period, nu_hi = kTwoPi / hi.period;
  double nu_mid = kTwoPi / mid.period;
  double dnu_mid = (nu_hi - nu_lo) / (2.0 * dE);
  double dnu_lo = (nu_mid - nu_m2) / (2.0 * dE);
  double dnu_hi = (nu_p2 - nu_mid) / (2.0 * dE);

  PeriodicOrbit orbit;
  orbit.energy = E;
  orbit.period = mid.period;
  orbit.frequency = nu_mid;
  orbit.dnu = dnu_mid;
  orbit.n_phi = n_phi;
  std::vector<double> dex_lo, dey_lo, dex_hi, dey_hi;
  angle_derivatives(ham, mid, nu_mid, dnu_mid, orbit.dex, orbit.dey);
  angle_derivatives(ham, lo, nu_lo, dnu_lo, dex_lo, dey_lo);
  angle_derivatives(ham, hi, nu_hi, dnu_hi, dex_hi, dey_hi);
  orbit.x = std::move(mid.x);
  orbit.y = std::move(mid.y);
  orbit.d2ex.resize(n_phi);
  orbit.d2ey.resize(n_phi);
  for (int i = 0; i < n_phi; ++i) {
    orbit.d2ex[i] = (dex_hi[i] - dex_lo[i]) / (2.0 * dE);
    orbit.d2ey[i] = (dey_hi[i] - dey_lo[i]) / (2.0 * dE);
  }
  return orbit;
}

std::vector<std::pair<double, double>> frequency_curve(const LimitingHamiltonian& ham,
                                                       const std::vector<double>& e_grid,
                                                       int n_phi) {
  for (std::size_t i = 0; i < e_grid.size(); ++i) {
    if (e_grid[i] <= 0.0 || e_grid[i] > ham.e0())
      throw Error("frequency_curve: grid must lie inside (0, E0]");
    if (i > 0 && e_grid[i] <= e_grid[i - 1])
      throw Error("frequency_curve: grid must be strictly increasing");
  }
  std::vector<std::pair<double, double>> out;
  out.reserve(e_grid.size());
  for (double E : e_grid) {
    try {
      out.emplace_back(E, compute_orbit(ham, E, n_phi).frequency);
    } catch (const Error& e) {
      std::ostringstream msg;
      msg << "frequency_curve failed at E=" << E << ": " << e.what();
      throw Error(msg.str());
    }
  }
  return out;
}

std::shared_ptr<const PeriodicOrbit> OrbitCache::get(double E, int n_phi) const {
  std::pair<double, int> key{E, n_phi};
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
  }
  auto orbit = std::make_shared<const PeriodicOrbit>(compute_orbit(*ham_, E, n_phi));
  std::lock_guard<std::mutex> lock(mu_);
  auto [it, inserted] = cache_.emplace(key, orbit);
  return it->second;  // first writer wins
}

std::pair<double, double> energy_angle_of_point(const LimitingHamiltonian& ham,
                                                const OrbitCache& cache, double x, double y,
                                                int n_phi) {
  double E = ham.value(x, y);
  if (!(E > 0.0) || E > ham.e0()) {
    std::ostringstream msg;
    msg << "point (" << x << ", " << y << ") has energy " << E << " outside (0, " << ham.e0()
        << "]";
    throw OutOfFamily(msg.str());
  }
  std::shared_ptr<const PeriodicOrbit> orbit;
  try {
    orbit = cache.get(E, n_phi);
  } catch (const SeparatrixGuard& e) {
    throw OutOfFamily(e.what());
  }
  int best = 0;
  double best_d = std::numeric_limits<double>::max();
  for (int i = 0; i < n_phi; ++i) {
    double d = (orbit->x[i] - x) * (orbit->x[i] - x) + (orbit->y[i] - y) * (orbit->y[i] - y);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  grid::TrigInterpolant ix(orbit->x), iy(orbit->y);
  double phi = kTwoPi * best / n_phi;
  // Closest-point condition g(phi) = (P(phi)-p).P'(phi) = 0.
  auto g = [&](double p) {
    return (ix(p) - x) * ix.derivative(p) + (iy(p) - y) * iy.derivative(p);
  };
  const double fd = 1e-6;
  for (int it = 0; it < 12; ++it) {
    double gp = g(phi);
    double dgp = (g(phi + fd) - g(phi - fd)) / (2.0 * fd);
    if (dgp == 0.0) break;
    double step = gp / dgp;
    phi -= step;
    if (std::abs(step) < 1e-14) break;
  }
  double res = std::hypot(ix(phi) - x, iy(phi) - y);
  if (res > 1e-6 * (1.0 + std::hypot(x, y)))
    throw ToleranceFailure("energy_angle_of_point: round-trip residual " + std::to_string(res));
  phi = std::fmod(phi, kTwoPi);
  if (phi < 0.0) phi += kTwoPi;
  return {E, phi};
}

Vec2 point_of_energy_angle(const OrbitCache& cache, double E, double phi, int n_phi) {
  auto orbit = cache.get(E, n_phi);
  grid::TrigInterpolant ix(orbit->x), iy(orbit->y);
  return {ix(phi), iy(phi)};
}

AngleAtlas::AngleAtlas(const LimitingHamiltonian& ham, int n_phi, int n_energies)
    : ham_(&ham), n_phi_(n_phi) {
  if (ham.is_harmonic()) return;  // atan2 path needs no tables
  const double e_hi = 0.9 * ham.e0() * 0.999;
  const double e_lo = std::min(1e-4, 1e-3 * e_hi);
  energies_.resize(static_cast<std::size_t>(n_energies));
  for (int i = 0; i < n_energies; ++i)
    energies_[static_cast<std::size_t>(i)] =
        e_lo * std::pow(e_hi / e_lo, static_cast<double>(i) / (n_energies - 1));
  xi_.reserve(energies_.size());
  yi_.reserve(energies_.size());
  for (double e : energies_) {
    auto orbit = compute_orbit(ham, e, n_phi);
    xi_.emplace_back(orbit.x);
    yi_.emplace_back(orbit.y);
  }
}

double AngleAtlas::phi_on(std::size_t idx, double x, double y) const {
  const auto& ix = xi_[idx];
  const auto& iy = yi_[idx];
  int best_i = 0;
  double best = std::numeric_limits<double>::max();
  for (int i = 0; i < n_phi_; ++i) {
    double p = kTwoPi * i / n_phi_;
    double dx = ix(p) - x, dy = iy(p) - y;
    double d = dx * dx + dy * dy;
    if (d < best) {
      best = d;
      best_i = i;
    }
  }
  double phi = kTwoPi * best_i / n_phi_;
  for (int it = 0; it < 4; ++it) {
    double gx = ix(phi) - x, gy = iy(phi) - y;
    double dxp = ix.derivative(phi), dyp = iy.derivative(phi);
    double dg = dxp * dxp + dyp * dyp;
    if (dg <= 0.0) break;
    phi -= (gx * dxp + gy * dyp) / dg;
  }
  return phi;
}

double AngleAtlas::phi(double x, double y) const {
  if (ham_->is_harmonic()) {
    if (x == 0.0 && y == 0.0) return std::numeric_limits<double>::quiet_NaN();
    double p = std::atan2(-y, x);
    return p < 0.0 ? p + kTwoPi : p;
  }
  double E = ham_->value(x, y);
  if (!(E > energies_.front()) || E > energies_.back())
    return std::numeric_limits<double>::quiet_NaN();
  auto it = std::upper_bound(energies_.begin(), energies_.end(), E);
  std::size_t i1 = static_cast<std::size_t>(it - energies_.begin());
  std::size_t i0 = i1 - 1;
  if (i1 >= energies_.size()) {
    i1 = energies_.size() - 1;
    i0 = i1 - 1;
  }
  double p0 = phi_on(i0, x, y);
  double p1 = phi_on(i1, x, y);
  double w = (E - energies_[i0]) / (energies_[i1] - energies_[i0]);
  double p = p0 + w * std::remainder(p1 - p0, kTwoPi);
  p = std::fmod(p, kTwoPi);
  return p < 0.0 ? p + kTwoPi : p;
}

}  // namespace fadebif::ham
