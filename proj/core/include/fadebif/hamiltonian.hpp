#ifndef FADEBIF_HAMILTONIAN_HPP
#define FADEBIF_HAMILTONIAN_HPP

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "fadebif/common.hpp"
#include "fadebif/expr.hpp"
#include "fadebif/gridmath.hpp"

namespace fadebif::ham {

struct NoLevelPoint : Error { using Error::Error; };
struct NoReturn : Error { using Error::Error; };
struct ToleranceFailure : Error { using Error::Error; };
struct SeparatrixGuard : Error { using Error::Error; };
struct OutOfFamily : Error { using Error::Error; };
struct BadHamiltonian : Error { using Error::Error; };

inline constexpr double kTolOrbit = 1e-9;
inline constexpr int kDefaultNPhi = 256;

// The limiting Hamiltonian H0 with a center at the origin, its gradient,
// and the ball/energy range on which the closed-orbit family lives.
class LimitingHamiltonian {
 public:
  LimitingHamiltonian(expr::Expr h0, double r, double e0);

  double value(double x, double y) const { return h0_.eval(x, y); }
  double dx(double x, double y) const { return dh0dx_.eval(x, y); }
  double dy(double x, double y) const { return dh0dy_.eval(x, y); }
  double dxx(double x, double y) const { return d2xx_.eval(x, y); }
  double dxy(double x, double y) const { return d2xy_.eval(x, y); }
  double dyy(double x, double y) const { return d2yy_.eval(x, y); }
  Vec2 grad(double x, double y) const { return {dx(x, y), dy(x, y)}; }

  double r() const { return r_; }
  double e0() const { return e0_; }
  bool is_harmonic() const { return harmonic_; }
  const expr::Expr& h0_expr() const { return h0_; }

  // Checks the center normalization on a sample grid: H0(0,0)=0,
  // grad H0(0,0)=0 and |H0 - |z|^2/2| <= C |z|^3 with a finite C.
  void validate() const;

 private:
  expr::Expr h0_, dh0dx_, dh0dy_, d2xx_, d2xy_, d2yy_;
  double r_, e0_;
  bool harmonic_;
};

// One closed orbit of the limiting system, sampled at n_phi uniform angles.
// Angle origin: the intersection of the level set with the positive-x axis.
// dex/dey come from the variational flow along the orbit (exact to the
// integrator tolerance) plus the frequency correction; second energy
// derivatives are central differences over the +/-dE neighbor orbits.
struct PeriodicOrbit {
  double energy = 0.0;
  double period = 0.0;
  double frequency = 0.0;  // nu(E) = 2pi / T(E)
  double dnu = 0.0;        // d nu / dE
  int n_phi = 0;
  std::vector<double> x, y;        // samples at phi_i = 2pi i / n_phi
  std::vector<double> dex, dey;    // dX/dE, dY/dE at the same nodes
  std::vector<double> d2ex, d2ey;  // d^2X/dE^2, d^2Y/dE^2
};

// Start point of the orbit through energy E on the positive-x ray.
double level_point(const LimitingHamiltonian& ham, double E);

PeriodicOrbit compute_orbit(const LimitingHamiltonian& ham, double E, int n_phi = kDefaultNPhi);

std::vector<std::pair<double, double>> frequency_curve(const LimitingHamiltonian& ham,
                                                       const std::vector<double>& e_grid,
                                                       int n_phi = kDefaultNPhi);

// Write-once orbit cache; safe for concurrent readers.
class OrbitCache {
 public:
  explicit OrbitCache(const LimitingHamiltonian& ham) : ham_(&ham) {}
  std::shared_ptr<const PeriodicOrbit> get(double E, int n_phi = kDefaultNPhi) const;
  const LimitingHamiltonian& ham() const { return *ham_; }

 private:
  const LimitingHamiltonian* ham_;
  mutable std::mutex mu_;
  mutable std::map<std::pair<double, int>, std::shared_ptr<const PeriodicOrbit>> cache_;
};

// Inverse of the energy-angle map: E = H0(x,y) exactly, phi by nearest-node
// search on the cached orbit plus Newton refinement of the closest-point
// condition on the trigonometric interpolant.
std::pair<double, double> energy_angle_of_point(const LimitingHamiltonian& ham,
                                                const OrbitCache& cache, double x, double y,
                                                int n_phi = kDefaultNPhi);

// Point on the orbit family at (E, phi); round-trip partner of the above.
Vec2 point_of_energy_angle(const OrbitCache& cache, double E, double phi,
                           int n_phi = kDefaultNPhi);

// Fast approximate angle lookup for path postprocessing: orbits at a fixed
// set of atlas energies, phi blended linearly between the bracketing
// orbits.  Exact (atan2) for the harmonic case.  Returns NaN outside the
// closed-orbit family.
class AngleAtlas {
 public:
  explicit AngleAtlas(const LimitingHamiltonian& ham, int n_phi = kDefaultNPhi,
                      int n_energies = 48);
  double phi(double x, double y) const;

 private:
  double phi_on(std::size_t idx, double x, double y) const;
  const LimitingHamiltonian* ham_;
  int n_phi_;
  std::vector<double> energies_;
  std::vector<grid::TrigInterpolant> xi_, yi_;
};

}  // namespace fadebif::ham

#endif
