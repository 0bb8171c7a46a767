#ifndef FADEBIF_AVERAGING_HPP
#define FADEBIF_AVERAGING_HPP

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "fadebif/common.hpp"
#include "fadebif/gridmath.hpp"
#include "fadebif/hamiltonian.hpp"
#include "fadebif/perturbation.hpp"

namespace fadebif::avg {

struct OrderTooHigh : Error { using Error::Error; };
struct GridTooCoarse : Error { using Error::Error; };
struct GridMismatch : Error { using Error::Error; };
struct DerivativeUnavailable : Error { using Error::Error; };
struct FitAmbiguous : Error {
  FitAmbiguous(const std::string& what, double slope) : Error(what), raw_slope(slope) {}
  double raw_slope;
};
struct NoRoot : Error { using Error::Error; };
struct DerivativeZero : Error { using Error::Error; };
struct StencilOutOfDomain : Error { using Error::Error; };

// Energy-angle coefficients f_k, g_k, beta_{i,j,k} of one energy level,
// sampled over the uniform angle grid.
struct CoeffSlice {
  double energy = 0.0;
  double nu = 0.0, dnu = 0.0;
  std::vector<std::vector<double>> f, g;              // [k-1][phi]
  std::array<std::vector<std::vector<double>>, 4> beta;  // [(i-1)*2+(j-1)][k-1][phi]

  std::span<const double> beta_row(int i, int j, int k) const {
    return beta[(i - 1) * 2 + (j - 1)][static_cast<std::size_t>(k - 1)];
  }
};

// Coefficients at one target energy plus a local uniform stencil of
// neighbor energies.  The recursion takes all its energy derivatives on
// this stencil, so the output does not depend on how coarse e_grid is.
struct AngleColumn {
  double center = 0.0;
  double delta = 0.0;
  int radius = 0;
  std::vector<CoeffSlice> entries;  // energies center + j*delta, j = -radius..radius

  const CoeffSlice& at(int j) const { return entries[static_cast<std::size_t>(radius + j)]; }
};

struct AngleTable {
  int q = 2;
  int k_max = 4;
  int n_phi = ham::kDefaultNPhi;
  std::vector<double> e_grid;
  std::vector<AngleColumn> columns;

  const CoeffSlice& center(std::size_t i) const { return columns[i].at(0); }
};

// Periodic rectangle-rule angle average.
double angle_average(std::span<const double> values);

AngleTable energy_angle_coefficients(const pert::SdeSystem& sys, const ham::OrbitCache& cache,
                                     const std::vector<double>& e_grid,
                                     int n_phi = ham::kDefaultNPhi, int k_max = 0);

// Averaged drifts Lambda_k(E) and transform coefficients v_k(E,phi),
// together with the derivative tables the generator-residual evaluation
// and the exponent fits need.
struct AveragedDrift {
  int order_N = 0;
  int q = 2;
  int n_phi = ham::kDefaultNPhi;
  std::vector<double> e_grid, nu;

  // [k-1][iE]
  std::vector<std::vector<double>> lambda, dlambda, d2lambda, d3lambda;
  // [k-1][iE][phi]
  std::vector<std::vector<std::vector<double>>> v, dv, d2v;

  // Copies of the center coefficient slices (for residual evaluation).
  std::vector<CoeffSlice> coeff;

  double lambda_at(int k, double energy) const;   // cubic-spline interpolant
  double v_interp(int k, double energy, double phi) const;

  std::vector<grid::CubicSpline> lambda_splines_;  // built by the recursion
};

AveragedDrift averaging_recursion(const AngleTable& tables, int N);

enum class CaseTag { Linear, Nonlinear, Cycle, Degenerate };

struct ExponentFit {
  int n = 0;
  std::optional<int> m, l;
  std::optional<double> lambda_n, lambda_nm, lambda_nl;
  CaseTag case_tag = CaseTag::Degenerate;
  std::vector<std::pair<int, double>> raw_slopes;  // per nonzero order
};

struct FitWindow {
  double lo = 0.0, hi = 0.0;
};

// Default window [1e-3, 1e-1]*E0.
FitWindow default_fit_window(double e0);
std::vector<double> log_spaced(double lo, double hi, int n);

ExponentFit fit_exponents(const AveragedDrift& drift, FitWindow window);

struct CycleRoot {
  double c = 0.0;
  double dlambda = 0.0;
  bool stable = false;
};

// All sign-change roots of the tabulated Lambda_k, cubic-refined.
std::vector<CycleRoot> find_cycle_roots(const AveragedDrift& drift, int k);

// The generator of the full system applied to the composite
// V_N(I(x,y), Phi(x,y), t), by finite differences in (x, y).
double apply_generator(const pert::SdeSystem& sys, const AveragedDrift& drift,
                       const ham::OrbitCache& cache, Vec2 z, double t);

// max over the (E, phi) tables of |L V_N - sum_k t^{-k/q} Lambda_k(v)|,
// evaluated in energy-angle variables; used by the remainder-scaling tests.
double generator_residual_max(const AveragedDrift& drift, double t);

}  // namespace fadebif::avg

#endif
