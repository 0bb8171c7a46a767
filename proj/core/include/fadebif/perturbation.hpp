#ifndef FADEBIF_PERTURBATION_HPP
#define FADEBIF_PERTURBATION_HPP

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fadebif/common.hpp"
#include "fadebif/expr.hpp"
#include "fadebif/hamiltonian.hpp"

namespace fadebif::pert {

struct OriginViolation : Error { using Error::Error; };
struct LipschitzViolation : Error { using Error::Error; };
struct UnknownName : Error { using Error::Error; };
struct MissingParam : Error { using Error::Error; };
struct NoBound : Error { using Error::Error; };

// Decaying perturbation series: H_k, F_k, B_{i,j,k} with the power scale
// t^{-k/q}.  Sparse storage; absent terms are zero.  k_max is the
// truncation order used when the series is evaluated or averaged.
struct PerturbationSeries {
  int q = 2;
  int k_max = 4;
  std::map<int, expr::Field> h_terms;                 // k -> H_k and gradient
  std::map<int, expr::Expr> f_terms;                  // k -> F_k
  std::map<std::array<int, 3>, expr::Expr> b_terms;   // {i, j, k} -> B_{i,j,k}, i,j in {1,2}

  const expr::Expr* b(int i, int j, int k) const {
    auto it = b_terms.find({i, j, k});
    return it == b_terms.end() ? nullptr : &it->second;
  }

  // Type invariants on a sample grid: all stored fields vanish at the
  // origin together with the drift/diffusion they induce, and the induced
  // coefficients have a finite grid Lipschitz estimate.
  void validate(const ham::LimitingHamiltonian& ham) const;
};

// Reference closed form attached by the registry for validation.
struct ReferenceDrift {
  int k = 0;                                   // order of Lambda_k
  std::function<double(double)> lambda;        // Lambda_k(v)
  std::string formula;
};

// Leading small-v monomial lambda * v^degree of Lambda_k.
struct ReferenceExponent {
  int k = 0;
  int degree = 1;
  double coefficient = 0.0;
};

struct SdeSystem {
  SdeSystem(ham::LimitingHamiltonian h, PerturbationSeries p)
      : ham(std::move(h)), pert(std::move(p)) {}

  ham::LimitingHamiltonian ham;
  PerturbationSeries pert;
  std::string name = "custom";
  std::map<std::string, double> params;

  std::vector<ReferenceDrift> reference_drifts;       // registry metadata
  std::vector<ReferenceExponent> reference_exponents;

  // Full drift b(z,t) = (dH/dy, -dH/dx + F), series truncated at k_max.
  Vec2 drift(const Vec2& z, double t) const;
  // Drift minus the limiting Hamiltonian field (the decaying part only).
  Vec2 pert_drift(const Vec2& z, double t) const;
  Mat2 diffusion(const Vec2& z, double t) const;
  // Both decaying parts in one call (the stepping hot path).
  void pert_eval(const Vec2& z, double t, Vec2& drift_out, Mat2& diff_out) const;

 private:
  // Flattened term lists with precomputed integer t-powers.
  struct Plan {
    struct Term {
      int k;
      int slot;  // 0: drift x (+dH/dy), 1: drift y (-dH/dx or +F), 2..5: B entries
      expr::Expr field;
    };
    int k_used = 0;
    std::vector<Term> terms;
  };
  std::shared_ptr<const Plan> plan_;
  void build_plan();
  friend SdeSystem assemble_system(ham::LimitingHamiltonian ham, PerturbationSeries pert);
};

SdeSystem assemble_system(ham::LimitingHamiltonian ham, PerturbationSeries pert);

struct NoiseBound {
  double mu = 0.0;
  double sigma = 0.0;
  int sigma_num = 0;  // sigma = sigma_num / q
  int q = 2;
};

struct NoiseGrid {
  int n_radial = 24;
  int n_angle = 16;
  int n_time = 7;
  double t_lo = 1.0;
  double t_hi = 1e6;
};

// Fits tr(B^T B) <= mu^2 t^-sigma |z|^2 on a sample grid over the analysis
// ball.  sigma is the largest candidate k/q (1 <= k <= 2 k_max) whose grid
// estimate of mu stays bounded as t grows; mu is the grid maximum at that
// sigma.  Exact for registry systems whose diffusion is a single monomial
// in t.
NoiseBound estimate_noise_bound(const SdeSystem& sys, const NoiseGrid& grid = {});

// The paper's example systems: ex0, ex1, ex2, ex3.
SdeSystem registry_get(const std::string& name, const std::map<std::string, double>& params);

// "builtin:ex1?h=1&p=1&q=2&lambda=-1&mu=1" -> registry_get
SdeSystem system_from_uri(const std::string& uri);

// System definition text (JSON): keys q, r, E0, H0, H[k], F[k], B[i][j][k].
SdeSystem system_from_json_text(const std::string& text);

}  // namespace fadebif::pert

#endif
