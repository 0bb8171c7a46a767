#include "fadebif/averaging.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <sstream>

namespace fadebif::avg {

namespace {

using grid::periodic_mean;
using grid::spectral_antiderivative;
using grid::spectral_derivative;

std::vector<double> eval_on_orbit(const expr::Expr& e, const ham::PeriodicOrbit& orbit) {
  std::vector<double> out(static_cast<std::size_t>(orbit.n_phi));
  for (int i = 0; i < orbit.n_phi; ++i) out[static_cast<std::size_t>(i)] = e.eval(orbit.x[i], orbit.y[i]);
  return out;
}

// First and second derivatives of the inverse maps I(x,y), Phi(x,y) on the
// orbit, from the identities dI = (-nu Y_phi, nu X_phi),
// dPhi = (nu Y_E, -nu X_E) and the displayed second-derivative operators.
struct InverseMapDerivatives {
  std::vector<double> ix, iy, px, py;
  std::vector<double> ixx, iyy, ixy;
  std::vector<double> pxx, pyy, pxy;
};

InverseMapDerivatives inverse_map_derivatives(const ham::PeriodicOrbit& o) {
  const std::size_t n = static_cast<std::size_t>(o.n_phi);
  const double nu = o.frequency, dnu = o.dnu;

  auto dphi_x = spectral_derivative(o.x);
  auto dphi_y = spectral_derivative(o.y);
  auto d2phi_x = spectral_derivative(o.x, 2);
  auto d2phi_y = spectral_derivative(o.y, 2);
  auto dphi_dex = spectral_derivative(o.dex);
  auto dphi_dey = spectral_derivative(o.dey);

  InverseMapDerivatives d;
  d.ix.resize(n); d.iy.resize(n); d.px.resize(n); d.py.resize(n);
  d.ixx.resize(n); d.iyy.resize(n); d.ixy.resize(n);
  d.pxx.resize(n); d.pyy.resize(n); d.pxy.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.ix[i] = -nu * dphi_y[i];
    d.iy[i] = nu * dphi_x[i];
    d.px[i] = nu * o.dey[i];
    d.py[i] = -nu * o.dex[i];

    // dE and dphi of the four first-derivative fields
    double ix_E = -dnu * dphi_y[i] - nu * dphi_dey[i];
    double ix_phi = -nu * d2phi_y[i];
    double iy_E = dnu * dphi_x[i] + nu * dphi_dex[i];
    double iy_phi = nu * d2phi_x[i];
    double px_E = dnu * o.dey[i] + nu * o.d2ey[i];
    double px_phi = nu * dphi_dey[i];
    double py_E = -dnu * o.dex[i] - nu * o.d2ex[i];
    double py_phi = -nu * dphi_dex[i];

    d.ixx[i] = nu * (o.dey[i] * ix_phi - dphi_y[i] * ix_E);
    d.iyy[i] = nu * (dphi_x[i] * iy_E - o.dex[i] * iy_phi);
    d.ixy[i] = nu * (dphi_x[i] * ix_E - o.dex[i] * ix_phi);
    d.pxx[i] = nu * (o.dey[i] * px_phi - dphi_y[i] * px_E);
    d.pyy[i] = nu * (dphi_x[i] * py_E - o.dex[i] * py_phi);
    d.pxy[i] = nu * (dphi_x[i] * px_E - o.dex[i] * px_phi);
  }
  return d;
}

CoeffSlice make_slice(const pert::SdeSystem& sys, const ham::PeriodicOrbit& orbit, int k_max) {
  const std::size_t n = static_cast<std::size_t>(orbit.n_phi);
  const auto d = inverse_map_derivatives(orbit);

  CoeffSlice s;
  s.energy = orbit.energy;
  s.nu = orbit.frequency;
  s.dnu = orbit.dnu;
  s.f.assign(static_cast<std::size_t>(k_max), std::vector<double>(n, 0.0));
  s.g.assign(static_cast<std::size_t>(k_max), std::vector<double>(n, 0.0));
  for (auto& b : s.beta) b.assign(static_cast<std::size_t>(k_max), std::vector<double>(n, 0.0));

  // Pre-evaluate the stored coefficient fields on the orbit nodes.
  std::map<int, std::vector<double>> fk, hkx, hky;
  std::map<std::array<int, 3>, std::vector<double>> bk;
  for (const auto& [k, f] : sys.pert.f_terms)
    if (k <= k_max) fk.emplace(k, eval_on_orbit(f, orbit));
  for (const auto& [k, field] : sys.pert.h_terms) {
    if (k > k_max) continue;
    hkx.emplace(k, eval_on_orbit(field.dx, orbit));
    hky.emplace(k, eval_on_orbit(field.dy, orbit));
  }
  for (const auto& [ijk, b] : sys.pert.b_terms)
    if (ijk[2] <= k_max) bk.emplace(ijk, eval_on_orbit(b, orbit));

  auto b_row = [&](int i, int j, int k) -> const std::vector<double>* {
    auto it = bk.find({i, j, k});
    return it == bk.end() ? nullptr : &it->second;
  };

  for (int k = 1; k <= k_max; ++k) {
    auto& frow = s.f[static_cast<std::size_t>(k - 1)];
    auto& grow = s.g[static_cast<std::size_t>(k - 1)];
    // drift part: (dH_k/dy) d/dx + (-dH_k/dx + F_k) d/dy applied to (I, Phi)
    const auto* fv = fk.count(k) ? &fk.at(k) : nullptr;
    const auto* hx = hkx.count(k) ? &hkx.at(k) : nullptr;
    const auto* hy = hky.count(k) ? &hky.at(k) : nullptr;
    if (fv || hx || hy) {
      for (std::size_t i = 0; i < n; ++i) {
        double ax = hy ? (*hy)[i] : 0.0;
        double ay = (fv ? (*fv)[i] : 0.0) - (hx ? (*hx)[i] : 0.0);
        frow[i] += ax * d.ix[i] + ay * d.iy[i];
        grow[i] += ax * d.px[i] + ay * d.py[i];
      }
    }
    // diffusion pairs at order k
    for (int i1 = 1; i1 < k; ++i1) {
      int i2 = k - i1;
      for (int j1 = 1; j1 <= 2; ++j1) {  // Wiener component index
        const auto* b1a = b_row(1, j1, i1);
        const auto* b2a = b_row(2, j1, i1);
        const auto* b1b = b_row(1, j1, i2);
        const auto* b2b = b_row(2, j1, i2);
        if (!b1a && !b2a) continue;
        if (!b1b && !b2b) continue;
        for (std::size_t i = 0; i < n; ++i) {
          double c11 = b1a && b1b ? (*b1a)[i] * (*b1b)[i] : 0.0;
          double c22 = b2a && b2b ? (*b2a)[i] * (*b2b)[i] : 0.0;
          double c12 = b1a && b2b ? (*b1a)[i] * (*b2b)[i] : 0.0;
          frow[i] += 0.5 * (c11 * d.ixx[i] + c22 * d.iyy[i]) + c12 * d.ixy[i];
          grow[i] += 0.5 * (c11 * d.pxx[i] + c22 * d.pyy[i]) + c12 * d.pxy[i];
        }
      }
    }
    // beta_{1,j,k}, beta_{2,j,k}
    for (int j = 1; j <= 2; ++j) {
      const auto* b1 = b_row(1, j, k);
      const auto* b2 = b_row(2, j, k);
      if (!b1 && !b2) continue;
      auto& beta1 = s.beta[static_cast<std::size_t>(0 * 2 + (j - 1))][static_cast<std::size_t>(k - 1)];
      auto& beta2 = s.beta[static_cast<std::size_t>(1 * 2 + (j - 1))][static_cast<std::size_t>(k - 1)];
      for (std::size_t i = 0; i < n; ++i) {
        double bx = b1 ? (*b1)[i] : 0.0;
        double by = b2 ? (*b2)[i] : 0.0;
        beta1[i] = bx * d.ix[i] + by * d.iy[i];
        beta2[i] = bx * d.px[i] + by * d.py[i];
      }
    }
  }
  return s;
}

}  // namespace

double angle_average(std::span<const double> values) { return periodic_mean(values); }

AngleTable energy_angle_coefficients(const pert::SdeSystem& sys, const ham::OrbitCache& cache,
                                     const std::vector<double>& e_grid, int n_phi, int k_max) {
  if (k_max <= 0) k_max = sys.pert.k_max;
  AngleTable table;
  table.q = sys.pert.q;
  table.k_max = k_max;
  table.n_phi = n_phi;
  table.e_grid = e_grid;
  table.columns.reserve(e_grid.size());
  const int radius = k_max;
  for (double E : e_grid) {
    if (!(E > 0.0)) throw GridMismatch("table energies must be positive");
    AngleColumn col;
    col.center = E;
    col.radius = radius;
    col.delta = std::min(std::max(1e-4, 1e-3 * E), E / (radius + 1.0));
    col.entries.reserve(static_cast<std::size_t>(2 * radius + 1));
    for (int j = -radius; j <= radius; ++j) {
      double Ej = E + j * col.delta;
      col.entries.push_back(make_slice(sys, *cache.get(Ej, n_phi), k_max));
    }
    table.columns.push_back(std::move(col));
  }
  return table;
}

namespace {

// Per-column workspace of the chain of transform coefficients.
struct ColumnWork {
  int radius = 0;
  double delta = 0.0;
  // [k][j+radius][phi]; empty vectors where the layer is not computed
  std::vector<std::vector<std::vector<double>>> v, vphi, vphi2;
  std::vector<std::vector<double>> lam;  // [k][j+radius]

  std::size_t idx(int j) const { return static_cast<std::size_t>(radius + j); }
  int avail(int k) const { return radius - k + 1; }

  double dlam(int i, int j) const {
    return (lam[i][idx(j + 1)] - lam[i][idx(j - 1)]) / (2.0 * delta);
  }
  double d2lam(int i, int j) const {
    return (lam[i][idx(j + 1)] - 2.0 * lam[i][idx(j)] + lam[i][idx(j - 1)]) / (delta * delta);
  }
  double d3lam(int i, int j) const {
    return (lam[i][idx(j + 2)] - 2.0 * lam[i][idx(j + 1)] + 2.0 * lam[i][idx(j - 1)] -
            lam[i][idx(j - 2)]) /
           (2.0 * delta * delta * delta);
  }
  std::vector<double> dEv(int k, int j) const {
    const auto& hi = v[k][idx(j + 1)];
    const auto& lo = v[k][idx(j - 1)];
    std::vector<double> out(hi.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (hi[i] - lo[i]) / (2.0 * delta);
    return out;
  }
  std::vector<double> d2Ev(int k, int j) const {
    const auto& hi = v[k][idx(j + 1)];
    const auto& mid = v[k][idx(j)];
    const auto& lo = v[k][idx(j - 1)];
    std::vector<double> out(hi.size());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = (hi[i] - 2.0 * mid[i] + lo[i]) / (delta * delta);
    return out;
  }
};

}  // namespace

AveragedDrift averaging_recursion(const AngleTable& tables, int N) {
  if (N < 1) throw OrderTooHigh("averaging order N must be >= 1");
  if (N > tables.k_max)
    throw OrderTooHigh("averaging order N=" + std::to_string(N) + " exceeds series k_max=" +
                       std::to_string(tables.k_max));
  const int q = tables.q;
  const std::size_t n_e = tables.e_grid.size();
  const std::size_t n = static_cast<std::size_t>(tables.n_phi);

  AveragedDrift out;
  out.order_N = N;
  out.q = q;
  out.n_phi = tables.n_phi;
  out.e_grid = tables.e_grid;
  out.nu.resize(n_e);
  auto sized2 = [&](auto& a) { a.assign(static_cast<std::size_t>(N), std::vector<double>(n_e, 0.0)); };
  sized2(out.lambda); sized2(out.dlambda); sized2(out.d2lambda); sized2(out.d3lambda);
  auto sized3 = [&](auto& a) {
    a.assign(static_cast<std::size_t>(N),
             std::vector<std::vector<double>>(n_e, std::vector<double>(n, 0.0)));
  };
  sized3(out.v); sized3(out.dv); sized3(out.d2v);
  out.coeff.reserve(n_e);

  for (std::size_t ie = 0; ie < n_e; ++ie) {
    const AngleColumn& col = tables.columns[ie];
    if (col.radius < N - 1)
      throw GridMismatch("angle table stencil too narrow for order N");
    ColumnWork w;
    w.radius = col.radius;
    w.delta = col.delta;
    const std::size_t width = static_cast<std::size_t>(2 * col.radius + 1);
    w.v.assign(static_cast<std::size_t>(N + 1), std::vector<std::vector<double>>(width));
    w.vphi = w.v;
    w.vphi2 = w.v;
    w.lam.assign(static_cast<std::size_t>(N + 1),
                 std::vector<double>(width, std::numeric_limits<double>::quiet_NaN()));

    for (int k = 1; k <= N; ++k) {
      const int avail = w.avail(k);
      if (avail < 0) throw GridMismatch("stencil exhausted");
      for (int j = -avail; j <= avail; ++j) {
        const CoeffSlice& s = col.at(j);
        std::vector<double> G = s.f[static_cast<std::size_t>(k - 1)];

        // (f_{i1} dE + g_{i1} dphi) v_{i2}, i1 + i2 = k
        for (int i1 = 1; i1 < k; ++i1) {
          int i2 = k - i1;
          auto dv = w.dEv(i2, j);
          const auto& vp = w.vphi[static_cast<std::size_t>(i2)][w.idx(j)];
          const auto& fr = s.f[static_cast<std::size_t>(i1 - 1)];
          const auto& gr = s.g[static_cast<std::size_t>(i1 - 1)];
          for (std::size_t i = 0; i < n; ++i) G[i] += fr[i] * dv[i] + gr[i] * vp[i];
        }

        // second-order diffusion terms on v_{i3}, i1 + i2 + i3 = k
        for (int i1 = 1; i1 <= k - 2; ++i1) {
          for (int i2 = 1; i2 <= k - 1 - i1; ++i2) {
            int i3 = k - i1 - i2;
            auto b11 = s.beta_row(1, 1, i1), b12 = s.beta_row(1, 2, i1);
            auto c11 = s.beta_row(1, 1, i2), c12 = s.beta_row(1, 2, i2);
            auto b21 = s.beta_row(2, 1, i2), b22 = s.beta_row(2, 2, i2);
            auto a21 = s.beta_row(2, 1, i1), a22 = s.beta_row(2, 2, i1);
            auto d2v_ = w.d2Ev(i3, j);
            auto dv_ = w.dEv(i3, j);
            auto dvphi = spectral_derivative(dv_);
            const auto& vp2 = w.vphi2[static_cast<std::size_t>(i3)][w.idx(j)];
            for (std::size_t i = 0; i < n; ++i) {
              double cEE = b11[i] * c11[i] + b12[i] * c12[i];
              double cEp = b11[i] * b21[i] + b12[i] * b22[i];
              double cpp = a21[i] * b21[i] + a22[i] * b22[i];
              G[i] += 0.5 * cEE * d2v_[i] + cEp * dvphi[i] + 0.5 * cpp * vp2[i];
            }
          }
        }

        // aging term -((k-q)/q) v_{k-q}
        if (k - q >= 1) {
          const auto& vo = w.v[static_cast<std::size_t>(k - q)][w.idx(j)];
          double c = static_cast<double>(k - q) / static_cast<double>(q);
          for (std::size_t i = 0; i < n; ++i) G[i] -= c * vo[i];
        }

        // Taylor matching of Lambda_i(v) around E
        for (int i1 = 1; i1 < k; ++i1) {
          int rem = k - i1;
          {  // p = 1
            double dl = w.dlam(i1, j);
            const auto& vr = w.v[static_cast<std::size_t>(rem)][w.idx(j)];
            for (std::size_t i = 0; i < n; ++i) G[i] -= dl * vr[i];
          }
          if (rem >= 2) {  // p = 2
            double d2l = 0.5 * w.d2lam(i1, j);
            for (int j1 = 1; j1 < rem; ++j1) {
              const auto& va = w.v[static_cast<std::size_t>(j1)][w.idx(j)];
              const auto& vb = w.v[static_cast<std::size_t>(rem - j1)][w.idx(j)];
              for (std::size_t i = 0; i < n; ++i) G[i] -= d2l * va[i] * vb[i];
            }
          }
          if (rem >= 3) {  // p = 3
            double d3l = w.d3lam(i1, j) / 6.0;
            for (int j1 = 1; j1 <= rem - 2; ++j1) {
              for (int j2 = 1; j2 <= rem - 1 - j1; ++j2) {
                int j3 = rem - j1 - j2;
                const auto& va = w.v[static_cast<std::size_t>(j1)][w.idx(j)];
                const auto& vb = w.v[static_cast<std::size_t>(j2)][w.idx(j)];
                const auto& vc = w.v[static_cast<std::size_t>(j3)][w.idx(j)];
                for (std::size_t i = 0; i < n; ++i) G[i] -= d3l * va[i] * vb[i] * vc[i];
              }
            }
          }
        }

        double lam = periodic_mean(G);
        w.lam[static_cast<std::size_t>(k)][w.idx(j)] = lam;
        std::vector<double> brace(n);
        for (std::size_t i = 0; i < n; ++i) brace[i] = G[i] - lam;
        auto anti = spectral_antiderivative(brace);
        std::vector<double> vk(n);
        for (std::size_t i = 0; i < n; ++i) vk[i] = -anti[i] / s.nu;
        double resid = std::abs(periodic_mean(vk));
        double scale = 0.0;
        for (double vv : vk) scale = std::max(scale, std::abs(vv));
        if (resid > 1e-10 * (1.0 + scale))
          throw GridTooCoarse("mean normalization residual " + std::to_string(resid));
        w.vphi[static_cast<std::size_t>(k)][w.idx(j)] = spectral_derivative(vk);
        w.vphi2[static_cast<std::size_t>(k)][w.idx(j)] = spectral_derivative(vk, 2);
        w.v[static_cast<std::size_t>(k)][w.idx(j)] = std::move(vk);
      }
    }

    // export center values and stencil derivatives
    out.nu[ie] = col.at(0).nu;
    for (int k = 1; k <= N; ++k) {
      std::size_t ki = static_cast<std::size_t>(k - 1);
      out.lambda[ki][ie] = w.lam[static_cast<std::size_t>(k)][w.idx(0)];
      out.dlambda[ki][ie] = w.dlam(k, 0);
      out.d2lambda[ki][ie] = w.d2lam(k, 0);
      out.d3lambda[ki][ie] = w.avail(k) >= 2 ? w.d3lam(k, 0) : 0.0;
      out.v[ki][ie] = w.v[static_cast<std::size_t>(k)][w.idx(0)];
      out.dv[ki][ie] = w.dEv(k, 0);
      out.d2v[ki][ie] = w.d2Ev(k, 0);
    }
    out.coeff.push_back(col.at(0));
  }

  if (n_e >= 2) {
    out.lambda_splines_.reserve(static_cast<std::size_t>(N));
    for (int k = 1; k <= N; ++k)
      out.lambda_splines_.emplace_back(out.e_grid, out.lambda[static_cast<std::size_t>(k - 1)]);
  }
  return out;
}

double AveragedDrift::lambda_at(int k, double energy) const {
  if (k < 1 || k > order_N) throw OrderTooHigh("lambda_at: order out of range");
  if (lambda_splines_.empty()) return lambda[static_cast<std::size_t>(k - 1)].front();
  return lambda_splines_[static_cast<std::size_t>(k - 1)](energy);
}

// One decade only: wider windows push the log-log slope of drifts with
// O(v) corrections (Example 3's rational factor) outside the 0.1 integer
// rounding tolerance.
FitWindow default_fit_window(double e0) { return {1e-3 * e0, 1e-2 * e0}; }

std::vector<double> log_spaced(double lo, double hi, int count) {
  std::vector<double> out(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    out[static_cast<std::size_t>(i)] =
        lo * std::pow(hi / lo, static_cast<double>(i) / (count - 1));
  return out;
}

ExponentFit fit_exponents(const AveragedDrift& drift, FitWindow window) {
  std::vector<std::size_t> sel;
  for (std::size_t i = 0; i < drift.e_grid.size(); ++i)
    if (drift.e_grid[i] >= window.lo && drift.e_grid[i] <= window.hi) sel.push_back(i);
  if (sel.size() < 8)
    throw GridTooCoarse("fit window contains only " + std::to_string(sel.size()) +
                        " grid energies (need >= 8)");

  const int N = drift.order_N;
  double global_max = 0.0;
  std::vector<double> order_max(static_cast<std::size_t>(N), 0.0);
  for (int k = 1; k <= N; ++k) {
    for (std::size_t i : sel)
      order_max[static_cast<std::size_t>(k - 1)] =
          std::max(order_max[static_cast<std::size_t>(k - 1)],
                   std::abs(drift.lambda[static_cast<std::size_t>(k - 1)][i]));
    global_max = std::max(global_max, order_max[static_cast<std::size_t>(k - 1)]);
  }
  const double null_threshold = 1e-9 * (1.0 + global_max);

  ExponentFit fit;
  auto is_null = [&](int k) { return order_max[static_cast<std::size_t>(k - 1)] < null_threshold; };

  int n = 0;
  for (int k = 1; k <= N; ++k)
    if (!is_null(k)) {
      n = k;
      break;
    }
  if (n == 0) {
    fit.case_tag = CaseTag::Degenerate;
    return fit;
  }
  fit.n = n;

  // log-log slope per nonzero order -> monomial degree
  struct Deg {
    double slope = 0.0;
    int degree = -1;     // -1: not integer within 0.1
    double coeff = 0.0;  // leading coefficient via polynomial extrapolation
  };
  std::map<int, Deg> degs;
  for (int k = n; k <= N; ++k) {
    if (is_null(k)) continue;
    std::vector<double> lx, ly;
    for (std::size_t i : sel) {
      double val = std::abs(drift.lambda[static_cast<std::size_t>(k - 1)][i]);
      if (val > 1e-4 * null_threshold) {
        lx.push_back(std::log(drift.e_grid[i]));
        ly.push_back(std::log(val));
      }
    }
    if (lx.size() < 4) continue;
    Deg d;
    d.slope = grid::fit_line(lx, ly).slope;
    int rounded = static_cast<int>(std::lround(d.slope));
    if (rounded >= 1 && std::abs(d.slope - rounded) <= 0.1) {
      d.degree = rounded;
      // Lambda_k(v) / v^degree extrapolated to v -> 0 via least squares
      std::vector<double> xs, ys;
      for (std::size_t i : sel) {
        xs.push_back(drift.e_grid[i]);
        ys.push_back(drift.lambda[static_cast<std::size_t>(k - 1)][i] /
                     std::pow(drift.e_grid[i], rounded));
      }
      int deg = std::min<int>(8, static_cast<int>(xs.size()) - 2);
      d.coeff = grid::polyfit(xs, ys, deg)[0];
    }
    degs[k] = d;
    fit.raw_slopes.emplace_back(k, d.slope);
  }

  const Deg& dn = degs.at(n);
  if (dn.degree < 0) {
    std::ostringstream msg;
    msg << "log-log slope of Lambda_" << n << " is " << dn.slope
        << ", not within 0.1 of an integer";
    throw FitAmbiguous(msg.str(), dn.slope);
  }

  if (dn.degree == 1) {
    fit.case_tag = CaseTag::Linear;
    fit.lambda_n = dn.coeff;
    // linear case with an interior sign change: tag for Theorem 6 handling
    const auto& row = drift.lambda[static_cast<std::size_t>(n - 1)];
    for (std::size_t i = 1; i + 1 < row.size(); ++i)
      if (row[i] * row[i + 1] < 0.0) {
        fit.case_tag = CaseTag::Cycle;
        break;
      }
    return fit;
  }

  // Nonlinear leading order: find the first later order with degree 1 and
  // O(v^m)-bounded orders in between.
  const int m = dn.degree;
  fit.m = m;
  fit.lambda_nm = dn.coeff;
  for (int k = n + 1; k <= N; ++k) {
    if (is_null(k)) continue;
    auto it = degs.find(k);
    if (it == degs.end()) continue;
    if (it->second.degree == 1) {
      bool bounded = true;
      for (int kk = n + 1; kk < k; ++kk) {
        if (is_null(kk)) continue;
        auto mid = degs.find(kk);
        if (mid == degs.end() || mid->second.slope < m - 0.1) bounded = false;
      }
      if (!bounded) break;
      fit.l = k - n;
      fit.lambda_nl = it->second.coeff;
      fit.case_tag = CaseTag::Nonlinear;
      return fit;
    }
  }
  fit.m.reset();
  fit.lambda_nm.reset();
  fit.case_tag = CaseTag::Degenerate;
  return fit;
}

std::vector<CycleRoot> find_cycle_roots(const AveragedDrift& drift, int k) {
  if (k < 1 || k > drift.order_N) throw OrderTooHigh("find_cycle_roots: order out of range");
  const auto& e = drift.e_grid;
  const auto& lam = drift.lambda[static_cast<std::size_t>(k - 1)];
  std::vector<CycleRoot> roots;
  for (std::size_t i = 0; i + 1 < e.size(); ++i) {
    // grid point exactly on a root
    if (lam[i] == 0.0 && i > 0) {
      CycleRoot root;
      root.c = e[i];
      double h = e[i + 1] - e[i - 1];
      root.dlambda = (lam[i + 1] - lam[i - 1]) / h;
      if (std::abs(root.dlambda) < 1e-8)
        throw DerivativeZero("Lambda' vanishes at the root c=" + std::to_string(root.c));
      root.stable = root.dlambda < 0.0;
      roots.push_back(root);
      continue;
    }
    if (!(lam[i] * lam[i + 1] < 0.0)) continue;
    // local cubic through up to four surrounding table points
    std::size_t lo = i >= 1 ? i - 1 : i;
    std::size_t hi = std::min(e.size() - 1, i + 2);
    std::vector<double> xs(e.begin() + lo, e.begin() + hi + 1);
    std::vector<double> ys(lam.begin() + lo, lam.begin() + hi + 1);
    auto c = grid::polyfit(xs, ys, static_cast<int>(xs.size()) - 1);
    auto eval = [&](double x) {
      double acc = 0.0;
      for (std::size_t p = c.size(); p-- > 0;) acc = acc * x + c[p];
      return acc;
    };
    auto deriv = [&](double x) {
      double acc = 0.0;
      for (std::size_t p = c.size(); p-- > 1;) acc = acc * x + c[p] * static_cast<double>(p);
      return acc;
    };
    double a = e[i], b = e[i + 1];
    double fa = eval(a);
    for (int it = 0; it < 80; ++it) {
      double midp = 0.5 * (a + b);
      double fm = eval(midp);
      if (fa * fm <= 0.0)
        b = midp;
      else {
        a = midp;
        fa = fm;
      }
    }
    CycleRoot root;
    root.c = 0.5 * (a + b);
    root.dlambda = deriv(root.c);
    if (std::abs(root.dlambda) < 1e-8)
      throw DerivativeZero("Lambda' vanishes at the root c=" + std::to_string(root.c));
    root.stable = root.dlambda < 0.0;
    roots.push_back(root);
  }
  if (roots.empty())
    throw NoRoot("Lambda_" + std::to_string(k) + " has no sign change on the energy grid");
  return roots;
}

namespace {

// v_k(E, phi) evaluated off-grid: Fourier coefficients per grid energy,
// 4-point Lagrange interpolation in E, trig evaluation in phi.
struct VInterp {
  int n_modes = 0;
  std::vector<double> e_grid;
  // coeff[k-1][iE][mode]
  std::vector<std::vector<std::vector<std::complex<double>>>> coeff;

  VInterp(const AveragedDrift& d) : e_grid(d.e_grid) {
    const int n = d.n_phi;
    n_modes = n / 2 + 1;
    coeff.resize(d.v.size());
    for (std::size_t k = 0; k < d.v.size(); ++k) {
      coeff[k].resize(e_grid.size());
      for (std::size_t ie = 0; ie < e_grid.size(); ++ie) {
        std::vector<std::complex<double>> a(d.v[k][ie].begin(), d.v[k][ie].end());
        grid::fft(a, false);
        coeff[k][ie].assign(a.begin(), a.begin() + n_modes);
        for (auto& z : coeff[k][ie]) z /= static_cast<double>(n);
      }
    }
  }

  double operator()(int k, double E, double phi) const {
    const auto& ck = coeff[static_cast<std::size_t>(k - 1)];
    // surrounding 4 grid energies
    std::size_t j =
        static_cast<std::size_t>(std::upper_bound(e_grid.begin(), e_grid.end(), E) - e_grid.begin());
    std::size_t i0 = j >= 2 ? j - 2 : 0;
    if (i0 + 3 >= e_grid.size()) i0 = e_grid.size() >= 4 ? e_grid.size() - 4 : 0;
    std::size_t npts = std::min<std::size_t>(4, e_grid.size() - i0);
    double w[4];
    for (std::size_t a = 0; a < npts; ++a) {
      w[a] = 1.0;
      for (std::size_t b = 0; b < npts; ++b)
        if (a != b) w[a] *= (E - e_grid[i0 + b]) / (e_grid[i0 + a] - e_grid[i0 + b]);
    }
    double acc = 0.0;
    for (int mode = 0; mode < n_modes; ++mode) {
      std::complex<double> c(0.0, 0.0);
      for (std::size_t a = 0; a < npts; ++a) c += w[a] * ck[i0 + a][static_cast<std::size_t>(mode)];
      if (mode == 0)
        acc += c.real();
      else if (mode == n_modes - 1)
        acc += c.real() * std::cos(mode * phi);
      else
        acc += 2.0 * (c.real() * std::cos(mode * phi) - c.imag() * std::sin(mode * phi));
    }
    return acc;
  }
};

}  // namespace

double apply_generator(const pert::SdeSystem& sys, const AveragedDrift& drift,
                       const ham::OrbitCache& cache, Vec2 z, double t) {
  const double h = 1e-5 * sys.ham.r();
  const double e_lo = drift.e_grid.front(), e_hi = drift.e_grid.back();
  VInterp interp(drift);

  auto composite = [&](double x, double y, double tt) {
    double E = sys.ham.value(x, y);
    if (E < 0.25 * e_lo || E > e_hi * 1.25 || E > 0.9 * sys.ham.e0())
      throw StencilOutOfDomain("stencil point energy " + std::to_string(E) +
                               " outside the tabulated family");
    auto [Ee, phi] = ham::energy_angle_of_point(sys.ham, cache, x, y, drift.n_phi);
    double acc = Ee;
    double u = std::pow(tt, -1.0 / static_cast<double>(drift.q));
    for (int k = 1; k <= drift.order_N; ++k) acc += std::pow(u, k) * interp(k, Ee, phi);
    return acc;
  };

  // d/dt of the composite at fixed (x, y) is analytic in the t-powers.
  double E0v = sys.ham.value(z.x, z.y);
  auto [Ee, phi0] = ham::energy_angle_of_point(sys.ham, cache, z.x, z.y, drift.n_phi);
  (void)E0v;
  double dt_term = 0.0;
  for (int k = 1; k <= drift.order_N; ++k) {
    double kk = static_cast<double>(k) / drift.q;
    dt_term += -kk * std::pow(t, -kk - 1.0) * interp(k, Ee, phi0);
  }

  double c0 = composite(z.x, z.y, t);
  double cxp = composite(z.x + h, z.y, t), cxm = composite(z.x - h, z.y, t);
  double cyp = composite(z.x, z.y + h, t), cym = composite(z.x, z.y - h, t);
  double cpp = composite(z.x + h, z.y + h, t), cpm = composite(z.x + h, z.y - h, t);
  double cmp = composite(z.x - h, z.y + h, t), cmm = composite(z.x - h, z.y - h, t);

  double cx = (cxp - cxm) / (2.0 * h);
  double cy = (cyp - cym) / (2.0 * h);
  double cxx = (cxp - 2.0 * c0 + cxm) / (h * h);
  double cyy = (cyp - 2.0 * c0 + cym) / (h * h);
  double cxy = (cpp - cpm - cmp + cmm) / (4.0 * h * h);

  Vec2 b = sys.drift(z, t);
  Mat2 B = sys.diffusion(z, t);
  double axx = 0.5 * (B.a11 * B.a11 + B.a12 * B.a12);
  double ayy = 0.5 * (B.a21 * B.a21 + B.a22 * B.a22);
  double axy = B.a11 * B.a21 + B.a12 * B.a22;
  return dt_term + b.x * cx + b.y * cy + axx * cxx + ayy * cyy + axy * cxy;
}

double generator_residual_max(const AveragedDrift& drift, double t) {
  const int N = drift.order_N;
  const int q = drift.q;
  const std::size_t n = static_cast<std::size_t>(drift.n_phi);
  const double u = std::pow(t, -1.0 / static_cast<double>(q));
  const int k_coeff = static_cast<int>(drift.coeff.front().f.size());

  double worst = 0.0;
  for (std::size_t ie = 0; ie < drift.e_grid.size(); ++ie) {
    const CoeffSlice& s = drift.coeff[ie];
    const double E = drift.e_grid[ie];
    const double nu = drift.nu[ie];

    // spectral phi-derivatives of the stored transform coefficients
    std::vector<std::vector<double>> vphi(static_cast<std::size_t>(N)),
        vphi2(static_cast<std::size_t>(N)), dvphi(static_cast<std::size_t>(N));
    for (int k = 1; k <= N; ++k) {
      vphi[static_cast<std::size_t>(k - 1)] = spectral_derivative(drift.v[static_cast<std::size_t>(k - 1)][ie]);
      vphi2[static_cast<std::size_t>(k - 1)] =
          spectral_derivative(drift.v[static_cast<std::size_t>(k - 1)][ie], 2);
      dvphi[static_cast<std::size_t>(k - 1)] =
          spectral_derivative(drift.dv[static_cast<std::size_t>(k - 1)][ie]);
    }

    for (std::size_t i = 0; i < n; ++i) {
      // assemble f, g, beta at time t from the k-tables
      double f = 0.0, g = 0.0, b11 = 0.0, b12 = 0.0, b21 = 0.0, b22 = 0.0;
      for (int k = 1; k <= k_coeff; ++k) {
        double tk = std::pow(u, k);
        f += tk * s.f[static_cast<std::size_t>(k - 1)][i];
        g += tk * s.g[static_cast<std::size_t>(k - 1)][i];
        b11 += tk * s.beta_row(1, 1, k)[i];
        b12 += tk * s.beta_row(1, 2, k)[i];
        b21 += tk * s.beta_row(2, 1, k)[i];
        b22 += tk * s.beta_row(2, 2, k)[i];
      }
      // V_N and its derivatives at (E, phi_i, t)
      double V = E, VE = 1.0, Vp = 0.0, VEE = 0.0, VEp = 0.0, Vpp = 0.0, Vt = 0.0;
      for (int k = 1; k <= N; ++k) {
        std::size_t ki = static_cast<std::size_t>(k - 1);
        double tk = std::pow(u, k);
        V += tk * drift.v[ki][ie][i];
        VE += tk * drift.dv[ki][ie][i];
        Vp += tk * vphi[ki][i];
        VEE += tk * drift.d2v[ki][ie][i];
        VEp += tk * dvphi[ki][i];
        Vpp += tk * vphi2[ki][i];
        Vt += -static_cast<double>(k) / q * std::pow(t, -static_cast<double>(k) / q - 1.0) *
              drift.v[ki][ie][i];
      }
      double LV = Vt + f * VE + (nu + g) * Vp + 0.5 * (b11 * b11 + b12 * b12) * VEE +
                  (b11 * b21 + b12 * b22) * VEp + 0.5 * (b21 * b21 + b22 * b22) * Vpp;
      // sum_k t^{-k/q} Lambda_k(v), Lambda Taylor-expanded around E
      double dE = V - E;
      double target = 0.0;
      for (int k = 1; k <= N; ++k) {
        std::size_t ki = static_cast<std::size_t>(k - 1);
        double lam = drift.lambda[ki][ie] + dE * drift.dlambda[ki][ie] +
                     0.5 * dE * dE * drift.d2lambda[ki][ie] +
                     dE * dE * dE / 6.0 * drift.d3lambda[ki][ie];
        target += std::pow(u, k) * lam;
      }
      worst = std::max(worst, std::abs(LV - target));
    }
  }
  return worst;
}

double AveragedDrift::v_interp(int k, double energy, double phi) const {
  VInterp interp(*this);
  return interp(k, energy, phi);
}

}  // namespace fadebif::avg
