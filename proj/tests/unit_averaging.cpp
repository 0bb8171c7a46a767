#include <doctest.h>

#include <cmath>
#include <functional>

#include "fadebif/averaging.hpp"
#include "fadebif/gridmath.hpp"
#include "oracles.hpp"

using namespace fadebif;

namespace {

pert::SdeSystem ex0(double lambda, double mu) {
  return pert::registry_get("ex0", {{"lambda", lambda}, {"mu", mu}});
}
pert::SdeSystem ex3(double a1, double a2, double mu) {
  return pert::registry_get("ex3", {{"a1", a1}, {"a2", a2}, {"mu", mu}});
}

avg::AveragedDrift synthetic_drift(const std::vector<double>& e_grid,
                                   const std::vector<std::function<double(double)>>& lambdas) {
  avg::AveragedDrift d;
  d.order_N = static_cast<int>(lambdas.size());
  d.q = 2;
  d.e_grid = e_grid;
  d.nu.assign(e_grid.size(), 1.0);
  for (const auto& f : lambdas) {
    std::vector<double> row(e_grid.size());
    for (std::size_t i = 0; i < e_grid.size(); ++i) row[i] = f(e_grid[i]);
    d.lambda.push_back(row);
  }
  return d;
}

}  // namespace

TEST_CASE("angle average on the uniform grid") {
  std::vector<double> c(64, 2.5);
  CHECK(avg::angle_average(c) == doctest::Approx(2.5));
  std::vector<double> s(256);
  for (int i = 0; i < 256; ++i) {
    double p = kTwoPi * i / 256;
    s[i] = std::sin(p) * std::sin(p);
  }
  CHECK(avg::angle_average(s) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("energy-angle coefficients: ex0 f2 mean and zero perturbation") {
  auto sys = ex0(-1.0, 1.0);
  ham::OrbitCache cache(sys.ham);
  auto table = avg::energy_angle_coefficients(sys, cache, {0.5}, 256);
  const auto& f2 = table.center(0).f[1];
  // <f2> = (lambda + mu^2/2) E with X = sqrt(2E) cos, Y = -sqrt(2E) sin
  CHECK(avg::angle_average(f2) == doctest::Approx((-1.0 + 0.5) * 0.5).epsilon(1e-10));

  auto zero = ex0(0.0, 0.0);
  auto ztab = avg::energy_angle_coefficients(zero, cache, {0.5}, 256);
  for (int k = 1; k <= ztab.k_max; ++k) {
    for (double v : ztab.center(0).f[k - 1]) CHECK(v == 0.0);
    for (double v : ztab.center(0).g[k - 1]) CHECK(v == 0.0);
  }
}

TEST_CASE("energy-angle coefficients: ex1 (h=p=1) f1 = lambda Y^2 pointwise") {
  auto sys = pert::registry_get("ex1",
                                {{"h", 1}, {"p", 1}, {"q", 2}, {"lambda", -0.8}, {"mu", 0.4}});
  ham::OrbitCache cache(sys.ham);
  auto table = avg::energy_angle_coefficients(sys, cache, {0.3}, 256);
  auto orbit = cache.get(0.3, 256);
  const auto& f1 = table.center(0).f[0];
  for (int i = 0; i < 256; i += 13)
    CHECK(f1[i] == doctest::Approx(-0.8 * orbit->y[i] * orbit->y[i]).epsilon(1e-9));
}

TEST_CASE("averaging recursion: ex0 exact linear drift") {
  for (auto [lambda, mu] : std::vector<std::pair<double, double>>{{-1, 1}, {0.3, 1}, {1, 0}}) {
    auto sys = ex0(lambda, mu);
    ham::OrbitCache cache(sys.ham);
    auto e_grid = avg::log_spaced(0.004, 2.0, 10);
    auto table = avg::energy_angle_coefficients(sys, cache, e_grid, 128);
    auto drift = avg::averaging_recursion(table, 2);
    double lam2 = lambda + 0.5 * mu * mu;
    for (std::size_t i = 0; i < e_grid.size(); ++i) {
      CHECK(std::abs(drift.lambda[0][i]) <= 1e-12);
      CHECK(drift.lambda[1][i] == doctest::Approx(lam2 * e_grid[i]).epsilon(1e-8));
    }
  }
}

TEST_CASE("averaging recursion: ex3 closed form, grid convergence, normalization") {
  auto sys = ex3(1.0, -2.0, 0.5);
  ham::OrbitCache cache(sys.ham);
  auto e_grid = avg::log_spaced(0.05, 1.5, 10);
  auto table = avg::energy_angle_coefficients(sys, cache, e_grid, 256);
  auto drift = avg::averaging_recursion(table, 2);
  for (std::size_t i = 0; i < e_grid.size(); ++i) {
    double ref = oracle::ex3_lambda2(e_grid[i], 1.0, -2.0, 0.5);
    CHECK(drift.lambda[1][i] == doctest::Approx(ref).epsilon(1e-6));
    // <v_k> = 0
    for (int k = 1; k <= 2; ++k) {
      double mean = avg::angle_average(drift.v[k - 1][i]);
      double scale = 0.0;
      for (double vv : drift.v[k - 1][i]) scale = std::max(scale, std::abs(vv));
      CHECK(std::abs(mean) <= 1e-10 * (1.0 + scale));
    }
  }
  // doubling both grids moves Lambda_k by less than 1e-8 relative (the
  // recursion is local in energy, so refining e_grid keeps shared centers)
  auto table2 = avg::energy_angle_coefficients(sys, cache, e_grid, 512);
  auto drift2 = avg::averaging_recursion(table2, 2);
  for (std::size_t i = 0; i < e_grid.size(); ++i)
    CHECK(drift2.lambda[1][i] ==
          doctest::Approx(drift.lambda[1][i]).epsilon(1e-8));
}

TEST_CASE("averaging recursion: small-energy limits of v_k and Lambda_k") {
  auto sys = ex3(1.0, -2.0, 0.5);
  ham::OrbitCache cache(sys.ham);
  std::vector<double> e_grid{1e-4, 1e-3, 1e-2, 0.1};
  auto table = avg::energy_angle_coefficients(sys, cache, e_grid, 128);
  auto drift = avg::averaging_recursion(table, 2);
  // both are O(E): the values at E=1e-4 must be tiny
  CHECK(std::abs(drift.lambda[1][0]) < 5e-4);
  double vmax = 0.0;
  for (double v : drift.v[1][0]) vmax = std::max(vmax, std::abs(v));
  CHECK(vmax < 5e-4);
  // and the ratio Lambda_2/E approaches lambda_n = a1 + mu^2/2
  CHECK(drift.lambda[1][0] / e_grid[0] == doctest::Approx(1.125).epsilon(1e-3));
}

TEST_CASE("printed low-order right-hand sides rebuild the general recursion") {
  // ex1 with q=3, h=p=1 exercises every R_2/R_3 ingredient: v_1 != 0 and
  // first-order diffusion rows are present.
  auto sys = pert::registry_get("ex1",
                                {{"h", 1}, {"p", 1}, {"q", 3}, {"lambda", -0.6}, {"mu", 0.9}});
  ham::OrbitCache cache(sys.ham);
  std::vector<double> e_grid{0.2, 0.35, 0.5};
  auto table = avg::energy_angle_coefficients(sys, cache, e_grid, 256);
  auto drift = avg::averaging_recursion(table, 3);
  const int n = drift.n_phi;
  for (std::size_t ie = 0; ie < e_grid.size(); ++ie) {
    const auto& s = drift.coeff[ie];
    auto dphi_v1 = grid::spectral_derivative(drift.v[0][ie]);
    auto dphi_v2 = grid::spectral_derivative(drift.v[1][ie]);
    auto d2phi_v1 = grid::spectral_derivative(drift.v[0][ie], 2);
    auto dEphi_v1 = grid::spectral_derivative(drift.dv[0][ie]);

    // R2 = (f1 dE + g1 dphi) v1 - v1 Lambda_1' - ((2-q)/q) v_{2-q}
    std::vector<double> r2(n);
    for (int i = 0; i < n; ++i)
      r2[i] = s.f[0][i] * drift.dv[0][ie][i] + s.g[0][i] * dphi_v1[i] -
              drift.v[0][ie][i] * drift.dlambda[0][ie];
    std::vector<double> g2(n);
    for (int i = 0; i < n; ++i) g2[i] = s.f[1][i] + r2[i];
    CHECK(avg::angle_average(g2) == doctest::Approx(drift.lambda[1][ie]).epsilon(1e-9));

    // R3 per the printed second-order display, with the general-expansion
    // cross term beta_{1,j,1} beta_{2,j,1}
    std::vector<double> r3(n);
    for (int i = 0; i < n; ++i) {
      double b11 = s.beta_row(1, 1, 1)[i], b12 = s.beta_row(1, 2, 1)[i];
      double b21 = s.beta_row(2, 1, 1)[i], b22 = s.beta_row(2, 2, 1)[i];
      r3[i] = s.f[0][i] * drift.dv[1][ie][i] + s.g[0][i] * dphi_v2[i] +
              s.f[1][i] * drift.dv[0][ie][i] + s.g[1][i] * dphi_v1[i] -
              drift.v[0][ie][i] * drift.dlambda[1][ie] -
              drift.v[1][ie][i] * drift.dlambda[0][ie] -
              0.5 * drift.v[0][ie][i] * drift.v[0][ie][i] * drift.d2lambda[0][ie] +
              0.5 * (b11 * b11 + b12 * b12) * drift.d2v[0][ie][i] +
              (b11 * b21 + b12 * b22) * dEphi_v1[i] +
              0.5 * (b21 * b21 + b22 * b22) * d2phi_v1[i];
    }
    std::vector<double> g3(n);
    for (int i = 0; i < n; ++i) g3[i] = s.f[2][i] + r3[i];
    CHECK(avg::angle_average(g3) == doctest::Approx(drift.lambda[2][ie]).epsilon(1e-9));
  }
}

TEST_CASE("fit exponents on synthetic monomial tables") {
  auto grid16 = avg::log_spaced(1.8e-3, 1.8e-2, 16);
  auto lin = synthetic_drift(grid16, {[](double v) { return -0.5 * v; }});
  auto fit = avg::fit_exponents(lin, {1.8e-3, 1.8e-2});
  CHECK(fit.case_tag == avg::CaseTag::Linear);
  CHECK(fit.n == 1);
  CHECK(*fit.lambda_n == doctest::Approx(-0.5).epsilon(1e-12));

  auto nl = synthetic_drift(grid16, {[](double) { return 0.0; },
                                     [](double v) { return 0.25 * v * v; },
                                     [](double) { return 0.0; },
                                     [](double v) { return -2.0 * v; }});
  fit = avg::fit_exponents(nl, {1.8e-3, 1.8e-2});
  CHECK(fit.case_tag == avg::CaseTag::Nonlinear);
  CHECK(fit.n == 2);
  CHECK(*fit.m == 2);
  CHECK(*fit.l == 2);
  CHECK(*fit.lambda_nm == doctest::Approx(0.25).epsilon(1e-10));
  CHECK(*fit.lambda_nl == doctest::Approx(-2.0).epsilon(1e-10));

  auto lone = synthetic_drift(grid16, {[](double v) { return 0.25 * v * v; }});
  fit = avg::fit_exponents(lone, {1.8e-3, 1.8e-2});
  CHECK(fit.case_tag == avg::CaseTag::Degenerate);
  CHECK(fit.raw_slopes.at(0).second == doctest::Approx(2.0).epsilon(1e-6));

  auto frac = synthetic_drift(grid16, {[](double v) { return std::pow(v, 1.5); }});
  try {
    avg::fit_exponents(frac, {1.8e-3, 1.8e-2});
    FAIL("expected FitAmbiguous");
  } catch (const avg::FitAmbiguous& e) {
    CHECK(e.raw_slope == doctest::Approx(1.5).epsilon(1e-6));
  }

  auto zero = synthetic_drift(grid16, {[](double) { return 0.0; }});
  CHECK(avg::fit_exponents(zero, {1.8e-3, 1.8e-2}).case_tag == avg::CaseTag::Degenerate);

  CHECK_THROWS_AS(avg::fit_exponents(lin, {1.8e-3, 2.5e-3}), avg::GridTooCoarse);
}

TEST_CASE("cycle roots: synthetic and closed-form tables") {
  auto grid = avg::log_spaced(0.01, 2.0, 40);
  auto table = synthetic_drift(grid, {[](double v) { return v * (1.0 - v); }});
  auto roots = avg::find_cycle_roots(table, 1);
  REQUIRE(roots.size() == 1);
  CHECK(roots[0].c == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(roots[0].dlambda == doctest::Approx(-1.0).epsilon(1e-8));
  CHECK(roots[0].stable);

  auto flipped = synthetic_drift(grid, {[](double v) { return v * (v - 1.0); }});
  roots = avg::find_cycle_roots(flipped, 1);
  REQUIRE(roots.size() == 1);
  CHECK_FALSE(roots[0].stable);

  auto mono = synthetic_drift(grid, {[](double v) { return v; }});
  CHECK_THROWS_AS(avg::find_cycle_roots(mono, 1), avg::NoRoot);
}

TEST_CASE("cycle root of Example 3 with the printed derivative") {
  auto sys = ex3(1.0, -2.0, 0.5);
  ham::OrbitCache cache(sys.ham);
  auto e_grid = avg::log_spaced(0.5, 3.0, 24);
  auto table = avg::energy_angle_coefficients(sys, cache, e_grid, 128);
  auto drift = avg::averaging_recursion(table, 2);
  auto roots = avg::find_cycle_roots(drift, 2);
  REQUIRE(roots.size() == 1);
  CHECK(roots[0].c == doctest::Approx(1.5).epsilon(1e-4));
  CHECK(roots[0].dlambda == doctest::Approx(-0.28125).epsilon(1e-3));
  CHECK(roots[0].stable);
}

TEST_CASE("generator residual decays at the remainder rate") {
  auto sys = pert::registry_get("ex1",
                                {{"h", 2}, {"p", 1}, {"q", 2}, {"lambda", -1}, {"mu", 1}});
  ham::OrbitCache cache(sys.ham);
  auto e_grid = avg::log_spaced(0.05, 0.8, 6);
  auto table = avg::energy_angle_coefficients(sys, cache, e_grid, 128);
  auto drift = avg::averaging_recursion(table, 2);
  double r2 = avg::generator_residual_max(drift, 1e2);
  double r3 = avg::generator_residual_max(drift, 1e3);
  double r4 = avg::generator_residual_max(drift, 1e4);
  double slope = std::log(r4 / r2) / std::log(1e4 / 1e2);
  CHECK(slope <= -(2.0 + 1.0) / 2.0 + 0.1);
  CHECK(r3 < r2);
  CHECK(r4 < r3);
}

TEST_CASE("apply_generator on conserved and vanishing-drift points") {
  {
    auto sys = ex0(0.0, 0.0);
    ham::OrbitCache cache(sys.ham);
    auto e_grid = avg::log_spaced(0.1, 1.0, 6);
    auto table = avg::energy_angle_coefficients(sys, cache, e_grid, 128);
    auto drift = avg::averaging_recursion(table, 1);
    // L H0 = 0 along the limiting flow
    CHECK(std::abs(avg::apply_generator(sys, drift, cache, {0.8, 0.3}, 5.0)) < 1e-5);
  }
  {
    auto sys = ex0(1.0, 0.0);
    ham::OrbitCache cache(sys.ham);
    auto e_grid = avg::log_spaced(0.1, 1.0, 6);
    auto table = avg::energy_angle_coefficients(sys, cache, e_grid, 128);
    auto drift = avg::averaging_recursion(table, 1);  // v_1 = 0 for ex0
    // L H0 = lambda y^2 / t vanishes on the x-axis
    CHECK(std::abs(avg::apply_generator(sys, drift, cache, {1.0, 0.0}, 1.0)) < 1e-5);
  }
  {
    auto sys = ex0(0.0, 1.0);
    ham::OrbitCache cache(sys.ham);
    auto e_grid = avg::log_spaced(0.1, 1.0, 6);
    auto table = avg::energy_angle_coefficients(sys, cache, e_grid, 128);
    auto drift = avg::averaging_recursion(table, 1);
    // L H0 = mu^2 x^2 / (2t) vanishes on the y-axis
    CHECK(std::abs(avg::apply_generator(sys, drift, cache, {0.0, 1.0}, 1.0)) < 1e-5);
    CHECK_THROWS_AS(avg::apply_generator(sys, drift, cache, {2.6, 0.0}, 1.0),
                    avg::StencilOutOfDomain);
  }
}

TEST_CASE("order bounds") {
  auto sys = ex0(1.0, 0.5);
  ham::OrbitCache cache(sys.ham);
  auto table = avg::energy_angle_coefficients(sys, cache, {0.5}, 64);
  CHECK_THROWS_AS(avg::averaging_recursion(table, 9), avg::OrderTooHigh);
  CHECK_THROWS_AS(avg::averaging_recursion(table, 0), avg::OrderTooHigh);
}

TEST_CASE("angle tables are 2pi-periodic: midpoint interpolation error") {
  auto sys = ex3(1.0, -2.0, 0.5);
  ham::OrbitCache cache(sys.ham);
  auto t128 = avg::energy_angle_coefficients(sys, cache, {0.5}, 128);
  auto t256 = avg::energy_angle_coefficients(sys, cache, {0.5}, 256);
  for (int k : {1, 2}) {
    const auto& coarse = t128.center(0).f[k - 1];
    const auto& fine = t256.center(0).f[k - 1];
    double scale = 1e-30;
    for (double v : fine) scale = std::max(scale, std::abs(v));
    if (scale < 1e-12) continue;
    grid::TrigInterpolant interp(coarse);
    double worst = 0.0;
    for (int i = 0; i < 128; ++i) {
      double mid = kTwoPi * (2 * i + 1) / 256.0;
      worst = std::max(worst, std::abs(interp(mid) - fine[2 * i + 1]));
    }
    CHECK(worst <= 1e-6 * scale);
  }
}

TEST_CASE("coefficient tables vanish as E -> 0") {
  auto sys = ex3(1.0, -2.0, 0.5);
  ham::OrbitCache cache(sys.ham);
  auto table = avg::energy_angle_coefficients(sys, cache, {1e-4}, 64);
  const auto& s = table.center(0);
  for (int k = 1; k <= table.k_max; ++k) {
    for (double v : s.f[k - 1]) CHECK(std::abs(v) < 1e-3);
    for (double v : s.beta_row(1, 2, k)) CHECK(std::abs(v) < 1e-3);
  }
}

TEST_CASE("ex1 (h=q=2, p=1) fitted linear coefficient equals lambda + mu^2/2") {
  auto sys = pert::registry_get("ex1",
                                {{"h", 2}, {"p", 1}, {"q", 2}, {"lambda", -1}, {"mu", 1}});
  ham::OrbitCache cache(sys.ham);
  auto window = avg::default_fit_window(sys.ham.e0());
  auto grid = avg::log_spaced(window.lo, window.hi, 16);
  auto table = avg::energy_angle_coefficients(sys, cache, grid, 128);
  auto drift = avg::averaging_recursion(table, 2);
  auto fit = avg::fit_exponents(drift, window);
  CHECK(fit.case_tag == avg::CaseTag::Linear);
  CHECK(fit.n == 2);
  CHECK(std::abs(*fit.lambda_n - (-0.5)) <= 1e-6);
}
