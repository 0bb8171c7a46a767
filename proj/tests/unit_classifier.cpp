#include <doctest.h>

#include <cmath>

#include "fadebif/classifier.hpp"

using namespace fadebif;

namespace {

avg::ExponentFit linear_fit(int n, double lambda_n) {
  avg::ExponentFit f;
  f.n = n;
  f.case_tag = avg::CaseTag::Linear;
  f.lambda_n = lambda_n;
  return f;
}

avg::ExponentFit nonlinear_fit(int n, int m, int l, double lnm, double lnl) {
  avg::ExponentFit f;
  f.n = n;
  f.case_tag = avg::CaseTag::Nonlinear;
  f.m = m;
  f.l = l;
  f.lambda_nm = lnm;
  f.lambda_nl = lnl;
  return f;
}

pert::NoiseBound noise(double mu, int sigma_num, int q) {
  pert::NoiseBound nb;
  nb.mu = mu;
  nb.sigma_num = sigma_num;
  nb.q = q;
  nb.sigma = static_cast<double>(sigma_num) / q;
  return nb;
}

}  // namespace

TEST_CASE("weight evaluation") {
  // gamma_q(t) = t
  auto w = cls::weight_eval({2, 2, 1.0, 0.0}, 100.0);
  CHECK_FALSE(w.overflow);
  CHECK(w.value == doctest::Approx(100.0).epsilon(1e-14));
  // n=1, q=2, t=4: exp(2 * sqrt(4)) = e^4
  w = cls::weight_eval({1, 2, 1.0, 0.0}, 4.0);
  CHECK(w.value == doctest::Approx(std::exp(4.0)).epsilon(1e-14));
  // n > q: bounded as t -> infinity
  w = cls::weight_eval({3, 2, 1.0, 0.0}, 1e6);
  CHECK_FALSE(w.overflow);
  CHECK(std::isfinite(w.value));
  CHECK(w.value == doctest::Approx(std::exp(-2.0 * std::pow(1e6, -0.5))).epsilon(1e-12));
  // overflow is reported in log space
  w = cls::weight_eval({1, 4, 5.0, 0.0}, 1e6);
  CHECK(w.overflow);
  CHECK(w.log_value == doctest::Approx(5.0 * (4.0 / 3.0) * std::pow(1e6, 0.75)));
}

TEST_CASE("weights are nondecreasing in t for n <= q") {
  for (int n : {1, 2}) {
    cls::WeightFunction w{n, 2, 0.35, 0.0};
    double prev = 0.0;
    for (double t = 1.0; t < 1e5; t *= 3.7) {
      double v = cls::weight_eval(w, t).log_value;
      CHECK(v >= prev - 1e-12);
      prev = v;
    }
  }
}

TEST_CASE("practical horizon formulas") {
  CHECK(cls::practical_horizon(1, 2, 1.0, 0.1, 1.0, 1.0) == doctest::Approx(0.01));
  CHECK(cls::practical_horizon(2, 2, 1.0, 0.5, 1.0, 0.5) ==
        doctest::Approx(std::exp(1.0) - 1.0));
  // delta -> 0 shrinks the horizon to zero in both branches
  CHECK(cls::practical_horizon(1, 2, 1.0, 1e-9, 1.0, 1.0) < 1e-17);
  CHECK(cls::practical_horizon(2, 2, 1.0, 1e-9, 1.0, 1.0) < 1e-17);
  CHECK_THROWS_AS(cls::practical_horizon(3, 2, 1.0, 0.1, 1.0, 1.0), cls::BadOrder);
}

TEST_CASE("Table 1 rows (linear case)") {
  const int q = 2;
  // lambda_n < 0: stability flavor from n vs q
  auto v = cls::classify_linear(linear_fit(1, -1.0), q, std::nullopt, 0.05);
  CHECK(v.kind == cls::Kind::ExponentiallyStable);
  CHECK(v.theorem == "Theorem 2");
  CHECK(cls::table_label(v) == "exponentially stable");
  REQUIRE(v.weight.has_value());
  CHECK(v.weight->prefactor == doctest::Approx(0.95 * 0.5));

  v = cls::classify_linear(linear_fit(2, -0.5), q, noise(1.0, 2, q), 0.05);
  CHECK(v.kind == cls::Kind::PolynomiallyStable);
  CHECK(cls::table_label(v) == "polynomially stable");
  CHECK(v.weight->prefactor == doctest::Approx(0.95 * 0.25));

  v = cls::classify_linear(linear_fit(3, -1.0), q, std::nullopt, 0.05);
  CHECK(v.kind == cls::Kind::NeutrallyStable);
  CHECK(cls::table_label(v) == "stable");

  // instability rows need the noise bound
  v = cls::classify_linear(linear_fit(1, 0.7), q, noise(1.0, 2, q), 0.05);  // sigma > n/q
  CHECK(v.kind == cls::Kind::Unstable);
  CHECK(v.theorem == "Theorem 3");
  CHECK(cls::table_label(v) == "unstable");

  v = cls::classify_linear(linear_fit(2, 0.7), q, noise(1.0, 2, q), 0.05);  // sigma = n/q
  CHECK(v.kind == cls::Kind::Unstable);

  // practical stability band 0 < lambda <= mu^2/2 at sigma = n/q
  v = cls::classify_linear(linear_fit(2, 0.3), q, noise(1.0, 2, q), 0.05);
  CHECK(v.kind == cls::Kind::PracticallyStable);
  CHECK(v.theorem == "Theorem AsL");
  CHECK(cls::table_label(v) == "practically stable");
  REQUIRE(v.instability_weight.has_value());
  CHECK(v.instability_weight->prefactor == doctest::Approx((0.5 - 0.3 + 0.05) / 2.0));

  // boundary lambda = mu^2/2 is practically stable (closed upper bound)
  v = cls::classify_linear(linear_fit(2, 0.5), q, noise(1.0, 2, q), 0.05);
  CHECK(v.kind == cls::Kind::PracticallyStable);
  // and strictly above it is unstable
  v = cls::classify_linear(linear_fit(2, 0.5 + 1e-9), q, noise(1.0, 2, q), 0.05);
  CHECK(v.kind == cls::Kind::Unstable);
}

TEST_CASE("Table 1 gaps are inconclusive, not misclassified") {
  const int q = 2;
  // lambda = 0
  CHECK(cls::classify_linear(linear_fit(2, 0.0), q, noise(1.0, 2, q), 0.05).kind ==
        cls::Kind::Inconclusive);
  // lambda > 0 without noise data
  CHECK(cls::classify_linear(linear_fit(2, 0.5), q, std::nullopt, 0.05).kind ==
        cls::Kind::Inconclusive);
  // sigma below n/q: the instability hypotheses fail
  CHECK(cls::classify_linear(linear_fit(2, 5.0), q, noise(1.0, 1, q), 0.05).kind ==
        cls::Kind::Inconclusive);
  // n > q with positive lambda: no theorem
  CHECK(cls::classify_linear(linear_fit(3, 1.0), q, noise(1.0, 3, q), 0.05).kind ==
        cls::Kind::Inconclusive);
  // practical-stability band requires sigma = n/q exactly
  CHECK(cls::classify_linear(linear_fit(1, 0.3), q, noise(1.0, 2, q), 0.05).kind ==
        cls::Kind::Unstable);  // sigma=1 > n/q=1/2, threshold 0 -> unstable
}

TEST_CASE("Table 2 rows (nonlinear case)") {
  const int q = 4;
  // lambda_nm < 0, lambda_nl < 0, n+l < q: weighted (exponentially) stable
  auto v = cls::classify_nonlinear(nonlinear_fit(1, 2, 2, -1.0, -0.5), q, std::nullopt, 0.05);
  CHECK(v.kind == cls::Kind::WeightedStable);
  CHECK(v.theorem == "Theorem 4");
  CHECK(cls::table_label(v) == "exponentially stable");
  REQUIRE(v.weight.has_value());
  CHECK(v.weight->n == 3);
  CHECK(v.weight->extra == doctest::Approx(2.0 / (4.0 * 1.0)));

  // plain stability only (n+l > q)
  v = cls::classify_nonlinear(nonlinear_fit(2, 2, 3, -1.0, -0.5), q, std::nullopt, 0.05);
  CHECK(v.kind == cls::Kind::NeutrallyStable);
  CHECK(cls::table_label(v) == "stable");

  // n+l = q with lambda* < 0: polynomially stable; ex2 stable-weighted row
  v = cls::classify_nonlinear(nonlinear_fit(2, 2, 2, 4.5, -0.75), q, std::nullopt, 0.05);
  CHECK(v.kind == cls::Kind::WeightedStable);
  CHECK(cls::table_label(v) == "polynomially stable");
  CHECK(*v.theta == doctest::Approx(0.5));
  // weight t^{theta/2} (gamma_4)^{(1-kappa)|lambda*|/2}: at kappa -> 0 the
  // total power of t is (theta + |lambda4 + theta|)/2 = 3/8
  double total_t_power = 0.5 * *v.theta + 0.95 * std::abs(-0.75 + 0.5) / 2.0;
  CHECK(total_t_power == doctest::Approx(0.36875));

  // n+l = q, lambda_nm < 0 < lambda_nl: decay onto u* t^{-theta}
  v = cls::classify_nonlinear(nonlinear_fit(2, 2, 2, -0.75, 0.25), q, std::nullopt, 0.05);
  CHECK(v.kind == cls::Kind::PolynomialDecayToZero);
  CHECK(cls::table_label(v) == "polynomially stable");
  REQUIRE(v.u_star.has_value());
  CHECK(*v.u_star == doctest::Approx(1.0));

  // ex2 instability row: lambda_nm > 0, lambda_nl > mu^2/2 at sigma = (n+l)/q
  v = cls::classify_nonlinear(nonlinear_fit(2, 2, 2, 0.05, 0.6), q, noise(1.0, 4, q), 0.05);
  CHECK(v.kind == cls::Kind::Unstable);
  CHECK(v.theorem == "Theorem 5");

  // same but the noise bound is missing: hard error per the contract
  CHECK_THROWS_AS(
      cls::classify_nonlinear(nonlinear_fit(2, 2, 2, 0.05, 0.6), q, std::nullopt, 0.05),
      cls::MissingNoiseBound);

  // both stability branches apply: the weighted verdict wins, annotated
  v = cls::classify_nonlinear(nonlinear_fit(1, 2, 2, -1.0, -0.8), q, std::nullopt, 0.05);
  CHECK(v.kind == cls::Kind::WeightedStable);
  bool annotated = false;
  for (const auto& note : v.notes)
    if (note.find("plainly stable") != std::string::npos) annotated = true;
  CHECK(annotated);
}

TEST_CASE("u* matches the printed formula for the ex2 parameter sets") {
  // u* = 2 |2 a4 + b2^2 + 1| / |2 a2 + b1^2| for n=m=l=2, q=4
  auto check = [](double a2, double a4, double b1, double b2) {
    double lnm = (2 * a2 + b1 * b1) / 4.0;
    double lnl = (2 * a4 + b2 * b2) / 2.0;
    auto v = cls::classify_nonlinear(nonlinear_fit(2, 2, 2, lnm, lnl), 4, std::nullopt, 0.05);
    if (v.u_star) {
      double printed = 2.0 * std::abs(2 * a4 + b2 * b2 + 1.0) / std::abs(2 * a2 + b1 * b1);
      CHECK(*v.u_star == doctest::Approx(printed).epsilon(1e-12));
    }
    return v;
  };
  auto v = check(-2.0, -0.25, 1.0, 1.0);
  CHECK(v.kind == cls::Kind::PolynomialDecayToZero);
  CHECK(*v.u_star == doctest::Approx(1.0));
}

TEST_CASE("classify_cycle via synthetic drift tables") {
  std::vector<double> grid;
  for (int i = 0; i <= 40; ++i) grid.push_back(0.05 + i * 0.05);
  auto make = [&](bool flip) {
    avg::AveragedDrift d;
    d.order_N = 2;
    d.q = 2;
    d.e_grid = grid;
    d.nu.assign(grid.size(), 1.0);
    d.lambda.resize(2);
    d.lambda[0].assign(grid.size(), 0.0);
    d.lambda[1].resize(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
      double v = grid[i];
      d.lambda[1][i] = flip ? v * (v - 1.0) : v * (1.0 - v);
    }
    return d;
  };
  avg::ExponentFit fit;
  fit.n = 2;
  fit.case_tag = avg::CaseTag::Cycle;
  fit.lambda_n = 1.0;

  auto v = cls::classify_cycle(make(false), fit, 2);
  CHECK(v.kind == cls::Kind::StableCycle);
  CHECK(v.theorem == "Theorem 6");
  CHECK(cls::table_label(v) == "stable cycle");
  REQUIRE(v.cycle_energy.has_value());
  CHECK(*v.cycle_energy == doctest::Approx(1.0).epsilon(1e-9));

  // root with positive derivative: outside the theorem
  v = cls::classify_cycle(make(true), fit, 2);
  CHECK(v.kind == cls::Kind::Inconclusive);

  fit.n = 1;  // hypothesis n = q violated
  CHECK_THROWS_AS(cls::classify_cycle(make(false), fit, 2), cls::HypothesisViolated);
}

TEST_CASE("purity: identical inputs give byte-identical serialized verdicts") {
  auto fit = linear_fit(2, -0.37);
  auto a = cls::classify_linear(fit, 2, noise(0.8, 2, 2), 0.05);
  auto b = cls::classify_linear(fit, 2, noise(0.8, 2, 2), 0.05);
  CHECK(cls::to_json(a) == cls::to_json(b));
}

TEST_CASE("argument validation") {
  CHECK_THROWS_AS(cls::classify_linear(linear_fit(1, -1.0), 2, std::nullopt, 0.0),
                  cls::BadKappa);
  CHECK_THROWS_AS(cls::classify_linear(linear_fit(1, -1.0), 2, std::nullopt, 1.0),
                  cls::BadKappa);
  avg::ExponentFit wrong;
  wrong.case_tag = avg::CaseTag::Nonlinear;
  CHECK_THROWS_AS(cls::classify_linear(wrong, 2, std::nullopt, 0.05),
                  cls::HypothesisViolated);
}

TEST_CASE("exhaustiveness: every hypothesis combination hits exactly one row") {
  // signs of lambda_n x order relations x sigma relations; each input must
  // produce exactly one verdict (possibly Inconclusive) without throwing
  const int q = 2;
  for (int n : {1, 2, 3}) {
    for (double lam : {-1.0, 0.0, 0.4, 0.6}) {
      for (int sn : {1, 2, 3}) {
        auto v = cls::classify_linear(linear_fit(n, lam), q, noise(1.0, sn, q), 0.05);
        bool stable_kind = v.kind == cls::Kind::ExponentiallyStable ||
                           v.kind == cls::Kind::PolynomiallyStable ||
                           v.kind == cls::Kind::NeutrallyStable;
        if (lam < 0.0) {
          CHECK(stable_kind);
        } else if (lam == 0.0) {
          CHECK(v.kind == cls::Kind::Inconclusive);
        } else if (n <= q && sn >= n) {
          // threshold mu^2/2 = 0.5 applies only at sigma = n/q
          bool critical = sn == n;
          if (!critical || lam > 0.5)
            CHECK(v.kind == cls::Kind::Unstable);
          else
            CHECK(v.kind == cls::Kind::PracticallyStable);
        } else {
          CHECK(v.kind == cls::Kind::Inconclusive);
        }
      }
    }
  }
}
