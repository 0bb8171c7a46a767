#include <doctest.h>

#include <cmath>

#include "fadebif/perturbation.hpp"
#include "fadebif/sde.hpp"
#include "oracles.hpp"

using namespace fadebif;

TEST_CASE("registry ex0: printed equations at (1,0), t=1") {
  auto sys = pert::registry_get("ex0", {{"lambda", 1.0}, {"mu", 1.0}});
  Vec2 b = sys.drift({1.0, 0.0}, 1.0);
  CHECK(b.x == doctest::Approx(0.0));
  CHECK(b.y == doctest::Approx(-1.0));
  Mat2 B = sys.diffusion({1.0, 0.0}, 1.0);
  CHECK(B.a22 == doctest::Approx(1.0));
  CHECK(B.a11 == 0.0);
  CHECK(B.a12 == 0.0);
  CHECK(B.a21 == 0.0);
}

TEST_CASE("registry ex3: hand evaluation of the drift at (1,1), t=1") {
  auto sys = pert::registry_get("ex3", {{"a1", 1.0}, {"a2", -2.0}, {"mu", 0.5}});
  Vec2 b = sys.drift({1.0, 1.0}, 1.0);
  CHECK(b.x == doctest::Approx(1.0));
  CHECK(b.y == doctest::Approx(-4.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("all registry entries vanish at the origin") {
  std::vector<pert::SdeSystem> systems;
  systems.push_back(pert::registry_get("ex0", {{"lambda", -0.7}, {"mu", 1.2}}));
  systems.push_back(pert::registry_get(
      "ex1", {{"h", 1}, {"p", 1}, {"q", 2}, {"lambda", -1}, {"mu", 1}}));
  systems.push_back(
      pert::registry_get("ex2", {{"a2", 1}, {"a4", -1.25}, {"b1", 4}, {"b2", 1}}));
  systems.push_back(pert::registry_get("ex3", {{"a1", 1}, {"a2", -2}, {"mu", 0.5}}));
  for (const auto& sys : systems) {
    for (double t : {1.0, 10.0, 1e3, 1e6}) {
      CHECK(sys.drift({0, 0}, t).norm() == 0.0);
      CHECK(sys.diffusion({0, 0}, t).trace_tt() == 0.0);
    }
  }
}

TEST_CASE("transcription cross-check against the printed equations") {
  // deterministic pseudo-random probe points from a counter stream
  sde::PhiloxStream probe(1234, 0);
  auto next_point = [&, k = 0ULL]() mutable {
    Vec2 n = probe.normal_pair(k++);
    return Vec2{0.8 * n.x, 0.8 * n.y};
  };
  auto check = [&](const pert::SdeSystem& sys, auto&& drift_ref, auto&& b22_ref) {
    for (double t : {1.0, 7.0, 440.0, 9.9e5}) {
      Vec2 z = next_point();
      Vec2 b = sys.drift(z, t);
      Vec2 br = drift_ref(z, t);
      CHECK(std::abs(b.x - br.x) <= 1e-14 * (1.0 + std::abs(br.x)));
      CHECK(std::abs(b.y - br.y) <= 1e-14 * (1.0 + std::abs(br.y)));
      double d = sys.diffusion(z, t).a22;
      double dr = b22_ref(z, t);
      CHECK(std::abs(d - dr) <= 1e-14 * (1.0 + std::abs(dr)));
    }
  };
  check(pert::registry_get("ex0", {{"lambda", -0.7}, {"mu", 1.2}}),
        [](Vec2 z, double t) { return oracle::ex0_drift(z, t, -0.7, 1.2); },
        [](Vec2 z, double t) { return oracle::ex0_b22(z, t, -0.7, 1.2); });
  check(pert::registry_get("ex1", {{"h", 2}, {"p", 1}, {"q", 2}, {"lambda", -1}, {"mu", 1}}),
        [](Vec2 z, double t) { return oracle::ex1_drift(z, t, 2, 1, 2, -1, 1); },
        [](Vec2 z, double t) { return oracle::ex1_b22(z, t, 2, 1, 2, -1, 1); });
  check(pert::registry_get("ex2", {{"a2", -2}, {"a4", -0.25}, {"b1", 1}, {"b2", 1}}),
        [](Vec2 z, double t) { return oracle::ex2_drift(z, t, -2, -0.25, 1, 1); },
        [](Vec2 z, double t) { return oracle::ex2_b22(z, t, -2, -0.25, 1, 1); });
  check(pert::registry_get("ex3", {{"a1", 1}, {"a2", -2}, {"mu", 0.5}}),
        [](Vec2 z, double t) { return oracle::ex3_drift(z, t, 1, -2, 0.5); },
        [](Vec2 z, double t) { return oracle::ex3_b22(z, t, 1, -2, 0.5); });
}

TEST_CASE("truncation consistency: raising k_max beyond the stored orders is a no-op") {
  auto sys = pert::registry_get("ex3", {{"a1", 1}, {"a2", -2}, {"mu", 0.5}});
  auto wider = sys.pert;
  wider.k_max = 9;
  auto wide = pert::assemble_system(sys.ham, wider);
  for (double t : {1.0, 100.0}) {
    Vec2 z{0.4, -0.3};
    CHECK(sys.drift(z, t).y == wide.drift(z, t).y);
    CHECK(sys.diffusion(z, t).a22 == wide.diffusion(z, t).a22);
  }
}

TEST_CASE("noise bound: ex0 monomial is exact") {
  auto sys = pert::registry_get("ex0", {{"lambda", 0.0}, {"mu", 1.0}});
  auto nb = pert::estimate_noise_bound(sys);
  CHECK(nb.sigma == doctest::Approx(1.0));
  CHECK(nb.sigma_num == 2);
  CHECK(nb.mu == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("noise bound: zero diffusion keeps mu = 0 and the largest candidate sigma") {
  auto sys = pert::registry_get("ex0", {{"lambda", 1.0}, {"mu", 0.0}});
  auto nb = pert::estimate_noise_bound(sys);
  CHECK(nb.mu == 0.0);
  CHECK(nb.sigma_num == 2 * sys.pert.k_max);
}

TEST_CASE("noise bound: ex1 with p=1, q=2 via grid maximization (sin^2 x <= x^2)") {
  auto sys =
      pert::registry_get("ex1", {{"h", 1}, {"p", 1}, {"q", 2}, {"lambda", 0.0}, {"mu", 1.0}});
  auto nb = pert::estimate_noise_bound(sys);
  CHECK(nb.sigma == doctest::Approx(1.0));
  // grid maximum of |sin x| / |z| approaches 1 from below
  CHECK(nb.mu <= 1.0 + 1e-12);
  CHECK(nb.mu > 0.95);
}

TEST_CASE("origin violation and unknown/missing registry errors") {
  pert::PerturbationSeries bad;
  bad.q = 2;
  bad.f_terms.emplace(1, expr::Expr::parse("y + 1"));  // F(0,0) != 0
  ham::LimitingHamiltonian h(expr::Expr::parse("(x^2+y^2)/2"), 3.0, 4.0);
  CHECK_THROWS_AS(pert::assemble_system(h, bad), pert::OriginViolation);

  CHECK_THROWS_AS(pert::registry_get("ex9", {}), pert::UnknownName);
  CHECK_THROWS_AS(pert::registry_get("ex0", {{"lambda", 1.0}}), pert::MissingParam);
}

TEST_CASE("system definition text and registry URIs") {
  auto sys = pert::system_from_uri("builtin:ex1?h=1&p=1&q=2&lambda=-1&mu=1");
  CHECK(sys.name == "ex1");
  CHECK(sys.pert.q == 2);
  Mat2 B = sys.diffusion({0.7, 0.0}, 1.0);
  CHECK(B.a22 == doctest::Approx(std::sin(0.7)));

  const char* text = R"({
    "q": 2, "r": 3.0, "E0": 4.0,
    "H0": "(x^2 + y^2)/2",
    "F[2]": "-0.5*y",
    "B[2][2][1]": "0.3*x"
  })";
  auto custom = pert::system_from_json_text(text);
  Vec2 b = custom.drift({1.0, 1.0}, 1.0);
  CHECK(b.y == doctest::Approx(-1.0 - 0.5));
  CHECK(custom.diffusion({1.0, 0.0}, 4.0).a22 == doctest::Approx(0.15));

  CHECK_THROWS_AS(pert::system_from_json_text("{\"q\": 2}"), pert::MissingParam);
  CHECK_THROWS_AS(pert::system_from_json_text("not json"), Error);
}
