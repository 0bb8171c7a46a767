#include <doctest.h>

#include <cmath>

#include "fadebif/expr.hpp"

using fadebif::expr::Expr;
using fadebif::expr::Var;

TEST_CASE("parse and evaluate the grammar") {
  auto e = Expr::parse("2*x^2 - y/3 + sin(x)*cos(y) + exp(-x) + sqrt(x^2+1)");
  double x = 0.7, y = -1.3;
  double expect = 2 * x * x - y / 3 + std::sin(x) * std::cos(y) + std::exp(-x) +
                  std::sqrt(x * x + 1);
  CHECK(e.eval(x, y) == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("named constants fold to literals") {
  auto e = Expr::parse("lambda*y + mu*x", {{"lambda", -2.0}, {"mu", 0.5}});
  CHECK(e.eval(3.0, 4.0) == doctest::Approx(-8.0 + 1.5));
  CHECK(Expr::parse("pi").eval(0, 0) == doctest::Approx(fadebif::kPi));
}

TEST_CASE("parse errors") {
  CHECK_THROWS_AS(Expr::parse("x +"), fadebif::expr::ParseError);
  CHECK_THROWS_AS(Expr::parse("unknown_name"), fadebif::expr::ParseError);
  CHECK_THROWS_AS(Expr::parse("sin x"), fadebif::expr::ParseError);
  CHECK_THROWS_AS(Expr::parse("(x"), fadebif::expr::ParseError);
}

TEST_CASE("symbolic derivatives match finite differences") {
  const char* exprs[] = {
      "x^2*y - y^3/3",
      "sin(x)*cos(y) + exp(x*y/10)",
      "x*y/sqrt(1+x^2)",
      "(1 - cos(x)) + y^2/2",
      "(2 + x^2)*y/(1 + x^2 + y^2)",
  };
  const double pts[][2] = {{0.3, -0.8}, {1.1, 0.6}, {-0.5, 0.2}};
  for (const char* src : exprs) {
    auto e = Expr::parse(src);
    auto dx = e.derivative(Var::X);
    auto dy = e.derivative(Var::Y);
    for (auto [x, y] : pts) {
      const double h = 1e-6;
      double fdx = (e.eval(x + h, y) - e.eval(x - h, y)) / (2 * h);
      double fdy = (e.eval(x, y + h) - e.eval(x, y - h)) / (2 * h);
      CHECK(dx.eval(x, y) == doctest::Approx(fdx).epsilon(1e-8));
      CHECK(dy.eval(x, y) == doctest::Approx(fdy).epsilon(1e-8));
    }
  }
}

TEST_CASE("second derivatives stay exact through nesting") {
  auto h0 = Expr::parse("1 - cos(x) + y^2/2");
  auto hxx = h0.derivative(Var::X).derivative(Var::X);
  auto hyy = h0.derivative(Var::Y).derivative(Var::Y);
  auto hxy = h0.derivative(Var::X).derivative(Var::Y);
  CHECK(hxx.eval(0.4, 1.0) == doctest::Approx(std::cos(0.4)).epsilon(1e-15));
  CHECK(hyy.eval(0.4, 1.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(hxy.eval(0.4, 1.0) == doctest::Approx(0.0));
  CHECK(hxy.is_zero());
}

TEST_CASE("structural zero detection") {
  CHECK(Expr::parse("0").is_zero());
  CHECK(Expr::parse("x*0").is_zero());
  CHECK_FALSE(Expr::parse("x").is_zero());
}
