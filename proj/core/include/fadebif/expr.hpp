#ifndef FADEBIF_EXPR_HPP
#define FADEBIF_EXPR_HPP

#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "fadebif/common.hpp"

namespace fadebif::expr {

struct ParseError : Error {
  using Error::Error;
};

enum class Var { X, Y };

// Immutable scalar field on the plane, stored as an expression tree.
// Supports + - * / ^, sin, cos, exp, sqrt over variables x, y.  Symbolic
// differentiation produces new trees; evaluation runs on a flat postfix
// tape compiled once per tree, so per-point cost stays small inside the
// Monte Carlo loops.
class Expr {
 public:
  Expr();  // the constant 0

  static Expr constant(double c);
  static Expr variable(Var v);

  // Parses the small arithmetic grammar.  `constants` supplies named
  // parameters (e.g. lambda, mu) that fold to literals; `pi` is built in.
  static Expr parse(std::string_view src,
                    const std::map<std::string, double>& constants = {});

  double eval(double x, double y) const;
  Expr derivative(Var v) const;

  bool is_zero() const;  // structural zero after simplification
  std::string str() const;

  Expr operator+(const Expr& o) const;
  Expr operator-(const Expr& o) const;
  Expr operator*(const Expr& o) const;

  struct Node;  // implementation detail, defined in expr.cpp
  struct Tape;

 private:
  explicit Expr(std::shared_ptr<const Node> n);
  std::shared_ptr<const Node> root_;
  std::shared_ptr<const Tape> tape_;  // compiled at construction
};

// A field bundled with its first derivatives (used for H_k, whose gradient
// enters the drift).
struct Field {
  Expr f, dx, dy;

  static Field from(const Expr& e) {
    return {e, e.derivative(Var::X), e.derivative(Var::Y)};
  }
};

}  // namespace fadebif::expr

#endif
