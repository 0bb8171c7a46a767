#include "fadebif/expr.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <sstream>

namespace fadebif::expr {

namespace {

enum class Kind {
  Const, VarX, VarY,
  Add, Sub, Mul, Div, Pow, Neg,
  Sin, Cos, Exp, Sqrt, Log,  // Log only arises from d/dx of general powers
};

bool is_binary(Kind k) {
  return k == Kind::Add || k == Kind::Sub || k == Kind::Mul ||
         k == Kind::Div || k == Kind::Pow;
}

}  // namespace

struct Expr::Node {
  Kind kind;
  double value = 0.0;  // Kind::Const
  std::shared_ptr<const Node> a, b;
};

// Postfix program; operands pushed on a small value stack.  The stack
// lives on the caller's frame so evaluation is reentrant.
struct Expr::Tape {
  struct Op {
    Kind kind;
    double value;
  };
  static constexpr std::size_t kMaxStack = 64;
  std::vector<Op> ops;

  double run(double x, double y) const {
    double s[kMaxStack];
    std::size_t top = 0;
    for (const Op& op : ops) {
      switch (op.kind) {
        case Kind::Const: s[top++] = op.value; break;
        case Kind::VarX: s[top++] = x; break;
        case Kind::VarY: s[top++] = y; break;
        case Kind::Add: --top; s[top - 1] += s[top]; break;
        case Kind::Sub: --top; s[top - 1] -= s[top]; break;
        case Kind::Mul: --top; s[top - 1] *= s[top]; break;
        case Kind::Div: --top; s[top - 1] /= s[top]; break;
        case Kind::Pow: --top; s[top - 1] = std::pow(s[top - 1], s[top]); break;
        case Kind::Neg: s[top - 1] = -s[top - 1]; break;
        case Kind::Sin: s[top - 1] = std::sin(s[top - 1]); break;
        case Kind::Cos: s[top - 1] = std::cos(s[top - 1]); break;
        case Kind::Exp: s[top - 1] = std::exp(s[top - 1]); break;
        case Kind::Sqrt: s[top - 1] = std::sqrt(s[top - 1]); break;
        case Kind::Log: s[top - 1] = std::log(s[top - 1]); break;
      }
    }
    return s[0];
  }
};

namespace {

using NodePtr = std::shared_ptr<const Expr::Node>;

NodePtr make(Kind k, NodePtr a = nullptr, NodePtr b = nullptr) {
  auto n = std::make_shared<Expr::Node>();
  n->kind = k;
  n->a = std::move(a);
  n->b = std::move(b);
  return n;
}

NodePtr make_const(double v) {
  auto n = std::make_shared<Expr::Node>();
  n->kind = Kind::Const;
  n->value = v;
  return n;
}

bool is_const(const NodePtr& n, double v) {
  return n->kind == Kind::Const && n->value == v;
}

double unary_eval(Kind k, double a) {
  switch (k) {
    case Kind::Neg: return -a;
    case Kind::Sin: return std::sin(a);
    case Kind::Cos: return std::cos(a);
    case Kind::Exp: return std::exp(a);
    case Kind::Sqrt: return std::sqrt(a);
    case Kind::Log: return std::log(a);
    default: return a;
  }
}

double binary_eval(Kind k, double a, double b) {
  switch (k) {
    case Kind::Add: return a + b;
    case Kind::Sub: return a - b;
    case Kind::Mul: return a * b;
    case Kind::Div: return a / b;
    case Kind::Pow: return std::pow(a, b);
    default: return a;
  }
}

// Light algebraic simplification: constant folding and identity elements.
// Keeps trees produced by repeated differentiation from ballooning.
NodePtr simplify(Kind k, NodePtr a, NodePtr b) {
  if (is_binary(k)) {
    if (a->kind == Kind::Const && b->kind == Kind::Const)
      return make_const(binary_eval(k, a->value, b->value));
    switch (k) {
      case Kind::Add:
        if (is_const(a, 0.0)) return b;
        if (is_const(b, 0.0)) return a;
        break;
      case Kind::Sub:
        if (is_const(b, 0.0)) return a;
        if (is_const(a, 0.0)) return make(Kind::Neg, b);
        break;
      case Kind::Mul:
        if (is_const(a, 0.0) || is_const(b, 0.0)) return make_const(0.0);
        if (is_const(a, 1.0)) return b;
        if (is_const(b, 1.0)) return a;
        break;
      case Kind::Div:
        if (is_const(a, 0.0)) return make_const(0.0);
        if (is_const(b, 1.0)) return a;
        break;
      case Kind::Pow:
        if (is_const(b, 1.0)) return a;
        if (is_const(b, 0.0)) return make_const(1.0);
        break;
      default:
        break;
    }
    return make(k, std::move(a), std::move(b));
  }
  if (a->kind == Kind::Const) return make_const(unary_eval(k, a->value));
  if (k == Kind::Neg && a->kind == Kind::Neg) return a->a;
  return make(k, std::move(a));
}

NodePtr diff(const NodePtr& n, Var v) {
  switch (n->kind) {
    case Kind::Const: return make_const(0.0);
    case Kind::VarX: return make_const(v == Var::X ? 1.0 : 0.0);
    case Kind::VarY: return make_const(v == Var::Y ? 1.0 : 0.0);
    case Kind::Add: return simplify(Kind::Add, diff(n->a, v), diff(n->b, v));
    case Kind::Sub: return simplify(Kind::Sub, diff(n->a, v), diff(n->b, v));
    case Kind::Mul:
      return simplify(Kind::Add, simplify(Kind::Mul, diff(n->a, v), n->b),
                      simplify(Kind::Mul, n->a, diff(n->b, v)));
    case Kind::Div: {
      auto num = simplify(Kind::Sub, simplify(Kind::Mul, diff(n->a, v), n->b),
                          simplify(Kind::Mul, n->a, diff(n->b, v)));
      auto den = simplify(Kind::Mul, n->b, n->b);
      return simplify(Kind::Div, std::move(num), std::move(den));
    }
    case Kind::Pow: {
      if (n->b->kind == Kind::Const) {
        double p = n->b->value;
        auto inner = simplify(Kind::Pow, n->a, make_const(p - 1.0));
        auto scaled = simplify(Kind::Mul, make_const(p), std::move(inner));
        return simplify(Kind::Mul, std::move(scaled), diff(n->a, v));
      }
      // a^b = exp(b log a)
      auto term1 = simplify(Kind::Mul, diff(n->b, v), simplify(Kind::Log, n->a, nullptr));
      auto term2 = simplify(Kind::Div, simplify(Kind::Mul, n->b, diff(n->a, v)), n->a);
      return simplify(Kind::Mul, make(Kind::Pow, n->a, n->b),
                      simplify(Kind::Add, std::move(term1), std::move(term2)));
    }
    case Kind::Neg: return simplify(Kind::Neg, diff(n->a, v), nullptr);
    case Kind::Sin:
      return simplify(Kind::Mul, simplify(Kind::Cos, n->a, nullptr), diff(n->a, v));
    case Kind::Cos:
      return simplify(Kind::Neg,
                      simplify(Kind::Mul, simplify(Kind::Sin, n->a, nullptr), diff(n->a, v)),
                      nullptr);
    case Kind::Exp:
      return simplify(Kind::Mul, make(Kind::Exp, n->a, nullptr), diff(n->a, v));
    case Kind::Sqrt: {
      auto den = simplify(Kind::Mul, make_const(2.0), make(Kind::Sqrt, n->a, nullptr));
      return simplify(Kind::Div, diff(n->a, v), std::move(den));
    }
    case Kind::Log: return simplify(Kind::Div, diff(n->a, v), n->a);
  }
  return make_const(0.0);
}

void print(const NodePtr& n, std::ostringstream& out) {
  switch (n->kind) {
    case Kind::Const: out << n->value; return;
    case Kind::VarX: out << 'x'; return;
    case Kind::VarY: out << 'y'; return;
    case Kind::Neg: out << "(-"; print(n->a, out); out << ')'; return;
    case Kind::Sin: out << "sin("; print(n->a, out); out << ')'; return;
    case Kind::Cos: out << "cos("; print(n->a, out); out << ')'; return;
    case Kind::Exp: out << "exp("; print(n->a, out); out << ')'; return;
    case Kind::Sqrt: out << "sqrt("; print(n->a, out); out << ')'; return;
    case Kind::Log: out << "log("; print(n->a, out); out << ')'; return;
    default: break;
  }
  const char* op = n->kind == Kind::Add   ? "+"
                   : n->kind == Kind::Sub ? "-"
                   : n->kind == Kind::Mul ? "*"
                   : n->kind == Kind::Div ? "/"
                                          : "^";
  out << '(';
  print(n->a, out);
  out << op;
  print(n->b, out);
  out << ')';
}

// --- recursive descent parser -------------------------------------------

class Parser {
 public:
  Parser(std::string_view src, const std::map<std::string, double>& consts)
      : src_(src), consts_(consts) {}

  NodePtr parse() {
    auto e = expression();
    skip_ws();
    if (pos_ != src_.size())
      throw ParseError("unexpected input at position " + std::to_string(pos_) +
                       " in '" + std::string(src_) + "'");
    return e;
  }

 private:
  std::string_view src_;
  const std::map<std::string, double>& consts_;
  std::size_t pos_ = 0;

  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }
  bool eat(char c) {
    skip_ws();
    if (pos_ < src_.size() && src_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  char peek() {
    skip_ws();
    return pos_ < src_.size() ? src_[pos_] : '\0';
  }

  NodePtr expression() {
    auto e = term();
    for (;;) {
      if (eat('+'))
        e = simplify(Kind::Add, e, term());
      else if (eat('-'))
        e = simplify(Kind::Sub, e, term());
      else
        return e;
    }
  }

  NodePtr term() {
    auto e = unary();
    for (;;) {
      if (eat('*'))
        e = simplify(Kind::Mul, e, unary());
      else if (eat('/'))
        e = simplify(Kind::Div, e, unary());
      else
        return e;
    }
  }

  NodePtr unary() {
    if (eat('-')) return simplify(Kind::Neg, unary(), nullptr);
    return power();
  }

  NodePtr power() {
    auto base = primary();
    if (eat('^')) return simplify(Kind::Pow, base, unary());  // right assoc
    return base;
  }

  NodePtr primary() {
    skip_ws();
    if (pos_ >= src_.size()) throw ParseError("unexpected end of expression");
    char c = src_[pos_];
    if (c == '(') {
      ++pos_;
      auto e = expression();
      if (!eat(')')) throw ParseError("missing ')'");
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return identifier();
    throw ParseError(std::string("unexpected character '") + c + "'");
  }

  NodePtr number() {
    const char* begin = src_.data() + pos_;
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin) throw ParseError("bad number");
    pos_ += static_cast<std::size_t>(end - begin);
    return make_const(v);
  }

  NodePtr identifier() {
    std::size_t start = pos_;
    while (pos_ < src_.size() &&
           (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
      ++pos_;
    std::string name(src_.substr(start, pos_ - start));
    if (name == "x") return make(Kind::VarX);
    if (name == "y") return make(Kind::VarY);
    if (name == "pi") return make_const(kPi);
    Kind fn;
    if (name == "sin") fn = Kind::Sin;
    else if (name == "cos") fn = Kind::Cos;
    else if (name == "exp") fn = Kind::Exp;
    else if (name == "sqrt") fn = Kind::Sqrt;
    else {
      auto it = consts_.find(name);
      if (it == consts_.end()) throw ParseError("unknown identifier '" + name + "'");
      return make_const(it->second);
    }
    if (!eat('(')) throw ParseError("expected '(' after " + name);
    auto arg = expression();
    if (!eat(')')) throw ParseError("missing ')' after " + name + " argument");
    return simplify(fn, std::move(arg), nullptr);
  }
};

void compile(const NodePtr& n, std::vector<Expr::Tape::Op>& out) {
  if (n->a) compile(n->a, out);
  if (n->b) compile(n->b, out);
  out.push_back({n->kind, n->value});
}

std::shared_ptr<const Expr::Tape> build_tape(const NodePtr& root) {
  auto tape = std::make_shared<Expr::Tape>();
  compile(root, tape->ops);
  std::size_t depth = 0, max_depth = 1;
  for (const auto& op : tape->ops) {
    if (is_binary(op.kind)) --depth;
    else if (op.kind == Kind::Const || op.kind == Kind::VarX || op.kind == Kind::VarY) ++depth;
    max_depth = std::max(max_depth, depth);
  }
  if (max_depth >= Expr::Tape::kMaxStack)
    throw ParseError("expression too deep");
  return tape;
}

}  // namespace

Expr::Expr() : Expr(make_const(0.0)) {}

Expr::Expr(std::shared_ptr<const Node> n) : root_(std::move(n)), tape_(build_tape(root_)) {}

Expr Expr::constant(double c) { return Expr(make_const(c)); }

Expr Expr::variable(Var v) { return Expr(make(v == Var::X ? Kind::VarX : Kind::VarY)); }

Expr Expr::parse(std::string_view src, const std::map<std::string, double>& constants) {
  return Expr(Parser(src, constants).parse());
}

double Expr::eval(double x, double y) const { return tape_->run(x, y); }

Expr Expr::derivative(Var v) const { return Expr(diff(root_, v)); }

bool Expr::is_zero() const { return is_const(root_, 0.0); }

std::string Expr::str() const {
  std::ostringstream out;
  out.precision(17);
  print(root_, out);
  return out.str();
}

Expr Expr::operator+(const Expr& o) const { return Expr(simplify(Kind::Add, root_, o.root_)); }
Expr Expr::operator-(const Expr& o) const { return Expr(simplify(Kind::Sub, root_, o.root_)); }
Expr Expr::operator*(const Expr& o) const { return Expr(simplify(Kind::Mul, root_, o.root_)); }

}  // namespace fadebif::expr
