#pragma once

// Small arithmetic expressions over the variables t, s and r, used for envelope
// functions in scenario files. Grammar:
//   expr   := term (('+'|'-') term)*
//   term   := unary (('*'|'/') unary)*
//   unary  := ('+'|'-') unary | power
//   power  := atom ('^' unary)?
//   atom   := number | 't' | 's' | 'r' | 'pi' | name '(' expr ')' | '(' expr ')'
// Functions: exp, log, sin, cos, abs, sqrt.

#include <cmath>
#include <cctype>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace inclusol {

class ExpressionError : public std::invalid_argument {
 public:
  ExpressionError(const std::string& what, std::size_t column)
      : std::invalid_argument(what + " at column " + std::to_string(column + 1)), column_(column) {}
  std::size_t column() const { return column_; }

 private:
  std::size_t column_;
};

class Expression {
 public:
  Expression() : Expression("0") {}

  explicit Expression(std::string source) : source_(std::move(source)) {
    Parser p{source_, 0, {}};
    root_ = p.parse_expr();
    p.skip();
    if (p.pos != source_.size()) throw ExpressionError("unexpected '" + std::string(1, source_[p.pos]) + "'", p.pos);
    nodes_ = std::make_shared<const std::vector<Node>>(std::move(p.nodes));
    for (const Node& n : *nodes_) {
      if (n.op == Op::VarT) uses_t_ = true;
      if (n.op == Op::VarS) uses_s_ = true;
      if (n.op == Op::VarR) uses_r_ = true;
    }
  }

  double operator()(double t, double s = 0.0, double r = 0.0) const { return eval(root_, t, s, r); }

  const std::string& source() const { return source_; }
  bool uses_t() const { return uses_t_; }
  bool uses_s() const { return uses_s_; }
  bool uses_r() const { return uses_r_; }

  /// True when the expression is a literal zero such as "0" or "0.0".
  bool is_zero_literal() const { return (*nodes_)[root_].op == Op::Const && (*nodes_)[root_].value == 0.0; }

 private:
  enum class Op { Const, VarT, VarS, VarR, Add, Sub, Mul, Div, Pow, Neg, Exp, Log, Sin, Cos, Abs, Sqrt };

  struct Node {
    Op op;
    double value = 0.0;
    int a = -1;
    int b = -1;
  };

  struct Parser {
    const std::string& src;
    std::size_t pos;
    std::vector<Node> nodes;

    void skip() {
      while (pos < src.size() && std::isspace(static_cast<unsigned char>(src[pos]))) ++pos;
    }
    bool accept(char c) {
      skip();
      if (pos < src.size() && src[pos] == c) {
        ++pos;
        return true;
      }
      return false;
    }
    int add(Node n) {
      nodes.push_back(n);
      return static_cast<int>(nodes.size() - 1);
    }
    int parse_expr() {
      int lhs = parse_term();
      for (;;) {
        if (accept('+')) lhs = add({Op::Add, 0.0, lhs, parse_term()});
        else if (accept('-')) lhs = add({Op::Sub, 0.0, lhs, parse_term()});
        else return lhs;
      }
    }
    int parse_term() {
      int lhs = parse_unary();
      for (;;) {
        if (accept('*')) lhs = add({Op::Mul, 0.0, lhs, parse_unary()});
        else if (accept('/')) lhs = add({Op::Div, 0.0, lhs, parse_unary()});
        else return lhs;
      }
    }
    int parse_unary() {
      if (accept('-')) return add({Op::Neg, 0.0, parse_unary()});
      if (accept('+')) return parse_unary();
      return parse_power();
    }
    int parse_power() {
      int base = parse_atom();
      if (accept('^')) return add({Op::Pow, 0.0, base, parse_unary()});
      return base;
    }
    int parse_atom() {
      skip();
      if (pos >= src.size()) throw ExpressionError("unexpected end of expression", pos);
      const std::size_t start = pos;
      char c = src[pos];
      if (c == '(') {
        ++pos;
        int e = parse_expr();
        if (!accept(')')) throw ExpressionError("expected ')'", pos);
        return e;
      }
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        std::size_t used = 0;
        double v = 0.0;
        try {
          v = std::stod(src.substr(pos), &used);
        } catch (const std::exception&) {
          throw ExpressionError("malformed number", start);
        }
        pos += used;
        return add({Op::Const, v});
      }
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        while (pos < src.size() && (std::isalnum(static_cast<unsigned char>(src[pos])) || src[pos] == '_')) ++pos;
        std::string name = src.substr(start, pos - start);
        if (name == "t") return add({Op::VarT});
        if (name == "s") return add({Op::VarS});
        if (name == "r") return add({Op::VarR});
        if (name == "pi") return add({Op::Const, M_PI});
        Op op;
        if (name == "exp") op = Op::Exp;
        else if (name == "log") op = Op::Log;
        else if (name == "sin") op = Op::Sin;
        else if (name == "cos") op = Op::Cos;
        else if (name == "abs") op = Op::Abs;
        else if (name == "sqrt") op = Op::Sqrt;
        else throw ExpressionError("unknown name '" + name + "'", start);
        if (!accept('(')) throw ExpressionError("expected '(' after " + name, pos);
        int arg = parse_expr();
        if (!accept(')')) throw ExpressionError("expected ')'", pos);
        return add({op, 0.0, arg});
      }
      throw ExpressionError("unexpected '" + std::string(1, c) + "'", start);
    }
  };

  double eval(int i, double t, double s, double r) const {
    const Node& n = (*nodes_)[static_cast<std::size_t>(i)];
    switch (n.op) {
      case Op::Const: return n.value;
      case Op::VarT: return t;
      case Op::VarS: return s;
      case Op::VarR: return r;
      case Op::Add: return eval(n.a, t, s, r) + eval(n.b, t, s, r);
      case Op::Sub: return eval(n.a, t, s, r) - eval(n.b, t, s, r);
      case Op::Mul: return eval(n.a, t, s, r) * eval(n.b, t, s, r);
      case Op::Div: return eval(n.a, t, s, r) / eval(n.b, t, s, r);
      case Op::Pow: return std::pow(eval(n.a, t, s, r), eval(n.b, t, s, r));
      case Op::Neg: return -eval(n.a, t, s, r);
      case Op::Exp: return std::exp(eval(n.a, t, s, r));
      case Op::Log: return std::log(eval(n.a, t, s, r));
      case Op::Sin: return std::sin(eval(n.a, t, s, r));
      case Op::Cos: return std::cos(eval(n.a, t, s, r));
      case Op::Abs: return std::abs(eval(n.a, t, s, r));
      case Op::Sqrt: return std::sqrt(eval(n.a, t, s, r));
    }
    return 0.0;
  }

  std::string source_;
  std::shared_ptr<const std::vector<Node>> nodes_;
  int root_ = -1;
  bool uses_t_ = false, uses_s_ = false, uses_r_ = false;
};

}  // namespace inclusol
