#pragma once

// Small expression language shared by space constraints, custom utilities and
// synthetic mean functions.
//
//   expr    := or
//   or      := and ('||' and)*
//   and     := cmp ('&&' cmp)*
//   cmp     := sum (('=='|'!='|'<'|'<='|'>'|'>=') sum)?
//   sum     := product (('+'|'-') product)*
//   product := unary (('*'|'/') unary)*
//   unary   := ('!'|'-') unary | primary
//   primary := number | string | identifier | '(' expr ')'
//
// Booleans are numbers (0 or 1). Strings only support == and !=.

#include <cctype>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace hardspot::expr {

class ExpressionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Value = std::variant<double, std::string>;

class Expression {
 public:
  Expression() = default;

  static Expression parse(std::string_view text) {
    Parser p{text, {}, 0};
    Expression e;
    e.text_ = std::string(text);
    e.root_ = p.parse_or(e);
    p.skip_ws();
    if (p.pos != text.size()) {
      throw ExpressionError("unexpected '" + std::string(text.substr(p.pos)) +
                            "' in expression: " + e.text_);
    }
    return e;
  }

  const std::string& text() const noexcept { return text_; }

  /// Distinct identifiers in first-appearance order; slot i of evaluate's
  /// lookup corresponds to identifiers()[i].
  const std::vector<std::string>& identifiers() const noexcept { return idents_; }

  template <class Lookup>
  Value evaluate(Lookup&& lookup) const {
    return eval(root_, lookup);
  }

  template <class Lookup>
  double evaluate_number(Lookup&& lookup) const {
    Value v = eval(root_, lookup);
    if (auto* d = std::get_if<double>(&v)) return *d;
    throw ExpressionError("expression yields a string, expected a number: " + text_);
  }

  template <class Lookup>
  bool evaluate_bool(Lookup&& lookup) const {
    return evaluate_number(lookup) != 0.0;
  }

 private:
  enum class Op : std::uint8_t {
    number, string, ident, neg, logical_not, add, sub, mul, div,
    eq, ne, lt, le, gt, ge, logical_and, logical_or
  };

  struct Node {
    Op op;
    double number = 0.0;
    std::string str{};
    std::size_t slot = 0;
    int lhs = -1;
    int rhs = -1;
  };

  struct Parser {
    std::string_view src;
    std::string scratch;
    std::size_t pos;

    void skip_ws() {
      while (pos < src.size() && std::isspace(static_cast<unsigned char>(src[pos]))) ++pos;
    }
    bool accept(std::string_view tok) {
      skip_ws();
      if (src.substr(pos, tok.size()) == tok) {
        pos += tok.size();
        return true;
      }
      return false;
    }
    [[noreturn]] void fail(const std::string& what) const {
      throw ExpressionError(what + " at offset " + std::to_string(pos) + " in: " +
                            std::string(src));
    }

    int parse_or(Expression& e) {
      int lhs = parse_and(e);
      while (accept("||")) lhs = e.binary(Op::logical_or, lhs, parse_and(e));
      return lhs;
    }
    int parse_and(Expression& e) {
      int lhs = parse_cmp(e);
      while (accept("&&")) lhs = e.binary(Op::logical_and, lhs, parse_cmp(e));
      return lhs;
    }
    int parse_cmp(Expression& e) {
      int lhs = parse_sum(e);
      // Two-character operators first.
      if (accept("==")) return e.binary(Op::eq, lhs, parse_sum(e));
      if (accept("!=")) return e.binary(Op::ne, lhs, parse_sum(e));
      if (accept("<=")) return e.binary(Op::le, lhs, parse_sum(e));
      if (accept(">=")) return e.binary(Op::ge, lhs, parse_sum(e));
      if (accept("<")) return e.binary(Op::lt, lhs, parse_sum(e));
      if (accept(">")) return e.binary(Op::gt, lhs, parse_sum(e));
      return lhs;
    }
    int parse_sum(Expression& e) {
      int lhs = parse_product(e);
      for (;;) {
        if (accept("+")) {
          lhs = e.binary(Op::add, lhs, parse_product(e));
        } else if (accept("-")) {
          lhs = e.binary(Op::sub, lhs, parse_product(e));
        } else {
          return lhs;
        }
      }
    }
    int parse_product(Expression& e) {
      int lhs = parse_unary(e);
      for (;;) {
        if (accept("*")) {
          lhs = e.binary(Op::mul, lhs, parse_unary(e));
        } else if (accept("/")) {
          lhs = e.binary(Op::div, lhs, parse_unary(e));
        } else {
          return lhs;
        }
      }
    }
    int parse_unary(Expression& e) {
      skip_ws();
      if (pos < src.size() && src[pos] == '!' && src.substr(pos, 2) != "!=") {
        ++pos;
        return e.unary(Op::logical_not, parse_unary(e));
      }
      if (accept("-")) return e.unary(Op::neg, parse_unary(e));
      return parse_primary(e);
    }
    int parse_primary(Expression& e) {
      skip_ws();
      if (pos >= src.size()) fail("unexpected end of expression");
      char c = src[pos];
      if (c == '(') {
        ++pos;
        int inner = parse_or(e);
        if (!accept(")")) fail("expected ')'");
        return inner;
      }
      if (c == '"' || c == '\'') {
        std::size_t end = src.find(c, pos + 1);
        if (end == std::string_view::npos) fail("unterminated string");
        Node n{Op::string};
        n.str = std::string(src.substr(pos + 1, end - pos - 1));
        pos = end + 1;
        return e.push(std::move(n));
      }
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        std::size_t used = 0;
        double v = 0.0;
        try {
          v = std::stod(std::string(src.substr(pos)), &used);
        } catch (const std::exception&) {
          fail("bad number");
        }
        pos += used;
        Node n{Op::number};
        n.number = v;
        return e.push(std::move(n));
      }
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        std::size_t start = pos;
        while (pos < src.size() &&
               (std::isalnum(static_cast<unsigned char>(src[pos])) || src[pos] == '_' ||
                src[pos] == '.')) {
          ++pos;
        }
        std::string name(src.substr(start, pos - start));
        if (name == "true" || name == "false") {
          Node n{Op::number};
          n.number = name == "true" ? 1.0 : 0.0;
          return e.push(std::move(n));
        }
        Node n{Op::ident};
        n.slot = e.slot_for(name);
        return e.push(std::move(n));
      }
      fail(std::string("unexpected character '") + c + "'");
    }
  };

  int push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size() - 1);
  }
  int unary(Op op, int arg) {
    Node n{op};
    n.lhs = arg;
    return push(std::move(n));
  }
  int binary(Op op, int lhs, int rhs) {
    Node n{op};
    n.lhs = lhs;
    n.rhs = rhs;
    return push(std::move(n));
  }
  std::size_t slot_for(const std::string& name) {
    for (std::size_t i = 0; i < idents_.size(); ++i) {
      if (idents_[i] == name) return i;
    }
    idents_.push_back(name);
    return idents_.size() - 1;
  }

  double number_of(const Value& v) const {
    if (auto* d = std::get_if<double>(&v)) return *d;
    throw ExpressionError("arithmetic or ordering on a string in: " + text_);
  }

  template <class Lookup>
  Value eval(int idx, Lookup& lookup) const {
    const Node& n = nodes_[static_cast<std::size_t>(idx)];
    switch (n.op) {
      case Op::number: return n.number;
      case Op::string: return n.str;
      case Op::ident: return Value(lookup(n.slot));
      case Op::neg: return -number_of(eval(n.lhs, lookup));
      case Op::logical_not: return number_of(eval(n.lhs, lookup)) == 0.0 ? 1.0 : 0.0;
      case Op::logical_and:
        if (number_of(eval(n.lhs, lookup)) == 0.0) return 0.0;
        return number_of(eval(n.rhs, lookup)) != 0.0 ? 1.0 : 0.0;
      case Op::logical_or:
        if (number_of(eval(n.lhs, lookup)) != 0.0) return 1.0;
        return number_of(eval(n.rhs, lookup)) != 0.0 ? 1.0 : 0.0;
      case Op::eq:
      case Op::ne: {
        Value a = eval(n.lhs, lookup);
        Value b = eval(n.rhs, lookup);
        if (a.index() != b.index()) {
          throw ExpressionError("comparing a string with a number in: " + text_);
        }
        bool same = a == b;
        return (n.op == Op::eq) == same ? 1.0 : 0.0;
      }
      default: break;
    }
    double a = number_of(eval(n.lhs, lookup));
    double b = number_of(eval(n.rhs, lookup));
    switch (n.op) {
      case Op::add: return a + b;
      case Op::sub: return a - b;
      case Op::mul: return a * b;
      case Op::div: return a / b;
      case Op::lt: return a < b ? 1.0 : 0.0;
      case Op::le: return a <= b ? 1.0 : 0.0;
      case Op::gt: return a > b ? 1.0 : 0.0;
      case Op::ge: return a >= b ? 1.0 : 0.0;
      default: break;
    }
    throw ExpressionError("internal: unhandled operator");
  }

  std::string text_;
  std::vector<Node> nodes_;
  std::vector<std::string> idents_;
  int root_ = -1;
};

}  // namespace hardspot::expr
