#pragma once

// Recursive-descent parser for rule files.
//
//   file     := ["exsum" NUMBER] union
//   union    := "union" IDENT "{" "expr" ":" top rule* "}"
//   top      := "none" | operand [(">" | "&") operand]
//   operand  := IDENT | "(" operand (">" | "&") operand ")"
//   rule     := "rule" IDENT "{" "applies" ":" pred "range" ":" range ["params" ":" decl ("," decl)*] "}"
//   decl     := IDENT "=" NUMBER "in" "[" NUMBER "," NUMBER "]"
//   pred     := conj ("or" conj)*
//   conj     := unary ("and" unary)*
//   unary    := "not" unary | "(" pred ")" | "true" | "false" | scalar cmp scalar | scalar "in" "{" lit,* "}"
//   range    := interval | "per" "(" scalar ")" "{" entry ("," entry)* "}"
//   entry    := STRING ":" interval | "default" ":" interval
//   interval := ("[" | "(") scalar "," scalar ("]" | ")")
//   scalar   := prefix (("+" | "-") prefix)*
//   prefix   := "-" prefix | primary
//   primary  := NUMBER | STRING | "inf" | "(" scalar ")" | feature(STRING) | param(IDENT)
//             | max_attr([where: pred]) | min_attr([where: pred]) | builtin()
//
// Composition never has implicit precedence: nested composition needs
// parentheses; only the outermost operator may be written bare.

#include <limits>
#include <cctype>
#include <charconv>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "exsum/dsl/ast.hpp"
#include "exsum/error.hpp"

namespace exsum::dsl {

namespace detail {

enum class Tok { ident, number, string, punct, end };

struct Token {
  Tok kind = Tok::end;
  std::string text;  // identifier, punctuation, or unescaped string body
  double number = 0.0;
  SourcePos pos;
};

inline std::vector<Token> lex(std::string_view src) {
  std::vector<Token> out;
  std::size_t i = 0, line = 1, col = 1;
  auto advance = [&](std::size_t n) {
    for (std::size_t k = 0; k < n && i < src.size(); ++k, ++i) {
      if (src[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
  };
  while (i < src.size()) {
    const char c = src[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      advance(1);
      continue;
    }
    if (c == '#') {
      while (i < src.size() && src[i] != '\n') advance(1);
      continue;
    }
    Token t;
    t.pos = {line, col};
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < src.size() && (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_')) ++j;
      t.kind = Tok::ident;
      t.text = std::string(src.substr(i, j - i));
      advance(j - i);
    } else if (std::isdigit(static_cast<unsigned char>(c)) ||
               (c == '.' && i + 1 < src.size() && std::isdigit(static_cast<unsigned char>(src[i + 1])))) {
      const char* first = src.data() + i;
      const char* last = src.data() + src.size();
      auto [ptr, ec] = std::from_chars(first, last, t.number);
      if (ec != std::errc()) throw ParseError("malformed number", line, col);
      t.kind = Tok::number;
      t.text = std::string(first, ptr);
      advance(static_cast<std::size_t>(ptr - first));
    } else if (c == '"') {
      std::size_t j = i + 1;
      std::string body;
      while (j < src.size() && src[j] != '"') {
        if (src[j] == '\n') throw ParseError("unterminated string", line, col);
        if (src[j] == '\\' && j + 1 < src.size()) {
          const char e = src[j + 1];
          body.push_back(e == 'n' ? '\n' : e == 't' ? '\t' : e);
          j += 2;
        } else {
          body.push_back(src[j++]);
        }
      }
      if (j >= src.size()) throw ParseError("unterminated string", line, col);
      t.kind = Tok::string;
      t.text = std::move(body);
      advance(j + 1 - i);
    } else {
      static const std::string_view two[] = {">=", "<=", "==", "!="};
      t.kind = Tok::punct;
      bool matched = false;
      for (auto op : two) {
        if (src.substr(i, 2) == op) {
          t.text = std::string(op);
          advance(2);
          matched = true;
          break;
        }
      }
      if (!matched) {
        static const std::string_view single = "{}()[],:=<>&+-";
        if (single.find(c) == std::string_view::npos) {
          throw ParseError(std::string("unexpected character '") + c + "'", line, col);
        }
        t.text = std::string(1, c);
        advance(1);
      }
    }
    out.push_back(std::move(t));
  }
  Token end;
  end.kind = Tok::end;
  end.pos = {line, col};
  out.push_back(end);
  return out;
}

class Parser {
 public:
  explicit Parser(std::string_view src) : toks_(lex(src)) {}

  UnionSpec parse_file() {
    if (is_ident("exsum")) {
      next();
      const auto& v = expect_number("format version");
      if (v.number != kFormatVersion) {
        throw ParseError("unsupported format version " + v.text, v.pos.line, v.pos.column);
      }
    }
    UnionSpec spec = parse_union();
    expect_end();
    return spec;
  }

  UnionExpr parse_expr_only() {
    auto e = parse_top_expr();
    expect_end();
    if (!e) fail("expected a rule union expression");
    return std::move(*e);
  }

  Pred parse_pred_only() {
    Pred p = parse_pred();
    expect_end();
    return p;
  }

  RangeExpr parse_range_only() {
    RangeExpr r = parse_range();
    expect_end();
    return r;
  }

 private:
  // --- token helpers
  const Token& peek(std::size_t ahead = 0) const {
    return toks_[std::min(pos_ + ahead, toks_.size() - 1)];
  }
  const Token& next() { return toks_[std::min(pos_++, toks_.size() - 1)]; }
  bool is_punct(std::string_view p, std::size_t ahead = 0) const {
    return peek(ahead).kind == Tok::punct && peek(ahead).text == p;
  }
  bool is_ident(std::string_view p, std::size_t ahead = 0) const {
    return peek(ahead).kind == Tok::ident && peek(ahead).text == p;
  }
  [[noreturn]] void fail(const std::string& msg) const { fail_at(peek(), msg); }
  [[noreturn]] static void fail_at(const Token& t, const std::string& msg) {
    throw ParseError(msg + describe(t), t.pos.line, t.pos.column);
  }
  static std::string describe(const Token& t) {
    switch (t.kind) {
      case Tok::end: return " (found end of input)";
      case Tok::string: return " (found \"" + t.text + "\")";
      default: return " (found '" + t.text + "')";
    }
  }
  void expect_punct(std::string_view p) {
    if (!is_punct(p)) fail("expected '" + std::string(p) + "'");
    next();
  }
  void expect_keyword(std::string_view k) {
    if (!is_ident(k)) fail("expected '" + std::string(k) + "'");
    next();
  }
  const Token& expect_ident(const std::string& what) {
    if (peek().kind != Tok::ident) fail("expected " + what);
    return next();
  }
  const Token& expect_number(const std::string& what) {
    if (peek().kind != Tok::number) fail("expected " + what);
    return next();
  }
  void expect_end() {
    if (peek().kind != Tok::end) fail("unexpected trailing input");
  }

  // Signed numeric literal (for parameter declarations and sets).
  double parse_signed_number(const std::string& what) {
    double sign = 1.0;
    if (is_punct("-")) {
      next();
      sign = -1.0;
    }
    if (is_ident("inf")) {
      next();
      return sign * kInfinity;
    }
    return sign * expect_number(what).number;
  }
  static constexpr double kInfinity = std::numeric_limits<double>::infinity();

  // --- union
  UnionSpec parse_union() {
    UnionSpec spec;
    expect_keyword("union");
    spec.name = expect_ident("union name").text;
    expect_punct("{");
    expect_keyword("expr");
    expect_punct(":");
    const Token expr_start = peek();
    spec.expr = parse_top_expr();
    std::set<std::string> names;
    while (is_ident("rule")) {
      RuleSpec r = parse_rule();
      if (!names.insert(r.name).second) {
        throw ParseError("duplicate rule name " + r.name, r.pos.line, r.pos.column);
      }
      spec.rules.push_back(std::move(r));
    }
    expect_punct("}");
    if (spec.expr) check_leaves(*spec.expr, names, expr_start);
    return spec;
  }

  void check_leaves(const UnionExpr& e, const std::set<std::string>& declared, const Token& at) const {
    std::vector<RuleLeaf> leaves;
    gather(e, leaves);
    std::set<std::string> seen;
    for (const auto& l : leaves) {
      if (!declared.count(l.name)) {
        throw ParseError("unknown rule " + l.name, l.pos.line, l.pos.column);
      }
      if (!seen.insert(l.name).second) {
        throw ParseError("rule " + l.name + " appears more than once in expr", l.pos.line, l.pos.column);
      }
    }
    (void)at;
  }
  static void gather(const UnionExpr& e, std::vector<RuleLeaf>& out) {
    if (const auto* l = std::get_if<RuleLeaf>(&e.node)) {
      out.push_back(*l);
    } else {
      const auto& c = std::get<Compose>(e.node);
      gather(*c.lhs, out);
      gather(*c.rhs, out);
    }
  }

  std::optional<UnionExpr> parse_top_expr() {
    if (is_ident("none")) {
      next();
      return std::nullopt;
    }
    UnionExpr lhs = parse_operand();
    if (is_punct(">") || is_punct("&")) {
      const ComposeOp op = next().text == ">" ? ComposeOp::precedence : ComposeOp::intersection;
      UnionExpr rhs = parse_operand();
      if (is_punct(">") || is_punct("&")) {
        fail("composition operators have no precedence; add parentheses");
      }
      return compose(op, std::move(lhs), std::move(rhs));
    }
    return lhs;
  }

  UnionExpr parse_operand() {
    if (is_punct("(")) {
      next();
      UnionExpr lhs = parse_operand();
      if (!(is_punct(">") || is_punct("&"))) fail("expected '>' or '&'");
      const ComposeOp op = next().text == ">" ? ComposeOp::precedence : ComposeOp::intersection;
      UnionExpr rhs = parse_operand();
      if (is_punct(">") || is_punct("&")) {
        fail("composition operators have no precedence; add parentheses");
      }
      expect_punct(")");
      return compose(op, std::move(lhs), std::move(rhs));
    }
    const Token& t = expect_ident("rule name");
    return UnionExpr{RuleLeaf{t.text, t.pos}};
  }

  // --- rule
  RuleSpec parse_rule() {
    RuleSpec r;
    r.pos = peek().pos;
    expect_keyword("rule");
    r.name = expect_ident("rule name").text;
    expect_punct("{");
    expect_keyword("applies");
    expect_punct(":");
    r.applies = parse_pred();
    expect_keyword("range");
    expect_punct(":");
    r.range = parse_range();
    if (is_ident("params")) {
      next();
      expect_punct(":");
      std::set<std::string> seen;
      do {
        if (is_punct(",")) next();
        ParamDecl d;
        d.pos = peek().pos;
        d.name = expect_ident("parameter name").text;
        if (!seen.insert(d.name).second) {
          throw ParseError("duplicate param " + d.name + " in rule " + r.name, d.pos.line, d.pos.column);
        }
        expect_punct("=");
        d.value = parse_signed_number("parameter value");
        expect_keyword("in");
        expect_punct("[");
        d.lo = parse_signed_number("lower search bound");
        expect_punct(",");
        d.hi = parse_signed_number("upper search bound");
        expect_punct("]");
        r.params.push_back(std::move(d));
      } while (is_punct(","));
    }
    expect_punct("}");
    return r;
  }

  // --- predicates
  Pred parse_pred() {
    const SourcePos at = peek().pos;
    Pred first = parse_conj();
    if (!is_ident("or")) return first;
    Or node;
    node.operands.push_back(std::move(first));
    while (is_ident("or")) {
      next();
      node.operands.push_back(parse_conj());
    }
    return Pred{std::move(node), at};
  }

  Pred parse_conj() {
    const SourcePos at = peek().pos;
    Pred first = parse_unary();
    if (!is_ident("and")) return first;
    And node;
    node.operands.push_back(std::move(first));
    while (is_ident("and")) {
      next();
      node.operands.push_back(parse_unary());
    }
    return Pred{std::move(node), at};
  }

  Pred parse_unary() {
    const SourcePos at = peek().pos;
    if (is_ident("not")) {
      next();
      return Pred{Not{parse_unary()}, at};
    }
    if (is_ident("true") || is_ident("false")) {
      const bool v = next().text == "true";
      return Pred{ConstPred{v}, at};
    }
    if (is_punct("(")) {
      // Either a grouped predicate or a parenthesized scalar on the left of a comparison.
      const std::size_t save = pos_;
      try {
        next();
        Pred inner = parse_pred();
        expect_punct(")");
        return inner;
      } catch (const ParseError&) {
        pos_ = save;
      }
    }
    return parse_atom();
  }

  Pred parse_atom() {
    const SourcePos at = peek().pos;
    Expr lhs = parse_scalar();
    if (is_ident("in")) {
      next();
      expect_punct("{");
      Member m{std::move(lhs), {}};
      if (!is_punct("}")) {
        do {
          if (is_punct(",")) next();
          if (peek().kind == Tok::string) {
            m.set.emplace_back(next().text);
          } else {
            m.set.emplace_back(parse_signed_number("set element"));
          }
        } while (is_punct(","));
      }
      expect_punct("}");
      return Pred{std::move(m), at};
    }
    static const std::pair<const char*, CmpOp> ops[] = {
        {"<", CmpOp::lt}, {"<=", CmpOp::le}, {">", CmpOp::gt},
        {">=", CmpOp::ge}, {"==", CmpOp::eq}, {"!=", CmpOp::ne}};
    for (const auto& [sym, op] : ops) {
      if (is_punct(sym)) {
        next();
        Expr rhs = parse_scalar();
        return Pred{Compare{op, std::move(lhs), std::move(rhs)}, at};
      }
    }
    fail("expected comparison operator or 'in'");
  }

  // --- scalars
  Expr parse_scalar() {
    Expr lhs = parse_prefix();
    while (is_punct("+") || is_punct("-")) {
      const Token& op = next();
      Expr rhs = parse_prefix();
      const SourcePos at = lhs.pos;
      lhs = Expr{Arith{op.text[0], std::move(lhs), std::move(rhs)}, at};
    }
    return lhs;
  }

  Expr parse_prefix() {
    if (is_punct("-")) {
      const SourcePos at = next().pos;
      Expr operand = parse_prefix();
      if (auto* n = std::get_if<NumberLit>(&operand.node)) {
        // Negative literals are literals.
        return Expr{NumberLit{-n->value}, at};
      }
      return Expr{Negate{std::move(operand)}, at};
    }
    return parse_primary();
  }

  Expr parse_primary() {
    const Token& t = peek();
    const SourcePos at = t.pos;
    if (t.kind == Tok::number) {
      next();
      return Expr{NumberLit{t.number}, at};
    }
    if (t.kind == Tok::string) {
      next();
      return Expr{StringLit{t.text}, at};
    }
    if (is_punct("(")) {
      next();
      Expr inner = parse_scalar();
      expect_punct(")");
      return inner;
    }
    if (t.kind != Tok::ident) fail("expected a scalar term");
    const std::string name = t.text;
    if (name == "inf") {
      next();
      return Expr{NumberLit{kInfinity}, at};
    }
    next();
    expect_punct("(");
    if (name == "feature") {
      if (peek().kind != Tok::string) fail("expected quoted feature name");
      std::string feat = next().text;
      expect_punct(")");
      return Expr{FeatureRef{std::move(feat)}, at};
    }
    if (name == "param") {
      std::string p = expect_ident("parameter name").text;
      expect_punct(")");
      return Expr{ParamRef{std::move(p)}, at};
    }
    if (name == "max_attr" || name == "min_attr") {
      Pred where = always(true);
      if (is_ident("where")) {
        next();
        expect_punct(":");
        where = parse_pred();
      }
      expect_punct(")");
      return Expr{Aggregate{name == "max_attr", std::move(where)}, at};
    }
    if (auto b = builtin_from_name(name)) {
      expect_punct(")");
      return Expr{BuiltinCall{*b}, at};
    }
    throw ParseError("unknown function " + name, at.line, at.column);
  }

  // --- ranges
  IntervalExpr parse_interval() {
    IntervalExpr iv;
    if (is_punct("[")) {
      iv.lo_closed = true;
    } else if (is_punct("(")) {
      iv.lo_closed = false;
    } else {
      fail("expected '[' or '(' to open an interval");
    }
    next();
    iv.lo = parse_scalar();
    expect_punct(",");
    iv.hi = parse_scalar();
    if (is_punct("]")) {
      iv.hi_closed = true;
    } else if (is_punct(")")) {
      iv.hi_closed = false;
    } else {
      fail("expected ']' or ')' to close an interval");
    }
    next();
    return iv;
  }

  RangeExpr parse_range() {
    if (!is_ident("per")) return parse_interval();
    next();
    expect_punct("(");
    Expr key = parse_scalar();
    expect_punct(")");
    expect_punct("{");
    std::map<std::string, IntervalExpr> entries;
    std::optional<IntervalExpr> fallback;
    do {
      if (is_punct(",")) next();
      if (is_ident("default")) {
        const Token& d = next();
        if (fallback) throw ParseError("duplicate default entry", d.pos.line, d.pos.column);
        expect_punct(":");
        fallback = parse_interval();
      } else {
        if (peek().kind != Tok::string) fail("expected quoted key or 'default'");
        const Token& k = next();
        expect_punct(":");
        if (!entries.emplace(k.text, parse_interval()).second) {
          throw ParseError("duplicate key \"" + k.text + "\"", k.pos.line, k.pos.column);
        }
      }
    } while (is_punct(","));
    if (!fallback) fail("keyed range needs a 'default' entry");
    expect_punct("}");
    return KeyedRange{std::move(key), std::move(entries), std::move(*fallback)};
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Parses a complete rule file.
inline UnionSpec parse_union(std::string_view text) { return detail::Parser(text).parse_file(); }

/// Parses a composition expression such as "((R1 > R2) & R3)".
inline UnionExpr parse_union_expr(std::string_view text) { return detail::Parser(text).parse_expr_only(); }

inline Pred parse_pred(std::string_view text) { return detail::Parser(text).parse_pred_only(); }

inline RangeExpr parse_range(std::string_view text) { return detail::Parser(text).parse_range_only(); }

}  // namespace exsum::dsl
