#pragma once

// Canonical text form of rule files. parse_union(print_union(s)) == s.

#include <array>
#include <charconv>
#include <cmath>
#include <string>

#include "exsum/dsl/ast.hpp"

namespace exsum::dsl {

/// Shortest text that reads back as the same double.
inline std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

inline std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    if (c == '\t') {
      out += "\\t";
      continue;
    }
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string print_pred(const Pred& p);

inline std::string print_expr(const Expr& e) {
  struct Visitor {
    std::string operator()(const NumberLit& n) const { return format_number(n.value); }
    std::string operator()(const StringLit& s) const { return quote(s.value); }
    std::string operator()(const ParamRef& p) const { return "param(" + p.name + ")"; }
    std::string operator()(const FeatureRef& f) const { return "feature(" + quote(f.name) + ")"; }
    std::string operator()(const BuiltinCall& b) const { return std::string(builtin_name(b.fn)) + "()"; }
    std::string operator()(const Aggregate& a) const {
      return std::string(a.is_max ? "max_attr" : "min_attr") + "(where: " + print_pred(*a.where) + ")";
    }
    std::string operator()(const Negate& n) const {
      const bool wrap = std::holds_alternative<Arith>(n.operand->node);
      const std::string inner = print_expr(*n.operand);
      return "-" + (wrap ? "(" + inner + ")" : inner);
    }
    std::string operator()(const Arith& a) const {
      const bool wrap = std::holds_alternative<Arith>(a.rhs->node);
      const std::string rhs = print_expr(*a.rhs);
      return print_expr(*a.lhs) + " " + a.op + " " + (wrap ? "(" + rhs + ")" : rhs);
    }
  };
  return std::visit(Visitor{}, e.node);
}

inline std::string print_literal(const Literal& l) {
  if (const auto* d = std::get_if<double>(&l)) return format_number(*d);
  return quote(std::get<std::string>(l));
}

inline std::string print_pred(const Pred& p) {
  struct Visitor {
    std::string operator()(const ConstPred& c) const { return c.value ? "true" : "false"; }
    std::string operator()(const Compare& c) const {
      return print_expr(c.lhs) + " " + cmp_symbol(c.op) + " " + print_expr(c.rhs);
    }
    std::string operator()(const Member& m) const {
      std::string out = print_expr(m.term) + " in {";
      for (std::size_t i = 0; i < m.set.size(); ++i) {
        if (i) out += ", ";
        out += print_literal(m.set[i]);
      }
      return out + "}";
    }
    std::string operator()(const Not& n) const {
      const bool wrap = std::holds_alternative<And>(n.operand->node) ||
                        std::holds_alternative<Or>(n.operand->node);
      const std::string inner = print_pred(*n.operand);
      return "not " + (wrap ? "(" + inner + ")" : inner);
    }
    std::string operator()(const And& a) const {
      std::string out;
      for (std::size_t i = 0; i < a.operands.size(); ++i) {
        if (i) out += " and ";
        const auto& child = a.operands[i];
        const bool wrap = std::holds_alternative<And>(child.node) || std::holds_alternative<Or>(child.node);
        out += wrap ? "(" + print_pred(child) + ")" : print_pred(child);
      }
      return out;
    }
    std::string operator()(const Or& o) const {
      std::string out;
      for (std::size_t i = 0; i < o.operands.size(); ++i) {
        if (i) out += " or ";
        const auto& child = o.operands[i];
        const bool wrap = std::holds_alternative<Or>(child.node);
        out += wrap ? "(" + print_pred(child) + ")" : print_pred(child);
      }
      return out;
    }
  };
  return std::visit(Visitor{}, p.node);
}

inline std::string print_interval(const IntervalExpr& iv) {
  return std::string(iv.lo_closed ? "[" : "(") + print_expr(iv.lo) + ", " + print_expr(iv.hi) +
         (iv.hi_closed ? "]" : ")");
}

inline std::string print_range(const RangeExpr& r, const std::string& indent = "") {
  if (const auto* iv = std::get_if<IntervalExpr>(&r)) return print_interval(*iv);
  const auto& k = std::get<KeyedRange>(r);
  std::string out = "per(" + print_expr(k.key) + ") {\n";
  // std::map keeps keys sorted.
  for (const auto& [key, iv] : k.entries) {
    out += indent + "  " + quote(key) + ": " + print_interval(iv) + ",\n";
  }
  out += indent + "  default: " + print_interval(*k.fallback) + "\n" + indent + "}";
  return out;
}

inline std::string print_operand(const UnionExpr& e) {
  if (const auto* l = std::get_if<RuleLeaf>(&e.node)) return l->name;
  const auto& c = std::get<Compose>(e.node);
  return "(" + print_operand(*c.lhs) + " " + compose_symbol(c.op) + " " + print_operand(*c.rhs) + ")";
}

/// Composition text with the outermost parentheses dropped, e.g.
/// "((R1 > R4) > R3) > R5".
inline std::string print_union_expr(const std::optional<UnionExpr>& e) {
  if (!e) return "none";
  if (const auto* l = std::get_if<RuleLeaf>(&e->node)) return l->name;
  const auto& c = std::get<Compose>(e->node);
  return print_operand(*c.lhs) + " " + compose_symbol(c.op) + " " + print_operand(*c.rhs);
}

inline std::string print_rule(const RuleSpec& r, const std::string& indent = "  ") {
  std::string out = indent + "rule " + r.name + " {\n";
  out += indent + "  applies: " + print_pred(r.applies) + "\n";
  out += indent + "  range: " + print_range(r.range, indent + "  ") + "\n";
  if (!r.params.empty()) {
    out += indent + "  params: ";
    for (std::size_t i = 0; i < r.params.size(); ++i) {
      const auto& p = r.params[i];
      if (i) out += ", ";
      out += p.name + " = " + format_number(p.value) + " in [" + format_number(p.lo) + ", " +
             format_number(p.hi) + "]";
    }
    out += "\n";
  }
  out += indent + "}\n";
  return out;
}

inline std::string print_union(const UnionSpec& spec) {
  std::string out = "exsum " + std::to_string(kFormatVersion) + "\n";
  out += "union " + spec.name + " {\n";
  out += "  expr: " + print_union_expr(spec.expr) + "\n";
  for (const auto& r : spec.rules) out += print_rule(r);
  out += "}\n";
  return out;
}

}  // namespace exsum::dsl
