#pragma once

#include <set>
#include <string>
#include <vector>

#include "exsum/dataset.hpp"
#include "exsum/dsl/ast.hpp"

namespace exsum::dsl {

struct Diagnostic {
  std::string rule;  // empty for union-level problems
  std::string message;
  SourcePos pos;
};

namespace detail {

enum class TermType { numeric, string, unknown };

class Validator {
 public:
  explicit Validator(const FeatureSchema& schema) : schema_(schema) {}

  std::vector<Diagnostic> run(const UnionSpec& spec) {
    for (const auto& r : spec.rules) check_rule(r);
    return std::move(out_);
  }

 private:
  void report(const std::string& msg, SourcePos pos) { out_.push_back({rule_->name, msg, pos}); }

  void check_rule(const RuleSpec& r) {
    rule_ = &r;
    std::set<std::string> names;
    for (const auto& p : r.params) {
      if (!names.insert(p.name).second) report("duplicate param " + p.name, p.pos);
      if (!(p.lo <= p.hi)) report("param " + p.name + " has empty search bounds", p.pos);
      if (p.value < p.lo || p.value > p.hi) report("param " + p.name + ": default outside search bounds", p.pos);
    }
    check_pred(r.applies, Context::applicability);
    if (const auto* iv = std::get_if<IntervalExpr>(&r.range)) {
      check_interval(*iv);
    } else {
      const auto& k = std::get<KeyedRange>(r.range);
      if (type_of(k.key, Context::range) != TermType::string) {
        report("keyed range key must be a string-valued term", k.key.pos);
      }
      for (const auto& [key, iv] : k.entries) check_interval(iv);
      check_interval(*k.fallback);
    }
  }

  void check_interval(const IntervalExpr& iv) {
    for (const Expr* e : {&iv.lo, &iv.hi}) {
      if (type_of(*e, Context::range) != TermType::numeric) report("range endpoint must be numeric", e->pos);
    }
  }

  // Where the term appears. Sibling aggregates and match_attr only make sense
  // inside behavior ranges; `where` filters may not nest further aggregates.
  enum class Context { applicability, range, where };

  void check_pred(const Pred& p, Context ctx) {
    std::visit(
        [&](const auto& node) {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, Compare>) {
            check_compare(node, ctx, p.pos);
          } else if constexpr (std::is_same_v<T, Member>) {
            const TermType t = type_of(node.term, ctx);
            for (const auto& lit : node.set) {
              const TermType lt = std::holds_alternative<double>(lit) ? TermType::numeric : TermType::string;
              if (t != TermType::unknown && lt != t) {
                report("set literal type does not match the tested term", p.pos);
                break;
              }
            }
          } else if constexpr (std::is_same_v<T, Not>) {
            check_pred(*node.operand, ctx);
          } else if constexpr (std::is_same_v<T, And> || std::is_same_v<T, Or>) {
            for (const auto& child : node.operands) check_pred(child, ctx);
          }
        },
        p.node);
  }

  void check_compare(const Compare& c, Context ctx, SourcePos pos) {
    const TermType l = type_of(c.lhs, ctx);
    const TermType r = type_of(c.rhs, ctx);
    const bool ordering = c.op != CmpOp::eq && c.op != CmpOp::ne;
    if (ordering && (l == TermType::string || r == TermType::string)) {
      const bool categorical = is_categorical(c.lhs) || is_categorical(c.rhs);
      report(categorical ? "numeric comparison on categorical feature" : "ordering comparison on string term", pos);
      return;
    }
    if (l != TermType::unknown && r != TermType::unknown && l != r) {
      report("type mismatch in comparison", pos);
    }
  }

  bool is_categorical(const Expr& e) const {
    const auto* f = std::get_if<FeatureRef>(&e.node);
    if (!f) return false;
    auto it = schema_.find(f->name);
    return it != schema_.end() && it->second == FeatureKind::categorical;
  }

  TermType type_of(const Expr& e, Context ctx) {
    return std::visit(
        [&](const auto& node) -> TermType {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, NumberLit>) {
            return TermType::numeric;
          } else if constexpr (std::is_same_v<T, StringLit>) {
            return TermType::string;
          } else if constexpr (std::is_same_v<T, ParamRef>) {
            if (!rule_->find_param(node.name)) report("unresolved param " + node.name, e.pos);
            return TermType::numeric;
          } else if constexpr (std::is_same_v<T, FeatureRef>) {
            auto it = schema_.find(node.name);
            if (it == schema_.end()) {
              report("unknown feature " + node.name, e.pos);
              return TermType::unknown;
            }
            return it->second == FeatureKind::categorical ? TermType::string : TermType::numeric;
          } else if constexpr (std::is_same_v<T, BuiltinCall>) {
            if (node.fn == Builtin::match_attr) {
              if (ctx != Context::range) report("match_attr() is only allowed in a behavior range", e.pos);
              auto it = schema_.find("match_index");
              if (it == schema_.end() || it->second != FeatureKind::integer) {
                report("match_attr() needs integer feature match_index", e.pos);
              }
            }
            if (node.fn == Builtin::token || node.fn == Builtin::lower_token) return TermType::string;
            return TermType::numeric;
          } else if constexpr (std::is_same_v<T, Aggregate>) {
            if (ctx != Context::range) report("sibling aggregates are only allowed in a behavior range", e.pos);
            check_pred(*node.where, Context::where);
            return TermType::numeric;
          } else if constexpr (std::is_same_v<T, Negate>) {
            if (type_of(*node.operand, ctx) == TermType::string) report("negation of a string term", e.pos);
            return TermType::numeric;
          } else {
            const TermType l = type_of(*node.lhs, ctx);
            const TermType r = type_of(*node.rhs, ctx);
            if (l == TermType::string || r == TermType::string) report("arithmetic on a string term", e.pos);
            return TermType::numeric;
          }
        },
        e.node);
  }

  const FeatureSchema& schema_;
  const RuleSpec* rule_ = nullptr;
  std::vector<Diagnostic> out_;
};

}  // namespace detail

/// Checks feature references, term types and parameter declarations.
/// An empty result means the spec can be evaluated on data with this schema.
inline std::vector<Diagnostic> validate_against(const UnionSpec& spec, const FeatureSchema& schema) {
  return detail::Validator(schema).run(spec);
}

}  // namespace exsum::dsl
