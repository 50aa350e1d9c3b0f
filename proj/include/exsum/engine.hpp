#pragma once

// Per-FEU evaluation of rules and rule unions.

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "exsum/dataset.hpp"
#include "exsum/dsl/ast.hpp"
#include "exsum/dsl/printer.hpp"
#include "exsum/error.hpp"
#include "exsum/range_set.hpp"

namespace exsum {

using ParamValues = std::map<std::string, double>;
/// rule name -> parameter name -> value
using Bindings = std::map<std::string, ParamValues>;

/// Current parameter values as declared in the spec.
inline Bindings bindings_of(const dsl::UnionSpec& spec) {
  Bindings b;
  for (const auto& r : spec.rules) {
    auto& values = b[r.name];
    for (const auto& p : r.params) values[p.name] = p.value;
  }
  return b;
}

/// Copy of `spec` whose parameter declarations carry the bound values.
inline dsl::UnionSpec with_bindings(dsl::UnionSpec spec, const Bindings& bindings) {
  for (auto& r : spec.rules) {
    auto it = bindings.find(r.name);
    if (it == bindings.end()) continue;
    for (auto& p : r.params) {
      if (auto v = it->second.find(p.name); v != it->second.end()) p.value = v->second;
    }
  }
  return spec;
}

/// Evaluation notes attached to a result.
enum EvalNote : std::uint8_t {
  kEmptyAggregate = 1,  // a sibling aggregate ranged over no FEUs
  kMissingMatch = 2,    // match_attr() without a valid match_index
  kMissingValue = 4,    // a range endpoint depended on a missing feature value
};

struct EffectiveResult {
  bool applicable = false;
  RangeSet range;                       // meaningful iff applicable
  std::vector<std::size_t> effective;   // indices into UnionSpec::rules, ascending
  std::uint8_t notes = 0;

  friend bool operator==(const EffectiveResult&, const EffectiveResult&) = default;
};

namespace detail {

using Value = std::variant<std::monostate, double, std::string>;

enum class Truth { no, yes, unknown };

inline Truth truth_not(Truth t) {
  if (t == Truth::unknown) return t;
  return t == Truth::yes ? Truth::no : Truth::yes;
}

}  // namespace detail

/// A rule with its parameters bound, ready to evaluate FEUs.
class RuleEvaluator {
 public:
  RuleEvaluator(const dsl::RuleSpec& rule, const ParamValues& overrides, AttributionSpace space)
      : rule_(&rule), space_(space) {
    for (const auto& p : rule.params) params_[p.name] = p.value;
    for (const auto& [name, value] : overrides) {
      if (!rule.find_param(name)) throw RuleError("rule " + rule.name + " has no param " + name);
      params_[name] = value;
    }
  }

  const dsl::RuleSpec& spec() const { return *rule_; }

  /// Applicability; a missing feature value makes the predicate false.
  bool applies(const Instance& inst, std::size_t token) const {
    return eval_pred(rule_->applies, inst, token) == detail::Truth::yes;
  }

  /// Behavior range clipped to the attribution space.
  RangeSet behavior(const Instance& inst, std::size_t token, std::uint8_t& notes) const {
    const dsl::IntervalExpr* iv = std::get_if<dsl::IntervalExpr>(&rule_->range);
    if (!iv) {
      const auto& keyed = std::get<dsl::KeyedRange>(rule_->range);
      const detail::Value key = eval_expr(keyed.key, inst, token, notes);
      iv = &*keyed.fallback;
      std::string k;
      if (const auto* s = std::get_if<std::string>(&key)) {
        k = *s;
      } else if (const auto* d = std::get_if<double>(&key)) {
        k = dsl::format_number(*d);
      }
      if (auto it = keyed.entries.find(k); it != keyed.entries.end()) iv = &it->second;
    }
    const detail::Value lo = eval_expr(iv->lo, inst, token, notes);
    const detail::Value hi = eval_expr(iv->hi, inst, token, notes);
    const auto* lo_v = std::get_if<double>(&lo);
    const auto* hi_v = std::get_if<double>(&hi);
    if (!lo_v || !hi_v) {
      if (std::holds_alternative<std::string>(lo) || std::holds_alternative<std::string>(hi)) {
        throw RuleError("rule " + rule_->name + ": range endpoint is not numeric");
      }
      notes |= kMissingValue;
      return {};
    }
    return RangeSet(Interval{{*lo_v, iv->lo_closed}, {*hi_v, iv->hi_closed}}).clip(space_.lo, space_.hi);
  }

  EffectiveResult evaluate(const Instance& inst, std::size_t token, std::size_t rule_index) const {
    EffectiveResult r;
    r.applicable = applies(inst, token);
    if (r.applicable) {
      r.range = behavior(inst, token, r.notes);
      r.effective = {rule_index};
    }
    return r;
  }

 private:
  double param_value(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw RuleError("rule " + rule_->name + ": unresolved param " + name);
    return it->second;
  }

  static detail::Value to_value(const FeatureValue& v) {
    if (const auto* d = std::get_if<double>(&v)) return *d;
    if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
    if (const auto* s = std::get_if<std::string>(&v)) return *s;
    return std::monostate{};
  }

  detail::Value eval_expr(const dsl::Expr& e, const Instance& inst, std::size_t token,
                          std::uint8_t& notes) const {
    using detail::Value;
    return std::visit(
        [&](const auto& node) -> Value {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, dsl::NumberLit>) {
            return node.value;
          } else if constexpr (std::is_same_v<T, dsl::StringLit>) {
            return node.value;
          } else if constexpr (std::is_same_v<T, dsl::ParamRef>) {
            return param_value(node.name);
          } else if constexpr (std::is_same_v<T, dsl::FeatureRef>) {
            return to_value(inst.feature(node.name, token));
          } else if constexpr (std::is_same_v<T, dsl::BuiltinCall>) {
            return eval_builtin(node.fn, inst, token, notes);
          } else if constexpr (std::is_same_v<T, dsl::Aggregate>) {
            // Siblings only: the FEU's own attribution is excluded.
            double acc = node.is_max ? -kInf : kInf;
            bool any = false;
            for (std::size_t m = 0; m < inst.size(); ++m) {
              if (m == token) continue;
              if (eval_pred(*node.where, inst, m) != detail::Truth::yes) continue;
              any = true;
              const double a = inst.attributions[m];
              acc = node.is_max ? std::max(acc, a) : std::min(acc, a);
            }
            if (!any) notes |= kEmptyAggregate;
            return acc;
          } else if constexpr (std::is_same_v<T, dsl::Negate>) {
            const Value v = eval_expr(*node.operand, inst, token, notes);
            if (const auto* d = std::get_if<double>(&v)) return -*d;
            if (std::holds_alternative<std::string>(v)) throw RuleError("negation of a string term");
            return std::monostate{};
          } else {
            const Value l = eval_expr(*node.lhs, inst, token, notes);
            const Value r = eval_expr(*node.rhs, inst, token, notes);
            if (std::holds_alternative<std::string>(l) || std::holds_alternative<std::string>(r)) {
              throw RuleError("arithmetic on a string term");
            }
            const auto* a = std::get_if<double>(&l);
            const auto* b = std::get_if<double>(&r);
            if (!a || !b) return std::monostate{};
            return node.op == '+' ? *a + *b : *a - *b;
          }
        },
        e.node);
  }

  static detail::Value eval_builtin(dsl::Builtin fn, const Instance& inst, std::size_t token,
                                    std::uint8_t& notes) {
    switch (fn) {
      case dsl::Builtin::len: return static_cast<double>(inst.size());
      case dsl::Builtin::index: return static_cast<double>(token + 1);
      case dsl::Builtin::label: return static_cast<double>(inst.label);
      case dsl::Builtin::prediction: return static_cast<double>(inst.prediction());
      case dsl::Builtin::pred_confidence: return inst.confidence();
      case dsl::Builtin::token: return inst.tokens[token];
      case dsl::Builtin::lower_token: return ascii_lower(inst.tokens[token]);
      case dsl::Builtin::match_attr: {
        const auto* m = std::get_if<std::int64_t>(&inst.feature("match_index", token));
        if (!m || *m < 0 || static_cast<std::size_t>(*m) >= inst.size()) {
          notes |= kMissingMatch;
          return std::numeric_limits<double>::quiet_NaN();
        }
        return inst.attributions[static_cast<std::size_t>(*m)];
      }
    }
    return std::monostate{};
  }

  detail::Truth eval_pred(const dsl::Pred& p, const Instance& inst, std::size_t token) const {
    using detail::Truth;
    return std::visit(
        [&](const auto& node) -> Truth {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, dsl::ConstPred>) {
            return node.value ? Truth::yes : Truth::no;
          } else if constexpr (std::is_same_v<T, dsl::Compare>) {
            std::uint8_t ignored = 0;
            return compare(node.op, eval_expr(node.lhs, inst, token, ignored),
                           eval_expr(node.rhs, inst, token, ignored));
          } else if constexpr (std::is_same_v<T, dsl::Member>) {
            std::uint8_t ignored = 0;
            const detail::Value v = eval_expr(node.term, inst, token, ignored);
            if (std::holds_alternative<std::monostate>(v)) return Truth::unknown;
            for (const auto& lit : node.set) {
              if (const auto* d = std::get_if<double>(&lit)) {
                if (const auto* x = std::get_if<double>(&v); x && *x == *d) return Truth::yes;
              } else if (const auto* s = std::get_if<std::string>(&v); s && *s == std::get<std::string>(lit)) {
                return Truth::yes;
              }
            }
            return Truth::no;
          } else if constexpr (std::is_same_v<T, dsl::Not>) {
            return detail::truth_not(eval_pred(*node.operand, inst, token));
          } else if constexpr (std::is_same_v<T, dsl::And>) {
            Truth acc = Truth::yes;
            for (const auto& c : node.operands) {
              const Truth t = eval_pred(c, inst, token);
              if (t == Truth::no) return Truth::no;
              if (t == Truth::unknown) acc = Truth::unknown;
            }
            return acc;
          } else {
            Truth acc = Truth::no;
            for (const auto& c : node.operands) {
              const Truth t = eval_pred(c, inst, token);
              if (t == Truth::yes) return Truth::yes;
              if (t == Truth::unknown) acc = Truth::unknown;
            }
            return acc;
          }
        },
        p.node);
  }

  static detail::Truth compare(dsl::CmpOp op, const detail::Value& l, const detail::Value& r) {
    using detail::Truth;
    if (std::holds_alternative<std::monostate>(l) || std::holds_alternative<std::monostate>(r)) {
      return Truth::unknown;
    }
    auto result = [](bool b) { return b ? Truth::yes : Truth::no; };
    if (const auto* a = std::get_if<double>(&l)) {
      const auto* b = std::get_if<double>(&r);
      if (!b) throw RuleError("type mismatch in comparison");
      switch (op) {
        case dsl::CmpOp::lt: return result(*a < *b);
        case dsl::CmpOp::le: return result(*a <= *b);
        case dsl::CmpOp::gt: return result(*a > *b);
        case dsl::CmpOp::ge: return result(*a >= *b);
        case dsl::CmpOp::eq: return result(*a == *b);
        case dsl::CmpOp::ne: return result(*a != *b);
      }
    }
    const auto& a = std::get<std::string>(l);
    const auto* b = std::get_if<std::string>(&r);
    if (!b) throw RuleError("type mismatch in comparison");
    if (op == dsl::CmpOp::eq) return result(a == *b);
    if (op == dsl::CmpOp::ne) return result(a != *b);
    throw RuleError("numeric comparison on categorical value");
  }

  const dsl::RuleSpec* rule_;
  AttributionSpace space_;
  std::map<std::string, double> params_;
};

/// A union spec with its composition tree resolved to rule indices.
class CompiledUnion {
 public:
  explicit CompiledUnion(dsl::UnionSpec spec) : spec_(std::make_shared<const dsl::UnionSpec>(std::move(spec))) {
    for (std::size_t i = 0; i < spec_->rules.size(); ++i) index_[spec_->rules[i].name] = i;
    if (spec_->expr) root_ = build(*spec_->expr);
  }

  const dsl::UnionSpec& spec() const { return *spec_; }
  std::size_t rule_count() const { return spec_->rules.size(); }
  bool empty() const { return root_ < 0; }

  std::optional<std::size_t> rule_index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t require_rule(const std::string& name) const {
    auto i = rule_index(name);
    if (!i) throw RuleError("unknown rule " + name);
    return *i;
  }

  /// Indices of rules that occur in the composition tree.
  std::vector<std::size_t> used_rules() const {
    std::vector<std::size_t> out;
    for (const auto& n : nodes_) {
      if (n.rule >= 0) out.push_back(static_cast<std::size_t>(n.rule));
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  /// Composes per-rule results. `fetch(i)` returns rule i's standalone
  /// EffectiveResult for the FEU; under precedence the lower-precedence side
  /// is only fetched when the higher one does not apply.
  template <class Fetch>
  EffectiveResult compose(Fetch&& fetch) const {
    if (root_ < 0) return {};
    return compose_at(root_, fetch);
  }

 private:
  struct Node {
    int rule = -1;
    dsl::ComposeOp op = dsl::ComposeOp::precedence;
    int lhs = -1;
    int rhs = -1;
  };

  int build(const dsl::UnionExpr& e) {
    if (const auto* l = std::get_if<dsl::RuleLeaf>(&e.node)) {
      auto it = index_.find(l->name);
      if (it == index_.end()) throw RuleError("unknown rule " + l->name);
      nodes_.push_back({static_cast<int>(it->second), {}, -1, -1});
      return static_cast<int>(nodes_.size()) - 1;
    }
    const auto& c = std::get<dsl::Compose>(e.node);
    const int lhs = build(*c.lhs);
    const int rhs = build(*c.rhs);
    nodes_.push_back({-1, c.op, lhs, rhs});
    return static_cast<int>(nodes_.size()) - 1;
  }

  template <class Fetch>
  EffectiveResult compose_at(int at, Fetch& fetch) const {
    const Node& n = nodes_[static_cast<std::size_t>(at)];
    if (n.rule >= 0) return fetch(static_cast<std::size_t>(n.rule));
    EffectiveResult left = compose_at(n.lhs, fetch);
    if (n.op == dsl::ComposeOp::precedence) {
      if (left.applicable) return left;
      return compose_at(n.rhs, fetch);
    }
    EffectiveResult right = compose_at(n.rhs, fetch);
    if (!left.applicable) return right;
    if (!right.applicable) return left;
    EffectiveResult both;
    both.applicable = true;
    both.range = intersect(left.range, right.range);
    both.effective = std::move(left.effective);
    both.effective.insert(both.effective.end(), right.effective.begin(), right.effective.end());
    std::sort(both.effective.begin(), both.effective.end());
    both.notes = left.notes | right.notes;
    return both;
  }

  std::shared_ptr<const dsl::UnionSpec> spec_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

/// Evaluates one rule on one FEU.
inline EffectiveResult eval_rule(const dsl::RuleSpec& rule, const Dataset& d, const FeuRef& u,
                                 const ParamValues& params = {}) {
  return RuleEvaluator(rule, params, d.space()).evaluate(d.instance(u.instance), u.token, 0);
}

/// Binds every rule of a compiled union.
inline std::vector<RuleEvaluator> bind_rules(const CompiledUnion& cu, const Bindings& bindings,
                                             AttributionSpace space) {
  static const ParamValues none;
  std::vector<RuleEvaluator> out;
  out.reserve(cu.rule_count());
  for (const auto& r : cu.spec().rules) {
    auto it = bindings.find(r.name);
    out.emplace_back(r, it == bindings.end() ? none : it->second, space);
  }
  return out;
}

/// Evaluates the union on one FEU.
inline EffectiveResult eval_union(const CompiledUnion& cu, const std::vector<RuleEvaluator>& rules,
                                  const Instance& inst, std::size_t token) {
  return cu.compose([&](std::size_t r) { return rules[r].evaluate(inst, token, r); });
}

inline EffectiveResult eval_union(const dsl::UnionSpec& spec, const Dataset& d, const FeuRef& u,
                                  const Bindings& bindings) {
  CompiledUnion cu(spec);
  auto rules = bind_rules(cu, bindings, d.space());
  return eval_union(cu, rules, d.instance(u.instance), u.token);
}

/// Evaluates the union on every FEU, in flat FEU order.
inline std::vector<EffectiveResult> evaluate_union(const CompiledUnion& cu, const Dataset& d,
                                                   const Bindings& bindings) {
  auto rules = bind_rules(cu, bindings, d.space());
  std::vector<EffectiveResult> out;
  out.reserve(d.feu_count());
  for (const auto& inst : d.instances()) {
    for (std::size_t l = 0; l < inst.size(); ++l) out.push_back(eval_union(cu, rules, inst, l));
  }
  return out;
}

inline std::vector<EffectiveResult> evaluate_union(const dsl::UnionSpec& spec, const Dataset& d,
                                                   const Bindings& bindings) {
  return evaluate_union(CompiledUnion(spec), d, bindings);
}

/// One rule evaluated on every FEU of a dataset. Ranges are only filled where
/// the rule applies.
struct RuleVectors {
  std::vector<char> applies;
  std::vector<RangeSet> ranges;
  std::vector<std::uint8_t> notes;
};

inline RuleVectors evaluate_rule_vectors(const RuleEvaluator& rule, const Dataset& d) {
  RuleVectors v;
  const std::size_t n = d.feu_count();
  v.applies.assign(n, 0);
  v.ranges.resize(n);
  v.notes.assign(n, 0);
  std::size_t flat = 0;
  for (const auto& inst : d.instances()) {
    for (std::size_t l = 0; l < inst.size(); ++l, ++flat) {
      if (!rule.applies(inst, l)) continue;
      v.applies[flat] = 1;
      v.ranges[flat] = rule.behavior(inst, l, v.notes[flat]);
    }
  }
  return v;
}

/// Composes precomputed per-rule vectors; identical to evaluate_union.
inline std::vector<EffectiveResult> compose_vectors(
    const CompiledUnion& cu, const std::vector<std::shared_ptr<const RuleVectors>>& per_rule,
    std::size_t feu_count) {
  std::vector<EffectiveResult> out;
  out.reserve(feu_count);
  for (std::size_t i = 0; i < feu_count; ++i) {
    out.push_back(cu.compose([&](std::size_t r) {
      const RuleVectors& v = *per_rule[r];
      EffectiveResult res;
      res.applicable = v.applies[i] != 0;
      if (res.applicable) {
        res.range = v.ranges[i];
        res.effective = {r};
        res.notes = v.notes[i];
      }
      return res;
    }));
  }
  return out;
}

/// Names of the effective rules of a result.
inline std::vector<std::string> effective_names(const dsl::UnionSpec& spec, const EffectiveResult& r) {
  std::vector<std::string> out;
  for (auto i : r.effective) out.push_back(spec.rules.at(i).name);
  return out;
}

// ---------------------------------------------------------------------------
// Counterfactual removal

/// Removes leaf `rule`; its parent collapses to the sibling subtree. Removing
/// the only rule yields the empty union.
inline std::optional<dsl::UnionExpr> remove_rule(const std::optional<dsl::UnionExpr>& expr,
                                                 const std::string& rule) {
  struct Remover {
    const std::string& name;
    bool found = false;
    std::optional<dsl::UnionExpr> operator()(const dsl::UnionExpr& e) {
      if (const auto* l = std::get_if<dsl::RuleLeaf>(&e.node)) {
        if (l->name == name) {
          found = true;
          return std::nullopt;
        }
        return e;
      }
      const auto& c = std::get<dsl::Compose>(e.node);
      auto lhs = (*this)(*c.lhs);
      auto rhs = (*this)(*c.rhs);
      if (!lhs) return rhs;
      if (!rhs) return lhs;
      return dsl::compose(c.op, std::move(*lhs), std::move(*rhs));
    }
  };
  if (!expr) throw RuleError("rule " + rule + " not present in empty union");
  Remover remover{rule};
  auto out = remover(*expr);
  if (!remover.found) throw RuleError("rule " + rule + " not present in union");
  return out;
}

/// The counterfactual union: `rule` dropped from the expression and the rule list.
inline dsl::UnionSpec remove_rule(const dsl::UnionSpec& spec, const std::string& rule) {
  dsl::UnionSpec out = spec;
  out.expr = remove_rule(spec.expr, rule);
  std::erase_if(out.rules, [&](const dsl::RuleSpec& r) { return r.name == rule; });
  return out;
}

/// Display label of a rule: "R7" -> "Rule 7", anything else -> "Rule <name>".
inline std::string rule_label(const std::string& name) {
  if (name.size() > 1 && name[0] == 'R' &&
      std::all_of(name.begin() + 1, name.end(), [](unsigned char c) { return std::isdigit(c); })) {
    return "Rule " + name.substr(1);
  }
  return "Rule " + name;
}

inline std::string union_line(const dsl::UnionSpec& spec) {
  return "Rule Union: " + dsl::print_union_expr(spec.expr);
}

inline std::string cf_line(const dsl::UnionSpec& spec, const std::string& rule) {
  return "CF Without " + rule_label(rule) + ": " + dsl::print_union_expr(remove_rule(spec.expr, rule));
}

}  // namespace exsum
