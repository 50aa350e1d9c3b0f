#pragma once

// Coverage, validity and sharpness estimated over a weighted FEU corpus.
//
//   coverage  = sum_{u in S} w(u) / sum_u w(u)
//   validity  = sum_{u in S, e(u) in b(u)} w(u) / sum_{u in S} w(u)
//   sharpness = sum_{u in S} w(u) (1 - P_E(b(u) \ {e(u)})) / sum_{u in S} w(u)
//
// where S is the applicable set of the union (or the FEUs on which a given rule
// is effective) and b is the union's composed behavior range.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "exsum/dataset.hpp"
#include "exsum/dsl/ast.hpp"
#include "exsum/engine.hpp"
#include "exsum/error.hpp"
#include "exsum/measure.hpp"

namespace exsum {

enum class Scope { full_union, cf_union, rule_standalone, rule_in_union };

inline const char* to_string(Scope s) {
  switch (s) {
    case Scope::full_union: return "union";
    case Scope::cf_union: return "cf-union";
    case Scope::rule_standalone: return "rule-standalone";
    case Scope::rule_in_union: return "rule-in-union";
  }
  return "?";
}

struct MetricReport {
  Scope scope = Scope::full_union;
  double coverage = 0.0;
  std::optional<double> validity;   // undefined iff nothing applicable
  std::optional<double> sharpness;  // undefined iff nothing applicable
  double applicable_mass = 0.0;
  std::size_t applicable_count = 0;

  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

/// Reduces per-FEU results to a report. `member(i, result)` selects the
/// conditioning set (applicability by default).
template <class Member>
MetricReport reduce_metrics(const Dataset& d, const std::vector<double>& weights,
                            const std::vector<EffectiveResult>& results, const Measure& measure,
                            Scope scope, Member&& member) {
  if (results.size() != d.feu_count() || weights.size() != d.feu_count()) {
    throw UsageError("per-FEU results do not match the dataset");
  }
  CompensatedSum total, covered, valid, sharp;
  MetricReport report;
  // many FEUs share a range; P(b) is kept per distinct range
  std::map<std::vector<double>, double> base_mass;
  auto excluded_mass = [&](const RangeSet& rs, double e) {
    std::vector<double> key;
    for (const auto& iv : rs.intervals()) {
      key.insert(key.end(), {iv.lo.value, iv.lo.closed ? 1.0 : 0.0, iv.hi.value, iv.hi.closed ? 1.0 : 0.0});
    }
    auto it = base_mass.find(key);
    if (it == base_mass.end()) it = base_mass.emplace(std::move(key), measure.mass(rs)).first;
    return rs.contains(e) ? it->second - measure.atom_mass(e) : it->second;
  };
  report.scope = scope;
  std::size_t flat = 0;
  for (const auto& inst : d.instances()) {
    for (std::size_t l = 0; l < inst.size(); ++l, ++flat) {
      const double w = weights[flat];
      total.add(w);
      const EffectiveResult& r = results[flat];
      if (!member(flat, r)) continue;
      ++report.applicable_count;
      covered.add(w);
      const double e = inst.attributions[l];
      if (r.range.contains(e)) valid.add(w);
      sharp.add(w * (1.0 - excluded_mass(r.range, e)));
    }
  }
  report.applicable_mass = covered.value();
  report.coverage = report.applicable_mass / total.value();
  if (report.applicable_count > 0 && report.applicable_mass > 0.0) {
    report.validity = valid.value() / report.applicable_mass;
    report.sharpness = sharp.value() / report.applicable_mass;
  }
  return report;
}

inline MetricReport reduce_metrics(const Dataset& d, const std::vector<double>& weights,
                                   const std::vector<EffectiveResult>& results, const Measure& measure,
                                   Scope scope = Scope::full_union) {
  return reduce_metrics(d, weights, results, measure, scope,
                        [](std::size_t, const EffectiveResult& r) { return r.applicable; });
}

/// Metrics restricted to the FEUs on which rule `rule_index` is effective.
inline MetricReport reduce_rule_in_union(const Dataset& d, const std::vector<double>& weights,
                                         const std::vector<EffectiveResult>& results, const Measure& measure,
                                         std::size_t rule_index) {
  return reduce_metrics(d, weights, results, measure, Scope::rule_in_union,
                        [rule_index](std::size_t, const EffectiveResult& r) {
                          return r.applicable &&
                                 std::binary_search(r.effective.begin(), r.effective.end(), rule_index);
                        });
}

/// Everything a metric pass needs besides the spec.
struct MetricContext {
  const Dataset& data;
  const Measure& measure;
  Weighting weighting = Weighting::pu;
};

inline MetricReport union_metrics(const dsl::UnionSpec& spec, const MetricContext& ctx, const Bindings& bindings,
                                  Scope scope = Scope::full_union) {
  auto results = evaluate_union(spec, ctx.data, bindings);
  return reduce_metrics(ctx.data, feu_weights(ctx.data, ctx.weighting), results, ctx.measure, scope);
}

inline double coverage(const dsl::UnionSpec& spec, const MetricContext& ctx, const Bindings& bindings) {
  return union_metrics(spec, ctx, bindings).coverage;
}

inline std::optional<double> validity(const dsl::UnionSpec& spec, const MetricContext& ctx,
                                      const Bindings& bindings) {
  return union_metrics(spec, ctx, bindings).validity;
}

inline std::optional<double> sharpness(const dsl::UnionSpec& spec, const MetricContext& ctx,
                                       const Bindings& bindings) {
  return union_metrics(spec, ctx, bindings).sharpness;
}

/// A union holding just this rule.
inline dsl::UnionSpec single_rule_union(const dsl::RuleSpec& rule) {
  dsl::UnionSpec u;
  u.name = rule.name;
  u.expr = dsl::leaf(rule.name);
  u.rules = {rule};
  return u;
}

/// A rule evaluated on its own, ignoring every other rule.
inline MetricReport rule_standalone_metrics(const dsl::RuleSpec& rule, const MetricContext& ctx,
                                            const ParamValues& params = {}) {
  Bindings b;
  b[rule.name] = params;
  return union_metrics(single_rule_union(rule), ctx, b, Scope::rule_standalone);
}

inline MetricReport rule_in_union_metrics(const dsl::UnionSpec& spec, const std::string& rule,
                                          const MetricContext& ctx, const Bindings& bindings) {
  CompiledUnion cu(spec);
  const auto leaves = spec.leaf_names();
  if (std::find(leaves.begin(), leaves.end(), rule) == leaves.end()) {
    throw RuleError("rule " + rule + " is not in the union");
  }
  const std::size_t idx = cu.require_rule(rule);
  auto results = evaluate_union(cu, ctx.data, bindings);
  return reduce_rule_in_union(ctx.data, feu_weights(ctx.data, ctx.weighting), results, ctx.measure, idx);
}

/// The three metric groups shown for a union: the full union, and when a rule
/// is selected, the union without it and the rule's own effective-set metrics.
struct UnionReport {
  MetricReport full;
  std::optional<MetricReport> cf;
  std::optional<MetricReport> selected;
};

inline UnionReport union_report(const dsl::UnionSpec& spec, const MetricContext& ctx, const Bindings& bindings,
                                const std::optional<std::string>& cf_without = std::nullopt) {
  UnionReport out;
  out.full = union_metrics(spec, ctx, bindings);
  if (cf_without) {
    out.cf = union_metrics(remove_rule(spec, *cf_without), ctx, bindings, Scope::cf_union);
    out.selected = rule_in_union_metrics(spec, *cf_without, ctx, bindings);
  }
  return out;
}

/// One row of a per-rule table: in-union metrics of each rule in expression order.
struct RuleRow {
  std::size_t idx = 0;  // 1-based position in the expression
  std::string rule;
  MetricReport report;
};

inline std::vector<RuleRow> per_rule_rows(const dsl::UnionSpec& spec, const MetricContext& ctx,
                                          const Bindings& bindings) {
  CompiledUnion cu(spec);
  auto results = evaluate_union(cu, ctx.data, bindings);
  const auto weights = feu_weights(ctx.data, ctx.weighting);
  std::vector<RuleRow> rows;
  std::size_t k = 0;
  for (const auto& name : spec.leaf_names()) {
    rows.push_back({++k, name, reduce_rule_in_union(ctx.data, weights, results, ctx.measure, cu.require_rule(name))});
  }
  return rows;
}

}  // namespace exsum
