#pragma once

// Single-parameter search for a value whose metric reaches a target.
//
// Linear search probes start, start +/- precision, ... toward stop and returns
// the first feasible value. Binary search needs exactly one feasible endpoint,
// halves the bracket while it is at least `precision` long, and returns the
// feasible end of the final bracket.

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "exsum/dataset.hpp"
#include "exsum/engine.hpp"
#include "exsum/error.hpp"
#include "exsum/measure.hpp"
#include "exsum/metrics.hpp"

namespace exsum {

enum class TargetScope { full_union, cf_union, selected_rule };
enum class MetricKind { coverage, validity, sharpness };
enum class Direction { at_least, at_most };
enum class SearchMethod { linear, binary };

struct TuneRequest {
  std::string rule;
  std::string param;
  double start = 0.0;
  double stop = 0.0;
  double precision = 0.01;
  TargetScope scope = TargetScope::selected_rule;
  MetricKind metric = MetricKind::validity;
  double target_value = 0.0;
  Direction direction = Direction::at_least;
  SearchMethod method = SearchMethod::binary;
};

struct TracePoint {
  double value = 0.0;
  std::optional<double> metric;  // nullopt when the metric is undefined there
  friend bool operator==(const TracePoint&, const TracePoint&) = default;
};

struct TuneOutcome {
  bool success = false;
  std::optional<double> value;
  int evaluations = 0;
  std::vector<TracePoint> trace;
  std::string diagnostic;
};

/// Search bounds and feasibility test shared by both methods.
struct SearchSpec {
  double start = 0.0;
  double stop = 0.0;
  double precision = 0.01;
  double target_value = 0.0;
  Direction direction = Direction::at_least;

  bool feasible(const std::optional<double>& metric) const {
    if (!metric) return false;
    return direction == Direction::at_least ? *metric >= target_value : *metric <= target_value;
  }

  void check() const {
    if (!(precision > 0.0) || !std::isfinite(precision)) throw UsageError("precision must be positive");
    if (start == stop) throw UsageError("start and stop must differ");
    if (!(precision < std::abs(stop - start))) throw UsageError("precision must be smaller than |stop - start|");
  }
};

/// `objective(value)` returns the metric at a parameter value.
template <class Objective>
TuneOutcome tune_linear(const SearchSpec& s, Objective&& objective) {
  s.check();
  TuneOutcome out;
  const double step = s.stop > s.start ? s.precision : -s.precision;
  const double span = std::abs(s.stop - s.start);
  // Values are start + k * step; k is an integer so steps do not accumulate error.
  for (long k = 0;; ++k) {
    const double offset = static_cast<double>(k) * s.precision;
    if (offset > span * (1.0 + 1e-12)) break;
    const double v = s.start + static_cast<double>(k) * step;
    const std::optional<double> m = objective(v);
    ++out.evaluations;
    out.trace.push_back({v, m});
    if (s.feasible(m)) {
      out.success = true;
      out.value = v;
      return out;
    }
  }
  out.diagnostic = "no feasible value between start and stop";
  return out;
}

template <class Objective>
TuneOutcome tune_binary(const SearchSpec& s, Objective&& objective) {
  s.check();
  TuneOutcome out;
  auto probe = [&](double v) {
    const std::optional<double> m = objective(v);
    ++out.evaluations;
    out.trace.push_back({v, m});
    return s.feasible(m);
  };
  const bool start_ok = probe(s.start);
  const bool stop_ok = probe(s.stop);
  if (start_ok == stop_ok) {
    out.diagnostic = start_ok ? "no bracket: both endpoints feasible" : "no bracket: neither endpoint feasible";
    return out;
  }
  double good = start_ok ? s.start : s.stop;
  double bad = start_ok ? s.stop : s.start;
  while (std::abs(bad - good) >= s.precision) {
    const double mid = good + (bad - good) / 2.0;
    if (mid == good || mid == bad) break;
    if (probe(mid)) {
      good = mid;
    } else {
      bad = mid;
    }
  }
  out.success = true;
  out.value = good;
  return out;
}

template <class Objective>
TuneOutcome run_search(SearchMethod method, const SearchSpec& s, Objective&& objective) {
  return method == SearchMethod::linear ? tune_linear(s, objective) : tune_binary(s, objective);
}

// ---------------------------------------------------------------------------
// Tuning a parameter of a rule union

inline std::optional<double> pick_metric(const MetricReport& r, MetricKind kind) {
  switch (kind) {
    case MetricKind::coverage: return r.coverage;
    case MetricKind::validity: return r.validity;
    case MetricKind::sharpness: return r.sharpness;
  }
  return std::nullopt;
}

/// Union, data and measure a tune run evaluates against. Tuning only ever
/// sees construction data.
struct TuneContext {
  const dsl::UnionSpec& spec;
  const ConstructionSet& construction;
  const Measure& measure;
  Weighting weighting = Weighting::pu;
};

namespace detail {

inline const dsl::ParamDecl& check_request(const TuneRequest& req, const dsl::UnionSpec& spec) {
  const auto* rule = spec.find_rule(req.rule);
  if (!rule) throw UsageError("unknown rule " + req.rule);
  const auto* decl = rule->find_param(req.param);
  if (!decl) throw UsageError("rule " + req.rule + " has no param " + req.param);
  const double lo = std::min(req.start, req.stop);
  const double hi = std::max(req.start, req.stop);
  if (lo < decl->lo || hi > decl->hi) {
    throw UsageError("search interval exceeds the declared bounds of " + req.rule + "." + req.param);
  }
  SearchSpec{req.start, req.stop, req.precision, req.target_value, req.direction}.check();
  if (req.scope != TargetScope::full_union) {
    const auto leaves = spec.leaf_names();
    if (std::find(leaves.begin(), leaves.end(), req.rule) == leaves.end()) {
      throw UsageError("rule " + req.rule + " is not in the union");
    }
  }
  return *decl;
}

}  // namespace detail

/// Metric for `req` as a function of the tuned parameter. Only the tuned
/// rule is re-evaluated per probe.
class UnionObjective {
 public:
  UnionObjective(const TuneRequest& req, const TuneContext& ctx, const Bindings& bindings)
      : req_(req),
        ctx_(ctx),
        bindings_(bindings),
        cu_(ctx.spec),
        weights_(feu_weights(ctx.construction.data(), ctx.weighting)),
        rule_index_(cu_.require_rule(req.rule)) {
    const Dataset& d = ctx.construction.data();
    auto evaluators = bind_rules(cu_, bindings_, d.space());
    vectors_.reserve(evaluators.size());
    for (const auto& e : evaluators) vectors_.push_back(std::make_shared<const RuleVectors>(evaluate_rule_vectors(e, d)));
    if (req.scope == TargetScope::cf_union) {
      auto cf = remove_rule(ctx.spec, req.rule);
      cf_report_ = union_metrics(cf, MetricContext{d, ctx.measure, ctx.weighting}, bindings_, Scope::cf_union);
    }
  }

  std::optional<double> operator()(double value) {
    if (cf_report_) return pick_metric(*cf_report_, req_.metric);
    const Dataset& d = ctx_.construction.data();
    Bindings b = bindings_;
    b[req_.rule][req_.param] = value;
    static const ParamValues none;
    auto it = b.find(req_.rule);
    RuleEvaluator tuned(cu_.spec().rules[rule_index_], it == b.end() ? none : it->second, d.space());
    auto vectors = vectors_;
    vectors[rule_index_] = std::make_shared<const RuleVectors>(evaluate_rule_vectors(tuned, d));
    auto results = compose_vectors(cu_, vectors, d.feu_count());
    const MetricReport r = req_.scope == TargetScope::selected_rule
                               ? reduce_rule_in_union(d, weights_, results, ctx_.measure, rule_index_)
                               : reduce_metrics(d, weights_, results, ctx_.measure);
    return pick_metric(r, req_.metric);
  }

 private:
  TuneRequest req_;
  const TuneContext& ctx_;
  Bindings bindings_;
  CompiledUnion cu_;
  std::vector<double> weights_;
  std::size_t rule_index_;
  std::vector<std::shared_ptr<const RuleVectors>> vectors_;
  std::optional<MetricReport> cf_report_;
};

/// Runs the search. `bindings` is never modified; apply outcome.value on success.
inline TuneOutcome tune(const TuneRequest& req, const TuneContext& ctx, const Bindings& bindings) {
  detail::check_request(req, ctx.spec);
  UnionObjective objective(req, ctx, bindings);
  const SearchSpec s{req.start, req.stop, req.precision, req.target_value, req.direction};
  return run_search(req.method, s, objective);
}

// ---------------------------------------------------------------------------
// JSON forms used by the service

inline const char* to_string(TargetScope s) {
  switch (s) {
    case TargetScope::full_union: return "union";
    case TargetScope::cf_union: return "cf-union";
    case TargetScope::selected_rule: return "selected-rule";
  }
  return "?";
}

inline const char* to_string(MetricKind k) {
  switch (k) {
    case MetricKind::coverage: return "coverage";
    case MetricKind::validity: return "validity";
    case MetricKind::sharpness: return "sharpness";
  }
  return "?";
}

/// "union.validity", "selected-rule.sharpness", ...
inline std::pair<TargetScope, MetricKind> parse_target_metric(const std::string& text) {
  const auto dot = text.find('.');
  if (dot == std::string::npos) throw UsageError("target metric must look like <scope>.<metric>");
  const std::string scope = text.substr(0, dot);
  const std::string metric = text.substr(dot + 1);
  TargetScope s;
  if (scope == "union") {
    s = TargetScope::full_union;
  } else if (scope == "cf-union") {
    s = TargetScope::cf_union;
  } else if (scope == "selected-rule") {
    s = TargetScope::selected_rule;
  } else {
    throw UsageError("unknown metric scope '" + scope + "'");
  }
  MetricKind k;
  if (metric == "coverage") {
    k = MetricKind::coverage;
  } else if (metric == "validity") {
    k = MetricKind::validity;
  } else if (metric == "sharpness") {
    k = MetricKind::sharpness;
  } else {
    throw UsageError("unknown metric '" + metric + "'");
  }
  return {s, k};
}

inline TuneRequest tune_request_from_json(const nlohmann::json& j) {
  TuneRequest r;
  try {
    r.rule = j.at("rule").get<std::string>();
    r.param = j.at("param").get<std::string>();
    r.start = j.at("start").get<double>();
    r.stop = j.at("stop").get<double>();
    r.precision = j.at("precision").get<double>();
    std::tie(r.scope, r.metric) = parse_target_metric(j.at("target_metric").get<std::string>());
    r.target_value = j.at("target_value").get<double>();
    const std::string dir = j.value("direction", "at-least");
    if (dir == "at-least") {
      r.direction = Direction::at_least;
    } else if (dir == "at-most") {
      r.direction = Direction::at_most;
    } else {
      throw UsageError("unknown direction '" + dir + "'");
    }
    const std::string method = j.value("method", "binary");
    if (method == "linear") {
      r.method = SearchMethod::linear;
    } else if (method == "binary") {
      r.method = SearchMethod::binary;
    } else {
      throw UsageError("unknown method '" + method + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("malformed tune request: ") + e.what());
  }
  return r;
}

inline nlohmann::json to_json(const TuneRequest& r) {
  return {{"rule", r.rule},
          {"param", r.param},
          {"start", r.start},
          {"stop", r.stop},
          {"precision", r.precision},
          {"target_metric", std::string(to_string(r.scope)) + "." + to_string(r.metric)},
          {"target_value", r.target_value},
          {"direction", r.direction == Direction::at_least ? "at-least" : "at-most"},
          {"method", r.method == SearchMethod::linear ? "linear" : "binary"}};
}

inline nlohmann::json to_json(const TuneOutcome& o) {
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& p : o.trace) {
    trace.push_back({{"value", p.value}, {"metric", p.metric ? nlohmann::json(*p.metric) : nlohmann::json()}});
  }
  nlohmann::json j = {{"success", o.success}, {"evaluations", o.evaluations}, {"trace", trace}};
  j["value"] = o.value ? nlohmann::json(*o.value) : nlohmann::json();
  if (!o.diagnostic.empty()) j["diagnostic"] = o.diagnostic;
  return j;
}

}  // namespace exsum
