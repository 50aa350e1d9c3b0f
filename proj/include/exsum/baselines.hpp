#pragma once

// Rule constructors that mimic ad hoc inspection of a few explanations
// (belief-guided, quantile-fitting, word-level), the word-average union, and
// the random / submodular instance pickers they are fed with.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "exsum/autotune.hpp"
#include "exsum/dataset.hpp"
#include "exsum/dsl/ast.hpp"
#include "exsum/engine.hpp"
#include "exsum/error.hpp"
#include "exsum/measure.hpp"
#include "exsum/metrics.hpp"

namespace exsum {

// ---------------------------------------------------------------------------
// Picking instances

enum class PickMethod { random, submodular };

inline const char* to_string(PickMethod m) { return m == PickMethod::random ? "random" : "submodular"; }

struct Sample {
  Dataset data;
  std::vector<std::size_t> indices;  // into the source dataset, ascending
  PickMethod method = PickMethod::random;
  std::optional<std::uint64_t> seed;
};

inline Sample pick_random(const Dataset& d, std::size_t k, std::uint64_t seed) {
  if (k > d.size()) throw UsageError("cannot pick " + std::to_string(k) + " of " + std::to_string(d.size()) + " instances");
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return {d.subset(idx), idx, PickMethod::random, seed};
}

/// Feature importance I_j = sqrt(sum_i |W_ij|) over rows of an explanation matrix.
inline std::map<std::string, double> feature_importance(const std::vector<std::map<std::string, double>>& rows) {
  std::map<std::string, double> sum;
  for (const auto& row : rows) {
    for (const auto& [f, w] : row) sum[f] += std::abs(w);
  }
  for (auto& [f, s] : sum) s = std::sqrt(s);
  return sum;
}

/// sum_j I_j * [some chosen row has W_ij != 0]
inline double coverage_objective(const std::vector<std::map<std::string, double>>& rows,
                                 const std::map<std::string, double>& importance,
                                 const std::vector<std::size_t>& chosen) {
  std::set<std::string> present;
  for (auto i : chosen) {
    for (const auto& [f, w] : rows[i]) {
      if (w != 0.0) present.insert(f);
    }
  }
  double total = 0.0;
  for (const auto& f : present) total += importance.at(f);
  return total;
}

/// Greedy coverage pick. Returns row indices in the order they were chosen;
/// ties go to the lowest row index.
inline std::vector<std::size_t> greedy_coverage_pick(const std::vector<std::map<std::string, double>>& rows,
                                                     std::size_t k) {
  if (k > rows.size()) throw UsageError("cannot pick more rows than exist");
  const auto importance = feature_importance(rows);
  std::set<std::string> covered;
  std::vector<bool> taken(rows.size(), false);
  std::vector<std::size_t> out;
  while (out.size() < k) {
    std::size_t best = rows.size();
    double best_gain = -1.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (taken[i]) continue;
      double gain = 0.0;
      for (const auto& [f, w] : rows[i]) {
        if (w != 0.0 && !covered.count(f)) gain += importance.at(f);
      }
      if (gain > best_gain) {
        best_gain = gain;
        best = i;
      }
    }
    taken[best] = true;
    out.push_back(best);
    for (const auto& [f, w] : rows[best]) {
      if (w != 0.0) covered.insert(f);
    }
  }
  return out;
}

/// One row per instance: lower-cased token -> summed |attribution|.
inline std::vector<std::map<std::string, double>> explanation_rows(const Dataset& d) {
  std::vector<std::map<std::string, double>> rows;
  rows.reserve(d.size());
  for (const auto& inst : d.instances()) {
    std::map<std::string, double> row;
    for (std::size_t l = 0; l < inst.size(); ++l) row[ascii_lower(inst.tokens[l])] += std::abs(inst.attributions[l]);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Sample pick_submodular(const Dataset& d, std::size_t k) {
  if (k > d.size()) throw UsageError("cannot pick " + std::to_string(k) + " of " + std::to_string(d.size()) + " instances");
  auto idx = greedy_coverage_pick(explanation_rows(d), k);
  std::sort(idx.begin(), idx.end());
  return {d.subset(idx), idx, PickMethod::submodular, std::nullopt};
}

inline Sample pick(const Dataset& d, PickMethod method, std::size_t k, std::uint64_t seed) {
  return method == PickMethod::random ? pick_random(d, k, seed) : pick_submodular(d, k);
}

// ---------------------------------------------------------------------------
// BG / QF / WL

enum class BaselineKind { positive, stop_word };

inline const char* to_string(BaselineKind k) { return k == BaselineKind::positive ? "positive" : "stop-word"; }

struct BaselineConfig {
  std::string sentiment_feature = "sentiment";
  std::string pos_feature = "pos";
  double neutral = 0.5;
  double prior_lo = -0.05;
  double prior_hi = 0.05;
  double wl_margin = 0.03;
};

inline const std::vector<std::string>& stop_pos_tags() {
  static const std::vector<std::string> tags = {"AUX", "DET", "ADP", "CCONJ", "SCONJ", "PRON", "PART", "PUNCT"};
  return tags;
}

namespace detail {

inline std::optional<double> real_feature(const Instance& inst, const std::string& name, std::size_t l) {
  const auto& v = inst.feature(name, l);
  if (const auto* d = std::get_if<double>(&v)) return *d;
  if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  return std::nullopt;
}

inline bool is_stop_word(const Instance& inst, const std::string& pos_feature, std::size_t l) {
  const auto* s = std::get_if<std::string>(&inst.feature(pos_feature, l));
  if (!s) return false;
  const auto& tags = stop_pos_tags();
  return std::find(tags.begin(), tags.end(), *s) != tags.end();
}

struct SentimentStats {
  double alpha = 0.0;  // mean sentiment of positive words
  double beta = 0.0;   // mean attribution of positive words
};

inline SentimentStats positive_stats(const Dataset& sample, const BaselineConfig& cfg) {
  CompensatedSum s, a;
  std::size_t n = 0;
  for (const auto& inst : sample.instances()) {
    for (std::size_t l = 0; l < inst.size(); ++l) {
      auto v = real_feature(inst, cfg.sentiment_feature, l);
      if (!v || !(*v > cfg.neutral)) continue;
      s.add(*v);
      a.add(inst.attributions[l]);
      ++n;
    }
  }
  if (n == 0) throw DataError("sample has no positive-sentiment words");
  return {s.value() / static_cast<double>(n), a.value() / static_cast<double>(n)};
}

inline dsl::Pred stop_word_pred(const BaselineConfig& cfg) {
  std::vector<dsl::Literal> tags(stop_pos_tags().begin(), stop_pos_tags().end());
  return dsl::member(dsl::feature(cfg.pos_feature), std::move(tags));
}

inline dsl::RuleSpec constant_rule(std::string name, dsl::Pred applies, double lo, double hi) {
  dsl::RuleSpec r;
  r.name = std::move(name);
  r.applies = std::move(applies);
  r.range = dsl::closed_interval(dsl::num(lo), dsl::num(hi));
  return r;
}

}  // namespace detail

inline dsl::RuleSpec build_bg(const Dataset& sample, BaselineKind kind, const BaselineConfig& cfg = {}) {
  if (kind == BaselineKind::positive) {
    const auto st = detail::positive_stats(sample, cfg);
    return detail::constant_rule("bg_positive", dsl::cmp(dsl::CmpOp::gt, dsl::feature(cfg.sentiment_feature), dsl::num(st.alpha)),
                                 st.beta, sample.space().hi);
  }
  std::optional<double> lo, hi;
  for (const auto& inst : sample.instances()) {
    for (std::size_t l = 0; l < inst.size(); ++l) {
      if (!detail::is_stop_word(inst, cfg.pos_feature, l)) continue;
      const double a = inst.attributions[l];
      lo = lo ? std::min(*lo, a) : a;
      hi = hi ? std::max(*hi, a) : a;
    }
  }
  if (!lo) throw DataError("sample has no stop words");
  return detail::constant_rule("bg_stop_word", detail::stop_word_pred(cfg), (cfg.prior_lo + *lo) / 2.0,
                               (cfg.prior_hi + *hi) / 2.0);
}

/// Type-7 quantile of sorted values.
inline double quantile_sorted(const std::vector<double>& xs, double p) {
  if (xs.empty()) throw DataError("quantile of an empty set");
  const double h = static_cast<double>(xs.size() - 1) * p;
  const auto i = static_cast<std::size_t>(std::floor(h));
  if (i + 1 >= xs.size()) return xs.back();
  const double t = h - static_cast<double>(i);
  const double a = xs[i], b = xs[i + 1];
  // Interpolate from the nearer end, as numpy does.
  return t < 0.5 ? a + (b - a) * t : b - (b - a) * (1.0 - t);
}

inline dsl::RuleSpec build_qf(const Dataset& sample, BaselineKind kind, const BaselineConfig& cfg = {}) {
  std::vector<double> xs;
  dsl::Pred applies;
  std::string name;
  if (kind == BaselineKind::positive) {
    const double alpha = detail::positive_stats(sample, cfg).alpha;
    for (const auto& inst : sample.instances()) {
      for (std::size_t l = 0; l < inst.size(); ++l) {
        auto v = detail::real_feature(inst, cfg.sentiment_feature, l);
        if (v && *v > alpha) xs.push_back(inst.attributions[l]);
      }
    }
    applies = dsl::cmp(dsl::CmpOp::gt, dsl::feature(cfg.sentiment_feature), dsl::num(alpha));
    name = "qf_positive";
  } else {
    for (const auto& inst : sample.instances()) {
      for (std::size_t l = 0; l < inst.size(); ++l) {
        if (detail::is_stop_word(inst, cfg.pos_feature, l)) xs.push_back(inst.attributions[l]);
      }
    }
    applies = detail::stop_word_pred(cfg);
    name = "qf_stop_word";
  }
  if (xs.empty()) throw DataError("sample has no words covered by the " + std::string(to_string(kind)) + " rule");
  std::sort(xs.begin(), xs.end());
  return detail::constant_rule(name, std::move(applies), quantile_sorted(xs, 0.05), quantile_sorted(xs, 0.95));
}

/// Quantile fit on a plain list of attributions.
inline std::pair<double, double> qf_range(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  return {quantile_sorted(xs, 0.05), quantile_sorted(xs, 0.95)};
}

namespace detail {

/// Lower-cased tokens in first-seen order with all their attributions.
struct WordTable {
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> values;
};

inline WordTable word_table(const Dataset& d) {
  WordTable t;
  for (const auto& inst : d.instances()) {
    for (std::size_t l = 0; l < inst.size(); ++l) {
      const std::string w = ascii_lower(inst.tokens[l]);
      auto [it, fresh] = t.values.try_emplace(w);
      if (fresh) t.order.push_back(w);
      it->second.push_back(inst.attributions[l]);
    }
  }
  return t;
}

inline dsl::Pred word_is(const std::string& w) {
  return dsl::cmp(dsl::CmpOp::eq, dsl::call(dsl::Builtin::lower_token), dsl::str(w));
}

/// ((W1 > W2) > W3) > ...
inline std::optional<dsl::UnionExpr> precedence_chain(const std::vector<dsl::RuleSpec>& rules) {
  std::optional<dsl::UnionExpr> e;
  for (const auto& r : rules) {
    e = e ? dsl::compose(dsl::ComposeOp::precedence, std::move(*e), dsl::leaf(r.name)) : dsl::leaf(r.name);
  }
  return e;
}

}  // namespace detail

inline dsl::UnionSpec build_wl(const Dataset& sample, double margin = 0.03) {
  const auto table = detail::word_table(sample);
  dsl::UnionSpec u;
  u.name = "word_level";
  std::size_t k = 0;
  for (const auto& w : table.order) {
    const auto& s = table.values.at(w);
    const auto [mn, mx] = std::minmax_element(s.begin(), s.end());
    u.rules.push_back(detail::constant_rule("W" + std::to_string(++k), detail::word_is(w), *mn - margin, *mx + margin));
  }
  u.expr = detail::precedence_chain(u.rules);
  return u;
}

struct WordAverage {
  dsl::UnionSpec spec;
  double half_width = 0.0;
  double sharpness = 0.0;  // on the construction set
  int evaluations = 0;
};

/// Per-word union [mean(s_w) - h, mean(s_w) + h] with the range centers as given.
inline dsl::UnionSpec word_average_union(const Dataset& construction, double h) {
  const auto table = detail::word_table(construction);
  dsl::UnionSpec u;
  u.name = "word_average";
  std::size_t k = 0;
  for (const auto& w : table.order) {
    const auto& s = table.values.at(w);
    CompensatedSum sum;
    for (double v : s) sum.add(v);
    const double m = sum.value() / static_cast<double>(s.size());
    u.rules.push_back(detail::constant_rule("A" + std::to_string(++k), detail::word_is(w), m - h, m + h));
  }
  u.expr = detail::precedence_chain(u.rules);
  return u;
}

/// Tunes the global half-width h in (0, |E|] by bisection so the union's
/// sharpness on `construction` is within `tolerance` of the target.
inline WordAverage build_word_average(const Dataset& construction, double target_sharpness, const Measure& measure,
                                      Weighting weighting = Weighting::pu, double tolerance = 0.005) {
  if (construction.size() == 0) throw DataError("empty construction set");
  const auto table = detail::word_table(construction);
  std::map<std::string, double> mean;
  for (const auto& [w, s] : table.values) {
    CompensatedSum sum;
    for (double v : s) sum.add(v);
    mean[w] = sum.value() / static_cast<double>(s.size());
  }
  const auto weights = feu_weights(construction, weighting);
  const AttributionSpace E = construction.space();
  // Every construction FEU is covered by its own word's rule, so the union's
  // sharpness reduces to this direct sum; the returned spec is checked
  // against the engine in the tests.
  // P(b_w) is computed once per word; the FEU's own atom is then subtracted,
  // matching Measure::mass(b, e).
  std::vector<std::size_t> word_of;
  std::vector<std::string> words;
  std::map<std::string, std::size_t> word_index;
  for (const auto& inst : construction.instances()) {
    for (const auto& t : inst.tokens) {
      auto [it, fresh] = word_index.try_emplace(ascii_lower(t), words.size());
      if (fresh) words.push_back(it->first);
      word_of.push_back(it->second);
    }
  }
  auto sharpness_at = [&](double h) -> std::optional<double> {
    std::vector<RangeSet> ranges;
    std::vector<double> masses;
    for (const auto& w : words) {
      const double m = mean.at(w);
      ranges.push_back(RangeSet::closed(m - h, m + h).clip(E.lo, E.hi));
      masses.push_back(measure.mass(ranges.back()));
    }
    CompensatedSum num, den;
    std::size_t flat = 0;
    for (const auto& inst : construction.instances()) {
      for (std::size_t l = 0; l < inst.size(); ++l, ++flat) {
        const std::size_t w = word_of[flat];
        const double e = inst.attributions[l];
        const double p = ranges[w].contains(e) ? masses[w] - measure.atom_mass(e) : masses[w];
        num.add(weights[flat] * (1.0 - p));
        den.add(weights[flat]);
      }
    }
    return num.value() / den.value();
  };
  const double width = E.width();
  const SearchSpec s{width, width * 1e-9, width * 1e-7, target_sharpness, Direction::at_least};
  WordAverage out;
  // Sharpness falls as h grows: find the widest h still at or above target.
  const auto at_max = sharpness_at(width);
  double h = width;
  if (!(at_max && *at_max >= target_sharpness)) {
    const TuneOutcome t = tune_binary(s, sharpness_at);
    out.evaluations = t.evaluations + 1;
    if (!t.success) throw DataError("target sharpness unattainable for h in (0, |E|]: " + t.diagnostic);
    h = *t.value;
  } else {
    out.evaluations = 1;
  }
  const double got = *sharpness_at(h);
  if (std::abs(got - target_sharpness) > tolerance) {
    throw DataError("target sharpness unattainable within tolerance (closest " + std::to_string(got) + ")");
  }
  out.spec = word_average_union(construction, h);
  out.half_width = h;
  out.sharpness = got;
  return out;
}

// ---------------------------------------------------------------------------
// Comparison report: method x kind rows, metrics on the evaluation set.

struct Stat {
  std::optional<double> mean;
  std::optional<double> sd;  // sample standard deviation; needs two runs
  std::size_t n = 0;
};

inline Stat summarize(const std::vector<std::optional<double>>& xs) {
  std::vector<double> v;
  for (const auto& x : xs) {
    if (x) v.push_back(*x);
  }
  Stat s;
  s.n = v.size();
  if (v.empty()) return s;
  CompensatedSum sum;
  for (double x : v) sum.add(x);
  const double m = sum.value() / static_cast<double>(v.size());
  s.mean = m;
  if (v.size() >= 2) {
    CompensatedSum sq;
    for (double x : v) sq.add((x - m) * (x - m));
    s.sd = std::sqrt(sq.value() / static_cast<double>(v.size() - 1));
  }
  return s;
}

struct BaselineRun {
  std::optional<std::uint64_t> seed;
  std::optional<MetricReport> report;  // nullopt when the builder had nothing to fit
  std::string error;
  std::size_t rules = 0;
};

struct BaselineRow {
  std::string method;  // BG | QF | WL
  std::string kind;    // positive | stop-word | seen-words
  PickMethod pick = PickMethod::random;
  std::size_t k = 0;
  std::vector<BaselineRun> runs;
  Stat coverage, validity, sharpness;
};

struct BaselineReportConfig {
  std::vector<std::size_t> ks = {1, 10, 30};
  std::uint64_t seed = 0;
  std::size_t random_runs = 5;
  BaselineConfig rules;
};

inline std::vector<BaselineRow> baseline_report(const ConstructionSet& construction, const EvaluationSet& evaluation,
                                                const Measure& eval_measure, Weighting weighting,
                                                const BaselineReportConfig& cfg = {}) {
  const MetricContext ctx{evaluation.data(), eval_measure, weighting};
  std::vector<BaselineRow> rows;
  for (std::size_t k : cfg.ks) {
    if (k > construction.data().size()) continue;
    for (PickMethod pm : {PickMethod::random, PickMethod::submodular}) {
      const std::size_t runs = pm == PickMethod::random ? cfg.random_runs : 1;
      std::vector<Sample> samples;
      for (std::size_t r = 0; r < runs; ++r) samples.push_back(pick(construction.data(), pm, k, cfg.seed + r));
      auto add_row = [&](const std::string& method, const std::string& kind, auto&& build) {
        BaselineRow row{method, kind, pm, k, {}, {}, {}, {}};
        std::vector<std::optional<double>> cov, val, shp;
        for (const auto& s : samples) {
          BaselineRun run;
          run.seed = s.seed;
          try {
            dsl::UnionSpec u = build(s.data);
            run.rules = u.rules.size();
            run.report = union_metrics(u, ctx, bindings_of(u));
            cov.push_back(run.report->coverage);
            val.push_back(run.report->validity);
            shp.push_back(run.report->sharpness);
          } catch (const DataError& e) {
            run.error = e.what();
          }
          row.runs.push_back(std::move(run));
        }
        row.coverage = summarize(cov);
        row.validity = summarize(val);
        row.sharpness = summarize(shp);
        rows.push_back(std::move(row));
      };
      for (BaselineKind kind : {BaselineKind::positive, BaselineKind::stop_word}) {
        add_row("BG", to_string(kind), [&](const Dataset& d) { return single_rule_union(build_bg(d, kind, cfg.rules)); });
        add_row("QF", to_string(kind), [&](const Dataset& d) { return single_rule_union(build_qf(d, kind, cfg.rules)); });
      }
      add_row("WL", "seen-words", [&](const Dataset& d) { return build_wl(d, cfg.rules.wl_margin); });
    }
  }
  return rows;
}

}  // namespace exsum
