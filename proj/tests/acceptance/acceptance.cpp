// One PASS/FAIL line per acceptance criterion. Exit status is the number of
// failures.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "../support/composition.hpp"
#include "../support/helpers.hpp"
#include "../support/spec_gen.hpp"
#include "exsum/exsum.hpp"
#include "exsum/service/http.hpp"
#include "exsum/service/session.hpp"

using namespace exsum;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Collects violations; keeps the first few messages for the report line.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    ++checks_;
    if (ok) return;
    ++failures_;
    if (notes_.size() < 3) notes_.push_back(what);
  }
  bool ok() const { return failures_ == 0; }
  std::string summary() const {
    std::ostringstream os;
    os << checks_ << " checks, " << failures_ << " violations";
    for (const auto& n : notes_) os << "; " << n;
    return os.str();
  }
  void note(const std::string& s) { extra_ += (extra_.empty() ? "" : ", ") + s; }
  const std::string& extra() const { return extra_; }

 private:
  std::size_t checks_ = 0, failures_ = 0;
  std::vector<std::string> notes_;
  std::string extra_;
};

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

bool same_bits(const std::optional<double>& a, const std::optional<double>& b) {
  return a.has_value() == b.has_value() && (!a || same_bits(*a, *b));
}

// ---------------------------------------------------------------------------

void fixture_exactness(Check& c) {
  const auto t0 = Clock::now();
  const Dataset d = fixture_f1();
  const Measure m = build_empirical(d);
  const auto u = fixture_f1_union();
  const auto r = union_metrics(u, {d, m}, bindings_of(u));

  // enumeration over the six FEUs: weight 1/(N L), member iff ADJ, range [0.6, 1]
  struct Feu {
    double a, w;
    bool adj;
  };
  std::vector<Feu> feus;
  for (const auto& inst : d.instances()) {
    const auto& pos = inst.features.at("pos");
    for (std::size_t l = 0; l < inst.size(); ++l) {
      feus.push_back({inst.attributions[l], 1.0 / (2.0 * static_cast<double>(inst.size())),
                      std::get<std::string>(pos[l]) == "ADJ"});
    }
  }
  double cov = 0, val = 0, shp = 0;
  for (const auto& f : feus) {
    if (!f.adj) continue;
    cov += f.w;
    if (f.a >= 0.6 && f.a <= 1) val += f.w;
    double inside = 0;
    for (const auto& g : feus)
      if (g.a != f.a && g.a >= 0.6 && g.a <= 1) inside += g.w;
    shp += f.w * (1 - inside);
  }
  c.expect(std::abs(r.coverage - cov) <= 1e-12 && std::abs(cov - 0.375) <= 1e-12, "coverage " + num(r.coverage));
  c.expect(r.validity && std::abs(*r.validity - val / cov) <= 1e-12 && std::abs(*r.validity - 1.0 / 3.0) <= 1e-12,
           "validity");
  c.expect(r.sharpness && std::abs(*r.sharpness - shp / cov) <= 1e-12 && std::abs(*r.sharpness - 11.0 / 12.0) <= 1e-12,
           "sharpness");
  const double secs = seconds_since(t0);
  c.expect(secs < 1.0, "runtime " + num(secs) + "s");
  c.note("cov " + num(r.coverage) + " val " + num(*r.validity) + " shp " + num(*r.sharpness) + " in " + num(secs) + "s");
}

// ---------------------------------------------------------------------------

void composition_oracle(Check& c) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(17);
  const Dataset d = testutil::group_dataset();
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<testutil::OracleRule> rules;
    dsl::UnionSpec u = dsl::parse_union(testutil::random_union_text(rng, rules));
    std::vector<std::string> names;
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < rules.size(); ++i) {
      names.push_back("R" + std::to_string(i + 1));
      index[names.back()] = i;
    }
    std::shuffle(names.begin(), names.end(), rng);
    u.expr = testutil::random_tree(names, rng);

    // the same rules as a first-match chain and as flat intersections in both orders
    dsl::UnionExpr chain = dsl::leaf(names[0]), fwd = dsl::leaf(names[0]), rev = dsl::leaf(names.back());
    for (std::size_t i = 1; i < names.size(); ++i) {
      chain = dsl::compose(dsl::ComposeOp::precedence, std::move(chain), dsl::leaf(names[i]));
      fwd = dsl::compose(dsl::ComposeOp::intersection, std::move(fwd), dsl::leaf(names[i]));
      rev = dsl::compose(dsl::ComposeOp::intersection, std::move(rev), dsl::leaf(names[names.size() - 1 - i]));
    }
    dsl::UnionSpec p = u, f = u, r = u;
    p.expr = chain;
    f.expr = fwd;
    r.expr = rev;

    for (std::size_t t = 0; t < testutil::kGroups.size(); ++t) {
      const std::string tree = dsl::print_union_expr(u.expr);
      const auto got = eval_union(u, d, {0, t}, {});
      const auto want = testutil::Oracle{rules, index, testutil::kGroups[t]}(*u.expr);
      c.expect(got.applicable == want.has_value(), "applicability of " + tree);
      if (want) {
        c.expect(got.range == want->first, "range of " + tree);
        c.expect(got.effective == std::vector<std::size_t>(want->second.begin(), want->second.end()),
                 "effective set of " + tree);
      }
      c.expect(eval_union(f, d, {0, t}, {}) == eval_union(r, d, {0, t}, {}), "intersection order");
      const auto first = std::find_if(names.begin(), names.end(), [&](const std::string& n) {
        return rules[index.at(n)].groups.count(testutil::kGroups[t]) > 0;
      });
      const auto chained = eval_union(p, d, {0, t}, {});
      if (first == names.end()) {
        c.expect(!chained.applicable, "chain applies with no applicable rule");
      } else {
        c.expect(effective_names(p, chained) == std::vector<std::string>{*first}, "chain is not first match");
      }
    }
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 10.0, "runtime " + num(secs) + "s");
  c.note("1000 cases in " + num(secs) + "s");
}

// ---------------------------------------------------------------------------
// Random unions over the corpus POS tags.

const std::vector<std::string> kTags = {"AUX",   "DET",  "ADP",  "CCONJ", "SCONJ", "PRON", "PART",
                                        "PUNCT", "NOUN", "VERB", "ADJ",   "ADV",   "PROPN"};

struct TagRule {
  std::vector<std::string> tags;
  double lo, hi;
};

std::vector<TagRule> random_tag_rules(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<TagRule> out(1 + rng() % 5);
  for (auto& r : out) {
    for (const auto& t : kTags)
      if (rng() % 3 == 0) r.tags.push_back(t);
    r.lo = u(rng);
    r.hi = u(rng);
    if (r.lo > r.hi) std::swap(r.lo, r.hi);
  }
  return out;
}

std::string tag_union_text(const std::vector<TagRule>& rules, double widen_lo = 0, double widen_hi = 0) {
  std::string text = "union T {\n  expr: R1\n";
  for (std::size_t i = 0; i < rules.size(); ++i) {
    std::string applies = "false";
    if (!rules[i].tags.empty()) {
      applies = "feature(\"pos\") in {";
      for (std::size_t k = 0; k < rules[i].tags.size(); ++k) applies += (k ? ", \"" : "\"") + rules[i].tags[k] + "\"";
      applies += "}";
    }
    text += "  rule R" + std::to_string(i + 1) + " {\n    applies: " + applies + "\n    range: [" +
            dsl::format_number(rules[i].lo - widen_lo) + ", " + dsl::format_number(rules[i].hi + widen_hi) +
            "]\n  }\n";
  }
  return text + "}\n";
}

dsl::UnionExpr random_tree_over(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n; ++i) names.push_back("R" + std::to_string(i + 1));
  std::shuffle(names.begin(), names.end(), rng);
  return testutil::random_tree(names, rng);
}

void catch_all(Check& c) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const Dataset d = synthetic_corpus({.instances = 5 + rng() % 30, .seed = 1000 + static_cast<std::uint64_t>(trial)});
    const auto rules = random_tag_rules(rng);
    std::string text = tag_union_text(rules);
    text.insert(text.rfind('}'), "  rule ALL {\n    applies: true\n    range: [-1, 1]\n  }\n");
    dsl::UnionSpec u = dsl::parse_union(text);
    u.expr = dsl::compose(dsl::ComposeOp::precedence, random_tree_over(rules.size(), rng), dsl::leaf("ALL"));
    for (Weighting w : {Weighting::pu, Weighting::simple}) {
      const Measure m = build_empirical(d, w);
      const double cov = union_metrics(u, {d, m, w}, {}).coverage;
      c.expect(cov == 1.0, "coverage " + num(cov) + " for " + dsl::print_union_expr(u.expr));
    }
  }
  c.note("200 random unions, both weightings");
}

// ---------------------------------------------------------------------------

std::vector<IbeRecord> random_ibe_records(std::mt19937_64& rng, std::size_t n) {
  auto pred = [&] {
    for (;;) {
      const double v = static_cast<double>(rng() % 201) / 200.0;
      if (v != 0.5) return v;
    }
  };
  std::vector<IbeRecord> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({pred(), pred(), ibe_op_types()[rng() % ibe_op_types().size()], 1 + static_cast<int>(rng() % 15)});
  return out;
}

void monotonicity(Check& c) {
  constexpr double kSlack = 1e-12;
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> grow(0, 0.5), delta(0, 0.3);
  for (int trial = 0; trial < 500; ++trial) {
    const Dataset d = synthetic_corpus({.instances = 5 + rng() % 20, .seed = 5000 + static_cast<std::uint64_t>(trial)});
    const auto rules = random_tag_rules(rng);
    dsl::UnionSpec narrow = dsl::parse_union(tag_union_text(rules));
    dsl::UnionSpec wide = dsl::parse_union(tag_union_text(rules, grow(rng), grow(rng)));
    narrow.expr = wide.expr = random_tree_over(rules.size(), rng);
    const Measure m = build_measure(d, trial % 2 ? MeasureBackend::kde : MeasureBackend::empirical);
    const auto a = union_metrics(narrow, {d, m}, {});
    const auto b = union_metrics(wide, {d, m}, {});
    c.expect(a.coverage == b.coverage, "coverage moved");
    if (a.validity && b.validity) {
      c.expect(*a.validity <= *b.validity + kSlack, "validity fell on widening, trial " + std::to_string(trial));
      c.expect(*a.sharpness + kSlack >= *b.sharpness, "sharpness rose on widening, trial " + std::to_string(trial));
    } else {
      c.expect(a.validity.has_value() == b.validity.has_value(), "definedness changed");
    }

    const auto recs = random_ibe_records(rng, 1 + rng() % 80);
    const double d1 = delta(rng), d2 = d1 + delta(rng);
    const auto n1 = ibe_metrics(recs, IbeBehavior::margin(d1));
    const auto n2 = ibe_metrics(recs, IbeBehavior::margin(d2));
    c.expect(*n1.validity <= *n2.validity, "margin validity fell");
    c.expect(*n1.sharpness + kSlack >= *n2.sharpness, "margin sharpness rose");
  }
  c.note("500 fixtures, float slack " + num(kSlack));
}

// ---------------------------------------------------------------------------

RangeSet random_range(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> q(-10, 10);
  RangeSet out;
  for (int i = 1 + static_cast<int>(rng() % 3); i > 0; --i) {
    double a = q(rng) / 10.0, b = q(rng) / 10.0;
    if (a > b) std::swap(a, b);
    out = unite(out, RangeSet(Interval{{a, rng() % 2 == 0}, {b, rng() % 2 == 0}}));
  }
  return out;
}

void measure(Check& c) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> pt(-10, 10);
  // weights are multiples of 1/64 summing to one, so counting is exact in doubles
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> values, weights;
    int left = 64;
    while (left > 0) {
      const int k = std::min(left, 1 + static_cast<int>(rng() % 8));
      left -= k;
      values.push_back(pt(rng) / 10.0);
      weights.push_back(k / 64.0);
    }
    const Measure m = Measure::empirical(values, weights, {-1, 1});
    const RangeSet rs = random_range(rng);
    const double e = values[rng() % values.size()];
    double count = 0, excl = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!rs.contains(values[i])) continue;
      count += weights[i];
      if (values[i] != e) excl += weights[i];
    }
    c.expect(m.mass(rs) == count, "empirical mass " + num(m.mass(rs)) + " vs count " + num(count));
    c.expect(m.mass(rs, e) == excl, "empirical excluded mass");
  }
  // the fixture's P_U weights are dyadic too
  const Measure f1 = build_empirical(fixture_f1());
  c.expect(f1.mass(RangeSet::closed(0.6, 1)) == 0.125, "fixture mass of [0.6, 1]");
  c.expect(f1.mass(RangeSet::closed(-1, 1)) == 1.0, "fixture total");

  const double h = 0.1;
  const Measure one = Measure::kde({0.0}, {1.0}, {-1, 1}, h, 2.0);
  const double sigma = one.mass(RangeSet::closed(-h, h));
  c.expect(std::abs(sigma - 0.6827) <= 1e-3, "one-sigma mass " + num(sigma));
  c.expect(std::abs(one.mass(RangeSet::closed(-1, 1)) - 1) <= 1e-6, "single kernel total");

  const Dataset d = synthetic_corpus({.instances = 300, .seed = 2});
  const Measure k = build_kde(d);
  const Measure e = build_empirical(d);
  const double total = k.mass(RangeSet::closed(-1, 1));
  c.expect(std::abs(total - 1) <= 1e-6, "corpus kde total " + num(total));
  c.expect(!k.atom_values().empty(), "corpus has no atoms");
  for (int trial = 0; trial < 500; ++trial) {
    const RangeSet rs = random_range(rng);
    for (const Measure* mm : {&e, &k}) {
      const auto& atoms = mm->atom_values();
      const double v = atoms[rng() % atoms.size()];
      const double want = rs.contains(v) ? mm->mass(rs) - mm->atom_mass(v) : mm->mass(rs);
      c.expect(mm->mass(rs, v) == want, "exclusion identity at " + num(v));
    }
  }
  c.note("one-sigma " + num(sigma) + ", corpus total " + num(total));
}

// ---------------------------------------------------------------------------

TuneRequest five_point_request(double precision, SearchMethod method, double target = 0.8) {
  return {"R1", "lo", 1, -1, precision, TargetScope::full_union, MetricKind::validity, target, Direction::at_least,
          method};
}

void autotune(Check& c) {
  const Dataset d = fixture_five_points();
  const ConstructionSet cs{d};
  const Measure m = build_empirical(d);
  const auto spec = dsl::parse_union(fixture_lo_union_text());
  const Bindings b = bindings_of(spec);
  const TuneContext ctx{spec, cs, m};

  const auto bin = tune(five_point_request(0.01, SearchMethod::binary), ctx, b);
  c.expect(bin.success && std::abs(*bin.value - 0.3) <= 0.01, "binary value");
  c.expect(bin.evaluations <= 11, "binary used " + std::to_string(bin.evaluations) + " evaluations");
  const auto lin = tune(five_point_request(0.01, SearchMethod::linear), ctx, b);
  c.expect(lin.success && bin.success && std::abs(*lin.value - *bin.value) <= 0.01, "linear and binary disagree");
  c.note("binary lo " + num(bin.value.value_or(NAN)) + " in " + std::to_string(bin.evaluations) + " evals, linear lo " +
         num(lin.value.value_or(NAN)));

  // threshold objectives in both directions at several precisions
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 500; ++trial) {
    const double threshold = u(rng);
    const double precision = std::pow(10.0, -1.0 - static_cast<double>(rng() % 3));
    const bool down = rng() % 2;
    const SearchSpec s{down ? 1.0 : -1.0, down ? -1.0 : 1.0, precision, 0.5, Direction::at_least};
    auto f = [&](double v) -> std::optional<double> { return (down ? v <= threshold : v >= threshold) ? 1.0 : 0.0; };
    const auto l = tune_linear(s, f);
    const auto bi = tune_binary(s, f);
    c.expect(l.success && bi.success, "search failed on a reachable threshold");
    if (l.success && bi.success) c.expect(std::abs(*l.value - *bi.value) <= precision, "agreement");
  }

  // failures leave bindings untouched, in the library and in a session
  const auto fail = tune(five_point_request(0.01, SearchMethod::binary, 1.1), ctx, b);
  c.expect(!fail.success, "unreachable target succeeded");
  c.expect(b == bindings_of(spec), "library bindings changed");

  testutil::TempDir dir("accept-tune");
  service::Session session(fixture_five_points(), dir.write("u.exsum", fixture_lo_union_text()));
  session.set_param("R1", "lo", 0.123456789);
  const Bindings before = session.bindings();
  for (SearchMethod method : {SearchMethod::binary, SearchMethod::linear}) {
    const auto res = session.run_autotune(five_point_request(0.01, method, 1.1));
    c.expect(!res.outcome.success, "session search succeeded");
    const Bindings after = session.bindings();
    c.expect(after == before, "session bindings changed");
    for (const auto& [rule, params] : before)
      for (const auto& [name, v] : params) c.expect(same_bits(after.at(rule).at(name), v), "bits changed");
  }
}

// ---------------------------------------------------------------------------

void baselines(Check& c) {
  std::vector<double> eleven;
  for (int i = 0; i <= 10; ++i) eleven.push_back(i / 10.0);
  const auto [lo, hi] = qf_range(eleven);
  c.expect(lo == 0.05 && hi == 0.95, "qf range [" + num(lo) + ", " + num(hi) + "]");

  const Dataset pool = synthetic_corpus({.instances = 300, .seed = 5});
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (std::size_t k : {std::size_t{1}, std::size_t{10}, std::size_t{30}}) {
      const auto s = pick_random(pool, k, seed);
      const auto u = build_wl(s.data);
      const Measure m = build_empirical(s.data);
      const auto r = union_metrics(u, {s.data, m}, {});
      c.expect(r.validity && *r.validity == 1.0, "wl validity " + num(r.validity.value_or(NAN)));
    }
  }

  const auto t0 = Clock::now();
  const Dataset big = synthetic_corpus({.instances = 1000, .seed = 1});
  const Measure km = build_kde(big);
  const double target = 0.294;
  const auto wa = build_word_average(big, target, km);
  const auto engine = union_metrics(wa.spec, {big, km}, {});
  const double secs = seconds_since(t0);
  c.expect(engine.sharpness && std::abs(*engine.sharpness - target) <= 0.005,
           "word-average sharpness " + num(engine.sharpness.value_or(NAN)));
  c.expect(secs < 60.0, "word-average runtime " + num(secs) + "s");
  c.note("word-average h " + num(wa.half_width) + " sharpness " + num(engine.sharpness.value_or(NAN)) + " in " +
         num(secs) + "s");

  const auto sp = split(synthetic_corpus({.instances = 400, .seed = 7}), 200, 3);
  const Measure em = build_empirical(sp.evaluation.data());
  BaselineReportConfig cfg;
  cfg.ks = {10, 30};
  cfg.seed = 11;
  const auto rows = baseline_report(sp.construction, sp.evaluation, em, Weighting::pu, cfg);
  std::size_t random_rows = 0;
  for (const auto& row : rows) {
    if (row.pick != PickMethod::random) continue;
    ++random_rows;
    c.expect(row.runs.size() == 5, "random rows need five runs");
    std::vector<std::optional<double>> cov, val, shp;
    for (const auto& run : row.runs) {
      cov.push_back(run.report ? std::optional(run.report->coverage) : std::nullopt);
      val.push_back(run.report ? run.report->validity : std::nullopt);
      shp.push_back(run.report ? run.report->sharpness : std::nullopt);
    }
    // mean and sample sd recomputed directly
    for (const auto& [stat, xs] : {std::pair{row.coverage, cov}, {row.validity, val}, {row.sharpness, shp}}) {
      std::vector<double> v;
      for (const auto& x : xs)
        if (x) v.push_back(*x);
      c.expect(stat.n == v.size(), "run count");
      if (v.size() < 2) continue;
      double mean = 0, ss = 0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      for (double x : v) ss += (x - mean) * (x - mean);
      c.expect(stat.mean && std::abs(*stat.mean - mean) <= 1e-12, "mean");
      c.expect(stat.sd && std::abs(*stat.sd - std::sqrt(ss / static_cast<double>(v.size() - 1))) <= 1e-12, "sd");
    }
  }
  c.expect(random_rows == 10, "expected ten random-pick rows");
  std::cout << render_baselines(rows, ReportFormat::table);
}

// ---------------------------------------------------------------------------

void parser(Check& c) {
  testutil::SpecGen gen(20240611);
  for (int i = 0; i < 200; ++i) {
    const auto spec = gen.union_spec();
    const std::string text = dsl::print_union(spec);
    try {
      const auto back = dsl::parse_union(text);
      c.expect(back == spec, "parse(print(spec)) != spec");
      c.expect(dsl::print_union(back) == text, "print not stable");
    } catch (const std::exception& e) {
      c.expect(false, std::string("printed spec did not parse: ") + e.what());
    }
  }

  const std::string expr = "((((R1 > R4) > R3) > R5) > R6) > R7";
  const std::string cf = "(((R1 > R4) > R3) > R5) > R6";
  std::string text = "union sst {\n  expr: " + expr + "\n";
  for (int i = 1; i <= 7; ++i) text += "  rule R" + std::to_string(i) + " {\n    applies: true\n    range: [-1, 1]\n  }\n";
  text += "}\n";
  const auto u = dsl::parse_union(text);
  c.expect(union_line(u) == "Rule Union: " + expr, "union line " + union_line(u));
  c.expect(cf_line(u, "R7") == "CF Without Rule 7: " + cf, "cf line " + cf_line(u, "R7"));
  c.expect(dsl::print_union_expr(dsl::parse_union_expr(expr)) == expr, "expression round trip");
  c.expect(dsl::print_union_expr(dsl::parse_union_expr(cf)) == cf, "cf round trip");
  c.expect(dsl::print_union(dsl::parse_union(dsl::print_union(u))) == dsl::print_union(u), "file round trip");
  c.note("200 generated specs");
}

// ---------------------------------------------------------------------------

const char* kTradeoffUnion = R"(union tradeoff {
  expr: (R1 > R2) > R3
  rule R1 {
    applies: feature("pos") == "ADJ" and feature("sentiment") > 0.7
    range: [0.1, 1]
  }
  rule R2 {
    applies: feature("pos") in {"AUX", "DET", "ADP", "CCONJ", "SCONJ", "PRON", "PART", "PUNCT"}
    range: [-0.1, 0.1]
  }
  rule R3 {
    applies: true
    range: [-param(h), param(h)]
    params: h = 0.5 in [0, 1]
  }
}
)";

void tradeoff(Check& c) {
  const Dataset d = synthetic_corpus({.instances = 500, .seed = 3});
  const ConstructionSet cs{d};
  const Measure m = build_kde(d);
  const auto spec = dsl::parse_union(kTradeoffUnion);
  const TuneContext ctx{spec, cs, m};
  std::optional<double> prev;
  std::string curve;
  for (int pctv = 50; pctv <= 95; pctv += 5) {
    const double target = pctv / 100.0;
    const TuneRequest req{"R3", "h", 0, 1, 1e-4, TargetScope::full_union, MetricKind::validity, target,
                          Direction::at_least, SearchMethod::binary};
    const auto out = tune(req, ctx, bindings_of(spec));
    c.expect(out.success, "no width reaches validity " + num(target));
    if (!out.success) continue;
    Bindings b = bindings_of(spec);
    b["R3"]["h"] = *out.value;
    const auto r = union_metrics(spec, {d, m}, b);
    c.expect(*r.validity >= target, "tuned validity below target");
    if (prev) c.expect(*r.sharpness <= *prev, "sharpness rose at validity " + num(target));
    prev = r.sharpness;
    curve += (curve.empty() ? "" : " ") + std::to_string(pctv) + ":" + pct(r.sharpness);
  }
  c.note("val%:shp% " + curve);
}

// ---------------------------------------------------------------------------

void ibe(Check& c) {
  std::mt19937_64 rng(61);
  for (int trial = 0; trial < 500; ++trial) {
    const auto recs = random_ibe_records(rng, 1 + rng() % 200);
    const auto o = ibe_metrics(recs, IbeBehavior::other_side());
    const auto s = ibe_metrics(recs, IbeBehavior::same_side());
    c.expect(*o.validity + *s.validity == 1.0, "other + same = " + num(*o.validity + *s.validity));
    for (const auto& op : ibe_op_types()) {
      const auto filt = [&op](const IbeRecord& r) { return r.op_type == op; };
      const auto fo = ibe_metrics_or_empty(recs, IbeBehavior::other_side(), filt);
      if (!fo.count) continue;
      const auto fs = ibe_metrics_or_empty(recs, IbeBehavior::same_side(), filt);
      c.expect(*fo.validity + *fs.validity == 1.0, "per-type partition");
    }
  }

  const auto recs = random_ibe_records(rng, 400);
  const auto rows = ibe_report(recs);
  std::size_t overall = 0, by_length = 0;
  for (const auto& r : rows) (r.subset == "all" ? overall : by_length) += 1;
  c.expect(overall == ibe_op_types().size() && by_length == overall, "report rows per type");
  const std::string table = render_ibe(rows, ReportFormat::table);
  c.expect(table.find("<= 6 words") != std::string::npos, "length-conditioned rows missing");
  std::cout << table;
}

// ---------------------------------------------------------------------------

const char* kSevenRules = R"(union sst {
  expr: ((((R1 > R4) > R3) > R5) > R6) > R7
  rule R1 {
    applies: feature("pos") == "ADJ"
    range: [param(lo), 1]
    params: lo = 0.6 in [-1, 1]
  }
  rule R2 {
    applies: false
    range: [-1, 1]
  }
  rule R3 {
    applies: feature("pos") == "DET"
    range: [param(lo), param(hi)]
    params: lo = -0.1 in [-1, 1], hi = 0.2 in [-1, 1]
  }
  rule R4 {
    applies: feature("pos") == "NOUN"
    range: [-1, param(hi)]
    params: hi = 0 in [-1, 1]
  }
  rule R5 {
    applies: feature("pos") == "VERB"
    range: [-1, param(hi)]
    params: hi = 0 in [-1, 1]
  }
  rule R6 {
    applies: feature("pos") == "INTJ"
    range: [param(lo), 1]
    params: lo = 0 in [-1, 1]
  }
  rule R7 {
    applies: true
    range: [param(lo), 1]
    params: lo = -1 in [-1, 1]
  }
}
)";

const std::vector<std::pair<std::string, std::string>> kSevenParams = {
    {"R1", "lo"}, {"R3", "lo"}, {"R3", "hi"}, {"R4", "hi"}, {"R5", "hi"}, {"R6", "lo"}, {"R7", "lo"}};

MetricReport direct(const service::Session& s) {
  return union_metrics(s.current_spec(), {s.data(), s.measure(), s.options().weighting}, s.bindings());
}

void service_checks(Check& c) {
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> value(-1, 1);

  // reference fold over random interleavings
  for (int run = 0; run < 10; ++run) {
    testutil::TempDir dir("accept-fold");
    const auto path = dir.write("u.exsum", kSevenRules);
    service::Session s(synthetic_corpus({.instances = 40, .seed = 90 + static_cast<std::uint64_t>(run)}), path);
    Bindings live = s.bindings(), saved = live;
    for (int step = 0; step < 60; ++step) {
      switch (rng() % 5) {
        case 0:
          s.save();
          saved = live;
          break;
        case 1:
          s.reset();
          live = saved;
          break;
        default: {
          const auto& [r, p] = kSevenParams[rng() % kSevenParams.size()];
          const double v = value(rng);
          s.set_param(r, p, v);
          live[r][p] = v;
        }
      }
      c.expect(s.bindings() == live, "live bindings differ from fold");
      c.expect(s.saved_bindings() == saved, "saved bindings differ from fold");
      c.expect(*s.reports().full == direct(s), "session report differs from library");
    }
    c.expect(service::read_union_file(path).rules.size() == 7, "saved file lost rules");
  }

  // cache reuse and the panel strings
  {
    testutil::TempDir dir("accept-cache");
    service::Session s(fixture_f1(), dir.write("u.exsum", kSevenRules));
    s.select("R7");
    const json st = s.state();
    c.expect(st["expression"] == "Rule Union: ((((R1 > R4) > R3) > R5) > R6) > R7", "state expression");
    c.expect(st["cf_expression"] == "CF Without Rule 7: (((R1 > R4) > R3) > R5) > R6", "state cf expression");
    const auto r4 = s.rule_vectors("R4");
    const auto before = s.reports();
    s.set_param("R7", "lo", -0.5);
    c.expect(s.rule_vectors("R4") == r4, "untouched rule recomputed");
    c.expect(s.reports().cf.get() == before.cf.get(), "cf report recomputed");
    s.set_param("R7", "lo", -1);
    c.expect(s.reports().full.get() == before.full.get(), "restored bindings missed the cache");
    {
      auto guard = s.begin_mutation();
      bool busy = false;
      try {
        s.set_param("R1", "lo", 0.1);
      } catch (const BusyError&) {
        busy = true;
      }
      c.expect(busy, "second writer not rejected");
    }
  }

  // HTTP values equal the library's, bit for bit
  {
    testutil::TempDir dir("accept-http");
    service::Session s(synthetic_corpus({.instances = 60, .seed = 4}), dir.write("u.exsum", kSevenRules));
    httplib::Server server;
    service::install_routes(server, s);
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    httplib::Client client("127.0.0.1", port);
    for (int step = 0; step < 40; ++step) {
      const auto& [r, p] = kSevenParams[rng() % kSevenParams.size()];
      const json body = {{"rule", r}, {"param", p}, {"value", value(rng)}};
      auto res = client.Post("/param", body.dump(), "application/json");
      c.expect(res && res->status == 200, "POST /param failed");
      if (!res || res->status != 200) continue;
      const json out = json::parse(res->body);
      const auto want = direct(s);
      const auto& full = out["metrics"]["full"];
      c.expect(same_bits(full["coverage"].get<double>(), want.coverage), "coverage bits");
      c.expect(same_bits(full["validity"].is_null() ? std::nullopt : std::optional(full["validity"].get<double>()),
                         want.validity),
               "validity bits");
      c.expect(same_bits(full["sharpness"].is_null() ? std::nullopt : std::optional(full["sharpness"].get<double>()),
                         want.sharpness),
               "sharpness bits");
    }
    auto st = client.Get("/state");
    c.expect(st && json::parse(st->body) == s.state(), "GET /state differs from session state");
    server.stop();
    th.join();
  }
  c.note("fold, cache, busy and HTTP checks");
}

struct Criterion {
  const char* name;
  std::function<void(Check&)> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"fixture exactness", fixture_exactness},
      {"composition oracle", composition_oracle},
      {"catch-all coverage", catch_all},
      {"monotonicity", monotonicity},
      {"measure correctness", measure},
      {"autotune", autotune},
      {"baselines", baselines},
      {"parser round trip", parser},
      {"validity/sharpness trade-off", tradeoff},
      {"instance-based explanations", ibe},
      {"service", service_checks},
  };
  int failed = 0;
  std::vector<std::string> lines;
  for (const auto& cr : criteria) {
    Check c;
    const auto t0 = Clock::now();
    try {
      cr.run(c);
    } catch (const std::exception& e) {
      c.expect(false, std::string("exception: ") + e.what());
    }
    std::ostringstream line;
    line << (c.ok() ? "PASS" : "FAIL") << "  " << cr.name << " (" << num(seconds_since(t0)) << "s): " << c.summary();
    if (!c.extra().empty()) line << " [" << c.extra() << "]";
    lines.push_back(line.str());
    std::cout << lines.back() << std::endl;
    failed += c.ok() ? 0 : 1;
  }
  std::cout << "\n";
  for (const auto& l : lines) std::cout << l << "\n";
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : "all criteria passed") << std::endl;
  return failed;
}
