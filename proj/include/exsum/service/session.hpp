#pragma once

// One workbench session: a dataset, a rule-union file and live parameter
// bindings. Mutations are single-writer; a second writer is rejected with
// BusyError instead of queueing. Reads work on a snapshot taken under a
// short lock, so they never see a half-applied mutation.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "exsum/autotune.hpp"
#include "exsum/dataset.hpp"
#include "exsum/dsl/parser.hpp"
#include "exsum/dsl/printer.hpp"
#include "exsum/dsl/validate.hpp"
#include "exsum/engine.hpp"
#include "exsum/error.hpp"
#include "exsum/measure.hpp"
#include "exsum/metrics.hpp"
#include "exsum/report.hpp"

namespace exsum::service {

struct SessionOptions {
  std::optional<std::size_t> split_count;  // absent: work on the whole dataset
  std::uint64_t split_seed = 0;
  MeasureBackend measure = MeasureBackend::empirical;
  Weighting weighting = Weighting::pu;
};

inline dsl::UnionSpec read_union_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return dsl::parse_union(text.str());
}

/// Writes next to the target, then renames over it.
inline void write_file_atomically(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  std::error_code ec;
  const auto st = fs::status(path, ec);
  if (!ec && fs::exists(st) && (st.permissions() & fs::perms::owner_write) == fs::perms::none) {
    throw IoError(path.string() + " is read-only");
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) {
      fs::remove(tmp, ec);
      throw IoError("write to " + tmp.string() + " failed");
    }
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot replace " + path.string() + ": " + ec.message());
  }
}

enum class ExampleMode { sentence, feu };
enum class ExampleFilter { all, invalid, uncovered };
enum class ExampleScope { full_union, selected_rule };

struct ExampleQuery {
  ExampleMode mode = ExampleMode::sentence;
  ExampleFilter filter = ExampleFilter::all;
  ExampleScope scope = ExampleScope::full_union;
  std::size_t count = 10;
  std::uint64_t seed = 0;
};

inline ExampleQuery parse_example_query(const std::map<std::string, std::string>& q) {
  ExampleQuery out;
  auto get = [&](const char* key) -> std::optional<std::string> {
    auto it = q.find(key);
    if (it == q.end() || it->second.empty()) return std::nullopt;
    return it->second;
  };
  if (auto m = get("mode")) {
    if (*m == "sentence") {
      out.mode = ExampleMode::sentence;
    } else if (*m == "feu") {
      out.mode = ExampleMode::feu;
    } else {
      throw UsageError("unknown mode '" + *m + "'");
    }
  }
  if (auto f = get("filter")) {
    if (*f == "all") {
      out.filter = ExampleFilter::all;
    } else if (*f == "invalid") {
      out.filter = ExampleFilter::invalid;
    } else if (*f == "uncovered") {
      out.filter = ExampleFilter::uncovered;
    } else {
      throw UsageError("unknown filter '" + *f + "'");
    }
  }
  if (auto s = get("scope")) {
    if (*s == "union") {
      out.scope = ExampleScope::full_union;
    } else if (*s == "selected-rule") {
      out.scope = ExampleScope::selected_rule;
    } else {
      throw UsageError("unknown scope '" + *s + "'");
    }
  }
  auto number = [](const std::string& key, const std::string& text) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(text, &used);
      if (used != text.size()) throw std::invalid_argument(key);
      return static_cast<std::uint64_t>(v);
    } catch (const std::exception&) {
      throw UsageError("bad " + key + " '" + text + "'");
    }
  };
  if (auto c = get("count")) out.count = static_cast<std::size_t>(number("count", *c));
  if (auto s = get("seed")) out.seed = number("seed", *s);
  return out;
}

struct Reports {
  std::shared_ptr<const MetricReport> full;
  std::shared_ptr<const MetricReport> cf;
  std::shared_ptr<const MetricReport> selected;
  std::shared_ptr<const MetricReport> evaluation;  // full union on the held-out split
};

class Session {
 public:
  Session(Dataset data, std::filesystem::path union_path, SessionOptions opt = {})
      : union_path_(std::move(union_path)), opt_(opt) {
    if (opt.split_count) {
      auto parts = split(data, *opt.split_count, opt.split_seed);
      working_ = std::make_shared<ConstructionSet>(std::move(parts.construction));
      evaluation_ = std::make_shared<EvaluationSet>(std::move(parts.evaluation));
    } else {
      working_ = std::make_shared<ConstructionSet>(std::move(data));
    }
    measure_ = std::make_shared<Measure>(build_measure(working_->data(), opt.measure, opt.weighting));
    weights_ = feu_weights(working_->data(), opt.weighting);
    if (evaluation_) {
      eval_measure_ = std::make_shared<Measure>(build_measure(evaluation_->data(), opt.measure, opt.weighting));
    }
    load_spec(read_union_file(union_path_));
  }

  static Session open(const std::filesystem::path& manifest, const std::filesystem::path& union_path,
                      SessionOptions opt = {}) {
    return Session(load_dataset(manifest), union_path, opt);
  }

  Session(Session&& other) noexcept
      : union_path_(std::move(other.union_path_)),
        opt_(other.opt_),
        working_(std::move(other.working_)),
        evaluation_(std::move(other.evaluation_)),
        measure_(std::move(other.measure_)),
        eval_measure_(std::move(other.eval_measure_)),
        weights_(std::move(other.weights_)),
        state_(std::move(other.state_)),
        saved_(std::move(other.saved_)),
        cache_(std::move(other.cache_)) {}

  // -------------------------------------------------------------------------
  // Single-writer gate

  class MutationGuard {
   public:
    explicit MutationGuard(std::atomic<bool>& flag) : flag_(&flag) {
      bool expected = false;
      if (!flag.compare_exchange_strong(expected, true)) throw BusyError();
    }
    MutationGuard(MutationGuard&& o) noexcept : flag_(std::exchange(o.flag_, nullptr)) {}
    MutationGuard(const MutationGuard&) = delete;
    MutationGuard& operator=(const MutationGuard&) = delete;
    MutationGuard& operator=(MutationGuard&&) = delete;
    ~MutationGuard() {
      if (flag_) flag_->store(false);
    }

   private:
    std::atomic<bool>* flag_;
  };

  /// Holds the writer slot; every mutation throws BusyError while it lives.
  MutationGuard begin_mutation() { return MutationGuard(busy_); }

  // -------------------------------------------------------------------------
  // Reads

  const Dataset& data() const { return working_->data(); }
  const ConstructionSet& construction() const { return *working_; }
  const EvaluationSet* evaluation() const { return evaluation_.get(); }
  const Measure& measure() const { return *measure_; }
  const SessionOptions& options() const { return opt_; }
  const std::filesystem::path& union_path() const { return union_path_; }

  Bindings bindings() const { return snapshot()->bindings; }
  Bindings saved_bindings() const {
    std::lock_guard lock(mu_);
    return saved_;
  }
  std::optional<std::string> selected() const { return snapshot()->selected; }
  /// The union as it would be saved now.
  dsl::UnionSpec current_spec() const {
    auto s = snapshot();
    return with_bindings(s->cu->spec(), s->bindings);
  }

  /// Cached per-rule vectors; identity is stable while the rule's bindings are.
  std::shared_ptr<const RuleVectors> rule_vectors(const std::string& rule) const {
    auto s = snapshot();
    return s->vectors.at(s->cu->require_rule(rule));
  }

  Reports reports() const { return reports_for(*snapshot()); }

  nlohmann::json state() const {
    auto s = snapshot();
    const auto& spec = s->cu->spec();
    nlohmann::json j;
    j["union"] = spec.name;
    j["expression"] = union_line(spec);
    if (s->selected) {
      j["selected"] = *s->selected;
      j["cf_expression"] = cf_line(spec, *s->selected);
    } else {
      j["selected"] = nullptr;
    }
    Bindings saved;
    {
      std::lock_guard lock(mu_);
      saved = saved_;
    }
    nlohmann::json rules = nlohmann::json::array();
    const auto leaves = spec.leaf_names();
    for (const auto& r : spec.rules) {
      nlohmann::json params = nlohmann::json::array();
      for (const auto& p : r.params) {
        params.push_back({{"name", p.name},
                          {"value", s->bindings.at(r.name).at(p.name)},
                          {"saved", saved.at(r.name).at(p.name)},
                          {"lo", p.lo},
                          {"hi", p.hi}});
      }
      rules.push_back({{"name", r.name},
                       {"in_union", std::find(leaves.begin(), leaves.end(), r.name) != leaves.end()},
                       {"applies", dsl::print_pred(r.applies)},
                       {"range", dsl::print_range(r.range)},
                       {"params", params}});
    }
    j["rules"] = rules;
    j["bindings"] = bindings_json(s->bindings);
    j["saved_bindings"] = bindings_json(saved);
    const Reports rep = reports_for(*s);
    nlohmann::json metrics = {{"full", to_json(*rep.full)}};
    if (rep.cf) metrics["cf"] = to_json(*rep.cf);
    if (rep.selected) metrics["selected"] = to_json(*rep.selected);
    if (rep.evaluation) metrics["evaluation"] = to_json(*rep.evaluation);
    j["metrics"] = metrics;
    j["dataset"] = {{"instances", data().size()}, {"feus", data().feu_count()}};
    return j;
  }

  // -------------------------------------------------------------------------
  // Mutations

  void select(const std::optional<std::string>& rule) {
    auto guard = begin_mutation();
    std::lock_guard lock(mu_);
    if (rule) {
      const auto leaves = state_->cu->spec().leaf_names();
      if (std::find(leaves.begin(), leaves.end(), *rule) == leaves.end()) {
        throw UsageError("rule " + *rule + " is not in the union");
      }
    }
    auto next = std::make_shared<State>(*state_);
    next->selected = rule;
    state_ = std::move(next);
  }

  Reports set_param(const std::string& rule, const std::string& param, double value) {
    auto guard = begin_mutation();
    apply_param(rule, param, value);
    return reports();
  }

  struct TuneResult {
    TuneOutcome outcome;
    Reports reports;
  };

  TuneResult run_autotune(const TuneRequest& req) {
    auto guard = begin_mutation();
    auto s = snapshot();
    const dsl::UnionSpec& spec = s->cu->spec();
    TuneContext ctx{spec, *working_, *measure_, opt_.weighting};
    TuneOutcome outcome = tune(req, ctx, s->bindings);
    if (outcome.success) apply_param(req.rule, req.param, *outcome.value);
    return {std::move(outcome), reports()};
  }

  void save() {
    auto guard = begin_mutation();
    auto s = snapshot();
    const dsl::UnionSpec spec = with_bindings(s->cu->spec(), s->bindings);
    write_file_atomically(union_path_, dsl::print_union(spec));
    std::lock_guard lock(mu_);
    saved_ = s->bindings;
  }

  void reset() {
    auto guard = begin_mutation();
    dsl::UnionSpec spec = read_union_file(union_path_);
    load_spec(std::move(spec));
  }

  // -------------------------------------------------------------------------
  // Examples

  nlohmann::json sample_examples(const ExampleQuery& q) const {
    auto s = snapshot();
    const Dataset& d = data();
    std::optional<std::size_t> rule_idx;
    if (q.scope == ExampleScope::selected_rule) {
      if (!s->selected) throw UsageError("no rule selected");
      rule_idx = s->cu->require_rule(*s->selected);
    }
    const auto results = compose_vectors(*s->cu, s->vectors, d.feu_count());
    const auto& spec = s->cu->spec();

    auto applicable = [&](const EffectiveResult& r) {
      if (!r.applicable) return false;
      return !rule_idx || std::binary_search(r.effective.begin(), r.effective.end(), *rule_idx);
    };
    auto keep = [&](std::size_t flat) {
      const auto& r = results[flat];
      switch (q.filter) {
        case ExampleFilter::all: return true;
        case ExampleFilter::invalid: return applicable(r) && !r.range.contains(d.attribution(d.feu(flat)));
        case ExampleFilter::uncovered: return !applicable(r);
      }
      return false;
    };
    auto feu_json = [&](std::size_t flat) {
      const FeuRef u = d.feu(flat);
      const Instance& inst = d.instance(u.instance);
      const auto& r = results[flat];
      const bool app = applicable(r);
      const double e = inst.attributions[u.token];
      nlohmann::json j = {{"instance", inst.id},      {"index", u.token},
                          {"token", inst.tokens[u.token]}, {"attribution", e},
                          {"applicable", app},        {"valid", app && r.range.contains(e)}};
      j["effective"] = r.applicable ? nlohmann::json(effective_names(spec, r)) : nlohmann::json::array();
      if (q.mode == ExampleMode::feu) {
        nlohmann::json range = nlohmann::json::array();
        if (r.applicable) {
          for (const auto& iv : r.range.intervals()) {
            range.push_back({{"lo", iv.lo.value}, {"hi", iv.hi.value}, {"lo_closed", iv.lo.closed},
                             {"hi_closed", iv.hi.closed}});
          }
        }
        j["range"] = range;
        nlohmann::json features = nlohmann::json::object();
        for (const auto& [name, column] : inst.features) features[name] = feature_value_to_json(column[u.token]);
        j["features"] = features;
      }
      return j;
    };

    std::mt19937_64 rng(q.seed);
    nlohmann::json out = nlohmann::json::array();
    if (q.mode == ExampleMode::feu) {
      std::vector<std::size_t> pool;
      for (std::size_t f = 0; f < d.feu_count(); ++f) {
        if (keep(f)) pool.push_back(f);
      }
      std::shuffle(pool.begin(), pool.end(), rng);
      pool.resize(std::min(pool.size(), q.count));
      for (auto f : pool) out.push_back(feu_json(f));
      return out;
    }
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < d.size(); ++i) {
      for (std::size_t l = 0; l < d.instance(i).size(); ++l) {
        if (keep(d.flat_index(i, l))) {
          pool.push_back(i);
          break;
        }
      }
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(std::min(pool.size(), q.count));
    for (auto i : pool) {
      const Instance& inst = d.instance(i);
      nlohmann::json tokens = nlohmann::json::array();
      for (std::size_t l = 0; l < inst.size(); ++l) {
        auto t = feu_json(d.flat_index(i, l));
        t["shown"] = keep(d.flat_index(i, l));
        tokens.push_back(std::move(t));
      }
      out.push_back({{"instance", inst.id},
                     {"label", inst.label},
                     {"prediction", inst.prediction()},
                     {"correct", inst.prediction() == inst.label},
                     {"tokens", tokens}});
    }
    return out;
  }

 private:
  struct State {
    std::shared_ptr<const CompiledUnion> cu;
    std::vector<std::shared_ptr<const RuleVectors>> vectors;  // indexed like cu->spec().rules
    Bindings bindings;
    std::optional<std::string> selected;
  };

  std::shared_ptr<const State> snapshot() const {
    std::lock_guard lock(mu_);
    return state_;
  }

  static nlohmann::json bindings_json(const Bindings& b) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [rule, params] : b) {
      nlohmann::json p = nlohmann::json::object();
      for (const auto& [name, v] : params) p[name] = v;
      j[rule] = p;
    }
    return j;
  }

  std::shared_ptr<const RuleVectors> compute_vectors(const CompiledUnion& cu, std::size_t idx,
                                                     const Bindings& b) const {
    const auto& rule = cu.spec().rules[idx];
    static const ParamValues none;
    auto it = b.find(rule.name);
    RuleEvaluator ev(rule, it == b.end() ? none : it->second, data().space());
    return std::make_shared<const RuleVectors>(evaluate_rule_vectors(ev, data()));
  }

  void load_spec(dsl::UnionSpec spec) {
    auto problems = dsl::validate_against(spec, data().schema());
    if (!problems.empty()) {
      const auto& p = problems.front();
      throw RuleError((p.rule.empty() ? "" : "rule " + p.rule + ": ") + p.message);
    }
    auto next = std::make_shared<State>();
    next->bindings = bindings_of(spec);
    next->cu = std::make_shared<const CompiledUnion>(std::move(spec));
    const auto& rules = next->cu->spec().rules;
    // Keep cached vectors of rules whose definition and bindings are unchanged.
    std::shared_ptr<const State> prev;
    {
      std::lock_guard lock(mu_);
      prev = state_;
    }
    for (std::size_t i = 0; i < rules.size(); ++i) {
      std::shared_ptr<const RuleVectors> reuse;
      if (prev) {
        const auto* old = prev->cu->spec().find_rule(rules[i].name);
        if (old && *old == rules[i] && prev->bindings.at(rules[i].name) == next->bindings.at(rules[i].name)) {
          reuse = prev->vectors[*prev->cu->rule_index(rules[i].name)];
        }
      }
      next->vectors.push_back(reuse ? reuse : compute_vectors(*next->cu, i, next->bindings));
    }
    if (prev && prev->selected) {
      const auto leaves = next->cu->spec().leaf_names();
      if (std::find(leaves.begin(), leaves.end(), *prev->selected) != leaves.end()) next->selected = prev->selected;
    }
    std::lock_guard lock(mu_);
    saved_ = next->bindings;
    state_ = std::move(next);
  }

  // Caller holds the writer slot.
  void apply_param(const std::string& rule, const std::string& param, double value) {
    auto s = snapshot();
    const auto* r = s->cu->spec().find_rule(rule);
    if (!r) throw UsageError("unknown rule " + rule);
    const auto* decl = r->find_param(param);
    if (!decl) throw UsageError("rule " + rule + " has no param " + param);
    if (!(value >= decl->lo && value <= decl->hi)) {
      throw UsageError("value " + dsl::format_number(value) + " outside the bounds of " + rule + "." + param);
    }
    auto next = std::make_shared<State>(*s);
    next->bindings[rule][param] = value;
    const std::size_t idx = s->cu->require_rule(rule);
    next->vectors[idx] = compute_vectors(*s->cu, idx, next->bindings);
    std::lock_guard lock(mu_);
    state_ = std::move(next);
  }

  // Cache keys carry the exact bindings of every rule a report depends on, so
  // a change to any of them misses and everything else hits.
  static std::string bindings_key(const Bindings& b, const std::vector<std::string>& rules) {
    std::vector<std::string> sorted = rules;
    std::sort(sorted.begin(), sorted.end());
    std::string key;
    char buf[64];
    for (const auto& r : sorted) {
      key += r;
      key += '{';
      auto it = b.find(r);
      if (it != b.end()) {
        for (const auto& [p, v] : it->second) {
          std::snprintf(buf, sizeof buf, "%a", v);
          key += p + "=" + buf + ";";
        }
      }
      key += '}';
    }
    return key;
  }

  template <class Compute>
  std::shared_ptr<const MetricReport> cached(const std::string& key, Compute&& compute) const {
    {
      std::lock_guard lock(cache_mu_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    auto value = std::make_shared<const MetricReport>(compute());
    std::lock_guard lock(cache_mu_);
    if (cache_.size() > 4096) cache_.clear();
    return cache_.emplace(key, std::move(value)).first->second;
  }

  Reports reports_for(const State& s) const {
    const CompiledUnion& cu = *s.cu;
    const auto& spec = cu.spec();
    // Structure matters too: reset can reload a different union.
    const std::string structure = dsl::print_union_expr(spec.expr) + "|";
    const auto leaves = spec.leaf_names();
    const std::size_t n = data().feu_count();
    std::optional<std::vector<EffectiveResult>> full_results;
    auto results = [&]() -> const std::vector<EffectiveResult>& {
      if (!full_results) full_results = compose_vectors(cu, s.vectors, n);
      return *full_results;
    };
    auto rule_defs = [&](const std::vector<std::string>& names) {
      std::string out;
      for (const auto& name : names) out += dsl::print_rule(*spec.find_rule(name), "");
      return out;
    };
    const std::string full_deps = structure + rule_defs(leaves) + bindings_key(s.bindings, leaves);

    Reports out;
    out.full = cached("full|" + full_deps, [&] { return reduce_metrics(data(), weights_, results(), *measure_); });
    if (s.selected) {
      dsl::UnionSpec cf_spec = spec;
      cf_spec.expr = remove_rule(spec.expr, *s.selected);
      const auto cf_leaves = cf_spec.leaf_names();
      const std::string cf_key =
          "cf|" + dsl::print_union_expr(cf_spec.expr) + "|" + rule_defs(cf_leaves) + bindings_key(s.bindings, cf_leaves);
      out.cf = cached(cf_key, [&] {
        CompiledUnion cf(cf_spec);
        auto r = compose_vectors(cf, s.vectors, n);
        return reduce_metrics(data(), weights_, r, *measure_, Scope::cf_union);
      });
      const std::size_t idx = cu.require_rule(*s.selected);
      out.selected = cached("sel|" + *s.selected + "|" + full_deps, [&] {
        return reduce_rule_in_union(data(), weights_, results(), *measure_, idx);
      });
    }
    if (evaluation_) {
      out.evaluation = cached("eval|" + full_deps, [&] {
        return union_metrics(with_bindings(spec, s.bindings),
                             MetricContext{evaluation_->data(), *eval_measure_, opt_.weighting}, s.bindings);
      });
    }
    return out;
  }

  std::filesystem::path union_path_;
  SessionOptions opt_;
  std::shared_ptr<ConstructionSet> working_;
  std::shared_ptr<EvaluationSet> evaluation_;
  std::shared_ptr<Measure> measure_;
  std::shared_ptr<Measure> eval_measure_;
  std::vector<double> weights_;

  mutable std::mutex mu_;
  std::shared_ptr<const State> state_;
  Bindings saved_;
  std::atomic<bool> busy_{false};

  mutable std::mutex cache_mu_;
  mutable std::map<std::string, std::shared_ptr<const MetricReport>> cache_;
};

}  // namespace exsum::service
