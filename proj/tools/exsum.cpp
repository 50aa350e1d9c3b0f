// exsum: evaluate, tune and compare rule unions over explanation corpora.

#include <csignal>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "httplib.h"

#include "exsum/exsum.hpp"
#include "exsum/service/http.hpp"
#include "exsum/service/session.hpp"

namespace fs = std::filesystem;
using namespace exsum;

namespace {

struct Common {
  std::string dataset;
  std::string union_file;
  std::optional<std::size_t> split_count;
  std::uint64_t split_seed = 0;
  std::string measure = "empirical";
  std::string weighting = "pu";
  std::string report = "table";
};

void add_data_flags(CLI::App* app, Common& c, bool needs_union) {
  app->add_option("--dataset", c.dataset, "dataset manifest (JSON)")->required()->check(CLI::ExistingFile);
  auto* u = app->add_option("--union", c.union_file, "rule union file");
  if (needs_union) u->required()->check(CLI::ExistingFile);
  app->add_option("--split-count", c.split_count, "instances in the construction split");
  app->add_option("--split-seed", c.split_seed, "seed of the construction/evaluation split");
  app->add_option("--measure", c.measure, "attribution measure")->check(CLI::IsMember({"empirical", "kde"}));
  app->add_option("--weighting", c.weighting, "FEU weighting")->check(CLI::IsMember({"pu", "simple"}));
}

void add_report_flag(CLI::App* app, Common& c) {
  app->add_option("--report", c.report, "output format")->check(CLI::IsMember({"json", "csv", "table"}));
}

dsl::UnionSpec load_union(const std::string& path) {
  auto spec = service::read_union_file(path);
  return spec;
}

void check_spec(const dsl::UnionSpec& spec, const Dataset& d) {
  auto problems = dsl::validate_against(spec, d.schema());
  if (problems.empty()) return;
  for (const auto& p : problems) {
    std::cerr << "rule " << (p.rule.empty() ? "?" : p.rule) << ": " << p.message;
    if (p.pos.line) std::cerr << " (line " << p.pos.line << ")";
    std::cerr << "\n";
  }
  throw RuleError("rule file does not validate against the dataset schema");
}

int run_evaluate(const Common& c, const std::optional<std::string>& cf_without, const std::string& on) {
  const Dataset all = load_dataset(c.dataset);
  auto spec = load_union(c.union_file);
  check_spec(spec, all);
  const Weighting w = parse_weighting(c.weighting);
  Dataset target = all;
  if (c.split_count) {
    auto parts = split(all, *c.split_count, c.split_seed);
    target = on == "construction" ? parts.construction.data() : parts.evaluation.data();
  }
  const Measure m = build_measure(target, parse_backend(c.measure), w);
  const MetricContext ctx{target, m, w};
  const Bindings b = bindings_of(spec);
  const auto rows = per_rule_rows(spec, ctx, b);
  const auto rep = union_report(spec, ctx, b, cf_without);
  const ReportFormat f = parse_report_format(c.report);
  if (f == ReportFormat::json) {
    auto j = rule_rows_json(rows, rep.full);
    j["expression"] = union_line(spec);
    if (rep.cf) {
      j["cf_expression"] = cf_line(spec, *cf_without);
      j["cf"] = to_json(*rep.cf);
      j["selected"] = to_json(*rep.selected);
    }
    std::cout << j.dump(2) << "\n";
    return 0;
  }
  std::cout << render_rule_report(rows, rep.full, f);
  if (rep.cf && f == ReportFormat::table) {
    std::cout << "\n" << union_line(spec) << "\n" << cf_line(spec, *cf_without) << "\n";
    std::cout << "CF union: Cov " << pct(rep.cf->coverage) << "  Val " << pct(rep.cf->validity) << "  Shp "
              << pct(rep.cf->sharpness) << "\n";
  }
  return 0;
}

struct TuneArgs {
  std::string rule, param, target_metric = "selected-rule.validity", direction = "at-least", method = "binary";
  double start = 0, stop = 0, precision = 0.01, target_value = 0.9;
  bool write = false;
};

int run_tune(const Common& c, const TuneArgs& t) {
  const Dataset all = load_dataset(c.dataset);
  auto spec = load_union(c.union_file);
  check_spec(spec, all);
  const Weighting w = parse_weighting(c.weighting);
  std::optional<ConstructionSet> cons;
  if (c.split_count) {
    cons.emplace(split(all, *c.split_count, c.split_seed).construction);
  } else {
    cons.emplace(all);
  }
  const Measure m = build_measure(cons->data(), parse_backend(c.measure), w);
  const TuneRequest req = tune_request_from_json({{"rule", t.rule},
                                                  {"param", t.param},
                                                  {"start", t.start},
                                                  {"stop", t.stop},
                                                  {"precision", t.precision},
                                                  {"target_metric", t.target_metric},
                                                  {"target_value", t.target_value},
                                                  {"direction", t.direction},
                                                  {"method", t.method}});
  const TuneOutcome out = tune(req, TuneContext{spec, *cons, m, w}, bindings_of(spec));
  if (parse_report_format(c.report) == ReportFormat::json) {
    std::cout << to_json(out).dump(2) << "\n";
  } else {
    for (const auto& p : out.trace) {
      std::cout << t.param << " = " << dsl::format_number(p.value) << "  ->  " << pct(p.metric) << "%\n";
    }
    if (out.success) {
      std::cout << "found " << t.rule << "." << t.param << " = " << dsl::format_number(*out.value) << " after "
                << out.evaluations << " evaluations\n";
    } else {
      std::cout << "no value found (" << out.diagnostic << "); rule left unchanged\n";
    }
  }
  if (out.success && t.write) {
    Bindings b = bindings_of(spec);
    b[t.rule][t.param] = *out.value;
    service::write_file_atomically(c.union_file, dsl::print_union(with_bindings(spec, b)));
  }
  return out.success ? 0 : 3;
}

struct BaselineArgs {
  std::vector<std::size_t> ks = {1, 10, 30};
  std::uint64_t seed = 0;
  std::size_t runs = 5;
  double neutral = 0.5;
};

int run_baselines(const Common& c, const BaselineArgs& a) {
  const Dataset all = load_dataset(c.dataset);
  if (!c.split_count) throw UsageError("baselines need --split-count");
  auto parts = split(all, *c.split_count, c.split_seed);
  const Weighting w = parse_weighting(c.weighting);
  const Measure m = build_measure(parts.evaluation.data(), parse_backend(c.measure), w);
  BaselineReportConfig cfg;
  cfg.ks = a.ks;
  cfg.seed = a.seed;
  cfg.random_runs = a.runs;
  cfg.rules.neutral = a.neutral;
  const auto rows = baseline_report(parts.construction, parts.evaluation, m, w, cfg);
  std::cout << render_baselines(rows, parse_report_format(c.report));
  return 0;
}

int run_serve(const Common& c, const std::string& host, int port, const std::string& assets) {
  service::SessionOptions opt;
  opt.split_count = c.split_count;
  opt.split_seed = c.split_seed;
  opt.measure = parse_backend(c.measure);
  opt.weighting = parse_weighting(c.weighting);
  auto session = service::Session::open(c.dataset, c.union_file, opt);
  httplib::Server server;
  service::install_routes(server, session);
  service::mount_assets(server, assets);
  std::cerr << "listening on http://" << host << ":" << port << "\n";
  if (!server.listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
  return 0;
}

int run_fixture(const std::string& kind, const std::string& out_dir, std::size_t instances, std::uint64_t seed) {
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  if (kind == "f1") {
    write_dataset(fixture_f1(), dir / "manifest.json", "instances.jsonl");
    std::ofstream(dir / "union.exsum") << fixture_f1_union_text();
  } else {
    CorpusOptions opt;
    opt.instances = instances;
    opt.seed = seed;
    write_dataset(synthetic_corpus(opt), dir / "manifest.json", "instances.jsonl");
    std::ofstream(dir / "union.exsum") << R"(exsum 1
union synthetic {
  expr: ((positive > stop) > catchall)
  rule positive {
    applies: feature("sentiment") > param(alpha)
    range: [param(lo), 1]
    params: alpha = 0.7 in [0.5, 1], lo = 0 in [-1, 1]
  }
  rule stop {
    applies: feature("pos") in {"AUX", "DET", "ADP", "CCONJ", "SCONJ", "PRON", "PART", "PUNCT"}
    range: [param(lo), param(hi)]
    params: lo = -0.05 in [-1, 0], hi = 0.05 in [0, 1]
  }
  rule catchall {
    applies: true
    range: [-param(w), param(w)]
    params: w = 0.15 in [0, 1]
  }
}
)";
  }
  std::cout << "wrote " << (dir / "manifest.json").string() << ", " << (dir / "instances.jsonl").string() << ", "
            << (dir / "union.exsum").string() << "\n";
  return 0;
}

int run_ibe(const std::string& records, double delta, int threshold, const std::string& report) {
  const auto recs = load_ibe_records(records);
  std::cout << render_ibe(ibe_report(recs, delta, threshold), parse_report_format(report));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rule unions over feature-attribution explanations"};
  app.require_subcommand(1);

  Common ev_c;
  std::optional<std::string> cf_without;
  std::string on = "evaluation";
  auto* evaluate = app.add_subcommand("evaluate", "per-rule and union metrics");
  add_data_flags(evaluate, ev_c, true);
  add_report_flag(evaluate, ev_c);
  evaluate->add_option("--cf-without", cf_without, "also report the union without this rule");
  evaluate->add_option("--on", on, "split to evaluate when --split-count is given")
      ->check(CLI::IsMember({"construction", "evaluation"}));

  Common tu_c;
  TuneArgs tu;
  auto* tune_cmd = app.add_subcommand("tune", "search one parameter for a metric target");
  add_data_flags(tune_cmd, tu_c, true);
  add_report_flag(tune_cmd, tu_c);
  tune_cmd->add_option("--rule", tu.rule)->required();
  tune_cmd->add_option("--param", tu.param)->required();
  tune_cmd->add_option("--start", tu.start)->required();
  tune_cmd->add_option("--stop", tu.stop)->required();
  tune_cmd->add_option("--precision", tu.precision);
  tune_cmd->add_option("--target-metric", tu.target_metric, "<union|cf-union|selected-rule>.<metric>");
  tune_cmd->add_option("--target-value", tu.target_value);
  tune_cmd->add_option("--direction", tu.direction)->check(CLI::IsMember({"at-least", "at-most"}));
  tune_cmd->add_option("--method", tu.method)->check(CLI::IsMember({"linear", "binary"}));
  tune_cmd->add_flag("--write", tu.write, "store the found value in the union file");

  Common bl_c;
  BaselineArgs bl;
  auto* baselines = app.add_subcommand("baselines", "BG / QF / WL comparison on the evaluation split");
  add_data_flags(baselines, bl_c, false);
  add_report_flag(baselines, bl_c);
  baselines->add_option("--k", bl.ks, "sample sizes")->delimiter(',');
  baselines->add_option("--seed", bl.seed, "first random-pick seed");
  baselines->add_option("--runs", bl.runs, "random-pick repetitions");
  baselines->add_option("--neutral", bl.neutral, "sentiment neutral point");

  Common sv_c;
  std::string host = "127.0.0.1", assets;
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "start the workbench API");
  add_data_flags(serve, sv_c, true);
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  serve->add_option("--assets", assets, "directory of static UI files");

  std::string fx_kind = "f1", fx_out = "fixture";
  std::size_t fx_n = 1000;
  std::uint64_t fx_seed = 1;
  auto* fixture = app.add_subcommand("fixture", "write a synthetic corpus and rule file");
  fixture->add_option("--kind", fx_kind)->check(CLI::IsMember({"f1", "corpus"}));
  fixture->add_option("--out", fx_out, "output directory");
  fixture->add_option("--instances", fx_n);
  fixture->add_option("--seed", fx_seed);

  std::string ibe_records, ibe_report_fmt = "table";
  double ibe_delta = 0.05;
  int ibe_threshold = 6;
  auto* ibe = app.add_subcommand("ibe", "metrics for perturbation-based explanations");
  ibe->add_option("--records", ibe_records)->required()->check(CLI::ExistingFile);
  ibe->add_option("--delta", ibe_delta, "margin half-width");
  ibe->add_option("--short-threshold", ibe_threshold, "longest sentence counted as short");
  ibe->add_option("--report", ibe_report_fmt)->check(CLI::IsMember({"json", "csv", "table"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*evaluate) return run_evaluate(ev_c, cf_without, on);
    if (*tune_cmd) return run_tune(tu_c, tu);
    if (*baselines) return run_baselines(bl_c, bl);
    if (*serve) return run_serve(sv_c, host, port, assets);
    if (*fixture) return run_fixture(fx_kind, fx_out, fx_n, fx_seed);
    if (*ibe) return run_ibe(ibe_records, ibe_delta, ibe_threshold, ibe_report_fmt);
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
