#pragma once

// JSON, CSV and aligned-text renderings of metric reports.

#include <cstdio>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "exsum/baselines.hpp"
#include "exsum/error.hpp"
#include "exsum/ibe.hpp"
#include "exsum/metrics.hpp"

namespace exsum {

enum class ReportFormat { json, csv, table };

inline ReportFormat parse_report_format(const std::string& s) {
  if (s == "json") return ReportFormat::json;
  if (s == "csv") return ReportFormat::csv;
  if (s == "table") return ReportFormat::table;
  throw UsageError("unknown report format '" + s + "' (expected json|csv|table)");
}

inline nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

inline nlohmann::json to_json(const MetricReport& r) {
  return {{"scope", to_string(r.scope)},
          {"coverage", r.coverage},
          {"validity", opt_json(r.validity)},
          {"sharpness", opt_json(r.sharpness)},
          {"applicable_mass", r.applicable_mass},
          {"applicable_count", r.applicable_count}};
}

/// Percentage with one decimal, "n/a" when undefined.
inline std::string pct(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", *v * 100.0);
  return buf;
}

inline std::string mean_sd(const Stat& s) {
  if (!s.mean) return "n/a";
  if (!s.sd) return pct(s.mean);
  return pct(s.mean) + " +/- " + pct(s.sd);
}

/// Left-aligned first columns, right-aligned numbers.
class TextTable {
 public:
  explicit TextTable(std::vector<std::string> header, std::size_t left_columns = 1)
      : header_(std::move(header)), left_(left_columns) {}

  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

  std::string render() const {
    std::vector<std::size_t> width(header_.size(), 0);
    auto fit = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < r.size() && i < width.size(); ++i) width[i] = std::max(width[i], r[i].size());
    };
    fit(header_);
    for (const auto& r : rows_) fit(r);
    std::ostringstream out;
    auto line = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < width.size(); ++i) {
        const std::string cell = i < r.size() ? r[i] : "";
        if (i) out << "  ";
        if (i < left_) {
          out << std::left << std::setw(static_cast<int>(width[i])) << cell;
        } else {
          out << std::right << std::setw(static_cast<int>(width[i])) << cell;
        }
      }
      out << '\n';
    };
    line(header_);
    std::size_t total = 0;
    for (auto w : width) total += w;
    out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    for (const auto& r : rows_) line(r);
    return out.str();
  }

  std::string csv() const {
    std::ostringstream out;
    auto cell = [](const std::string& s) {
      if (s.find_first_of(",\"\n") == std::string::npos) return s;
      std::string q = "\"";
      for (char c : s) {
        if (c == '"') q += '"';
        q += c;
      }
      return q + "\"";
    };
    auto line = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << cell(r[i]);
      out << '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return out.str();
  }

 private:
  std::vector<std::string> header_;
  std::size_t left_;
  std::vector<std::vector<std::string>> rows_;
};

// ---------------------------------------------------------------------------
// Per-rule table: Idx, Rule, Cov%, Val%, Shp% plus a union row.

inline TextTable rule_table(const std::vector<RuleRow>& rows, const MetricReport& full) {
  TextTable t({"Idx", "Rule", "Cov%", "Val%", "Shp%"}, 2);
  for (const auto& r : rows) {
    t.add({std::to_string(r.idx), r.rule, pct(r.report.coverage), pct(r.report.validity), pct(r.report.sharpness)});
  }
  t.add({"", "Union", pct(full.coverage), pct(full.validity), pct(full.sharpness)});
  return t;
}

inline nlohmann::json rule_rows_json(const std::vector<RuleRow>& rows, const MetricReport& full) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    auto j = to_json(r.report);
    j["idx"] = r.idx;
    j["rule"] = r.rule;
    arr.push_back(j);
  }
  return {{"rules", arr}, {"union", to_json(full)}};
}

inline std::string render_rule_report(const std::vector<RuleRow>& rows, const MetricReport& full, ReportFormat f) {
  switch (f) {
    case ReportFormat::json: return rule_rows_json(rows, full).dump(2) + "\n";
    case ReportFormat::csv: return rule_table(rows, full).csv();
    case ReportFormat::table: return rule_table(rows, full).render();
  }
  return {};
}

// ---------------------------------------------------------------------------
// Baseline comparison

inline nlohmann::json stat_json(const Stat& s) {
  return {{"mean", opt_json(s.mean)}, {"sd", opt_json(s.sd)}, {"n", s.n}};
}

inline nlohmann::json to_json(const BaselineRow& r) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : r.runs) {
    nlohmann::json j = {{"rules", run.rules}};
    j["seed"] = run.seed ? nlohmann::json(*run.seed) : nlohmann::json();
    j["report"] = run.report ? to_json(*run.report) : nlohmann::json();
    if (!run.error.empty()) j["error"] = run.error;
    runs.push_back(j);
  }
  return {{"method", r.method},   {"kind", r.kind},
          {"pick", to_string(r.pick)}, {"k", r.k},
          {"runs", runs},         {"coverage", stat_json(r.coverage)},
          {"validity", stat_json(r.validity)}, {"sharpness", stat_json(r.sharpness)}};
}

inline TextTable baseline_table(const std::vector<BaselineRow>& rows) {
  TextTable t({"K", "Pick", "Method", "Kind", "Runs", "Cov%", "Val%", "Shp%"}, 4);
  for (const auto& r : rows) {
    t.add({std::to_string(r.k), r.pick == PickMethod::random ? "RND" : "SP", r.method, r.kind,
           std::to_string(r.coverage.n) + "/" + std::to_string(r.runs.size()), mean_sd(r.coverage), mean_sd(r.validity),
           mean_sd(r.sharpness)});
  }
  return t;
}

inline std::string render_baselines(const std::vector<BaselineRow>& rows, ReportFormat f) {
  if (f == ReportFormat::json) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) arr.push_back(to_json(r));
    return arr.dump(2) + "\n";
  }
  return f == ReportFormat::csv ? baseline_table(rows).csv() : baseline_table(rows).render();
}

// ---------------------------------------------------------------------------
// Instance-based explanations

inline nlohmann::json to_json(const IbeMetrics& m) {
  return {{"count", m.count}, {"validity", opt_json(m.validity)}, {"sharpness", opt_json(m.sharpness)}};
}

inline TextTable ibe_table(const std::vector<IbeRow>& rows) {
  TextTable t({"Perturbation", "Subset", "N", "Margin Val%", "Margin Shp%", "Other Val%", "Other Shp%", "Same Val%",
               "Same Shp%"},
              2);
  for (const auto& r : rows) {
    t.add({r.op_type, r.subset, std::to_string(r.margin.count), pct(r.margin.validity), pct(r.margin.sharpness),
           pct(r.other_side.validity), pct(r.other_side.sharpness), pct(r.same_side.validity),
           pct(r.same_side.sharpness)});
  }
  return t;
}

inline std::string render_ibe(const std::vector<IbeRow>& rows, ReportFormat f) {
  if (f == ReportFormat::json) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) {
      arr.push_back({{"op_type", r.op_type},
                     {"subset", r.subset},
                     {"margin", to_json(r.margin)},
                     {"other_side", to_json(r.other_side)},
                     {"same_side", to_json(r.same_side)}});
    }
    return arr.dump(2) + "\n";
  }
  return f == ReportFormat::csv ? ibe_table(rows).csv() : ibe_table(rows).render();
}

}  // namespace exsum
