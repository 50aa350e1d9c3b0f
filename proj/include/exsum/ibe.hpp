#pragma once

// Validity and sharpness when each FEU is a whole perturbed input: the rule
// predicts where the perturbed prediction lands given the original one.

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "exsum/error.hpp"
#include "exsum/measure.hpp"
#include "exsum/range_set.hpp"

namespace exsum {

struct IbeRecord {
  double original_pred = 0.0;   // positive-class probability before perturbation
  double perturbed_pred = 0.0;  // and after
  std::string op_type;          // entity-change | minor-insert | negation | custom
  int sentence_len = 0;
};

inline const std::vector<std::string>& ibe_op_types() {
  static const std::vector<std::string> ops = {"entity-change", "minor-insert", "negation", "custom"};
  return ops;
}

inline std::optional<std::string> check_record(const IbeRecord& r) {
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in01(r.original_pred) || !in01(r.perturbed_pred)) return "predictions must lie in [0, 1]";
  if (r.original_pred == 0.5) return "undefined side: original prediction is exactly 0.5";
  const auto& ops = ibe_op_types();
  if (std::find(ops.begin(), ops.end(), r.op_type) == ops.end()) return "unknown op_type '" + r.op_type + "'";
  if (r.sentence_len < 1) return "sentence_len must be positive";
  return std::nullopt;
}

inline std::vector<IbeRecord> load_ibe_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<IbeRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    IbeRecord r;
    try {
      const auto j = nlohmann::json::parse(line);
      r.original_pred = j.at("original_pred").get<double>();
      r.perturbed_pred = j.at("perturbed_pred").get<double>();
      r.op_type = j.at("op_type").get<std::string>();
      r.sentence_len = j.at("sentence_len").get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed record at line " + std::to_string(n) + ": " + e.what());
    }
    if (auto err = check_record(r)) throw DataError(*err + " at line " + std::to_string(n));
    out.push_back(std::move(r));
  }
  if (out.empty()) throw DataError("empty record file");
  return out;
}

enum class IbeKind { margin, other_side, same_side };

struct IbeBehavior {
  IbeKind kind = IbeKind::margin;
  double delta = 0.05;  // margin only

  static IbeBehavior margin(double d) { return {IbeKind::margin, d}; }
  static IbeBehavior other_side() { return {IbeKind::other_side, 0.0}; }
  static IbeBehavior same_side() { return {IbeKind::same_side, 0.0}; }
};

inline RangeSet ibe_behavior(double y, const IbeBehavior& b) {
  if (!(y >= 0.0 && y <= 1.0)) throw UsageError("prediction outside [0, 1]");
  if (b.kind == IbeKind::margin) return RangeSet::closed(y - b.delta, y + b.delta).clip(0.0, 1.0);
  if (y == 0.5) throw UsageError("undefined side");
  const RangeSet low(Interval{{0.0, true}, {0.5, false}});
  const RangeSet high(Interval{{0.5, false}, {1.0, true}});
  const bool positive = y > 0.5;
  if (b.kind == IbeKind::other_side) return positive ? low : high;
  return positive ? high : low;
}

struct IbeMetrics {
  std::size_t count = 0;
  std::optional<double> validity;
  std::optional<double> sharpness;
};

using IbeFilter = std::function<bool(const IbeRecord&)>;

/// P_Y is the empirical measure over the filtered records' original
/// predictions. Sharpness has no point exclusion here.
inline IbeMetrics ibe_metrics(const std::vector<IbeRecord>& records, const IbeBehavior& b,
                              const IbeFilter& filter = {}) {
  std::vector<const IbeRecord*> kept;
  for (const auto& r : records) {
    if (!filter || filter(r)) kept.push_back(&r);
  }
  if (kept.empty()) throw DataError("no records left after filtering");
  std::vector<double> ys, ws;
  for (const auto* r : kept) {
    ys.push_back(r->original_pred);
    ws.push_back(1.0 / static_cast<double>(kept.size()));
  }
  const Measure py = Measure::empirical(ys, ws, AttributionSpace{0.0, 1.0});
  std::size_t valid = 0;
  CompensatedSum sharp;
  for (const auto* r : kept) {
    const RangeSet range = ibe_behavior(r->original_pred, b);
    if (range.contains(r->perturbed_pred)) ++valid;
    sharp.add(1.0 - py.mass(range));
  }
  IbeMetrics m;
  m.count = kept.size();
  m.validity = static_cast<double>(valid) / static_cast<double>(kept.size());
  m.sharpness = sharp.value() / static_cast<double>(kept.size());
  return m;
}

/// Like ibe_metrics but an empty selection is undefined rather than an error.
inline IbeMetrics ibe_metrics_or_empty(const std::vector<IbeRecord>& records, const IbeBehavior& b,
                                       const IbeFilter& filter) {
  for (const auto& r : records) {
    if (!filter || filter(r)) return ibe_metrics(records, b, filter);
  }
  return {};
}

struct LengthBreakdown {
  IbeMetrics short_bucket;  // len <= threshold
  IbeMetrics long_bucket;   // len > threshold
};

inline LengthBreakdown length_breakdown(const std::vector<IbeRecord>& records, const IbeBehavior& b, int threshold,
                                        const IbeFilter& filter = {}) {
  auto with = [&](bool is_short) {
    return [&, is_short](const IbeRecord& r) {
      if (filter && !filter(r)) return false;
      return (r.sentence_len <= threshold) == is_short;
    };
  };
  return {ibe_metrics_or_empty(records, b, with(true)), ibe_metrics_or_empty(records, b, with(false))};
}

/// Perturbation type x behavior table, with one extra row per type for short
/// sentences.
struct IbeRow {
  std::string op_type;
  std::string subset;  // "all" or "<= N words"
  IbeMetrics margin, other_side, same_side;
};

inline std::vector<IbeRow> ibe_report(const std::vector<IbeRecord>& records, double delta = 0.05,
                                      int short_threshold = 6) {
  std::vector<IbeRow> rows;
  const auto m = IbeBehavior::margin(delta);
  const auto o = IbeBehavior::other_side();
  const auto s = IbeBehavior::same_side();
  for (const auto& op : ibe_op_types()) {
    IbeFilter all = [op](const IbeRecord& r) { return r.op_type == op; };
    IbeFilter short_only = [op, short_threshold](const IbeRecord& r) {
      return r.op_type == op && r.sentence_len <= short_threshold;
    };
    const auto overall = ibe_metrics_or_empty(records, m, all);
    if (overall.count == 0) continue;
    rows.push_back({op, "all", overall, ibe_metrics_or_empty(records, o, all), ibe_metrics_or_empty(records, s, all)});
    rows.push_back({op, "<= " + std::to_string(short_threshold) + " words", ibe_metrics_or_empty(records, m, short_only),
                    ibe_metrics_or_empty(records, o, short_only), ibe_metrics_or_empty(records, s, short_only)});
  }
  return rows;
}

}  // namespace exsum
