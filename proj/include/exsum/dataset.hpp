#pragma once

// Explanation corpora: instances, fundamental explanation units (one token of
// one instance), FEU weighting, normalization and splitting.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"

#include "exsum/error.hpp"

namespace exsum {

enum class FeatureKind { real, categorical, integer };

inline std::string to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::real: return "real";
    case FeatureKind::categorical: return "categorical";
    case FeatureKind::integer: return "integer";
  }
  return "?";
}

inline FeatureKind parse_feature_kind(const std::string& text) {
  if (text == "real") return FeatureKind::real;
  if (text == "categorical") return FeatureKind::categorical;
  if (text == "integer") return FeatureKind::integer;
  throw DataError("unknown feature kind '" + text + "'");
}

/// A per-token feature value. monostate is an explicit missing value.
using FeatureValue = std::variant<std::monostate, double, std::int64_t, std::string>;

using FeatureSchema = std::map<std::string, FeatureKind>;

/// Closed interval of admissible attribution values.
struct AttributionSpace {
  double lo = -1.0;
  double hi = 1.0;

  double width() const { return hi - lo; }
  friend bool operator==(const AttributionSpace&, const AttributionSpace&) = default;
};

struct Instance {
  std::string id;
  std::vector<std::string> tokens;
  int label = 0;
  std::vector<double> predicted_probs;
  std::vector<double> attributions;
  std::map<std::string, std::vector<FeatureValue>> features;

  std::size_t size() const { return tokens.size(); }

  /// Index of the most probable class.
  int prediction() const {
    return static_cast<int>(std::max_element(predicted_probs.begin(), predicted_probs.end()) -
                            predicted_probs.begin());
  }

  /// Probability of the predicted class.
  double confidence() const {
    return *std::max_element(predicted_probs.begin(), predicted_probs.end());
  }

  const FeatureValue& feature(const std::string& name, std::size_t token) const {
    static const FeatureValue missing{};
    auto it = features.find(name);
    if (it == features.end() || token >= it->second.size()) return missing;
    return it->second[token];
  }
};

/// Position of one FEU: token `token` (0-based) of instance `instance`.
struct FeuRef {
  std::size_t instance = 0;
  std::size_t token = 0;
  friend bool operator==(const FeuRef&, const FeuRef&) = default;
};

namespace detail {

inline bool kind_accepts(FeatureKind kind, const FeatureValue& value) {
  if (std::holds_alternative<std::monostate>(value)) return true;
  switch (kind) {
    case FeatureKind::real: return std::holds_alternative<double>(value);
    case FeatureKind::integer: return std::holds_alternative<std::int64_t>(value);
    case FeatureKind::categorical: return std::holds_alternative<std::string>(value);
  }
  return false;
}

inline std::string format_number(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace detail

/// Checks one instance against the schema; returns a description of the first
/// violated invariant or nullopt.
inline std::optional<std::string> check_instance(const Instance& inst, const FeatureSchema& schema) {
  if (inst.tokens.empty()) return "instance '" + inst.id + "' has no tokens";
  if (inst.attributions.size() != inst.tokens.size()) {
    return "length mismatch: " + std::to_string(inst.tokens.size()) + " tokens, " +
           std::to_string(inst.attributions.size()) + " attributions";
  }
  if (inst.predicted_probs.empty()) return "empty predicted_probs";
  double sum = 0.0;
  for (double p : inst.predicted_probs) {
    if (!(p >= 0.0 && p <= 1.0)) return "probability " + detail::format_number(p) + " outside [0, 1]";
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) return "probabilities sum to " + detail::format_number(sum);
  if (inst.label < 0 || static_cast<std::size_t>(inst.label) >= inst.predicted_probs.size()) {
    return "label " + std::to_string(inst.label) + " outside 0.." +
           std::to_string(inst.predicted_probs.size() - 1);
  }
  for (const auto& [name, column] : inst.features) {
    auto kind = schema.find(name);
    if (kind == schema.end()) return "feature '" + name + "' not declared in schema";
    if (column.size() != inst.tokens.size()) {
      return "length mismatch: feature '" + name + "' has " + std::to_string(column.size()) +
             " values for " + std::to_string(inst.tokens.size()) + " tokens";
    }
    for (const auto& v : column) {
      if (!detail::kind_accepts(kind->second, v)) {
        return "feature '" + name + "' value does not match kind " + to_string(kind->second);
      }
    }
  }
  for (double a : inst.attributions) {
    if (!std::isfinite(a)) return "non-finite attribution";
  }
  return std::nullopt;
}

/// An immutable explanation corpus.
class Dataset {
 public:
  Dataset() = default;

  Dataset(std::vector<Instance> instances, FeatureSchema schema, AttributionSpace space = {},
          std::optional<double> normalization_factor = std::nullopt)
      : instances_(std::move(instances)),
        schema_(std::move(schema)),
        space_(space),
        normalization_factor_(normalization_factor) {
    if (!(space_.lo < space_.hi)) throw DataError("attribution space must have lo < hi");
    offsets_.reserve(instances_.size() + 1);
    offsets_.push_back(0);
    for (auto& inst : instances_) {
      if (auto problem = check_instance(inst, schema_)) {
        throw DataError("instance '" + inst.id + "': " + *problem);
      }
      // Absent feature columns are all-missing.
      for (const auto& [name, kind] : schema_) {
        if (!inst.features.count(name)) inst.features[name].assign(inst.size(), FeatureValue{});
      }
      offsets_.push_back(offsets_.back() + inst.size());
    }
  }

  const std::vector<Instance>& instances() const { return instances_; }
  const Instance& instance(std::size_t i) const { return instances_.at(i); }
  std::size_t size() const { return instances_.size(); }
  bool empty() const { return instances_.empty(); }

  const FeatureSchema& schema() const { return schema_; }
  const AttributionSpace& space() const { return space_; }
  std::optional<double> normalization_factor() const { return normalization_factor_; }

  bool has_feature(const std::string& name) const { return schema_.count(name) != 0; }
  std::optional<FeatureKind> feature_kind(const std::string& name) const {
    auto it = schema_.find(name);
    if (it == schema_.end()) return std::nullopt;
    return it->second;
  }

  /// Total number of FEUs.
  std::size_t feu_count() const { return offsets_.empty() ? 0 : offsets_.back(); }

  /// Flat FEU index of token `token` of instance `instance`.
  std::size_t flat_index(std::size_t instance, std::size_t token) const {
    return offsets_[instance] + token;
  }
  std::size_t offset(std::size_t instance) const { return offsets_[instance]; }

  FeuRef feu(std::size_t flat) const {
    auto it = std::upper_bound(offsets_.begin(), offsets_.end(), flat);
    std::size_t inst = static_cast<std::size_t>(it - offsets_.begin()) - 1;
    return {inst, flat - offsets_[inst]};
  }

  double attribution(const FeuRef& u) const { return instances_[u.instance].attributions[u.token]; }

  /// Stable FEU identifier "<instance id>#<token index>".
  std::string feu_id(const FeuRef& u) const {
    return instances_[u.instance].id + "#" + std::to_string(u.token);
  }

  /// Copy of this dataset restricted to the given instances, in the given order.
  Dataset subset(const std::vector<std::size_t>& indices) const {
    std::vector<Instance> picked;
    picked.reserve(indices.size());
    for (auto i : indices) picked.push_back(instances_.at(i));
    return Dataset(std::move(picked), schema_, space_, normalization_factor_);
  }

  /// Copy with a replaced instance list (same schema and space).
  Dataset with_instances(std::vector<Instance> instances) const {
    return Dataset(std::move(instances), schema_, space_, normalization_factor_);
  }

 private:
  std::vector<Instance> instances_;
  FeatureSchema schema_;
  AttributionSpace space_;
  std::optional<double> normalization_factor_;
  std::vector<std::size_t> offsets_;
};

// ---------------------------------------------------------------------------
// Ingestion

namespace detail {

inline FeatureValue feature_value_from_json(const nlohmann::json& j, FeatureKind kind) {
  if (j.is_null()) return FeatureValue{};
  switch (kind) {
    case FeatureKind::real:
      if (j.is_number()) return j.get<double>();
      break;
    case FeatureKind::integer:
      if (j.is_number_integer()) return j.get<std::int64_t>();
      break;
    case FeatureKind::categorical:
      if (j.is_string()) return j.get<std::string>();
      break;
  }
  throw DataError("value " + j.dump() + " does not match kind " + to_string(kind));
}

inline Instance instance_from_json(const nlohmann::json& j, const FeatureSchema& schema) {
  Instance inst;
  if (!j.is_object()) throw DataError("record is not a JSON object");
  for (const char* field : {"id", "tokens", "label", "predicted_probs", "attributions"}) {
    if (!j.contains(field)) throw DataError(std::string("missing field '") + field + "'");
  }
  inst.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
  inst.tokens = j.at("tokens").get<std::vector<std::string>>();
  inst.label = j.at("label").get<int>();
  inst.predicted_probs = j.at("predicted_probs").get<std::vector<double>>();
  inst.attributions = j.at("attributions").get<std::vector<double>>();
  if (j.contains("features")) {
    for (const auto& [name, column] : j.at("features").items()) {
      auto kind = schema.find(name);
      if (kind == schema.end()) throw DataError("feature '" + name + "' not declared in schema");
      if (!column.is_array()) throw DataError("feature '" + name + "' is not an array");
      auto& out = inst.features[name];
      for (const auto& v : column) out.push_back(feature_value_from_json(v, kind->second));
    }
  }
  return inst;
}

}  // namespace detail

inline nlohmann::json feature_value_to_json(const FeatureValue& v) {
  return std::visit(
      [](const auto& x) -> nlohmann::json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, std::monostate>) {
          return nullptr;
        } else {
          return x;
        }
      },
      v);
}

inline nlohmann::json instance_to_json(const Instance& inst) {
  nlohmann::json features = nlohmann::json::object();
  for (const auto& [name, column] : inst.features) {
    auto arr = nlohmann::json::array();
    for (const auto& v : column) arr.push_back(feature_value_to_json(v));
    features[name] = std::move(arr);
  }
  return {{"id", inst.id},
          {"tokens", inst.tokens},
          {"label", inst.label},
          {"predicted_probs", inst.predicted_probs},
          {"attributions", inst.attributions},
          {"features", std::move(features)}};
}

/// Reads a manifest ({schema, attribution_space, data}) and its line-delimited
/// instance file. `data` is resolved relative to the manifest's directory.
inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream manifest_in(manifest_path);
  if (!manifest_in) throw DataError("cannot open manifest " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(manifest_in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  if (!manifest.contains("schema") || !manifest.contains("data")) {
    throw DataError("manifest must declare 'schema' and 'data'");
  }
  FeatureSchema schema;
  for (const auto& [name, kind] : manifest.at("schema").items()) {
    try {
      schema[name] = parse_feature_kind(kind.get<std::string>());
    } catch (const DataError& e) {
      throw DataError(std::string(e.what()) + " for feature '" + name + "'");
    }
  }
  AttributionSpace space;
  if (manifest.contains("attribution_space")) {
    const auto& e = manifest.at("attribution_space");
    if (!e.is_array() || e.size() != 2) throw DataError("attribution_space must be [lo, hi]");
    space = {e[0].get<double>(), e[1].get<double>()};
  }

  std::filesystem::path data_path = manifest.at("data").get<std::string>();
  if (data_path.is_relative()) data_path = manifest_path.parent_path() / data_path;
  std::ifstream data_in(data_path);
  if (!data_in) throw DataError("cannot open instance file " + data_path.string());

  std::vector<Instance> instances;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(data_in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    Instance inst;
    try {
      inst = detail::instance_from_json(nlohmann::json::parse(line), schema);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed record at line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("malformed record at line " + std::to_string(line_no) + ": " + e.what());
    }
    if (auto problem = check_instance(inst, schema)) {
      // "length mismatch: ..." -> "length mismatch at line N: ..."
      auto colon = problem->find(':');
      std::string head = colon == std::string::npos ? *problem : problem->substr(0, colon);
      std::string tail = colon == std::string::npos ? "" : problem->substr(colon);
      throw DataError(head + " at line " + std::to_string(line_no) + tail);
    }
    instances.push_back(std::move(inst));
  }
  if (instances.empty()) throw DataError("empty dataset: " + data_path.string());
  return Dataset(std::move(instances), std::move(schema), space);
}

/// Writes a manifest plus instance file that load_dataset reads back.
inline void write_dataset(const Dataset& d, const std::filesystem::path& manifest_path,
                          const std::string& data_file_name) {
  nlohmann::json schema = nlohmann::json::object();
  for (const auto& [name, kind] : d.schema()) schema[name] = to_string(kind);
  nlohmann::json manifest = {{"schema", schema},
                             {"attribution_space", {d.space().lo, d.space().hi}},
                             {"data", data_file_name}};
  std::ofstream(manifest_path) << manifest.dump(2) << "\n";
  std::ofstream data_out(manifest_path.parent_path() / data_file_name);
  for (const auto& inst : d.instances()) data_out << instance_to_json(inst).dump() << "\n";
}

// ---------------------------------------------------------------------------
// Derivations

struct Normalized {
  Dataset dataset;
  std::optional<std::string> warning;
};

/// Divides every attribution by the global maximum magnitude.
inline Normalized normalize_attributions(const Dataset& d) {
  if (d.empty()) throw UsageError("cannot normalize an empty dataset");
  double max_abs = 0.0;
  for (const auto& inst : d.instances()) {
    for (double a : inst.attributions) max_abs = std::max(max_abs, std::abs(a));
  }
  if (max_abs == 0.0) {
    return {Dataset(d.instances(), d.schema(), d.space(), std::nullopt),
            "all attributions are zero; normalization skipped"};
  }
  auto instances = d.instances();
  for (auto& inst : instances) {
    for (double& a : inst.attributions) a /= max_abs;
  }
  return {Dataset(std::move(instances), d.schema(), d.space(), max_abs), std::nullopt};
}

/// FEU weighting used by every estimator.
///  - pu: instance drawn uniformly, then a token uniformly (1 / (N * L_x)).
///  - simple: plain average over FEUs (1 / total FEU count).
enum class Weighting { pu, simple };

inline Weighting parse_weighting(const std::string& s) {
  if (s == "pu") return Weighting::pu;
  if (s == "simple") return Weighting::simple;
  throw UsageError("unknown weighting '" + s + "' (expected pu|simple)");
}

/// Per-FEU probability mass in flat FEU order; sums to 1.
inline std::vector<double> feu_weights(const Dataset& d, Weighting weighting = Weighting::pu) {
  if (d.empty()) throw UsageError("cannot weight an empty dataset");
  std::vector<double> w;
  w.reserve(d.feu_count());
  const double n = static_cast<double>(d.size());
  const double total = static_cast<double>(d.feu_count());
  for (const auto& inst : d.instances()) {
    const double mass = weighting == Weighting::pu ? 1.0 / (n * static_cast<double>(inst.size()))
                                                   : 1.0 / total;
    w.insert(w.end(), inst.size(), mass);
  }
  return w;
}

/// Same weights keyed by FEU id.
inline std::map<std::string, double> feu_weight_map(const Dataset& d,
                                                    Weighting weighting = Weighting::pu) {
  auto w = feu_weights(d, weighting);
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < w.size(); ++i) out[d.feu_id(d.feu(i))] = w[i];
  return out;
}

/// A dataset tagged with the role it plays in rule authoring. Tuning only
/// accepts construction data, so evaluation numbers never feed back into it.
template <class Tag>
class SplitPart {
 public:
  explicit SplitPart(Dataset d) : data_(std::move(d)) {}
  const Dataset& data() const { return data_; }

 private:
  Dataset data_;
};

using ConstructionSet = SplitPart<struct ConstructionTag>;
using EvaluationSet = SplitPart<struct EvaluationTag>;

struct Split {
  ConstructionSet construction;
  EvaluationSet evaluation;
};

/// Seeded instance-level partition; both parts keep the original file order.
inline Split split(const Dataset& d, std::size_t construction_count, std::uint64_t seed) {
  if (construction_count == 0 || construction_count >= d.size()) {
    throw UsageError("construction_count " + std::to_string(construction_count) +
                     " must lie in (0, " + std::to_string(d.size()) + ")");
  }
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> construction(order.begin(), order.begin() + construction_count);
  std::vector<std::size_t> evaluation(order.begin() + construction_count, order.end());
  std::sort(construction.begin(), construction.end());
  std::sort(evaluation.begin(), evaluation.end());
  return {ConstructionSet(d.subset(construction)), EvaluationSet(d.subset(evaluation))};
}

inline std::string ascii_lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

/// Parts of speech eligible as matching words in pair tasks.
inline const std::set<std::string>& content_pos_tags() {
  static const std::set<std::string> tags{"NOUN", "PROPN", "VERB", "ADJ", "PRON"};
  return tags;
}

/// Adds integer feature "match_index": for content words, the 0-based index of
/// the unique case-insensitive equal token in the other segment, else -1.
/// Segments are identified by the integer `partner_feature`; tokens whose
/// segment id is missing belong to no segment.
inline Dataset derive_match_index(const Dataset& d, const std::string& pos_feature,
                                  const std::string& partner_feature) {
  if (d.feature_kind(pos_feature) != FeatureKind::categorical) {
    throw UsageError("missing categorical feature '" + pos_feature + "'");
  }
  if (d.feature_kind(partner_feature) != FeatureKind::integer) {
    throw UsageError("missing integer feature '" + partner_feature + "'");
  }
  auto schema = d.schema();
  schema["match_index"] = FeatureKind::integer;
  auto instances = d.instances();
  for (auto& inst : instances) {
    const auto& pos = inst.features.at(pos_feature);
    const auto& segment = inst.features.at(partner_feature);
    std::vector<std::string> lowered(inst.size());
    for (std::size_t l = 0; l < inst.size(); ++l) lowered[l] = ascii_lower(inst.tokens[l]);

    std::vector<FeatureValue> match(inst.size(), FeatureValue{std::int64_t{-1}});
    for (std::size_t l = 0; l < inst.size(); ++l) {
      const auto* tag = std::get_if<std::string>(&pos[l]);
      const auto* seg = std::get_if<std::int64_t>(&segment[l]);
      if (!tag || !seg || !content_pos_tags().count(*tag)) continue;
      std::int64_t found = -1;
      int hits = 0;
      for (std::size_t m = 0; m < inst.size(); ++m) {
        const auto* other = std::get_if<std::int64_t>(&segment[m]);
        if (!other || *other == *seg || lowered[m] != lowered[l]) continue;
        ++hits;
        found = static_cast<std::int64_t>(m);
      }
      if (hits == 1) match[l] = found;
    }
    inst.features["match_index"] = std::move(match);
  }
  return Dataset(std::move(instances), std::move(schema), d.space(), d.normalization_factor());
}

}  // namespace exsum
