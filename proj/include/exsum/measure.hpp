#pragma once

// The marginal distribution of attribution values, used to size behavior
// ranges. Two backends:
//   empirical  weighted point masses at every observed value
//   kde        atoms for heavily repeated values plus a Gaussian KDE over the rest
// Interval masses are exact sums (empirical) or Gaussian CDF differences (kde).

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "exsum/dataset.hpp"
#include "exsum/error.hpp"
#include "exsum/range_set.hpp"

namespace exsum {

/// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

enum class MeasureBackend { empirical, kde };

inline MeasureBackend parse_backend(const std::string& s) {
  if (s == "empirical") return MeasureBackend::empirical;
  if (s == "kde") return MeasureBackend::kde;
  throw UsageError("unknown measure '" + s + "' (expected empirical|kde)");
}

class Measure {
 public:
  /// Point masses at `values` with the given weights (normalized to sum 1).
  static Measure empirical(const std::vector<double>& values, const std::vector<double>& weights,
                           AttributionSpace space) {
    Measure m(MeasureBackend::empirical, space);
    auto pairs = merged(values, weights);
    for (auto& [v, w] : pairs) {
      m.atom_values_.push_back(v);
      m.atom_masses_.push_back(w);
    }
    m.finish_atoms();
    return m;
  }

  /// Atoms for values whose merged mass reaches `atom_threshold`; Gaussian
  /// kernels of width `bandwidth` (Silverman's rule when absent) on the rest.
  static Measure kde(const std::vector<double>& values, const std::vector<double>& weights,
                     AttributionSpace space, std::optional<double> bandwidth, double atom_threshold) {
    if (bandwidth && !(*bandwidth > 0.0)) throw UsageError("bandwidth must be positive");
    Measure m(MeasureBackend::kde, space);
    for (auto& [v, w] : merged(values, weights)) {
      if (w >= atom_threshold) {
        m.atom_values_.push_back(v);
        m.atom_masses_.push_back(w);
      } else {
        m.kernel_centers_.push_back(v);
        m.kernel_weights_.push_back(w);
      }
    }
    m.finish_atoms();
    CompensatedSum kernel_total;
    m.kernel_prefix_.assign(1, 0.0);
    for (double w : m.kernel_weights_) {
      kernel_total.add(w);
      m.kernel_prefix_.push_back(kernel_total.value());
    }
    if (!m.kernel_centers_.empty()) {
      m.bandwidth_ = bandwidth ? *bandwidth : silverman(m.kernel_centers_, m.kernel_weights_, space);
    }
    return m;
  }

  MeasureBackend backend() const { return backend_; }
  const AttributionSpace& space() const { return space_; }
  double bandwidth() const { return bandwidth_; }
  const std::vector<double>& atom_values() const { return atom_values_; }
  const std::vector<double>& atom_masses() const { return atom_masses_; }
  double kernel_mass() const { return kernel_prefix_.empty() ? 0.0 : kernel_prefix_.back(); }

  /// P({v}).
  double atom_mass(double v) const {
    auto it = std::lower_bound(atom_values_.begin(), atom_values_.end(), v);
    if (it == atom_values_.end() || *it != v) return 0.0;
    return atom_masses_[static_cast<std::size_t>(it - atom_values_.begin())];
  }

  /// P(rs), or P(rs \ {exclude}) when `exclude` is given.
  double mass(const RangeSet& rs, std::optional<double> exclude = std::nullopt) const {
    double total = 0.0;
    for (const auto& iv : rs.intervals()) total += atom_mass_in(iv) + kernel_mass_in(iv);
    if (exclude && rs.contains(*exclude)) total -= atom_mass(*exclude);
    return total;
  }

 private:
  Measure(MeasureBackend backend, AttributionSpace space) : backend_(backend), space_(space) {}

  static std::vector<std::pair<double, double>> merged(const std::vector<double>& values,
                                                       const std::vector<double>& weights) {
    if (values.empty() || values.size() != weights.size()) {
      throw UsageError("measure needs one weight per value and at least one value");
    }
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
    CompensatedSum total;
    for (double w : weights) total.add(w);
    const double z = total.value();
    if (!(z > 0.0)) throw UsageError("measure weights must have positive total");
    std::vector<std::pair<double, double>> out;
    std::size_t i = 0;
    while (i < order.size()) {
      const double v = values[order[i]];
      CompensatedSum w;
      for (; i < order.size() && values[order[i]] == v; ++i) w.add(weights[order[i]]);
      // Weights that already sum to 1 are kept bit-for-bit.
      out.emplace_back(v, std::abs(z - 1.0) <= 1e-9 ? w.value() : w.value() / z);
    }
    return out;
  }

  void finish_atoms() {
    CompensatedSum s;
    atom_prefix_.assign(1, 0.0);
    for (double w : atom_masses_) {
      s.add(w);
      atom_prefix_.push_back(s.value());
    }
  }

  double atom_mass_in(const Interval& iv) const {
    if (atom_values_.empty()) return 0.0;
    auto first = iv.lo.closed ? std::lower_bound(atom_values_.begin(), atom_values_.end(), iv.lo.value)
                              : std::upper_bound(atom_values_.begin(), atom_values_.end(), iv.lo.value);
    auto last = iv.hi.closed ? std::upper_bound(atom_values_.begin(), atom_values_.end(), iv.hi.value)
                             : std::lower_bound(atom_values_.begin(), atom_values_.end(), iv.hi.value);
    if (last <= first) return 0.0;
    const auto i = static_cast<std::size_t>(first - atom_values_.begin());
    const auto j = static_cast<std::size_t>(last - atom_values_.begin());
    return atom_prefix_[j] - atom_prefix_[i];
  }

  // Sum_i w_i * Phi((t - x_i) / h). Kernels further than kCutoff bandwidths
  // from t contribute 0 or their full weight.
  double kernel_cdf(double t) const {
    if (kernel_centers_.empty()) return 0.0;
    if (t == -kInf) return 0.0;
    if (t == kInf) return kernel_mass();
    constexpr double kCutoff = 9.0;
    const double h = bandwidth_;
    auto lo = std::lower_bound(kernel_centers_.begin(), kernel_centers_.end(), t - kCutoff * h);
    auto hi = std::upper_bound(kernel_centers_.begin(), kernel_centers_.end(), t + kCutoff * h);
    const auto i = static_cast<std::size_t>(lo - kernel_centers_.begin());
    const auto j = static_cast<std::size_t>(hi - kernel_centers_.begin());
    CompensatedSum s;
    s.add(kernel_prefix_[i]);
    for (std::size_t k = i; k < j; ++k) s.add(kernel_weights_[k] * normal_cdf((t - kernel_centers_[k]) / h));
    return s.value();
  }

  // Kernel tails beyond the attribution space are credited to the boundary,
  // so a range reaching the boundary captures them and P(E) = 1.
  double kernel_mass_in(const Interval& iv) const {
    if (kernel_centers_.empty()) return 0.0;
    const double a = iv.lo.value <= space_.lo ? -kInf : iv.lo.value;
    const double b = iv.hi.value >= space_.hi ? kInf : iv.hi.value;
    if (!(a < b)) return 0.0;
    return std::max(0.0, kernel_cdf(b) - kernel_cdf(a));
  }

  // 0.9 * min(sd, IQR / 1.34) * n^(-1/5) with weighted moments and the
  // effective sample size (sum w)^2 / sum w^2.
  static double silverman(const std::vector<double>& x, const std::vector<double>& w, AttributionSpace space) {
    CompensatedSum sw, swx, sw2;
    for (std::size_t i = 0; i < x.size(); ++i) {
      sw.add(w[i]);
      swx.add(w[i] * x[i]);
      sw2.add(w[i] * w[i]);
    }
    const double mean = swx.value() / sw.value();
    CompensatedSum var;
    for (std::size_t i = 0; i < x.size(); ++i) var.add(w[i] * (x[i] - mean) * (x[i] - mean));
    const double sd = std::sqrt(var.value() / sw.value());
    auto quantile = [&](double p) {
      const double target = p * sw.value();
      double acc = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        acc += w[i];
        if (acc >= target) return x[i];
      }
      return x.back();
    };
    const double iqr = quantile(0.75) - quantile(0.25);
    double spread = sd;
    if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
    const double n_eff = sw.value() * sw.value() / sw2.value();
    double h = 0.9 * spread * std::pow(n_eff, -0.2);
    if (!(h > 0.0)) h = 1e-3 * space.width();
    return h;
  }

  MeasureBackend backend_;
  AttributionSpace space_;
  std::vector<double> atom_values_;
  std::vector<double> atom_masses_;
  std::vector<double> atom_prefix_;
  std::vector<double> kernel_centers_;
  std::vector<double> kernel_weights_;
  std::vector<double> kernel_prefix_;
  double bandwidth_ = 0.0;
};

namespace detail {
inline std::vector<double> all_attributions(const Dataset& d) {
  std::vector<double> v;
  v.reserve(d.feu_count());
  for (const auto& inst : d.instances()) v.insert(v.end(), inst.attributions.begin(), inst.attributions.end());
  return v;
}
}  // namespace detail

/// Empirical P_E of a dataset under the given FEU weighting.
inline Measure build_empirical(const Dataset& d, Weighting weighting = Weighting::pu) {
  return Measure::empirical(detail::all_attributions(d), feu_weights(d, weighting), d.space());
}

inline constexpr double kDefaultAtomThreshold = 0.01;

/// KDE-backed P_E; `bandwidth` nullopt selects Silverman's rule.
inline Measure build_kde(const Dataset& d, std::optional<double> bandwidth = std::nullopt,
                         double atom_threshold = kDefaultAtomThreshold, Weighting weighting = Weighting::pu) {
  return Measure::kde(detail::all_attributions(d), feu_weights(d, weighting), d.space(), bandwidth,
                      atom_threshold);
}

inline Measure build_measure(const Dataset& d, MeasureBackend backend, Weighting weighting = Weighting::pu) {
  return backend == MeasureBackend::empirical ? build_empirical(d, weighting)
                                              : build_kde(d, std::nullopt, kDefaultAtomThreshold, weighting);
}

}  // namespace exsum
