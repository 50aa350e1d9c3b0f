#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace exsum {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Endpoint {
  double value = 0.0;
  bool closed = true;
  friend bool operator==(const Endpoint&, const Endpoint&) = default;
};

/// One interval with independently open/closed ends. Infinite ends are open.
struct Interval {
  Endpoint lo;
  Endpoint hi;

  static Interval closed(double a, double b) { return {{a, true}, {b, true}}; }
  static Interval open(double a, double b) { return {{a, false}, {b, false}}; }

  bool empty() const {
    if (std::isnan(lo.value) || std::isnan(hi.value)) return true;
    if (lo.value > hi.value) return true;
    if (lo.value == hi.value) return !(lo.closed && hi.closed) || std::isinf(lo.value);
    return false;
  }

  bool contains(double v) const {
    if (std::isnan(v)) return false;
    const bool above = lo.closed ? v >= lo.value : v > lo.value;
    const bool below = hi.closed ? v <= hi.value : v < hi.value;
    return above && below;
  }

  friend bool operator==(const Interval&, const Interval&) = default;
};

/// A finite union of intervals kept sorted, disjoint and non-adjacent.
class RangeSet {
 public:
  RangeSet() = default;
  explicit RangeSet(Interval iv) : RangeSet(std::vector<Interval>{iv}) {}
  explicit RangeSet(std::vector<Interval> parts) : parts_(std::move(parts)) { canonicalize(); }

  static RangeSet closed(double a, double b) { return RangeSet(Interval::closed(a, b)); }
  static RangeSet all() { return RangeSet(Interval::open(-kInf, kInf)); }

  const std::vector<Interval>& intervals() const { return parts_; }
  bool empty() const { return parts_.empty(); }

  bool contains(double v) const {
    // First interval whose upper end is not below v.
    auto it = std::lower_bound(parts_.begin(), parts_.end(), v,
                               [](const Interval& iv, double x) { return iv.hi.value < x; });
    for (; it != parts_.end() && it->lo.value <= v; ++it) {
      if (it->contains(v)) return true;
    }
    return false;
  }

  friend RangeSet intersect(const RangeSet& a, const RangeSet& b) {
    std::vector<Interval> out;
    std::size_t i = 0, j = 0;
    while (i < a.parts_.size() && j < b.parts_.size()) {
      const Interval& x = a.parts_[i];
      const Interval& y = b.parts_[j];
      Interval z{tighter_lo(x.lo, y.lo), tighter_hi(x.hi, y.hi)};
      if (!z.empty()) out.push_back(z);
      // Advance whichever interval ends first.
      if (x.hi.value < y.hi.value || (x.hi.value == y.hi.value && !x.hi.closed)) {
        ++i;
      } else {
        ++j;
      }
    }
    return RangeSet(std::move(out));
  }

  friend RangeSet unite(const RangeSet& a, const RangeSet& b) {
    auto parts = a.parts_;
    parts.insert(parts.end(), b.parts_.begin(), b.parts_.end());
    return RangeSet(std::move(parts));
  }

  /// Moves every lower end down by `dlo` and every upper end up by `dhi`
  /// (negative amounts shrink).
  RangeSet widen(double dlo, double dhi) const {
    auto parts = parts_;
    for (auto& iv : parts) {
      iv.lo.value -= dlo;
      iv.hi.value += dhi;
    }
    return RangeSet(std::move(parts));
  }

  /// Intersection with the closed interval [lo, hi].
  RangeSet clip(double lo, double hi) const { return intersect(*this, RangeSet::closed(lo, hi)); }

  friend bool operator==(const RangeSet&, const RangeSet&) = default;

  std::string to_string() const {
    if (parts_.empty()) return "{}";
    std::ostringstream os;
    for (std::size_t k = 0; k < parts_.size(); ++k) {
      if (k) os << " U ";
      const auto& iv = parts_[k];
      os << (iv.lo.closed ? '[' : '(') << iv.lo.value << ", " << iv.hi.value
         << (iv.hi.closed ? ']' : ')');
    }
    return os.str();
  }

  friend std::ostream& operator<<(std::ostream& os, const RangeSet& rs) { return os << rs.to_string(); }

 private:
  static Endpoint tighter_lo(const Endpoint& a, const Endpoint& b) {
    if (a.value != b.value) return a.value > b.value ? a : b;
    return {a.value, a.closed && b.closed};
  }
  static Endpoint tighter_hi(const Endpoint& a, const Endpoint& b) {
    if (a.value != b.value) return a.value < b.value ? a : b;
    return {a.value, a.closed && b.closed};
  }

  void canonicalize() {
    for (auto& iv : parts_) {
      if (std::isinf(iv.lo.value)) iv.lo.closed = false;
      if (std::isinf(iv.hi.value)) iv.hi.closed = false;
    }
    std::erase_if(parts_, [](const Interval& iv) { return iv.empty(); });
    std::sort(parts_.begin(), parts_.end(), [](const Interval& x, const Interval& y) {
      if (x.lo.value != y.lo.value) return x.lo.value < y.lo.value;
      return x.lo.closed && !y.lo.closed;
    });
    std::vector<Interval> merged;
    for (const auto& iv : parts_) {
      if (!merged.empty()) {
        Interval& last = merged.back();
        // Overlapping, or touching with at least one closed end: [0,1) U [1,2] = [0,2].
        const bool connected = iv.lo.value < last.hi.value ||
                               (iv.lo.value == last.hi.value && (iv.lo.closed || last.hi.closed));
        if (connected) {
          if (iv.hi.value > last.hi.value) {
            last.hi = iv.hi;
          } else if (iv.hi.value == last.hi.value) {
            last.hi.closed = last.hi.closed || iv.hi.closed;
          }
          continue;
        }
      }
      merged.push_back(iv);
    }
    parts_ = std::move(merged);
  }

  std::vector<Interval> parts_;
};

}  // namespace exsum
