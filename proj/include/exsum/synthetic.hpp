#pragma once

// Small hand-checkable fixtures and a seeded sentiment-style corpus.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "exsum/dataset.hpp"
#include "exsum/dsl/ast.hpp"
#include "exsum/dsl/parser.hpp"

namespace exsum {

namespace detail {

inline Instance make_instance(std::string id, std::vector<std::string> tokens, std::vector<double> attributions,
                              std::vector<std::string> pos, std::vector<double> sentiment, int label,
                              std::vector<double> probs) {
  Instance inst;
  inst.id = std::move(id);
  inst.tokens = std::move(tokens);
  inst.attributions = std::move(attributions);
  inst.label = label;
  inst.predicted_probs = std::move(probs);
  auto& p = inst.features["pos"];
  for (auto& s : pos) p.emplace_back(std::move(s));
  auto& se = inst.features["sentiment"];
  for (double v : sentiment) se.emplace_back(v);
  return inst;
}

inline FeatureSchema sentiment_schema() {
  return {{"pos", FeatureKind::categorical}, {"sentiment", FeatureKind::real}};
}

}  // namespace detail

/// Two reviews, six FEUs: A = "good film", B = "the plot great fails".
inline Dataset fixture_f1() {
  std::vector<Instance> v;
  v.push_back(detail::make_instance("A", {"good", "film"}, {0.5, -0.2}, {"ADJ", "NOUN"}, {0.7, 0.5}, 1, {0.1, 0.9}));
  v.push_back(detail::make_instance("B", {"the", "plot", "great", "fails"}, {0.1, 0.0, 0.9, -0.5},
                                    {"DET", "NOUN", "ADJ", "VERB"}, {0.5, 0.5, 0.8, 0.2}, 0, {0.6, 0.4}));
  return Dataset(std::move(v), detail::sentiment_schema(), AttributionSpace{-1.0, 1.0});
}

inline const char* fixture_f1_union_text() {
  return R"(exsum 1
union f1 {
  expr: R1
  rule R1 {
    applies: feature("pos") == "ADJ"
    range: [param(lo), 1]
    params: lo = 0.6 in [-1, 1]
  }
}
)";
}

inline dsl::UnionSpec fixture_f1_union() { return dsl::parse_union(fixture_f1_union_text()); }

/// One instance whose FEUs carry `values` with equal weight.
inline Dataset fixture_points(const std::vector<double>& values) {
  Instance inst;
  inst.id = "P";
  inst.label = 0;
  inst.predicted_probs = {0.5, 0.5};
  for (std::size_t i = 0; i < values.size(); ++i) {
    inst.tokens.push_back("t" + std::to_string(i + 1));
    inst.attributions.push_back(values[i]);
  }
  return Dataset({inst}, {}, AttributionSpace{-1.0, 1.0});
}

/// Attributions {0.1, 0.3, 0.5, 0.7, 0.9}.
inline Dataset fixture_five_points() { return fixture_points({0.1, 0.3, 0.5, 0.7, 0.9}); }

inline const char* fixture_lo_union_text() {
  return R"(exsum 1
union points {
  expr: R1
  rule R1 {
    applies: true
    range: [param(lo), 1]
    params: lo = 1 in [-1, 1]
  }
}
)";
}

struct CorpusOptions {
  std::size_t instances = 1000;
  std::size_t min_len = 4;
  std::size_t max_len = 16;
  std::size_t vocabulary = 400;
  double zero_rate = 0.1;  // share of FEUs whose attribution is exactly 0
  double noise = 0.12;
  std::uint64_t seed = 1;
};

/// Seeded corpus with POS and sentiment features. A word's attribution is its
/// own base value plus Gaussian noise, pushed up for positive words and
/// squeezed for stop words. Normalized to max |a| = 1.
inline Dataset synthetic_corpus(const CorpusOptions& opt = {}) {
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  static const std::vector<std::string> stop_tags = {"AUX", "DET", "ADP", "CCONJ", "SCONJ", "PRON", "PART", "PUNCT"};
  static const std::vector<std::string> content_tags = {"NOUN", "VERB", "ADJ", "ADV", "PROPN"};
  struct Word {
    std::string text, pos;
    double sentiment, base, spread;
  };
  std::vector<Word> vocab;
  for (std::size_t i = 0; i < opt.vocabulary; ++i) {
    Word w;
    const bool stop = i < opt.vocabulary / 8;
    w.pos = stop ? stop_tags[i % stop_tags.size()] : content_tags[i % content_tags.size()];
    // A few capitalized variants so case folding matters.
    w.text = (i % 37 == 5 ? "W" : "w") + std::to_string(i);
    w.sentiment = stop ? 0.5 : std::clamp(0.5 + 0.25 * gauss(rng), 0.0, 1.0);
    w.base = stop ? 0.03 * gauss(rng) : 1.2 * (w.sentiment - 0.5) + 0.1 * gauss(rng);
    w.spread = stop ? 0.4 : 1.0;
    vocab.push_back(std::move(w));
  }
  // Zipf-like frequencies.
  std::vector<double> freq(vocab.size());
  for (std::size_t i = 0; i < vocab.size(); ++i) freq[i] = 1.0 / std::pow(static_cast<double>(i % 97 + 1), 0.9);
  std::discrete_distribution<std::size_t> draw(freq.begin(), freq.end());
  std::uniform_int_distribution<std::size_t> len_dist(opt.min_len, opt.max_len);

  std::vector<Instance> out;
  out.reserve(opt.instances);
  for (std::size_t n = 0; n < opt.instances; ++n) {
    Instance inst;
    inst.id = "s" + std::to_string(n);
    const std::size_t len = len_dist(rng);
    double signal = 0.0;
    for (std::size_t l = 0; l < len; ++l) {
      const Word& w = vocab[draw(rng)];
      inst.tokens.push_back(w.text);
      double a = w.base + opt.noise * w.spread * gauss(rng);
      if (unit(rng) < opt.zero_rate) a = 0.0;
      inst.attributions.push_back(a);
      inst.features["pos"].emplace_back(w.pos);
      inst.features["sentiment"].emplace_back(w.sentiment);
      signal += a;
    }
    const double p1 = 1.0 / (1.0 + std::exp(-3.0 * signal));
    inst.predicted_probs = {1.0 - p1, p1};
    inst.label = unit(rng) < 0.85 ? (p1 > 0.5 ? 1 : 0) : (p1 > 0.5 ? 0 : 1);
    out.push_back(std::move(inst));
  }
  Dataset d(std::move(out), detail::sentiment_schema(), AttributionSpace{-1.0, 1.0});
  return normalize_attributions(d).dataset;
}

}  // namespace exsum
