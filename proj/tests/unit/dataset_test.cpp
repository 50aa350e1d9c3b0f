#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "exsum/dataset.hpp"
#include "exsum/synthetic.hpp"
#include "../support/helpers.hpp"

using namespace exsum;
using testutil::TempDir;

namespace {

const char* kManifest = R"({"schema": {"pos": "categorical", "sent": "real"},
                            "attribution_space": [-1, 1], "data": "data.jsonl"})";

std::string record(const std::string& id, int n_tokens, int n_attr, const std::string& probs = "[0.3, 0.7]") {
  std::string toks, attrs, pos;
  for (int i = 0; i < n_tokens; ++i) {
    toks += std::string(i ? "," : "") + "\"w" + std::to_string(i) + "\"";
    pos += std::string(i ? "," : "") + "\"NOUN\"";
  }
  for (int i = 0; i < n_attr; ++i) attrs += std::string(i ? "," : "") + "0.1";
  return R"({"id": ")" + id + R"(", "tokens": [)" + toks + R"(], "label": 1, "predicted_probs": )" + probs +
         R"(, "attributions": [)" + attrs + R"(], "features": {"pos": [)" + pos + "]}}";
}

}  // namespace

TEST(LoadDataset, TwoLinesSixFeus) {
  TempDir dir("load");
  dir.write("manifest.json", kManifest);
  dir.write("data.jsonl", record("a", 2, 2) + "\n" + record("b", 4, 4) + "\n");
  const Dataset d = load_dataset(dir / "manifest.json");
  EXPECT_EQ(d.size(), 2u);
  EXPECT_EQ(d.feu_count(), 6u);
  EXPECT_EQ(d.instance(0).id, "a");
  EXPECT_EQ(d.instance(1).id, "b");
  // "sent" is declared but absent: filled with nulls.
  EXPECT_TRUE(std::holds_alternative<std::monostate>(d.instance(1).feature("sent", 3)));
}

TEST(LoadDataset, LengthMismatchReportsLine) {
  TempDir dir("mismatch");
  dir.write("manifest.json", kManifest);
  dir.write("data.jsonl", record("a", 2, 2) + "\n" + record("b", 2, 2) + "\n" + record("c", 2, 2) + "\n" +
                              record("d", 2, 2) + "\n" + record("e", 3, 2) + "\n");
  try {
    load_dataset(dir / "manifest.json");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("length mismatch at line 5"), std::string::npos) << e.what();
  }
}

TEST(LoadDataset, ProbabilitiesMustSumToOne) {
  TempDir dir("probs");
  dir.write("manifest.json", kManifest);
  dir.write("data.jsonl", record("a", 2, 2, "[0.7, 0.4]") + "\n");
  try {
    load_dataset(dir / "manifest.json");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("probabilities sum to 1.1"), std::string::npos) << e.what();
  }
}

TEST(LoadDataset, MalformedLineAndUnknownKindAndEmpty) {
  TempDir dir("bad");
  dir.write("manifest.json", kManifest);
  dir.write("data.jsonl", record("a", 2, 2) + "\n{not json\n");
  try {
    load_dataset(dir / "manifest.json");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  dir.write("data.jsonl", "\n\n");
  EXPECT_THROW(load_dataset(dir / "manifest.json"), DataError);
  dir.write("manifest.json", R"({"schema": {"pos": "colour"}, "data": "data.jsonl"})");
  dir.write("data.jsonl", record("a", 2, 2) + "\n");
  try {
    load_dataset(dir / "manifest.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("unknown feature kind"), std::string::npos) << e.what();
  }
}

TEST(LoadDataset, WriteThenLoadRoundTrips) {
  TempDir dir("roundtrip");
  const Dataset d = fixture_f1();
  write_dataset(d, dir / "m.json", "x.jsonl");
  const Dataset back = load_dataset(dir / "m.json");
  ASSERT_EQ(back.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(back.instance(i).tokens, d.instance(i).tokens);
    EXPECT_EQ(back.instance(i).attributions, d.instance(i).attributions);
    EXPECT_EQ(back.instance(i).features, d.instance(i).features);
  }
}

TEST(Normalize, DividesByMaxMagnitude) {
  const Dataset d({testutil::plain_instance("a", {0.5, -2.0, 1.0})}, {});
  const auto n = normalize_attributions(d);
  EXPECT_EQ(n.dataset.instance(0).attributions, (std::vector<double>{0.25, -1.0, 0.5}));
  EXPECT_EQ(n.dataset.normalization_factor(), 2.0);
  EXPECT_FALSE(n.warning);
}

TEST(Normalize, AlreadyNormalizedIsUnchanged) {
  const Dataset d({testutil::plain_instance("a", {-1.0, 0.3})}, {});
  const auto n = normalize_attributions(d);
  EXPECT_EQ(n.dataset.instance(0).attributions, (std::vector<double>{-1.0, 0.3}));
  EXPECT_EQ(n.dataset.normalization_factor(), 1.0);
}

TEST(Normalize, AllZeroWarns) {
  const Dataset d({testutil::plain_instance("a", {0.0, 0.0})}, {});
  const auto n = normalize_attributions(d);
  EXPECT_EQ(n.dataset.instance(0).attributions, (std::vector<double>{0.0, 0.0}));
  EXPECT_FALSE(n.dataset.normalization_factor());
  EXPECT_TRUE(n.warning);
}

TEST(Normalize, IdempotentAndPreservesRatios) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Instance> v;
    for (int i = 0; i < 4; ++i) {
      std::vector<double> a(1 + trial % 5);
      for (auto& x : a) x = u(rng);
      v.push_back(testutil::plain_instance("i" + std::to_string(i), a));
    }
    const Dataset d(v, {});
    const Dataset once = normalize_attributions(d).dataset;
    const Dataset twice = normalize_attributions(once).dataset;
    double mx = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      for (std::size_t l = 0; l < d.instance(i).size(); ++l) {
        const double a = d.instance(i).attributions[l], b = once.instance(i).attributions[l];
        EXPECT_EQ(std::signbit(a), std::signbit(b));
        EXPECT_NEAR(b * *once.normalization_factor(), a, 1e-12);
        EXPECT_EQ(twice.instance(i).attributions[l], b);
        mx = std::max(mx, std::abs(b));
      }
    }
    EXPECT_NEAR(mx, 1.0, 1e-9);
  }
}

TEST(FeuWeights, TwoStepSampling) {
  const Dataset d({testutil::plain_instance("A", {0, 0}), testutil::plain_instance("B", {0, 0, 0, 0})}, {});
  const auto w = feu_weight_map(d);
  EXPECT_DOUBLE_EQ(w.at("A#0"), 0.25);
  EXPECT_DOUBLE_EQ(w.at("A#1"), 0.25);
  for (int l = 0; l < 4; ++l) EXPECT_DOUBLE_EQ(w.at("B#" + std::to_string(l)), 0.125);
}

TEST(FeuWeights, SingleInstanceAndEqualLengths) {
  const Dataset one({testutil::plain_instance("A", {0, 0, 0, 0, 0})}, {});
  for (double w : feu_weights(one)) EXPECT_DOUBLE_EQ(w, 0.2);
  const Dataset eq({testutil::plain_instance("A", {1, 2, 3}), testutil::plain_instance("B", {4, 5, 6})}, {});
  EXPECT_EQ(feu_weights(eq, Weighting::pu), feu_weights(eq, Weighting::simple));
}

TEST(FeuWeights, SumToOneAndEqualLengthMeansAgree) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Instance> v;
    const int n = 1 + trial % 9;
    const bool equal = trial % 2 == 0;
    std::uniform_int_distribution<int> len(1, 12);
    const int fixed = len(rng);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int i = 0; i < n; ++i) {
      std::vector<double> a(static_cast<std::size_t>(equal ? fixed : len(rng)));
      for (auto& x : a) x = u(rng);
      v.push_back(testutil::plain_instance(std::to_string(i), a));
    }
    const Dataset d(v, {});
    const auto w = feu_weights(d);
    double total = std::accumulate(w.begin(), w.end(), 0.0);
    EXPECT_NEAR(total, 1.0, 1e-9);
    if (equal) {
      double weighted = 0, plain = 0;
      std::size_t f = 0;
      for (const auto& inst : d.instances()) {
        for (double a : inst.attributions) {
          weighted += w[f++] * a;
          plain += a;
        }
      }
      EXPECT_NEAR(weighted, plain / static_cast<double>(d.feu_count()), 1e-12);
    }
  }
}

TEST(Split, PartitionDeterminismAndRange) {
  std::vector<Instance> v;
  for (int i = 0; i < 10; ++i) v.push_back(testutil::plain_instance("i" + std::to_string(i), {0.1, 0.2}));
  const Dataset d(v, {});
  const auto s1 = split(d, 3, 7);
  const auto s2 = split(d, 3, 7);
  EXPECT_EQ(s1.construction.data().size(), 3u);
  EXPECT_EQ(s1.evaluation.data().size(), 7u);
  std::multiset<std::string> ids;
  for (const auto& i : s1.construction.data().instances()) ids.insert(i.id);
  for (const auto& i : s1.evaluation.data().instances()) ids.insert(i.id);
  std::multiset<std::string> expected;
  for (const auto& i : d.instances()) expected.insert(i.id);
  EXPECT_EQ(ids, expected);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(s1.construction.data().instance(i).id, s2.construction.data().instance(i).id);
  }
  EXPECT_THROW(split(d, 10, 7), UsageError);
  EXPECT_THROW(split(d, 0, 7), UsageError);
}

TEST(Split, RecombinedWeightsStillSumToOne) {
  const Dataset d = synthetic_corpus({.instances = 50, .seed = 4});
  const auto s = split(d, 20, 1);
  for (const Dataset* part : {&s.construction.data(), &s.evaluation.data()}) {
    const auto w = feu_weights(*part);
    EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-9);
  }
}

namespace {

Dataset pair_dataset(std::vector<std::string> tokens, std::vector<std::string> pos, std::vector<std::int64_t> seg) {
  Instance inst = testutil::plain_instance("q", std::vector<double>(tokens.size(), 0.0));
  inst.tokens = std::move(tokens);
  for (auto& p : pos) inst.features["pos"].emplace_back(p);
  for (auto s : seg) inst.features["question"].emplace_back(s);
  return Dataset({inst}, {{"pos", FeatureKind::categorical}, {"question", FeatureKind::integer}});
}

std::int64_t match_of(const Dataset& d, std::size_t l) {
  return std::get<std::int64_t>(d.instance(0).feature("match_index", l));
}

}  // namespace

TEST(MatchIndex, UniqueCaseInsensitiveMatch) {
  const auto d = derive_match_index(
      pair_dataset({"What", "is", "AI", "?", "Define", "ai", "."}, {"PRON", "AUX", "NOUN", "PUNCT", "VERB", "NOUN", "PUNCT"},
                   {1, 1, 1, 1, 2, 2, 2}),
      "pos", "question");
  EXPECT_EQ(match_of(d, 2), 5);
  EXPECT_EQ(match_of(d, 5), 2);
  EXPECT_EQ(match_of(d, 1), -1);  // "is": stop word
  EXPECT_EQ(match_of(d, 0), -1);  // "What": no counterpart
}

TEST(MatchIndex, AmbiguousMatchIsMinusOne) {
  const auto d = derive_match_index(pair_dataset({"AI", "?", "AI", "or", "AI"}, {"NOUN", "PUNCT", "NOUN", "CCONJ", "NOUN"},
                                                 {1, 1, 2, 2, 2}),
                                    "pos", "question");
  EXPECT_EQ(match_of(d, 0), -1);
  EXPECT_EQ(match_of(d, 2), 0);
}

TEST(MatchIndex, MissingFeaturesThrow) {
  const auto d = pair_dataset({"a"}, {"NOUN"}, {1});
  EXPECT_THROW(derive_match_index(d, "tag", "question"), Error);
  EXPECT_THROW(derive_match_index(d, "pos", "segment"), Error);
}
