#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "charagram/evaluator.hpp"
#include "charagram/random.hpp"

namespace charagram {
namespace {

long double oracle_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<long double>(x.size());
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n, my /= n;
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

std::vector<double> oracle_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (x[j] < x[i]) ++less;
      else if (j != i && x[j] == x[i]) ++equal;
    }
    r[i] = 1 + less + equal / 2;
  }
  return r;
}

TEST(Pearson, WorkedExample) {
  const std::vector<double> x{1, 2, 3, 4}, y{1, 3, 2, 4};
  EXPECT_EQ(pearson(x, y), 0.8);
}

TEST(Spearman, TiesUseAverageRanks) {
  const std::vector<double> x{1, 2, 2, 3}, y{1, 2, 3, 4};
  EXPECT_NEAR(spearman(x, y), 0.9487, 1e-4);
  EXPECT_EQ(average_ranks(x), (std::vector<double>{1, 2.5, 2.5, 4}));
}

TEST(Correlation, DegenerateInputs) {
  const std::vector<double> one{1}, flat{2, 2, 2}, ramp{1, 2, 3};
  EXPECT_THROW(pearson(one, one), DataError);
  EXPECT_THROW(pearson(flat, ramp), DataError);
  EXPECT_THROW(spearman(ramp, flat), DataError);
  EXPECT_THROW(pearson(ramp, one), UsageError);
}

TEST(Correlation, MatchesOracleOnRandomVectors) {
  Rng rng(31);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + uniform_index(rng, 200);
    std::vector<double> x(n), y(n);
    // Coarse grids force ties.
    const double grid = t % 2 ? 5.0 : 1000.0;
    for (auto& v : x) v = std::floor(grid * uniform_unit(rng));
    for (auto& v : y) v = std::floor(grid * uniform_unit(rng));
    x[0] = 0, x[1] = 1, y[0] = 0, y[1] = 1;
    EXPECT_NEAR(pearson(x, y), static_cast<double>(oracle_pearson(x, y)), 1e-12);
    EXPECT_NEAR(spearman(x, y), static_cast<double>(oracle_pearson(oracle_ranks(x), oracle_ranks(y))), 1e-12);
  }
}

TEST(Correlation, SymmetryAndInvariance) {
  Rng rng(8);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 3 + uniform_index(rng, 40);
    std::vector<double> x(n), y(n), ax(n), cube(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = uniform_unit(rng) - 0.5;
      y[i] = x[i] + uniform_unit(rng);
      ax[i] = 3.5 * x[i] - 2.0;
      cube[i] = x[i] * x[i] * x[i];
    }
    EXPECT_NEAR(pearson(x, y), pearson(y, x), 1e-15);
    EXPECT_NEAR(pearson(ax, y), pearson(x, y), 1e-12);
    EXPECT_NEAR(spearman(cube, y), spearman(x, y), 1e-12);
    EXPECT_LE(std::abs(spearman(x, y)), 1.0);
  }
}

struct AxisFixture {
  NGramVocab vocab{{{U"a", 1, 1}, {U"b", 1, 1}, {U"c", 1, 1}}, {1}};
  Model model{3, 2, Activation::linear, vocab.fingerprint()};

  AxisFixture() {
    model.row(0)[0] = 1;
    model.row(1)[1] = 1;
    model.row(2)[0] = 1;
    model.row(2)[1] = 1;
  }
};

TEST(EvalWordSim, SpearmanOfCosines) {
  AxisFixture f;
  // Cosines: a/a 1, a/c 0.707, a/b 0.
  SimDataset ds{"w", {{"a", "a", 9}, {"a", "c", 5}, {"a", "b", 1}}, 0, 10};
  EXPECT_NEAR(eval_word_sim(f.model, f.vocab, ds, CaseMode::lowercase), 1.0, 1e-12);
  ds.items[0].gold = 0;
  EXPECT_NEAR(eval_word_sim(f.model, f.vocab, ds, CaseMode::lowercase), -0.5, 1e-12);
}

TEST(EvalSts, AveragesAreUnweighted) {
  AxisFixture f;
  const std::vector<SimDataset> datasets{
      {"one", {{"a", "a", 5}, {"a", "c", 3}, {"a", "b", 0}}, 0, 5},
      {"two", {{"a", "a", 0}, {"a", "c", 3}, {"a", "b", 5}, {"b", "b", 1}}, 0, 5},
      {"three", {{"a", "b", 0}, {"b", "c", 2}, {"c", "c", 4}}, 0, 5},
  };
  const std::map<std::string, std::string> groups{{"one", "g"}, {"two", "g"}};
  const auto report = eval_sts(f.model, f.vocab, datasets, groups, CaseMode::lowercase);
  ASSERT_EQ(report.per_dataset.size(), 3u);
  EXPECT_EQ(report.per_dataset[1].first, "two");
  double sum = 0;
  for (const auto& ds : datasets) {
    const double r = pearson(score_items(f.model, f.vocab, ds.items, CaseMode::lowercase), golds(ds.items));
    sum += r;
  }
  EXPECT_NEAR(report.average, sum / 3, 1e-15);
  EXPECT_NEAR(report.group_averages.at("g"), (report.per_dataset[0].second + report.per_dataset[1].second) / 2, 1e-15);
  EXPECT_FALSE(report.group_averages.contains("three"));
}

TEST(Bins, ParseLabels) {
  const auto b = parse_bins(">=3,≤4,11-15,7,≥21,<=2");
  EXPECT_EQ(b[0].lo, 3u);
  EXPECT_EQ(b[0].hi, UINT64_MAX);
  EXPECT_EQ(b[1].hi, 4u);
  EXPECT_EQ(b[2].lo, 11u);
  EXPECT_EQ(b[2].hi, 15u);
  EXPECT_TRUE(b[3].contains(7) && !b[3].contains(8));
  EXPECT_EQ(b[4].lo, 21u);
  EXPECT_EQ(b[5].hi, 2u);
  EXPECT_THROW(parse_bin("5-3"), UsageError);
  EXPECT_THROW(parse_bin("x"), UsageError);
  EXPECT_THROW(parse_bins(""), UsageError);
}

TEST(Bins, OovCountsBothSides) {
  ReferenceVocab ref{{"the", "cat"}};
  const SimItem item{"The dog", "a cat sat", 1};
  EXPECT_EQ(bin_key(item, ByOov{&ref}), 3u);
  EXPECT_EQ(bin_key(item, ByMaxLength{}), 3u);
  const auto bins = parse_bins(kOovBins);
  std::vector<std::string> hits;
  for (const auto& b : bins) {
    if (b.contains(3)) hits.push_back(b.label);
  }
  EXPECT_EQ(hits, (std::vector<std::string>{">=1", ">=0"}));
}

TEST(Bins, LengthBinsPartitionItems) {
  AxisFixture f;
  Rng rng(5);
  std::vector<SimItem> items;
  for (int i = 0; i < 300; ++i) {
    auto phrase = [&] {
      std::string s;
      const auto n = 1 + uniform_index(rng, 25);
      for (std::size_t k = 0; k < n; ++k) s += std::string(k ? " " : "") + "abc"[uniform_index(rng, 3)];
      return s;
    };
    items.push_back({phrase(), phrase(), 5 * uniform_unit(rng)});
  }
  const auto bins = parse_bins(kLengthBins);
  const auto results = binned_eval(f.model, f.vocab, items, ByMaxLength{}, bins, CaseMode::lowercase);
  std::size_t total = 0;
  for (const auto& r : results) total += r.n;
  EXPECT_EQ(total, items.size());
}

TEST(Bins, SmallBinsHaveNoCorrelation) {
  AxisFixture f;
  const std::vector<SimItem> items{{"a", "a", 1}, {"a b", "a", 2}, {"a b c", "a", 3}};
  const auto results = binned_eval(f.model, f.vocab, items, ByMaxLength{}, parse_bins("1,2,>=1"), CaseMode::lowercase);
  EXPECT_FALSE(results[0].correlation.has_value());
  EXPECT_EQ(results[0].n, 1u);
  EXPECT_TRUE(results[2].correlation.has_value());
  EXPECT_EQ(results[2].n, 3u);
  ReferenceVocab empty;
  EXPECT_THROW(binned_eval(f.model, f.vocab, items, ByOov{&empty}, parse_bins("0"), CaseMode::lowercase), UsageError);
}

}  // namespace
}  // namespace charagram
