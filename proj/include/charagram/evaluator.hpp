#pragma once

// Correlation metrics and the similarity evaluation protocols: word
// similarity (Spearman), sentence similarity (Pearson, grouped averages),
// and binned breakdowns by unknown-word count or maximum length.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <variant>
#include <vector>

#include "charagram/error.hpp"
#include "charagram/model.hpp"
#include "charagram/ngram_vocab.hpp"

namespace charagram {

/// Pearson product-moment correlation.
inline double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw UsageError("pearson: length mismatch");
  if (xs.size() < 2) throw DataError("degenerate input (fewer than 2 points)");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) throw DataError("degenerate input (zero variance)");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// 1-based ranks; tied values share the mean of the positions they span.
inline std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i + 1;
    while (j < idx.size() && xs[idx[j]] == xs[idx[i]]) ++j;
    const double r = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) ranks[idx[k]] = r;
    i = j;
  }
  return ranks;
}

/// Spearman's rho: Pearson correlation of average ranks.
inline double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw UsageError("spearman: length mismatch");
  if (xs.size() < 2) throw DataError("degenerate input (fewer than 2 points)");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  return pearson(rx, ry);
}

struct SimItem {
  std::string text1;
  std::string text2;
  double gold = 0.0;
};

struct SimDataset {
  std::string name;
  std::vector<SimItem> items;
  double scale_min = 0.0;
  double scale_max = 5.0;
};

/// Cosine between the two sides of each item.
inline std::vector<double> score_items(const Model& model, const NGramVocab& vocab, std::span<const SimItem> items,
                                       CaseMode case_mode) {
  check_binding(model, vocab);
  std::vector<double> scores;
  scores.reserve(items.size());
  for (const auto& item : items) {
    const auto a = embed_text(item.text1, model, vocab, case_mode);
    const auto b = embed_text(item.text2, model, vocab, case_mode);
    scores.push_back(cosine(a.values, b.values));
  }
  return scores;
}

inline std::vector<double> golds(std::span<const SimItem> items) {
  std::vector<double> g;
  g.reserve(items.size());
  for (const auto& item : items) g.push_back(item.gold);
  return g;
}

inline double eval_word_sim(const Model& model, const NGramVocab& vocab, const SimDataset& dataset,
                            CaseMode case_mode) {
  return spearman(score_items(model, vocab, dataset.items, case_mode), golds(dataset.items));
}

struct EvalReport {
  /// Scores in input order.
  std::vector<std::pair<std::string, double>> per_dataset;
  std::map<std::string, double> group_averages;
  /// Unweighted mean over all datasets.
  double average = 0.0;
};

/// Per-dataset Pearson r; group and overall averages are unweighted means.
/// `grouping` maps dataset name to group name; ungrouped datasets only
/// count toward the overall average.
inline EvalReport eval_sts(const Model& model, const NGramVocab& vocab, std::span<const SimDataset> datasets,
                           const std::map<std::string, std::string>& grouping, CaseMode case_mode) {
  if (datasets.empty()) throw DataError("no datasets to evaluate");
  EvalReport report;
  std::map<std::string, std::vector<double>> members;
  double sum = 0.0;
  for (const auto& ds : datasets) {
    const double r = pearson(score_items(model, vocab, ds.items, case_mode), golds(ds.items));
    report.per_dataset.emplace_back(ds.name, r);
    sum += r;
    if (const auto it = grouping.find(ds.name); it != grouping.end()) members[it->second].push_back(r);
  }
  for (const auto& [group, rs] : members) {
    report.group_averages[group] = std::accumulate(rs.begin(), rs.end(), 0.0) / static_cast<double>(rs.size());
  }
  report.average = sum / static_cast<double>(datasets.size());
  return report;
}

/// A bin over a non-negative integer key: exact value, inclusive range, or
/// one-sided bound. Labels: "3", "11-15", ">=1" / "≥1", "<=4" / "≤4".
struct BinSpec {
  std::string label;
  std::uint64_t lo = 0;
  std::uint64_t hi = UINT64_MAX;

  bool contains(std::uint64_t v) const { return v >= lo && v <= hi; }
};

inline BinSpec parse_bin(std::string_view label) {
  auto number = [&](std::string_view s) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) {
      throw UsageError("bad bin label '" + std::string(label) + "'");
    }
    return v;
  };
  BinSpec bin{std::string(label)};
  if (label.starts_with(">=")) {
    bin.lo = number(label.substr(2));
  } else if (label.starts_with("≥")) {
    bin.lo = number(label.substr(3));
  } else if (label.starts_with("<=")) {
    bin.lo = 0, bin.hi = number(label.substr(2));
  } else if (label.starts_with("≤")) {
    bin.lo = 0, bin.hi = number(label.substr(3));
  } else if (const auto dash = label.find('-'); dash != std::string_view::npos) {
    bin.lo = number(label.substr(0, dash));
    bin.hi = number(label.substr(dash + 1));
    if (bin.hi < bin.lo) throw UsageError("bad bin label '" + std::string(label) + "'");
  } else {
    bin.lo = bin.hi = number(label);
  }
  return bin;
}

inline std::vector<BinSpec> parse_bins(std::string_view spec) {
  std::vector<BinSpec> bins;
  while (!spec.empty()) {
    const auto comma = spec.find(',');
    bins.push_back(parse_bin(spec.substr(0, comma)));
    spec = comma == std::string_view::npos ? std::string_view{} : spec.substr(comma + 1);
  }
  if (bins.empty()) throw UsageError("no bins given");
  return bins;
}

/// Unknown-word bins: 0, 1, 2, >=1, >=0.
inline constexpr std::string_view kOovBins = "0,1,2,>=1,>=0";
/// Maximum-length bins: <=4, 5..10, 11-15, 16-20, >=21.
inline constexpr std::string_view kLengthBins = "<=4,5,6,7,8,9,10,11-15,16-20,>=21";

/// Case-folded word list used to decide which tokens are unknown.
struct ReferenceVocab {
  std::unordered_set<std::string> tokens;
};

/// Splits on whitespace and case-folds each token; nothing else is stripped.
inline std::vector<std::string> fold_tokens(std::string_view text) {
  const CharSeq seq = normalize(text, CaseMode::lowercase);
  std::vector<std::string> tokens;
  std::istringstream in(seq.text());
  for (std::string tok; in >> tok;) tokens.push_back(tok);
  return tokens;
}

struct ByOov {
  const ReferenceVocab* reference = nullptr;
};
struct ByMaxLength {};
using Binning = std::variant<ByOov, ByMaxLength>;

inline std::uint64_t bin_key(const SimItem& item, const Binning& binning) {
  const auto t1 = fold_tokens(item.text1);
  const auto t2 = fold_tokens(item.text2);
  if (const auto* oov = std::get_if<ByOov>(&binning)) {
    std::uint64_t unknown = 0;
    for (const auto* toks : {&t1, &t2}) {
      for (const auto& t : *toks) unknown += oov->reference->tokens.contains(t) ? 0 : 1;
    }
    return unknown;
  }
  return std::max(t1.size(), t2.size());
}

struct BinResult {
  std::string label;
  std::size_t n = 0;
  /// Absent when the bin has fewer than 2 items or zero variance.
  std::optional<double> correlation;
};

/// Pearson r per bin. Bins may overlap; an item lands in every bin that
/// contains its key.
inline std::vector<BinResult> binned_eval(const Model& model, const NGramVocab& vocab, std::span<const SimItem> items,
                                          const Binning& binning, std::span<const BinSpec> bins, CaseMode case_mode) {
  if (const auto* oov = std::get_if<ByOov>(&binning); oov && (!oov->reference || oov->reference->tokens.empty())) {
    throw UsageError("unknown-word binning needs a non-empty reference vocabulary");
  }
  const auto scores = score_items(model, vocab, items, case_mode);
  std::vector<std::uint64_t> keys;
  keys.reserve(items.size());
  for (const auto& item : items) keys.push_back(bin_key(item, binning));

  std::vector<BinResult> out;
  for (const auto& bin : bins) {
    std::vector<double> s, g;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (!bin.contains(keys[i])) continue;
      s.push_back(scores[i]);
      g.push_back(items[i].gold);
    }
    BinResult r{bin.label, s.size(), std::nullopt};
    try {
      if (s.size() >= 2) r.correlation = pearson(s, g);
    } catch (const DataError&) {
      r.correlation.reset();
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace charagram
