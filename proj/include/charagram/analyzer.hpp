#pragma once

// Brute-force nearest neighbors over a working word list and over the
// n-gram rows of W.

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "charagram/error.hpp"
#include "charagram/model.hpp"
#include "charagram/ngram_vocab.hpp"

namespace charagram {

struct WorkingVocab {
  /// Normalized words, unique.
  std::vector<std::string> words;
  std::vector<Embedding> embeddings;
  CaseMode case_mode = CaseMode::lowercase;
};

inline WorkingVocab build_working_vocab(std::span<const std::string> words, const Model& model,
                                        const NGramVocab& vocab, CaseMode case_mode) {
  if (words.empty()) throw DataError("empty word list");
  check_binding(model, vocab);
  WorkingVocab wv;
  wv.case_mode = case_mode;
  std::unordered_set<std::string> seen;
  for (const auto& w : words) {
    const CharSeq seq = normalize(w, case_mode);
    std::string key = seq.text();
    if (key.empty() || !seen.insert(key).second) continue;
    wv.embeddings.push_back(embed(encode(seq, vocab), model));
    wv.words.push_back(std::move(key));
  }
  if (wv.words.empty()) throw DataError("word list has no non-empty entries");
  return wv;
}

struct Neighbor {
  std::string item;
  double cosine = 0.0;
};

namespace detail {

inline void rank_neighbors(std::vector<Neighbor>& all, std::size_t k) {
  auto better = [](const Neighbor& a, const Neighbor& b) {
    if (a.cosine != b.cosine) return a.cosine > b.cosine;
    return a.item < b.item;
  };
  if (all.size() > k) {
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
    all.resize(k);
  } else {
    std::sort(all.begin(), all.end(), better);
  }
}

}  // namespace detail

/// Top-k working-vocabulary words by cosine to the query, descending; ties
/// by word. The query's own normalized form is never returned.
inline std::vector<Neighbor> nearest_neighbors(std::string_view query, const WorkingVocab& wv, const Model& model,
                                               const NGramVocab& vocab, std::size_t k) {
  if (k == 0) throw UsageError("k must be >= 1");
  const CharSeq seq = normalize(query, wv.case_mode);
  const std::string key = seq.text();
  const Embedding q = embed(encode(seq, vocab), model);
  std::vector<Neighbor> all;
  all.reserve(wv.words.size());
  for (std::size_t i = 0; i < wv.words.size(); ++i) {
    if (wv.words[i] == key) continue;
    all.push_back({wv.words[i], cosine(q.values, wv.embeddings[i].values)});
  }
  detail::rank_neighbors(all, k);
  return all;
}

/// Top-k other vocabulary n-grams by cosine between rows of W. Items are the
/// UTF-8 n-grams with spaces kept as-is.
inline std::vector<Neighbor> ngram_neighbors(std::u32string_view query, const Model& model, const NGramVocab& vocab,
                                             std::size_t k) {
  if (k == 0) throw UsageError("k must be >= 1");
  check_binding(model, vocab);
  const auto idx = vocab.find(std::u32string(query));
  if (!idx) throw DataError("n-gram not in model: '" + escape_ngram(query) + "'");
  const auto q = model.row(*idx);
  std::vector<Neighbor> all;
  all.reserve(vocab.size());
  for (std::size_t r = 0; r < vocab.size(); ++r) {
    if (r == *idx) continue;
    all.push_back({utf8::encode(vocab.entries()[r].ngram), cosine(q, model.row(r))});
  }
  detail::rank_neighbors(all, k);
  return all;
}

}  // namespace charagram
