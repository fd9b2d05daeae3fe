#pragma once

// Text normalization, character n-gram extraction, and the n-gram
// vocabulary that restricts which n-grams the model has vectors for.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "charagram/error.hpp"
#include "charagram/utf8.hpp"

namespace charagram {

enum class CaseMode { preserve, lowercase };

inline std::string_view to_string(CaseMode mode) {
  return mode == CaseMode::lowercase ? "lower" : "preserve";
}

inline CaseMode parse_case_mode(std::string_view s) {
  if (s == "lower" || s == "lowercase") return CaseMode::lowercase;
  if (s == "preserve") return CaseMode::preserve;
  throw UsageError("unknown case mode '" + std::string(s) + "' (expected lower|preserve)");
}

namespace detail {

inline bool is_space(char32_t c) {
  switch (c) {
    case U' ': case U'\t': case U'\n': case U'\r': case U'\v': case U'\f':
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return c >= 0x2000 && c <= 0x200A;
  }
}

// Simple (one-to-one) lowercase mapping for the Latin, Greek and Cyrillic
// blocks. Locale independent.
inline char32_t to_lower(char32_t c) {
  if (c < 0x80) return (c >= U'A' && c <= U'Z') ? c + 32 : c;
  if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 32;
  if (c >= 0x100 && c <= 0x17F) {
    if (c == 0x130) return U'i';
    if (c == 0x178) return 0xFF;
    if ((c >= 0x100 && c <= 0x12F) || (c >= 0x132 && c <= 0x137) ||
        (c >= 0x14A && c <= 0x177)) {
      return (c % 2 == 0) ? c + 1 : c;
    }
    if ((c >= 0x139 && c <= 0x148) || (c >= 0x179 && c <= 0x17E)) {
      return (c % 2 == 1) ? c + 1 : c;
    }
    return c;
  }
  if (c >= 0x391 && c <= 0x3A9 && c != 0x3A2) return c + 32;
  if (c == 0x386) return 0x3AC;
  if (c >= 0x388 && c <= 0x38A) return c + 37;
  if (c == 0x38C) return 0x3CC;
  if (c == 0x38E || c == 0x38F) return c + 63;
  if (c >= 0x410 && c <= 0x42F) return c + 32;
  if (c >= 0x400 && c <= 0x40F) return c + 80;
  return c;
}

}  // namespace detail

/// A normalized, boundary-padded character sequence. Always starts and ends
/// with a single space and never contains two consecutive spaces, except the
/// two-space sequence produced by empty input.
class CharSeq {
 public:
  const std::u32string& chars() const { return chars_; }
  std::size_t size() const { return chars_.size(); }
  std::string utf8() const { return utf8::encode(chars_); }
  /// The normalized text without the boundary padding.
  std::string text() const {
    return chars_.size() <= 2 ? std::string{}
                              : utf8::encode(std::u32string_view(chars_).substr(1, chars_.size() - 2));
  }

  friend bool operator==(const CharSeq&, const CharSeq&) = default;

 private:
  explicit CharSeq(std::u32string chars) : chars_(std::move(chars)) {}
  friend CharSeq normalize(std::string_view, CaseMode);

  std::u32string chars_;
};

/// Strips and collapses whitespace, optionally lowercases, and pads one
/// space on each side.
inline CharSeq normalize(std::string_view text, CaseMode case_mode) {
  const std::u32string decoded = utf8::decode(text);
  std::u32string out;
  out.reserve(decoded.size() + 2);
  out.push_back(U' ');
  bool pending_space = false;
  for (char32_t c : decoded) {
    if (detail::is_space(c)) {
      pending_space = out.size() > 1;
      continue;
    }
    if (pending_space) {
      out.push_back(U' ');
      pending_space = false;
    }
    out.push_back(case_mode == CaseMode::lowercase ? detail::to_lower(c) : c);
  }
  out.push_back(U' ');
  return CharSeq(std::move(out));
}

/// Every contiguous window of each requested length, with multiplicity.
inline std::map<std::u32string, std::uint64_t> extract_ngrams(const CharSeq& seq,
                                                              std::span<const std::uint32_t> orders) {
  if (orders.empty()) throw UsageError("n-gram orders must be non-empty");
  std::map<std::u32string, std::uint64_t> counts;
  const std::u32string_view chars = seq.chars();
  for (std::uint32_t n : orders) {
    if (n == 0) throw UsageError("n-gram order must be >= 1");
    for (std::size_t i = 0; i + n <= chars.size(); ++i) {
      ++counts[std::u32string(chars.substr(i, n))];
    }
  }
  return counts;
}

struct VocabEntry {
  std::u32string ngram;
  std::uint32_t order = 0;
  std::uint64_t count = 0;

  friend bool operator==(const VocabEntry&, const VocabEntry&) = default;
};

struct MinCount {
  std::uint64_t min_count = 1;
};
struct TopKPerOrder {
  std::uint64_t k = 0;
};
using VocabPolicy = std::variant<MinCount, TopKPerOrder>;

/// Parses "mincount:C" or "topk:K".
inline VocabPolicy parse_vocab_policy(std::string_view s) {
  const auto colon = s.find(':');
  const auto kind = s.substr(0, colon);
  std::uint64_t value = 0;
  bool ok = colon != std::string_view::npos;
  if (ok) {
    const auto num = s.substr(colon + 1);
    const auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), value);
    ok = ec == std::errc{} && ptr == num.data() + num.size() && value > 0;
  }
  if (ok && kind == "mincount") return MinCount{value};
  if (ok && kind == "topk") return TopKPerOrder{value};
  throw UsageError("bad vocab policy '" + std::string(s) + "' (expected mincount:C or topk:K, C,K >= 1)");
}

inline std::string to_string(const VocabPolicy& policy) {
  if (const auto* mc = std::get_if<MinCount>(&policy)) return "mincount:" + std::to_string(mc->min_count);
  return "topk:" + std::to_string(std::get<TopKPerOrder>(policy).k);
}

/// Parses a comma separated list of n-gram orders, e.g. "2,3,4".
inline std::vector<std::uint32_t> parse_orders(std::string_view s) {
  std::vector<std::uint32_t> orders;
  while (!s.empty()) {
    const auto comma = s.find(',');
    const auto item = s.substr(0, comma);
    std::uint32_t n = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), n);
    if (ec != std::errc{} || ptr != item.data() + item.size() || n == 0 || n > 255) {
      throw UsageError("bad n-gram order '" + std::string(item) + "' (expected integers in 1..255)");
    }
    orders.push_back(n);
    s = comma == std::string_view::npos ? std::string_view{} : s.substr(comma + 1);
  }
  if (orders.empty()) throw UsageError("n-gram orders must be non-empty");
  std::sort(orders.begin(), orders.end());
  orders.erase(std::unique(orders.begin(), orders.end()), orders.end());
  return orders;
}

/// The n-gram vocabulary: an ordered list of entries and the inverse index.
class NGramVocab {
 public:
  NGramVocab() = default;

  /// Takes entries in their final order. `orders` is the set of n-gram
  /// lengths used by encode(); every entry's order must be a member.
  NGramVocab(std::vector<VocabEntry> entries, std::vector<std::uint32_t> orders)
      : entries_(std::move(entries)), orders_(std::move(orders)) {
    std::sort(orders_.begin(), orders_.end());
    orders_.erase(std::unique(orders_.begin(), orders_.end()), orders_.end());
    if (orders_.empty() || orders_.front() == 0) throw UsageError("n-gram orders must be non-empty and >= 1");
    index_.reserve(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& e = entries_[i];
      if (e.ngram.size() != e.order || !std::binary_search(orders_.begin(), orders_.end(), e.order)) {
        throw DataError("vocab entry '" + utf8::encode(e.ngram) + "' has inconsistent order " +
                        std::to_string(e.order));
      }
      if (!index_.emplace(e.ngram, static_cast<std::uint32_t>(i)).second) {
        throw DataError("duplicate vocab entry '" + utf8::encode(e.ngram) + "'");
      }
    }
    fingerprint_ = compute_fingerprint();
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<VocabEntry>& entries() const { return entries_; }
  const std::vector<std::uint32_t>& orders() const { return orders_; }
  std::uint32_t max_order() const { return orders_.empty() ? 0 : orders_.back(); }
  std::uint64_t fingerprint() const { return fingerprint_; }

  std::optional<std::uint32_t> find(const std::u32string& ngram) const {
    const auto it = index_.find(ngram);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  friend bool operator==(const NGramVocab& a, const NGramVocab& b) {
    return a.entries_ == b.entries_ && a.orders_ == b.orders_;
  }

 private:
  // FNV-1a over (order, n-gram bytes) in entry order. Counts are excluded so
  // the fingerprint survives the model file, which does not store them.
  std::uint64_t compute_fingerprint() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    auto mix = [&h](unsigned char byte) {
      h ^= byte;
      h *= 0x100000001B3ULL;
    };
    for (const auto& e : entries_) {
      mix(static_cast<unsigned char>(e.order));
      for (char c : utf8::encode(e.ngram)) mix(static_cast<unsigned char>(c));
      mix(0xFF);
    }
    return h;
  }

  std::vector<VocabEntry> entries_;
  std::vector<std::uint32_t> orders_;
  std::unordered_map<std::u32string, std::uint32_t> index_;
  std::uint64_t fingerprint_ = 0;
};

/// Streaming n-gram counter behind build_vocab. Counting is order
/// insensitive, so shards may be merged in any order.
class VocabCounter {
 public:
  VocabCounter(std::vector<std::uint32_t> orders, CaseMode case_mode)
      : orders_(std::move(orders)), case_mode_(case_mode) {
    if (orders_.empty()) throw UsageError("n-gram orders must be non-empty");
    for (auto n : orders_) {
      if (n == 0 || n > 255) throw UsageError("n-gram order must be in 1..255");
    }
  }

  void add(std::string_view text) {
    ++documents_;
    for (auto& [gram, c] : extract_ngrams(normalize(text, case_mode_), orders_)) counts_[gram] += c;
  }

  void merge(const VocabCounter& other) {
    documents_ += other.documents_;
    for (const auto& [gram, c] : other.counts_) counts_[gram] += c;
  }

  std::size_t documents() const { return documents_; }

  NGramVocab finish(const VocabPolicy& policy,
                    const std::function<void(std::string_view)>& warn = {}) const {
    if (documents_ == 0) throw DataError("empty corpus");
    std::vector<VocabEntry> all;
    all.reserve(counts_.size());
    for (const auto& [gram, c] : counts_) {
      all.push_back({gram, static_cast<std::uint32_t>(gram.size()), c});
    }
    std::sort(all.begin(), all.end(), [](const VocabEntry& a, const VocabEntry& b) {
      if (a.order != b.order) return a.order < b.order;
      if (a.count != b.count) return a.count > b.count;
      return a.ngram < b.ngram;
    });

    std::vector<VocabEntry> kept;
    if (const auto* mc = std::get_if<MinCount>(&policy)) {
      for (auto& e : all) {
        if (e.count >= mc->min_count) kept.push_back(std::move(e));
      }
    } else {
      const auto k = std::get<TopKPerOrder>(policy).k;
      std::uint32_t current = 0;
      std::uint64_t taken = 0;
      for (auto& e : all) {
        if (e.order != current) current = e.order, taken = 0;
        if (taken < k) {
          kept.push_back(std::move(e));
          ++taken;
        }
      }
    }
    if (kept.empty() && warn) warn("vocabulary policy " + to_string(policy) + " kept no n-grams");
    return NGramVocab(std::move(kept), orders_);
  }

 private:
  std::vector<std::uint32_t> orders_;
  CaseMode case_mode_;
  std::map<std::u32string, std::uint64_t> counts_;
  std::size_t documents_ = 0;
};

/// Counts n-grams over the normalized corpus and applies the policy.
inline NGramVocab build_vocab(std::span<const std::string> corpus, std::vector<std::uint32_t> orders,
                              const VocabPolicy& policy, CaseMode case_mode,
                              const std::function<void(std::string_view)>& warn = {}) {
  VocabCounter counter(std::move(orders), case_mode);
  for (const auto& text : corpus) counter.add(text);
  return counter.finish(policy, warn);
}

struct CountTerm {
  std::uint32_t index = 0;
  std::uint32_t count = 0;

  friend bool operator==(const CountTerm&, const CountTerm&) = default;
};

/// Sparse n-gram count vector, sorted by index.
struct CountVector {
  std::vector<CountTerm> terms;

  bool empty() const { return terms.empty(); }
  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& term : terms) t += term.count;
    return t;
  }

  friend bool operator==(const CountVector&, const CountVector&) = default;
};

/// Maps in-vocabulary n-grams of `seq` to their indices; others are dropped.
inline CountVector encode(const CharSeq& seq, const NGramVocab& vocab) {
  std::map<std::uint32_t, std::uint32_t> counts;
  const std::u32string_view chars = seq.chars();
  std::u32string window;
  for (std::uint32_t n : vocab.orders()) {
    for (std::size_t i = 0; i + n <= chars.size(); ++i) {
      window.assign(chars.substr(i, n));
      if (const auto idx = vocab.find(window)) ++counts[*idx];
    }
  }
  CountVector cv;
  cv.terms.reserve(counts.size());
  for (const auto& [idx, c] : counts) cv.terms.push_back({idx, c});
  return cv;
}

inline CountVector encode_text(std::string_view text, const NGramVocab& vocab, CaseMode case_mode) {
  return encode(normalize(text, case_mode), vocab);
}

/// Escapes an n-gram for the text vocabulary format: space as \s,
/// backslash as \\, tab as \t, newline as \n.
inline std::string escape_ngram(std::u32string_view ngram) {
  std::string out;
  for (char32_t c : ngram) {
    switch (c) {
      case U' ': out += "\\s"; break;
      case U'\\': out += "\\\\"; break;
      case U'\t': out += "\\t"; break;
      case U'\n': out += "\\n"; break;
      default: utf8::append(out, c);
    }
  }
  return out;
}

inline std::optional<std::u32string> unescape_ngram(std::string_view s) {
  std::string raw;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      raw.push_back(s[i]);
      continue;
    }
    if (++i == s.size()) return std::nullopt;
    switch (s[i]) {
      case 's': raw.push_back(' '); break;
      case '\\': raw.push_back('\\'); break;
      case 't': raw.push_back('\t'); break;
      case 'n': raw.push_back('\n'); break;
      default: return std::nullopt;
    }
  }
  if (!utf8::valid(raw)) return std::nullopt;
  return utf8::decode(raw);
}

}  // namespace charagram
