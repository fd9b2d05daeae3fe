#pragma once

// Persistence and loaders: the binary model file, the text vocabulary
// file, dataset readers, and flat key=value run configuration.
//
// Model file layout (little-endian):
//   "CHRG" | u32 version=1 | u32 d | u8 activation | 3 zero bytes |
//   u64 vocab fingerprint | u64 |V| | d x f32 bias |
//   |V| x ( u8 order | u16 byte length | UTF-8 n-gram | d x f32 row )

#include <bit>
#include <cerrno>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <unistd.h>
#include <utility>
#include <vector>

#include "charagram/error.hpp"
#include "charagram/evaluator.hpp"
#include "charagram/model.hpp"
#include "charagram/ngram_vocab.hpp"
#include "charagram/trainer.hpp"

namespace charagram {

inline constexpr std::string_view kModelMagic = "CHRG";
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

inline void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }
inline void put_u16(std::string& out, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f32(std::string& out, double v) { put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::string_view take(std::size_t n) {
    if (remaining() < n) {
      throw DataError("corrupt model file (expected " + std::to_string(pos_ + n) + " bytes)");
    }
    const auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint64_t uint(std::size_t width) {
    const auto s = take(width);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  double f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(uint(4))); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline std::string os_error(int err) { return std::error_code(err, std::generic_category()).message(); }

}  // namespace detail

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read '" + path.string() + "': " + detail::os_error(errno));
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw DataError("cannot read '" + path.string() + "': " + detail::os_error(errno));
  return ss.str();
}

/// Writes through a temporary file in the same directory and renames it
/// into place, so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + path.string() + "': " + detail::os_error(errno));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      const int err = errno;
      std::error_code ignored;
      std::filesystem::remove(tmp, ignored);
      throw DataError("cannot write '" + path.string() + "': " + detail::os_error(err));
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::error_code ignored;
    std::filesystem::remove(tmp, ignored);
    throw DataError("cannot write '" + path.string() + "': " + ec.message());
  }
}

inline std::string serialize_model(const Model& model, const NGramVocab& vocab) {
  check_binding(model, vocab);
  std::string out;
  out.reserve(40 + model.dim * 4 + vocab.size() * (model.dim * 4 + 16));
  out.append(kModelMagic);
  detail::put_u32(out, kModelVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(model.dim));
  detail::put_u8(out, static_cast<std::uint8_t>(model.activation));
  out.append(3, '\0');
  detail::put_u64(out, model.vocab_fingerprint);
  detail::put_u64(out, vocab.size());
  for (double b : model.bias) detail::put_f32(out, b);
  for (std::size_t r = 0; r < vocab.size(); ++r) {
    const auto& e = vocab.entries()[r];
    const std::string gram = utf8::encode(e.ngram);
    detail::put_u8(out, static_cast<std::uint8_t>(e.order));
    detail::put_u16(out, static_cast<std::uint16_t>(gram.size()));
    out.append(gram);
    for (double w : model.row(r)) detail::put_f32(out, w);
  }
  return out;
}

struct LoadedModel {
  Model model;
  NGramVocab vocab;
};

inline LoadedModel parse_model(std::string_view bytes) {
  if (bytes.size() < kModelMagic.size() || bytes.substr(0, kModelMagic.size()) != kModelMagic) {
    throw DataError("not a model file");
  }
  detail::Reader in(bytes);
  in.take(kModelMagic.size());
  const auto version = in.uint(4);
  if (version != kModelVersion) throw DataError("unsupported version " + std::to_string(version));
  const auto dim = static_cast<std::size_t>(in.uint(4));
  const auto act = in.uint(1);
  if (act > 2) throw DataError("corrupt model file (bad activation " + std::to_string(act) + ")");
  if (in.uint(3) != 0) throw DataError("corrupt model file (reserved bytes not zero)");
  const auto fingerprint = in.uint(8);
  const auto rows = in.uint(8);
  if (dim == 0) throw DataError("corrupt model file (zero dimension)");
  // Every record needs at least 3 + 4d bytes. Check the minimum size before
  // allocating so a damaged header cannot request an absurd allocation.
  const std::uint64_t min_record = 3 + 4 * static_cast<std::uint64_t>(dim);
  const std::uint64_t min_body =
      rows > (UINT64_MAX - 4 * dim) / min_record ? UINT64_MAX : 4 * dim + rows * min_record;
  if (min_body > in.remaining()) {
    const std::uint64_t need = min_body == UINT64_MAX ? UINT64_MAX : in.offset() + min_body;
    throw DataError("corrupt model file (expected " + std::to_string(need) + " bytes)");
  }

  Model model(static_cast<std::size_t>(rows), dim, static_cast<Activation>(act), fingerprint);
  for (double& b : model.bias) b = in.f32();
  std::vector<VocabEntry> entries;
  entries.reserve(static_cast<std::size_t>(rows));
  std::vector<std::uint32_t> orders;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto order = static_cast<std::uint32_t>(in.uint(1));
    const auto len = static_cast<std::size_t>(in.uint(2));
    detail::Reader record(in.take(len + 4 * dim));
    const auto gram = record.take(len);
    if (!utf8::valid(gram)) throw DataError("corrupt model file (invalid UTF-8 in n-gram " + std::to_string(r) + ")");
    entries.push_back({utf8::decode(gram), order, 0});
    orders.push_back(order);
    for (double& w : model.row(r)) w = record.f32();
  }
  if (in.remaining() != 0) throw DataError("corrupt model file (" + std::to_string(in.remaining()) + " trailing bytes)");
  if (orders.empty()) orders.push_back(1);
  NGramVocab vocab(std::move(entries), std::move(orders));
  if (vocab.fingerprint() != fingerprint) throw DataError("corrupt model file (vocabulary fingerprint mismatch)");
  return {std::move(model), std::move(vocab)};
}

inline void save_model(const Model& model, const NGramVocab& vocab, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_model(model, vocab));
}

inline LoadedModel load_model(const std::filesystem::path& path) { return parse_model(read_file(path)); }

/// Text vocabulary: one `escaped-ngram TAB order TAB count` line per entry.
inline std::string format_vocab(const NGramVocab& vocab) {
  std::string out;
  for (const auto& e : vocab.entries()) {
    out += escape_ngram(e.ngram);
    out += '\t';
    out += std::to_string(e.order);
    out += '\t';
    out += std::to_string(e.count);
    out += '\n';
  }
  return out;
}

inline void save_vocab(const NGramVocab& vocab, const std::filesystem::path& path) {
  write_file_atomic(path, format_vocab(vocab));
}

namespace detail {

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  for (;;) {
    const auto p = s.find(sep);
    out.push_back(s.substr(0, p));
    if (p == std::string_view::npos) return out;
    s = s.substr(p + 1);
  }
}

/// Lines of a UTF-8 text file, without terminators. Throws with the 1-based
/// line number on invalid UTF-8.
inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!utf8::valid(line)) {
      throw DataError(path.string() + ":" + std::to_string(lines.size() + 1) + ": invalid UTF-8");
    }
    lines.push_back(std::move(line));
    start = end + 1;
  }
  return lines;
}

template <typename T>
bool parse_number(std::string_view s, T& value) {
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  return ec == std::errc{} && ptr == s.data() + s.size() && !s.empty();
}

inline DataError line_error(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  return DataError(path.string() + ":" + std::to_string(line) + ": " + what);
}

}  // namespace detail

inline NGramVocab load_vocab(const std::filesystem::path& path) {
  const auto lines = detail::read_lines(path);
  std::vector<VocabEntry> entries;
  std::vector<std::uint32_t> orders;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto fields = detail::split(lines[i], '\t');
    VocabEntry e;
    const auto gram = fields.size() == 3 ? unescape_ngram(fields[0]) : std::nullopt;
    if (!gram || !detail::parse_number(fields[1], e.order) || !detail::parse_number(fields[2], e.count)) {
      throw detail::line_error(path, i + 1, "malformed vocabulary line (expected ngram<TAB>order<TAB>count)");
    }
    e.ngram = *gram;
    if (e.ngram.size() != e.order || e.order == 0) {
      throw detail::line_error(path, i + 1, "n-gram length does not match its order");
    }
    orders.push_back(e.order);
    entries.push_back(std::move(e));
  }
  if (entries.empty()) throw DataError(path.string() + ": empty vocabulary");
  return NGramVocab(std::move(entries), std::move(orders));
}

/// Tab-separated paraphrase pairs, file order preserved.
inline PairDataset load_pairs(const std::filesystem::path& path, CaseMode case_mode = CaseMode::lowercase) {
  const auto lines = detail::read_lines(path);
  PairDataset ds;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto fields = detail::split(lines[i], '\t');
    if (fields.size() != 2) {
      throw detail::line_error(path, i + 1, "expected 2 tab-separated fields, got " + std::to_string(fields.size()));
    }
    if (normalize(fields[0], case_mode).size() <= 2 || normalize(fields[1], case_mode).size() <= 2) {
      throw detail::line_error(path, i + 1, "empty phrase");
    }
    ds.pairs.emplace_back(std::string(fields[0]), std::string(fields[1]));
  }
  if (ds.pairs.empty()) throw DataError(path.string() + ": empty dataset");
  return ds;
}

/// `text1 TAB text2 TAB gold` lines; gold must lie in [scale_min, scale_max].
inline SimDataset load_simset(const std::filesystem::path& path, double scale_min, double scale_max) {
  const auto lines = detail::read_lines(path);
  SimDataset ds{path.stem().string(), {}, scale_min, scale_max};
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto fields = detail::split(lines[i], '\t');
    if (fields.size() != 3) {
      throw detail::line_error(path, i + 1, "expected 3 tab-separated fields, got " + std::to_string(fields.size()));
    }
    double gold = 0.0;
    if (!detail::parse_number(fields[2], gold)) {
      throw detail::line_error(path, i + 1, "bad gold score '" + std::string(fields[2]) + "'");
    }
    if (!(gold >= scale_min && gold <= scale_max)) {
      throw detail::line_error(path, i + 1, "gold score " + std::string(fields[2]) + " outside scale");
    }
    ds.items.push_back({std::string(fields[0]), std::string(fields[1]), gold});
  }
  if (ds.items.empty()) throw DataError(path.string() + ": empty dataset");
  return ds;
}

/// One word per line; blank lines ignored.
inline std::vector<std::string> load_wordlist(const std::filesystem::path& path) {
  std::vector<std::string> words;
  for (auto& line : detail::read_lines(path)) {
    if (normalize(line, CaseMode::preserve).size() > 2) words.push_back(std::move(line));
  }
  if (words.empty()) throw DataError(path.string() + ": empty word list");
  return words;
}

inline ReferenceVocab load_reference_vocab(const std::filesystem::path& path) {
  ReferenceVocab ref;
  for (const auto& line : load_wordlist(path)) {
    for (auto& tok : fold_tokens(line)) ref.tokens.insert(std::move(tok));
  }
  return ref;
}

/// `dataset TAB group` lines.
inline std::map<std::string, std::string> load_grouping(const std::filesystem::path& path) {
  std::map<std::string, std::string> groups;
  const auto lines = detail::read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto fields = detail::split(lines[i], '\t');
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty()) {
      throw detail::line_error(path, i + 1, "expected dataset<TAB>group");
    }
    groups[std::string(fields[0])] = std::string(fields[1]);
  }
  return groups;
}

/// Everything a CLI run can be configured with; serializable as key=value
/// lines.
struct RunConfig {
  TrainConfig train;
  std::vector<std::uint32_t> orders{2, 3, 4};
  VocabPolicy policy = MinCount{1};
  std::string pairs;
  std::string vocab;
  std::string out;
  std::string eval_pairs;
  std::string curve;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename T>
T parse_config_number(std::string_view key, std::string_view value) {
  T v{};
  if (!parse_number(value, v)) throw UsageError("bad value '" + std::string(value) + "' for " + std::string(key));
  return v;
}

inline bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw UsageError("bad value '" + std::string(value) + "' for " + std::string(key) + " (expected true|false)");
}

}  // namespace detail

/// Sets one configuration key. Unknown keys are rejected.
inline void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  using detail::parse_config_number;
  auto& t = cfg.train;
  if (key == "margin") t.margin = parse_config_number<double>(key, value);
  else if (key == "lambda") t.lambda = parse_config_number<double>(key, value);
  else if (key == "learning_rate") t.learning_rate = parse_config_number<double>(key, value);
  else if (key == "batch_size") t.batch_size = parse_config_number<std::size_t>(key, value);
  else if (key == "sampling") t.sampling = parse_sampling(value);
  else if (key == "pool") t.pool = parse_pool(value);
  else if (key == "epochs") t.epochs = parse_config_number<std::size_t>(key, value);
  else if (key == "seed") t.seed = parse_config_number<std::uint64_t>(key, value);
  else if (key == "curriculum") t.curriculum = detail::parse_bool(key, value);
  else if (key == "adam_beta1") t.adam_beta1 = parse_config_number<double>(key, value);
  else if (key == "adam_beta2") t.adam_beta2 = parse_config_number<double>(key, value);
  else if (key == "adam_epsilon") t.adam_epsilon = parse_config_number<double>(key, value);
  else if (key == "eval_every") t.eval_every = parse_config_number<double>(key, value);
  else if (key == "dim") t.dim = parse_config_number<std::size_t>(key, value);
  else if (key == "activation") t.activation = parse_activation(value);
  else if (key == "case") t.case_mode = parse_case_mode(value);
  else if (key == "orders") cfg.orders = parse_orders(value);
  else if (key == "policy") cfg.policy = parse_vocab_policy(value);
  else if (key == "pairs") cfg.pairs = value;
  else if (key == "vocab") cfg.vocab = value;
  else if (key == "out") cfg.out = value;
  else if (key == "eval_pairs") cfg.eval_pairs = value;
  else if (key == "curve") cfg.curve = value;
  else throw UsageError("unknown config key '" + std::string(key) + "'");
}

/// Parses `key=value` lines; '#' starts a comment line.
inline void apply_config_text(RunConfig& cfg, std::string_view text, std::string_view source = "config") {
  std::size_t line_no = 0;
  for (auto line : detail::split(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string_view::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw UsageError(std::string(source) + ":" + std::to_string(line_no) + ": expected key=value");
    }
    auto trim = [](std::string_view s) {
      const auto b = s.find_first_not_of(" \t");
      if (b == std::string_view::npos) return std::string_view{};
      return s.substr(b, s.find_last_not_of(" \t") - b + 1);
    };
    try {
      set_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const UsageError& e) {
      throw UsageError(std::string(source) + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline std::string format_config(const RunConfig& cfg) {
  const auto& t = cfg.train;
  std::string orders;
  for (auto n : cfg.orders) orders += (orders.empty() ? "" : ",") + std::to_string(n);
  std::ostringstream out;
  out << "margin=" << detail::format_double(t.margin) << '\n'
      << "lambda=" << detail::format_double(t.lambda) << '\n'
      << "learning_rate=" << detail::format_double(t.learning_rate) << '\n'
      << "batch_size=" << t.batch_size << '\n'
      << "sampling=" << to_string(t.sampling) << '\n'
      << "pool=" << to_string(t.pool) << '\n'
      << "epochs=" << t.epochs << '\n'
      << "seed=" << t.seed << '\n'
      << "curriculum=" << (t.curriculum ? "true" : "false") << '\n'
      << "adam_beta1=" << detail::format_double(t.adam_beta1) << '\n'
      << "adam_beta2=" << detail::format_double(t.adam_beta2) << '\n'
      << "adam_epsilon=" << detail::format_double(t.adam_epsilon) << '\n'
      << "eval_every=" << detail::format_double(t.eval_every) << '\n'
      << "dim=" << t.dim << '\n'
      << "activation=" << to_string(t.activation) << '\n'
      << "case=" << to_string(t.case_mode) << '\n'
      << "orders=" << orders << '\n'
      << "policy=" << to_string(cfg.policy) << '\n'
      << "pairs=" << cfg.pairs << '\n'
      << "vocab=" << cfg.vocab << '\n'
      << "out=" << cfg.out << '\n'
      << "eval_pairs=" << cfg.eval_pairs << '\n'
      << "curve=" << cfg.curve << '\n';
  return out.str();
}

}  // namespace charagram
