#pragma once

// The embedding function: h(b + sum_v count_v * W[v]), cosine similarity,
// and the analytic gradient of an embedding with respect to (W, b).

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "charagram/error.hpp"
#include "charagram/ngram_vocab.hpp"

namespace charagram {

enum class Activation : std::uint8_t { linear = 0, tanh = 1, relu = 2 };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
  }
  return "?";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "linear") return Activation::linear;
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw UsageError("unknown activation '" + std::string(s) + "' (expected linear|tanh|relu)");
}

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::linear: return x;
    case Activation::tanh: return std::tanh(x);
    case Activation::relu: return x > 0.0 ? x : 0.0;
  }
  return x;
}

/// h'(pre) expressed through the pre-activation value.
inline double activate_derivative(Activation a, double pre) {
  switch (a) {
    case Activation::linear: return 1.0;
    case Activation::tanh: {
      const double t = std::tanh(pre);
      return 1.0 - t * t;
    }
    case Activation::relu: return pre > 0.0 ? 1.0 : 0.0;
  }
  return 1.0;
}

/// Model parameters. W is stored row-major, one row of `dim` values per
/// vocabulary entry.
struct Model {
  std::size_t dim = 0;
  Activation activation = Activation::tanh;
  std::vector<double> bias;
  std::vector<double> weights;
  std::uint64_t vocab_fingerprint = 0;

  Model() = default;
  Model(std::size_t rows, std::size_t d, Activation act, std::uint64_t fingerprint)
      : dim(d), activation(act), bias(d, 0.0), weights(rows * d, 0.0), vocab_fingerprint(fingerprint) {
    if (d == 0) throw UsageError("embedding dimension must be positive");
  }

  std::size_t rows() const { return dim == 0 ? 0 : weights.size() / dim; }
  std::span<double> row(std::size_t r) { return {weights.data() + r * dim, dim}; }
  std::span<const double> row(std::size_t r) const { return {weights.data() + r * dim, dim}; }

  bool all_finite() const {
    for (double x : bias) if (!std::isfinite(x)) return false;
    for (double x : weights) if (!std::isfinite(x)) return false;
    return true;
  }

  friend bool operator==(const Model&, const Model&) = default;
};

/// Throws when the model was not trained against this vocabulary.
inline void check_binding(const Model& model, const NGramVocab& vocab) {
  if (model.vocab_fingerprint != vocab.fingerprint() || model.rows() != vocab.size()) {
    throw DataError("vocab/model mismatch (fingerprint or row count differs)");
  }
}

struct Embedding {
  std::vector<double> values;
  /// b + sum of rows, kept so the trainer can backpropagate without
  /// recomputing it.
  std::vector<double> pre_activation;
  std::uint64_t used_ngrams = 0;
  bool oov_fallback = false;
};

inline Embedding embed(const CountVector& cv, const Model& model) {
  Embedding e;
  e.pre_activation = model.bias;
  const std::size_t rows = model.rows();
  for (const auto& term : cv.terms) {
    if (term.index >= rows) throw DataError("vocab/model mismatch (n-gram index out of range)");
    const auto w = model.row(term.index);
    const double c = term.count;
    for (std::size_t k = 0; k < model.dim; ++k) e.pre_activation[k] += c * w[k];
    e.used_ngrams += term.count;
  }
  e.oov_fallback = e.used_ngrams == 0;
  e.values.resize(model.dim);
  for (std::size_t k = 0; k < model.dim; ++k) e.values[k] = activate(model.activation, e.pre_activation[k]);
  return e;
}

inline Embedding embed_text(std::string_view text, const Model& model, const NGramVocab& vocab,
                            CaseMode case_mode) {
  return embed(encode_text(text, vocab, case_mode), model);
}

inline constexpr double kMinNorm = 1e-12;

inline double dot(std::span<const double> u, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

/// Cosine similarity; 0 when either vector has norm below 1e-12.
inline double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw UsageError("cosine: dimension mismatch");
  const double nu = std::sqrt(dot(u, u));
  const double nv = std::sqrt(dot(v, v));
  if (nu < kMinNorm || nv < kMinNorm) return 0.0;
  return dot(u, v) / (nu * nv);
}

/// Adds d cos(u, v) / du, scaled by `scale`, into `grad_u`. Zero when the
/// cosine is clamped to 0 by the norm floor.
inline void accumulate_cosine_gradient(std::span<const double> u, std::span<const double> v, double scale,
                                       std::span<double> grad_u) {
  const double nu = std::sqrt(dot(u, u));
  const double nv = std::sqrt(dot(v, v));
  if (nu < kMinNorm || nv < kMinNorm) return;
  const double c = dot(u, v) / (nu * nv);
  const double inv = 1.0 / (nu * nv);
  const double self = c / (nu * nu);
  for (std::size_t k = 0; k < u.size(); ++k) grad_u[k] += scale * (v[k] * inv - u[k] * self);
}

/// Sparse gradient over (b, touched W rows). Rows are kept in ascending
/// index order so reductions are deterministic.
struct SparseGradient {
  std::vector<double> bias;
  std::map<std::uint32_t, std::vector<double>> rows;

  explicit SparseGradient(std::size_t dim = 0) : bias(dim, 0.0) {}

  std::vector<double>& row(std::uint32_t r) {
    auto it = rows.find(r);
    if (it == rows.end()) it = rows.emplace(r, std::vector<double>(bias.size(), 0.0)).first;
    return it->second;
  }
};

/// Backpropagates `upstream` (dLoss/dEmbedding) through the embedding of
/// `cv`, adding into `grad`.
inline void accumulate_embed_gradient(const CountVector& cv, const Model& model,
                                      std::span<const double> pre_activation,
                                      std::span<const double> upstream, SparseGradient& grad) {
  if (upstream.size() != model.dim || pre_activation.size() != model.dim) {
    throw UsageError("embed_gradient: upstream has wrong dimension");
  }
  std::vector<double> local(model.dim);
  for (std::size_t k = 0; k < model.dim; ++k) {
    local[k] = upstream[k] * activate_derivative(model.activation, pre_activation[k]);
    grad.bias[k] += local[k];
  }
  const std::size_t rows = model.rows();
  for (const auto& term : cv.terms) {
    if (term.index >= rows) throw DataError("vocab/model mismatch (n-gram index out of range)");
    auto& g = grad.row(term.index);
    const double c = term.count;
    for (std::size_t k = 0; k < model.dim; ++k) g[k] += c * local[k];
  }
}

inline SparseGradient embed_gradient(const CountVector& cv, const Model& model, std::span<const double> upstream) {
  const Embedding e = embed(cv, model);
  SparseGradient grad(model.dim);
  accumulate_embed_gradient(cv, model, e.pre_activation, upstream, grad);
  return grad;
}

}  // namespace charagram
