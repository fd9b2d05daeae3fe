#pragma once

// Margin-based contrastive training over paraphrase pairs: in-batch
// negative selection (MAX / MIX), per-batch hinge objective with lazy L2,
// and sparse Adam updates.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "charagram/error.hpp"
#include "charagram/model.hpp"
#include "charagram/ngram_vocab.hpp"
#include "charagram/random.hpp"

namespace charagram {

enum class Sampling { max, mix };
enum class NegativePool { same_side, both_sides };

inline std::string_view to_string(Sampling s) { return s == Sampling::max ? "max" : "mix"; }
inline std::string_view to_string(NegativePool p) {
  return p == NegativePool::same_side ? "same-side" : "both-sides";
}

inline Sampling parse_sampling(std::string_view s) {
  if (s == "max" || s == "MAX") return Sampling::max;
  if (s == "mix" || s == "MIX") return Sampling::mix;
  throw UsageError("unknown sampling '" + std::string(s) + "' (expected max|mix)");
}

inline NegativePool parse_pool(std::string_view s) {
  if (s == "same-side") return NegativePool::same_side;
  if (s == "both-sides") return NegativePool::both_sides;
  throw UsageError("unknown negative pool '" + std::string(s) + "' (expected same-side|both-sides)");
}

struct TrainConfig {
  double margin = 0.4;
  double lambda = 1e-6;
  double learning_rate = 0.001;
  std::size_t batch_size = 100;
  Sampling sampling = Sampling::max;
  NegativePool pool = NegativePool::same_side;
  std::size_t epochs = 1;
  std::uint64_t seed = 1;
  /// First epoch in dataset order, later epochs shuffled.
  bool curriculum = false;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  /// Fraction of an epoch between training-curve points.
  double eval_every = 1.0;
  std::size_t dim = 300;
  Activation activation = Activation::tanh;
  CaseMode case_mode = CaseMode::lowercase;

  void validate() const {
    if (!(margin > 0.0)) throw UsageError("margin must be > 0");
    if (!(lambda >= 0.0)) throw UsageError("lambda must be >= 0");
    if (!(learning_rate > 0.0)) throw UsageError("learning rate must be > 0");
    if (batch_size < 2) throw UsageError("batch size must be >= 2");
    if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0)) throw UsageError("adam beta1 must be in (0, 1)");
    if (!(adam_beta2 > 0.0 && adam_beta2 < 1.0)) throw UsageError("adam beta2 must be in (0, 1)");
    if (!(adam_epsilon > 0.0)) throw UsageError("adam epsilon must be > 0");
    if (!(eval_every > 0.0)) throw UsageError("eval_every must be > 0");
    if (dim == 0) throw UsageError("dimension must be positive");
    // ReLU was never used for the similarity objective.
    if (activation == Activation::relu) throw UsageError("relu activation is not supported for similarity training");
  }
};

using RawPair = std::pair<std::string, std::string>;

/// Paraphrase pairs in descending-confidence (file) order.
struct PairDataset {
  std::vector<RawPair> pairs;
};

/// A batch phrase addressed by (pair index, side 0/1).
struct PhraseRef {
  std::uint32_t pair = 0;
  std::uint8_t side = 0;

  friend bool operator==(const PhraseRef&, const PhraseRef&) = default;
};

struct NegativeChoice {
  std::optional<PhraseRef> t1;
  std::optional<PhraseRef> t2;

  friend bool operator==(const NegativeChoice&, const NegativeChoice&) = default;
};

/// Interned ids of the normalized phrase strings; used to keep a phrase
/// equal to either side of the current pair out of its negative pool.
using PhraseIds = std::array<std::uint32_t, 2>;

/// Picks t1 (compared against side 0 of each pair) and t2 (against side 1)
/// from the other pairs in the batch. MAX takes the most cosine-similar
/// candidate, lowest candidate index on ties; MIX flips a fair coin per pair
/// per side between MAX and a uniform draw. With `ids`, candidates whose
/// phrase equals either phrase of the current pair are skipped; a side with
/// no eligible candidate gets no negative.
inline std::vector<NegativeChoice> select_negatives(std::span<const Embedding> side1,
                                                    std::span<const Embedding> side2, Sampling mode,
                                                    Rng& rng, NegativePool pool = NegativePool::same_side,
                                                    std::span<const PhraseIds> ids = {}) {
  const std::size_t n = side1.size();
  if (side2.size() != n) throw UsageError("select_negatives: sides differ in length");
  if (!ids.empty() && ids.size() != n) throw UsageError("select_negatives: ids differ in length");
  if (n < 2) throw UsageError("cannot sample negatives from a batch of size " + std::to_string(n));

  const std::array<std::span<const Embedding>, 2> sides{side1, side2};
  std::vector<PhraseRef> eligible;
  std::vector<NegativeChoice> out(n);

  for (std::size_t i = 0; i < n; ++i) {
    for (std::uint8_t s = 0; s < 2; ++s) {
      eligible.clear();
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        for (std::uint8_t cs = 0; cs < 2; ++cs) {
          if (pool == NegativePool::same_side && cs != s) continue;
          if (!ids.empty() && (ids[j][cs] == ids[i][0] || ids[j][cs] == ids[i][1])) continue;
          eligible.push_back({static_cast<std::uint32_t>(j), cs});
        }
      }
      std::optional<PhraseRef> pick;
      if (!eligible.empty()) {
        const bool use_max = mode == Sampling::max || uniform_unit(rng) < 0.5;
        if (use_max) {
          const auto& anchor = sides[s][i].values;
          double best = -std::numeric_limits<double>::infinity();
          for (const auto& c : eligible) {
            const double cs = cosine(anchor, sides[c.side][c.pair].values);
            if (cs > best) best = cs, pick = c;
          }
        } else {
          pick = eligible[uniform_index(rng, eligible.size())];
        }
      }
      (s == 0 ? out[i].t1 : out[i].t2) = pick;
    }
  }
  return out;
}

inline double hinge(double x) { return x > 0.0 ? x : 0.0; }

/// Sum of the two hinge terms for one pair (no regularizer).
inline double pair_loss(std::span<const double> x1, std::span<const double> x2, std::span<const double> t1,
                        std::span<const double> t2, double margin) {
  const double c12 = cosine(x1, x2);
  return hinge(margin - c12 + cosine(x1, t1)) + hinge(margin - c12 + cosine(x2, t2));
}

struct EncodedPair {
  std::array<CountVector, 2> cv;
  PhraseIds ids{};
};

/// Assigns a stable id to each distinct normalized phrase.
class PhraseInterner {
 public:
  std::uint32_t intern(const CharSeq& seq) {
    return ids_.try_emplace(seq.chars(), static_cast<std::uint32_t>(ids_.size())).first->second;
  }

 private:
  std::unordered_map<std::u32string, std::uint32_t> ids_;
};

inline std::vector<EncodedPair> encode_pairs(std::span<const RawPair> pairs, const NGramVocab& vocab,
                                             CaseMode case_mode, PhraseInterner& interner) {
  std::vector<EncodedPair> out;
  out.reserve(pairs.size());
  for (const auto& [a, b] : pairs) {
    EncodedPair ep;
    const CharSeq sa = normalize(a, case_mode);
    const CharSeq sb = normalize(b, case_mode);
    ep.cv = {encode(sa, vocab), encode(sb, vocab)};
    ep.ids = {interner.intern(sa), interner.intern(sb)};
    out.push_back(std::move(ep));
  }
  return out;
}

struct BatchEmbeddings {
  std::vector<Embedding> side1;
  std::vector<Embedding> side2;

  const Embedding& at(PhraseRef r) const { return r.side == 0 ? side1[r.pair] : side2[r.pair]; }
};

inline BatchEmbeddings embed_batch(std::span<const EncodedPair> batch, const Model& model) {
  BatchEmbeddings e;
  e.side1.reserve(batch.size());
  e.side2.reserve(batch.size());
  for (const auto& p : batch) {
    e.side1.push_back(embed(p.cv[0], model));
    e.side2.push_back(embed(p.cv[1], model));
  }
  return e;
}

inline std::vector<PhraseIds> batch_ids(std::span<const EncodedPair> batch) {
  std::vector<PhraseIds> ids;
  ids.reserve(batch.size());
  for (const auto& p : batch) ids.push_back(p.ids);
  return ids;
}

/// W rows that occur in any count vector of the batch, ascending.
inline std::vector<std::uint32_t> touched_rows(std::span<const EncodedPair> batch) {
  std::vector<std::uint32_t> rows;
  for (const auto& p : batch) {
    for (const auto& cv : p.cv) {
      for (const auto& t : cv.terms) rows.push_back(t.index);
    }
  }
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  return rows;
}

struct BatchObjective {
  /// Mean over pairs of the two hinge terms.
  double hinge_loss = 0.0;
  /// lambda * (|b|^2 + sum of |W_r|^2 over touched rows).
  double regularizer = 0.0;
  double total() const { return hinge_loss + regularizer; }
};

/// Batch objective with the negatives held fixed.
inline BatchObjective batch_objective(std::span<const EncodedPair> batch, const Model& model,
                                      const TrainConfig& config, std::span<const NegativeChoice> negatives,
                                      const BatchEmbeddings& emb) {
  BatchObjective obj;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& x1 = emb.side1[i].values;
    const auto& x2 = emb.side2[i].values;
    const double c12 = cosine(x1, x2);
    if (negatives[i].t1) obj.hinge_loss += hinge(config.margin - c12 + cosine(x1, emb.at(*negatives[i].t1).values));
    if (negatives[i].t2) obj.hinge_loss += hinge(config.margin - c12 + cosine(x2, emb.at(*negatives[i].t2).values));
  }
  obj.hinge_loss /= static_cast<double>(batch.size());
  if (config.lambda > 0.0) {
    double sq = dot(model.bias, model.bias);
    for (auto r : touched_rows(batch)) sq += dot(model.row(r), model.row(r));
    obj.regularizer = config.lambda * sq;
  }
  return obj;
}

inline BatchObjective batch_objective(std::span<const EncodedPair> batch, const Model& model,
                                      const TrainConfig& config, std::span<const NegativeChoice> negatives) {
  return batch_objective(batch, model, config, negatives, embed_batch(batch, model));
}

/// Analytic gradient of batch_objective with respect to b and the touched W
/// rows. Every touched row appears in the result, even with a zero gradient.
inline SparseGradient batch_gradient(std::span<const EncodedPair> batch, const Model& model,
                                     const TrainConfig& config, std::span<const NegativeChoice> negatives,
                                     const BatchEmbeddings& emb) {
  const std::size_t n = batch.size();
  const std::size_t d = model.dim;
  const double scale = 1.0 / static_cast<double>(n);
  // dObjective/dEmbedding for every phrase, indexed [pair][side].
  std::vector<std::array<std::vector<double>, 2>> upstream(n);
  for (auto& u : upstream) u = {std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};

  for (std::size_t i = 0; i < n; ++i) {
    const auto& x1 = emb.side1[i].values;
    const auto& x2 = emb.side2[i].values;
    const double c12 = cosine(x1, x2);
    const std::array<std::optional<PhraseRef>, 2> negs{negatives[i].t1, negatives[i].t2};
    for (std::uint8_t s = 0; s < 2; ++s) {
      if (!negs[s]) continue;
      const auto& anchor = s == 0 ? x1 : x2;
      const auto& neg = emb.at(*negs[s]).values;
      if (config.margin - c12 + cosine(anchor, neg) <= 0.0) continue;
      accumulate_cosine_gradient(x1, x2, -scale, upstream[i][0]);
      accumulate_cosine_gradient(x2, x1, -scale, upstream[i][1]);
      accumulate_cosine_gradient(anchor, neg, scale, upstream[i][s]);
      accumulate_cosine_gradient(neg, anchor, scale, upstream[negs[s]->pair][negs[s]->side]);
    }
  }

  SparseGradient grad(d);
  for (auto r : touched_rows(batch)) grad.row(r);
  for (std::size_t i = 0; i < n; ++i) {
    accumulate_embed_gradient(batch[i].cv[0], model, emb.side1[i].pre_activation, upstream[i][0], grad);
    accumulate_embed_gradient(batch[i].cv[1], model, emb.side2[i].pre_activation, upstream[i][1], grad);
  }
  if (config.lambda > 0.0) {
    const double two_lambda = 2.0 * config.lambda;
    for (std::size_t k = 0; k < d; ++k) grad.bias[k] += two_lambda * model.bias[k];
    for (auto& [r, g] : grad.rows) {
      const auto w = model.row(r);
      for (std::size_t k = 0; k < d; ++k) g[k] += two_lambda * w[k];
    }
  }
  return grad;
}

/// Adam moments, created lazily for parameters the first time they are
/// updated.
struct AdamState {
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  std::uint64_t step = 0;
  Moments bias;
  std::unordered_map<std::uint32_t, Moments> rows;
};

namespace detail {

inline void adam_apply(std::span<double> param, std::span<const double> grad, AdamState::Moments& mom,
                       const TrainConfig& config, double bc1, double bc2) {
  if (mom.m.empty()) {
    mom.m.assign(param.size(), 0.0);
    mom.v.assign(param.size(), 0.0);
  }
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  for (std::size_t k = 0; k < param.size(); ++k) {
    mom.m[k] = b1 * mom.m[k] + (1.0 - b1) * grad[k];
    mom.v[k] = b2 * mom.v[k] + (1.0 - b2) * grad[k] * grad[k];
    const double m_hat = mom.m[k] / bc1;
    const double v_hat = mom.v[k] / bc2;
    param[k] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_epsilon);
  }
}

}  // namespace detail

/// One bias-corrected Adam step on b and the rows present in `grad`.
inline void adam_update(Model& model, AdamState& adam, const SparseGradient& grad, const TrainConfig& config) {
  ++adam.step;
  const double t = static_cast<double>(adam.step);
  const double bc1 = 1.0 - std::pow(config.adam_beta1, t);
  const double bc2 = 1.0 - std::pow(config.adam_beta2, t);
  detail::adam_apply(model.bias, grad.bias, adam.bias, config, bc1, bc2);
  for (const auto& [r, g] : grad.rows) detail::adam_apply(model.row(r), g, adam.rows[r], config, bc1, bc2);
}

struct BatchStepResult {
  BatchObjective objective;
  std::vector<NegativeChoice> negatives;
};

/// Embeds the batch, selects negatives, and applies one Adam update of the
/// batch objective. `batch_index` only labels the NaN-guard diagnostic.
inline BatchStepResult batch_step(std::span<const EncodedPair> batch, Model& model, const TrainConfig& config,
                                  AdamState& adam, Rng& rng, std::size_t batch_index = 0) {
  const BatchEmbeddings emb = embed_batch(batch, model);
  const auto ids = batch_ids(batch);
  BatchStepResult result;
  result.negatives = select_negatives(emb.side1, emb.side2, config.sampling, rng, config.pool, ids);
  result.objective = batch_objective(batch, model, config, result.negatives, emb);
  const SparseGradient grad = batch_gradient(batch, model, config, result.negatives, emb);
  adam_update(model, adam, grad, config);

  auto finite = [](std::span<const double> xs) {
    return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
  };
  bool ok = finite(model.bias) && std::isfinite(result.objective.total());
  for (const auto& [r, g] : grad.rows) ok = ok && finite(model.row(r));
  if (!ok) throw NumericalError("non-finite parameter or loss after batch " + std::to_string(batch_index));
  return result;
}

/// Convenience overload over raw text pairs.
inline BatchStepResult batch_step(std::span<const RawPair> raw, Model& model, const NGramVocab& vocab,
                                  const TrainConfig& config, AdamState& adam, Rng& rng) {
  check_binding(model, vocab);
  PhraseInterner interner;
  const auto batch = encode_pairs(raw, vocab, config.case_mode, interner);
  return batch_step(batch, model, config, adam, rng);
}

/// W ~ U[-0.5/d, 0.5/d] row-major from the seed, b = 0.
inline Model init_model(const NGramVocab& vocab, const TrainConfig& config) {
  Model model(vocab.size(), config.dim, config.activation, vocab.fingerprint());
  Rng rng(derive_seed(config.seed, 0x494E4954ULL));
  const double half = 0.5 / static_cast<double>(config.dim);
  for (double& w : model.weights) w = (2.0 * uniform_unit(rng) - 1.0) * half;
  return model;
}

struct CurvePoint {
  std::uint64_t examples_seen = 0;
  std::string metric;
  double value = 0.0;
};

struct TrainingCurve {
  std::vector<CurvePoint> points;
};

struct TrainHooks {
  /// Called at every curve point; returns (metric name, value) pairs.
  std::function<std::vector<std::pair<std::string, double>>(const Model&)> eval;
  /// Called before each batch with the dataset indices it contains.
  std::function<void(std::size_t epoch, std::size_t batch, std::span<const std::size_t> pair_indices)> on_batch;
};

struct TrainResult {
  Model model;
  AdamState adam;
  TrainingCurve curve;
  /// Mean batch hinge loss per epoch.
  std::vector<double> epoch_loss;
};

inline void validate_dataset(const PairDataset& dataset, CaseMode case_mode) {
  if (dataset.pairs.empty()) throw DataError("empty dataset");
  for (std::size_t i = 0; i < dataset.pairs.size(); ++i) {
    const auto& [a, b] = dataset.pairs[i];
    if (normalize(a, case_mode).size() <= 2 || normalize(b, case_mode).size() <= 2) {
      throw DataError("pair " + std::to_string(i + 1) + " has an empty side");
    }
  }
}

inline TrainResult train(const PairDataset& dataset, const NGramVocab& vocab, const TrainConfig& config,
                         const TrainHooks& hooks = {}) {
  config.validate();
  validate_dataset(dataset, config.case_mode);
  if (vocab.empty()) throw DataError("empty vocabulary");

  TrainResult result{init_model(vocab, config), {}, {}, {}};
  PhraseInterner interner;
  const auto encoded = encode_pairs(dataset.pairs, vocab, config.case_mode, interner);
  const std::size_t n = encoded.size();
  const std::size_t bs = config.batch_size;
  const std::size_t batches_per_epoch = n / bs + ((n % bs) >= 2 ? 1 : 0);
  const std::size_t eval_interval =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(config.eval_every * batches_per_epoch)));

  Rng sampling_rng(derive_seed(config.seed, 0x4E4547ULL));
  std::uint64_t seen = 0;
  std::size_t global_batch = 0;
  bool recorded_last = false;
  std::vector<EncodedPair> batch;
  batch.reserve(bs);

  auto record = [&] {
    if (!hooks.eval) return;
    for (auto& [name, value] : hooks.eval(result.model)) {
      result.curve.points.push_back({seen, std::move(name), value});
    }
  };

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order;
    if (config.curriculum && epoch == 0) {
      order.resize(n);
      std::iota(order.begin(), order.end(), std::size_t{0});
    } else {
      order = epoch_permutation(config.seed, epoch, n);
    }
    double loss_sum = 0.0;
    std::size_t loss_batches = 0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t len = std::min(bs, n - start);
      if (len < 2) break;
      const std::span<const std::size_t> idx(order.data() + start, len);
      if (hooks.on_batch) hooks.on_batch(epoch, loss_batches, idx);
      batch.clear();
      for (auto i : idx) batch.push_back(encoded[i]);
      const auto step = batch_step(batch, result.model, config, result.adam, sampling_rng, global_batch);
      loss_sum += step.objective.hinge_loss;
      ++loss_batches;
      ++global_batch;
      seen += len;
      recorded_last = false;
      if (global_batch % eval_interval == 0) {
        record();
        recorded_last = true;
      }
    }
    result.epoch_loss.push_back(loss_batches ? loss_sum / static_cast<double>(loss_batches) : 0.0);
  }
  if (!recorded_last && global_batch > 0) record();
  return result;
}

struct AuditResult {
  double max_relative_error = 0.0;
  std::size_t parameters_checked = 0;
  /// Largest |analytic - numeric| over checked parameters.
  double max_absolute_error = 0.0;
};

/// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps
/// parameters whose true gradient is zero from dividing rounding noise by
/// zero.
inline constexpr double kAuditFloor = 1e-4;

/// Compares batch_gradient against central differences of batch_objective
/// (negatives frozen) for b and every touched W row.
inline AuditResult finite_diff_audit(const Model& model, const NGramVocab& vocab, std::span<const RawPair> sample,
                                     const TrainConfig& config, double step = 1e-5) {
  check_binding(model, vocab);
  PhraseInterner interner;
  const auto batch = encode_pairs(sample, vocab, config.case_mode, interner);
  const auto ids = batch_ids(batch);
  const BatchEmbeddings emb = embed_batch(batch, model);
  Rng rng(derive_seed(config.seed, 0x4155444954ULL));
  const auto negatives = select_negatives(emb.side1, emb.side2, config.sampling, rng, config.pool, ids);
  const SparseGradient grad = batch_gradient(batch, model, config, negatives, emb);

  Model probe = model;
  AuditResult result;
  auto check = [&](double& param, double analytic) {
    const double saved = param;
    param = saved + step;
    const double up = batch_objective(batch, probe, config, negatives).total();
    param = saved - step;
    const double down = batch_objective(batch, probe, config, negatives).total();
    param = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double abs_err = std::abs(analytic - numeric);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), kAuditFloor});
    result.max_relative_error = std::max(result.max_relative_error, abs_err / denom);
    result.max_absolute_error = std::max(result.max_absolute_error, abs_err);
    ++result.parameters_checked;
  };
  for (std::size_t k = 0; k < model.dim; ++k) check(probe.bias[k], grad.bias[k]);
  for (const auto& [r, g] : grad.rows) {
    auto row = probe.row(r);
    for (std::size_t k = 0; k < model.dim; ++k) check(row[k], g[k]);
  }
  return result;
}

}  // namespace charagram
