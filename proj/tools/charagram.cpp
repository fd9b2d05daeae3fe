// charagram: build vocabularies, train, evaluate, and query character
// n-gram embedding models.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "charagram/analyzer.hpp"
#include "charagram/error.hpp"
#include "charagram/evaluator.hpp"
#include "charagram/io.hpp"
#include "charagram/model.hpp"
#include "charagram/ngram_vocab.hpp"
#include "charagram/trainer.hpp"

namespace fs = std::filesystem;
using namespace charagram;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("missing ") + what + " path");
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) throw DataError(std::string(what) + " '" + path + "' is not a readable file");
}

void require_dir(const std::string& path, const char* what) {
  std::error_code ec;
  if (!fs::is_directory(path, ec)) throw DataError(std::string(what) + " '" + path + "' is not a directory");
}

void require_output(const std::string& path) {
  if (path.empty()) throw UsageError("missing output path");
  const auto parent = fs::path(path).parent_path();
  std::error_code ec;
  if (!parent.empty() && !fs::is_directory(parent, ec)) {
    throw DataError("output directory '" + parent.string() + "' does not exist");
  }
}

std::pair<double, double> parse_scale(const std::string& s) {
  const auto colon = s.find(':');
  double lo = 0.0, hi = 0.0;
  if (colon == std::string::npos || !detail::parse_number(std::string_view(s).substr(0, colon), lo) ||
      !detail::parse_number(std::string_view(s).substr(colon + 1), hi) || !(lo < hi)) {
    throw UsageError("bad scale '" + s + "' (expected MIN:MAX)");
  }
  return {lo, hi};
}

std::vector<SimDataset> load_dataset_dir(const std::string& dir, std::pair<double, double> scale) {
  require_dir(dir, "dataset directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".tsv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no .tsv datasets in '" + dir + "'");
  std::vector<SimDataset> out;
  for (const auto& f : files) out.push_back(load_simset(f, scale.first, scale.second));
  return out;
}

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Flags that override config-file keys. Each is kept as text and applied
// through set_config_value after the config file.
struct Override {
  std::string key;
  std::optional<std::string> value;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Character n-gram embeddings: vocabulary, training, evaluation, and queries"};
  app.require_subcommand(1);

  // build-vocab
  auto* bv = app.add_subcommand("build-vocab", "Count character n-grams over a pairs file and write a vocabulary");
  std::string bv_input, bv_out, bv_orders = "2,3,4", bv_policy = "mincount:1", bv_case = "lower";
  bv->add_option("--input", bv_input, "Training pairs file (phrase1<TAB>phrase2)")->required();
  bv->add_option("--orders", bv_orders, "Comma-separated n-gram orders")->capture_default_str();
  bv->add_option("--policy", bv_policy, "mincount:C or topk:K")->capture_default_str();
  bv->add_option("--case", bv_case, "lower|preserve")->capture_default_str();
  bv->add_option("--out", bv_out, "Output vocabulary file")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train a model on paraphrase pairs");
  std::string tr_config, tr_batch_log;
  std::vector<Override> overrides = {
      {"pairs", {}},        {"vocab", {}},       {"dim", {}},        {"activation", {}},   {"margin", {}},
      {"lambda", {}},       {"learning_rate", {}}, {"batch_size", {}}, {"sampling", {}},   {"pool", {}},
      {"epochs", {}},       {"seed", {}},        {"eval_pairs", {}}, {"eval_every", {}},   {"curve", {}},
      {"case", {}},         {"out", {}}};
  auto ov = [&](const char* key) -> std::optional<std::string>& {
    for (auto& o : overrides) {
      if (o.key == key) return o.value;
    }
    throw std::logic_error(key);
  };
  bool tr_curriculum = false;
  tr->add_option("--config", tr_config, "key=value configuration file (flags override it)");
  tr->add_option("--pairs", ov("pairs"), "Training pairs file, descending confidence");
  tr->add_option("--vocab", ov("vocab"), "Vocabulary file from build-vocab");
  tr->add_option("--dim", ov("dim"), "Embedding dimension (default 300)");
  tr->add_option("--activation", ov("activation"), "tanh|linear (default tanh)");
  tr->add_option("--margin", ov("margin"), "Hinge margin (default 0.4)");
  tr->add_option("--lambda", ov("lambda"), "L2 coefficient (default 1e-6)");
  tr->add_option("--lr", ov("learning_rate"), "Adam learning rate (default 0.001)");
  tr->add_option("--batch", ov("batch_size"), "Mini-batch size (default 100)");
  tr->add_option("--sampling", ov("sampling"), "max|mix (default max)");
  tr->add_option("--pool", ov("pool"), "same-side|both-sides negative pool (default same-side)");
  tr->add_option("--epochs", ov("epochs"), "Number of epochs (default 1)");
  tr->add_option("--seed", ov("seed"), "Random seed (default 1)");
  tr->add_flag("--curriculum", tr_curriculum, "Keep file order for the first epoch");
  tr->add_option("--eval-pairs", ov("eval_pairs"), "Held-out pairs scored at every curve point");
  tr->add_option("--eval-every", ov("eval_every"), "Fraction of an epoch between curve points (default 1)");
  tr->add_option("--curve", ov("curve"), "Write the training curve TSV here");
  tr->add_option("--case", ov("case"), "lower|preserve (default lower)");
  tr->add_option("--out", ov("out"), "Output model file");
  tr->add_option("--batch-log", tr_batch_log, "Write epoch<TAB>batch<TAB>pair indices per batch");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a model");
  ev->require_subcommand(1);
  std::string ev_model, ev_case = "lower", ev_format = "text", ev_scale;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--model", ev_model, "Model file")->required();
    sub->add_option("--case", ev_case, "lower|preserve")->capture_default_str();
    sub->add_option("--format", ev_format, "text|tsv")->capture_default_str();
    sub->add_option("--scale", ev_scale, "Gold score range MIN:MAX");
  };
  auto* ev_word = ev->add_subcommand("word", "Spearman correlation on a word-similarity set");
  std::string ev_dataset;
  add_common(ev_word);
  ev_word->add_option("--dataset", ev_dataset, "text1<TAB>text2<TAB>gold file")->required();
  auto* ev_sts = ev->add_subcommand("sts", "Pearson correlation on sentence-similarity sets");
  std::string ev_datasets, ev_groups;
  add_common(ev_sts);
  ev_sts->add_option("--datasets", ev_datasets, "Directory of *.tsv similarity sets")->required();
  ev_sts->add_option("--groups", ev_groups, "dataset<TAB>group file");
  auto* ev_bins = ev->add_subcommand("bins", "Pearson correlation per unknown-word or length bin");
  std::string ev_by, ev_bin_spec;
  add_common(ev_bins);
  ev_bins->add_option("--datasets", ev_datasets, "Directory of *.tsv similarity sets")->required();
  ev_bins->add_option("--by", ev_by, "oov:REFERENCE_WORDS or length")->required();
  ev_bins->add_option("--bins", ev_bin_spec, "Comma-separated bin labels");

  // embed
  auto* em = app.add_subcommand("embed", "Print embeddings, one line per input");
  std::string em_model, em_case = "lower";
  bool em_stdin = false;
  std::vector<std::string> em_texts;
  em->add_option("--model", em_model, "Model file")->required();
  em->add_option("--case", em_case, "lower|preserve")->capture_default_str();
  em->add_flag("--stdin", em_stdin, "Read one text per line from stdin");
  em->add_option("texts", em_texts, "Texts to embed");

  // nn
  auto* nn = app.add_subcommand("nn", "Nearest words in a word list");
  std::string nn_model, nn_wordlist, nn_case = "lower";
  std::size_t nn_k = 10;
  std::vector<std::string> nn_queries;
  nn->add_option("--model", nn_model, "Model file")->required();
  nn->add_option("--wordlist", nn_wordlist, "One word per line")->required();
  nn->add_option("--k", nn_k, "Neighbors per query")->capture_default_str();
  nn->add_option("--case", nn_case, "lower|preserve")->capture_default_str();
  nn->add_option("queries", nn_queries, "Query texts")->required();

  // nn-ngram
  auto* ng = app.add_subcommand("nn-ngram", "Nearest n-grams by cosine between n-gram vectors");
  std::string ng_model;
  std::size_t ng_k = 10;
  std::vector<std::string> ng_queries;
  ng->add_option("--model", ng_model, "Model file")->required();
  ng->add_option("--k", ng_k, "Neighbors per query")->capture_default_str();
  ng->add_option("ngrams", ng_queries, "N-grams, with \\s for space")->required();

  // audit-grad
  auto* au = app.add_subcommand("audit-grad", "Check analytic gradients against central differences");
  std::string au_model, au_pairs, au_case = "lower", au_sampling = "max";
  std::size_t au_batch = 5;
  double au_margin = 0.4, au_lambda = 0.0, au_step = 1e-5;
  std::uint64_t au_seed = 1;
  au->add_option("--model", au_model, "Model file")->required();
  au->add_option("--pairs", au_pairs, "Pairs file; the first --batch pairs are audited")->required();
  au->add_option("--batch", au_batch, "Batch size")->capture_default_str();
  au->add_option("--margin", au_margin, "Hinge margin")->capture_default_str();
  au->add_option("--lambda", au_lambda, "L2 coefficient")->capture_default_str();
  au->add_option("--sampling", au_sampling, "max|mix")->capture_default_str();
  au->add_option("--seed", au_seed, "Seed for MIX sampling")->capture_default_str();
  au->add_option("--step", au_step, "Finite-difference step")->capture_default_str();
  au->add_option("--case", au_case, "lower|preserve")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    const auto start = std::chrono::steady_clock::now();

    if (*bv) {
      require_file(bv_input, "pairs file");
      require_output(bv_out);
      const CaseMode case_mode = parse_case_mode(bv_case);
      VocabCounter counter(parse_orders(bv_orders), case_mode);
      const auto policy = parse_vocab_policy(bv_policy);
      for (const auto& [a, b] : load_pairs(bv_input, case_mode).pairs) {
        counter.add(a);
        counter.add(b);
      }
      const auto vocab = counter.finish(policy, [](std::string_view w) { std::cerr << "warning: " << w << '\n'; });
      save_vocab(vocab, bv_out);
      std::cout << "ngrams\t" << vocab.size() << '\n';
      std::cerr << "build-vocab took " << elapsed_seconds(start) << " s\n";
      return 0;
    }

    if (*tr) {
      RunConfig cfg;
      if (!tr_config.empty()) {
        require_file(tr_config, "config file");
        apply_config_text(cfg, read_file(tr_config), tr_config);
      }
      for (const auto& o : overrides) {
        if (o.value) set_config_value(cfg, o.key, *o.value);
      }
      if (tr_curriculum) cfg.train.curriculum = true;
      cfg.train.validate();
      require_file(cfg.pairs, "pairs file");
      require_file(cfg.vocab, "vocabulary file");
      if (!cfg.eval_pairs.empty()) require_file(cfg.eval_pairs, "eval pairs file");
      require_output(cfg.out);
      if (!cfg.curve.empty() && cfg.curve != "-") require_output(cfg.curve);
      if (!tr_batch_log.empty()) require_output(tr_batch_log);
      std::cerr << "# effective configuration\n" << format_config(cfg);

      const auto dataset = load_pairs(cfg.pairs, cfg.train.case_mode);
      const auto vocab = load_vocab(cfg.vocab);

      TrainHooks hooks;
      std::optional<PairDataset> dev;
      if (!cfg.eval_pairs.empty()) dev = load_pairs(cfg.eval_pairs, cfg.train.case_mode);
      if (dev) {
        hooks.eval = [&](const Model& model) {
          // Mean cosine of true pairs and its gap over shifted (mismatched) pairs.
          const auto& pairs = dev->pairs;
          double pos = 0.0, neg = 0.0;
          for (std::size_t i = 0; i < pairs.size(); ++i) {
            const auto a = embed_text(pairs[i].first, model, vocab, cfg.train.case_mode);
            const auto b = embed_text(pairs[i].second, model, vocab, cfg.train.case_mode);
            const auto c = embed_text(pairs[(i + 1) % pairs.size()].second, model, vocab, cfg.train.case_mode);
            pos += cosine(a.values, b.values);
            neg += cosine(a.values, c.values);
          }
          const double n = static_cast<double>(pairs.size());
          return std::vector<std::pair<std::string, double>>{{"dev_pair_cosine", pos / n},
                                                             {"dev_cosine_gap", (pos - neg) / n}};
        };
      }
      std::ofstream batch_log;
      if (!tr_batch_log.empty()) {
        batch_log.open(tr_batch_log, std::ios::trunc);
        if (!batch_log) throw DataError("cannot write '" + tr_batch_log + "'");
        hooks.on_batch = [&](std::size_t epoch, std::size_t batch, std::span<const std::size_t> idx) {
          batch_log << epoch + 1 << '\t' << batch;
          for (auto i : idx) batch_log << '\t' << i;
          batch_log << '\n';
        };
      }

      const auto result = train(dataset, vocab, cfg.train, hooks);
      for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
        std::cout << "epoch\t" << e + 1 << "\tmean_batch_loss\t" << format_value(result.epoch_loss[e]) << '\n';
      }
      if (!cfg.curve.empty()) {
        std::string tsv = "examples_seen\tmetric\tvalue\n";
        for (const auto& p : result.curve.points) {
          tsv += std::to_string(p.examples_seen) + '\t' + p.metric + '\t' + format_value(p.value) + '\n';
        }
        if (cfg.curve == "-") {
          std::cout << tsv;
        } else {
          write_file_atomic(cfg.curve, tsv);
        }
      }
      save_model(result.model, vocab, cfg.out);
      std::cerr << "train took " << elapsed_seconds(start) << " s\n";
      return 0;
    }

    if (*ev) {
      require_file(ev_model, "model file");
      const CaseMode case_mode = parse_case_mode(ev_case);
      if (ev_format != "text" && ev_format != "tsv") throw UsageError("--format must be text or tsv");
      const bool tsv = ev_format == "tsv";
      const auto [model, vocab] = load_model(ev_model);

      if (*ev_word) {
        require_file(ev_dataset, "dataset");
        const auto scale = parse_scale(ev_scale.empty() ? "0:10" : ev_scale);
        const auto ds = load_simset(ev_dataset, scale.first, scale.second);
        const double rho = eval_word_sim(model, vocab, ds, case_mode);
        if (tsv) {
          std::cout << ds.name << "\tspearman\t" << format_value(rho) << '\n';
        } else {
          std::cout << ds.name << ": Spearman rho x 100 = " << format_value(100.0 * rho) << " (" << ds.items.size()
                    << " pairs)\n";
        }
      } else if (*ev_sts) {
        const auto scale = parse_scale(ev_scale.empty() ? "0:5" : ev_scale);
        const auto datasets = load_dataset_dir(ev_datasets, scale);
        std::map<std::string, std::string> grouping;
        if (!ev_groups.empty()) {
          require_file(ev_groups, "groups file");
          grouping = load_grouping(ev_groups);
        }
        const auto report = eval_sts(model, vocab, datasets, grouping, case_mode);
        for (const auto& [name, r] : report.per_dataset) {
          if (tsv) {
            std::cout << name << "\tpearson\t" << format_value(r) << '\n';
          } else {
            std::cout << name << ": Pearson r x 100 = " << format_value(100.0 * r) << '\n';
          }
        }
        for (const auto& [group, r] : report.group_averages) {
          if (tsv) {
            std::cout << group << "\tgroup_average\t" << format_value(r) << '\n';
          } else {
            std::cout << group << " average: " << format_value(100.0 * r) << '\n';
          }
        }
        if (tsv) {
          std::cout << "Average\taverage\t" << format_value(report.average) << '\n';
        } else {
          std::cout << "Average: " << format_value(100.0 * report.average) << '\n';
        }
      } else {
        const auto scale = parse_scale(ev_scale.empty() ? "0:5" : ev_scale);
        const auto datasets = load_dataset_dir(ev_datasets, scale);
        std::vector<SimItem> items;
        for (const auto& ds : datasets) items.insert(items.end(), ds.items.begin(), ds.items.end());
        Binning binning = ByMaxLength{};
        ReferenceVocab reference;
        std::string default_bins(kLengthBins);
        if (ev_by.starts_with("oov:")) {
          const std::string ref_path = ev_by.substr(4);
          require_file(ref_path, "reference vocabulary");
          reference = load_reference_vocab(ref_path);
          binning = ByOov{&reference};
          default_bins = kOovBins;
        } else if (ev_by != "length") {
          throw UsageError("--by must be oov:FILE or length");
        }
        const auto bins = parse_bins(ev_bin_spec.empty() ? default_bins : ev_bin_spec);
        for (const auto& b : binned_eval(model, vocab, items, binning, bins, case_mode)) {
          const std::string r = b.correlation ? format_value(tsv ? *b.correlation : 100.0 * *b.correlation) : "NA";
          if (tsv) {
            std::cout << "bin:" << b.label << "\tn\t" << b.n << '\n' << "bin:" << b.label << "\tpearson\t" << r << '\n';
          } else {
            std::cout << b.label << "\tN=" << b.n << "\tr x 100 = " << r << '\n';
          }
        }
      }
      return 0;
    }

    if (*em) {
      require_file(em_model, "model file");
      const CaseMode case_mode = parse_case_mode(em_case);
      const auto [model, vocab] = load_model(em_model);
      auto emit = [&](const std::string& text) {
        const auto e = embed_text(text, model, vocab, case_mode);
        std::string line;
        char buf[32];
        for (std::size_t k = 0; k < e.values.size(); ++k) {
          std::snprintf(buf, sizeof buf, "%.9g", e.values[k]);
          if (k) line += '\t';
          line += buf;
        }
        std::cout << line << '\n';
      };
      if (em_stdin) {
        for (std::string line; std::getline(std::cin, line);) emit(line);
      }
      for (const auto& t : em_texts) emit(t);
      if (!em_stdin && em_texts.empty()) throw UsageError("embed: give texts or --stdin");
      return 0;
    }

    if (*nn) {
      require_file(nn_model, "model file");
      require_file(nn_wordlist, "word list");
      const CaseMode case_mode = parse_case_mode(nn_case);
      const auto [model, vocab] = load_model(nn_model);
      const auto wv = build_working_vocab(load_wordlist(nn_wordlist), model, vocab, case_mode);
      for (const auto& q : nn_queries) {
        const auto hits = nearest_neighbors(q, wv, model, vocab, nn_k);
        for (std::size_t i = 0; i < hits.size(); ++i) {
          std::cout << q << '\t' << i + 1 << '\t' << hits[i].item << '\t' << format_value(hits[i].cosine) << '\n';
        }
      }
      return 0;
    }

    if (*ng) {
      require_file(ng_model, "model file");
      const auto [model, vocab] = load_model(ng_model);
      for (const auto& q : ng_queries) {
        const auto gram = unescape_ngram(q);
        if (!gram) throw UsageError("bad n-gram escape in '" + q + "'");
        const auto hits = ngram_neighbors(*gram, model, vocab, ng_k);
        for (std::size_t i = 0; i < hits.size(); ++i) {
          std::cout << q << '\t' << i + 1 << '\t' << escape_ngram(utf8::decode(hits[i].item)) << '\t'
                    << format_value(hits[i].cosine) << '\n';
        }
      }
      return 0;
    }

    if (*au) {
      require_file(au_model, "model file");
      require_file(au_pairs, "pairs file");
      TrainConfig cfg;
      cfg.margin = au_margin;
      cfg.lambda = au_lambda;
      cfg.sampling = parse_sampling(au_sampling);
      cfg.seed = au_seed;
      cfg.case_mode = parse_case_mode(au_case);
      cfg.batch_size = au_batch;
      if (au_batch < 2) throw UsageError("--batch must be >= 2");
      const auto [model, vocab] = load_model(au_model);
      auto pairs = load_pairs(au_pairs, cfg.case_mode).pairs;
      if (pairs.size() < au_batch) throw DataError("pairs file has fewer than --batch pairs");
      pairs.resize(au_batch);
      const auto audit = finite_diff_audit(model, vocab, pairs, cfg, au_step);
      std::printf("max_relative_error\t%.3e\nparameters_checked\t%zu\n", audit.max_relative_error,
                  audit.parameters_checked);
      std::cerr << "audit-grad took " << elapsed_seconds(start) << " s\n";
      if (!std::isfinite(audit.max_relative_error)) throw NumericalError("non-finite gradient error");
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return 0;
}
