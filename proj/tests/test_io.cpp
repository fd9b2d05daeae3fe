#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "charagram/io.hpp"
#include "charagram/random.hpp"

namespace charagram {
namespace {

namespace fs = std::filesystem;

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("charagram_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write(const std::string& name, const std::string& content) {
    const auto p = dir_ / name;
    std::ofstream(p, std::ios::binary) << content;
    return p;
  }

  fs::path dir_;
};

LoadedModel sample_model(std::uint64_t seed) {
  auto vocab = build_vocab(std::vector<std::string>{"naïve café", "ab cd", "Ωmega"}, {2, 3}, MinCount{1},
                           CaseMode::lowercase);
  Model m(vocab.size(), 5, Activation::tanh, vocab.fingerprint());
  Rng rng(seed);
  for (auto& w : m.weights) w = 2.0 * uniform_unit(rng) - 1.0;
  for (auto& b : m.bias) b = uniform_unit(rng);
  return {std::move(m), std::move(vocab)};
}

std::string get_error(const std::string& bytes) {
  try {
    parse_model(bytes);
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

using ModelFile = TempDir;

TEST_F(ModelFile, RoundTripIsExactAtSinglePrecision) {
  const auto [m, v] = sample_model(1);
  const auto path = dir_ / "m.bin";
  save_model(m, v, path);
  const auto loaded = load_model(path);
  EXPECT_EQ(loaded.model.dim, m.dim);
  EXPECT_EQ(loaded.model.activation, m.activation);
  EXPECT_EQ(loaded.model.vocab_fingerprint, v.fingerprint());
  ASSERT_EQ(loaded.vocab.size(), v.size());
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(loaded.vocab.entries()[i].ngram, v.entries()[i].ngram);
  for (std::size_t i = 0; i < m.weights.size(); ++i) {
    EXPECT_EQ(loaded.model.weights[i], static_cast<double>(static_cast<float>(m.weights[i])));
  }
  EXPECT_EQ(serialize_model(loaded.model, loaded.vocab), serialize_model(m, v));
}

TEST_F(ModelFile, HeaderLayout) {
  const auto [m, v] = sample_model(2);
  const auto bytes = serialize_model(m, v);
  EXPECT_EQ(bytes.substr(0, 4), "CHRG");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[8], 5);
  EXPECT_EQ(bytes[12], 1);
  EXPECT_EQ(bytes.substr(13, 3), std::string(3, '\0'));
}

TEST_F(ModelFile, UnwritablePathNamesThePath) {
  const auto [m, v] = sample_model(3);
  const auto path = dir_ / "missing" / "m.bin";
  try {
    save_model(m, v, path);
    FAIL() << "expected an error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(path.string()), std::string::npos);
  }
}

TEST_F(ModelFile, CorruptionIsReportedDistinctly) {
  const auto [m, v] = sample_model(4);
  auto bytes = serialize_model(m, v);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_EQ(get_error(bad_magic), "not a model file");
  EXPECT_EQ(get_error("CH"), "not a model file");

  const auto truncated = get_error(bytes.substr(0, bytes.size() - 7));
  EXPECT_NE(truncated.find("corrupt model file"), std::string::npos);
  EXPECT_NE(truncated.find(std::to_string(bytes.size())), std::string::npos) << truncated;

  auto version = bytes;
  version[4] = 2;
  EXPECT_EQ(get_error(version), "unsupported version 2");

  auto flipped = bytes;
  flipped[16] ^= 1;
  EXPECT_NE(get_error(flipped).find("fingerprint"), std::string::npos);

  EXPECT_NE(get_error(bytes + "x").find("trailing"), std::string::npos);
}

TEST_F(ModelFile, LoadMissingFile) { EXPECT_THROW(load_model(dir_ / "nope.bin"), DataError); }

using Loaders = TempDir;

TEST_F(Loaders, PairsKeepFileOrder) {
  const auto ds = load_pairs(write("p.tsv", "b\tc\na\td\n"));
  ASSERT_EQ(ds.pairs.size(), 2u);
  EXPECT_EQ(ds.pairs[0], (RawPair{"b", "c"}));
  EXPECT_EQ(ds.pairs[1], (RawPair{"a", "d"}));
}

TEST_F(Loaders, MalformedLinesCarryLineNumbers) {
  try {
    load_pairs(write("p.tsv", "a\tb\nonly-one\n"));
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("p.tsv:2:"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_pairs(write("e.tsv", "")), DataError);
  EXPECT_THROW(load_pairs(write("s.tsv", "a\t \n")), DataError);
  EXPECT_THROW(load_pairs(write("u.tsv", "a\t\xff\n")), DataError);
}

TEST_F(Loaders, SimilarityScale) {
  const auto ok = load_simset(write("sl.tsv", "a\tb\t4.5\nc\td\t0\n"), 0, 5);
  EXPECT_EQ(ok.name, "sl");
  EXPECT_EQ(ok.items[0].gold, 4.5);
  EXPECT_THROW(load_simset(write("bad.tsv", "a\tb\t5.5\n"), 0, 5), DataError);
  EXPECT_THROW(load_simset(write("nan.tsv", "a\tb\tx\n"), 0, 5), DataError);
}

TEST_F(Loaders, VocabFileRoundTrip) {
  const auto [m, v] = sample_model(5);
  const auto path = dir_ / "v.tsv";
  save_vocab(v, path);
  const auto loaded = load_vocab(path);
  EXPECT_EQ(loaded, v);
  EXPECT_EQ(loaded.fingerprint(), v.fingerprint());
  EXPECT_THROW(load_vocab(write("bad.tsv", "ab\t3\t1\n")), DataError);
}

TEST_F(Loaders, WordlistAndGrouping) {
  EXPECT_EQ(load_wordlist(write("w.txt", "cat\n\ndog\n")), (std::vector<std::string>{"cat", "dog"}));
  const auto g = load_grouping(write("g.tsv", "sts12\t2012\nsts13\t2013\n"));
  EXPECT_EQ(g.at("sts13"), "2013");
  const auto ref = load_reference_vocab(write("r.txt", "The Cat\ndog\n"));
  EXPECT_TRUE(ref.tokens.contains("the") && ref.tokens.contains("cat"));
}

TEST(RunConfigText, ParsesAndRoundTrips) {
  RunConfig cfg;
  apply_config_text(cfg, "# comment\nmargin = 0.6\nsampling=mix\norders=3,2\npolicy=topk:50\ncurriculum=true\n");
  EXPECT_EQ(cfg.train.margin, 0.6);
  EXPECT_EQ(cfg.train.sampling, Sampling::mix);
  EXPECT_EQ(cfg.orders, (std::vector<std::uint32_t>{2, 3}));
  EXPECT_TRUE(cfg.train.curriculum);
  RunConfig again;
  apply_config_text(again, format_config(cfg));
  EXPECT_EQ(format_config(again), format_config(cfg));
}

TEST(RunConfigText, RejectsUnknownKeysAndBadValues) {
  RunConfig cfg;
  EXPECT_THROW(apply_config_text(cfg, "marign=0.4\n"), UsageError);
  EXPECT_THROW(apply_config_text(cfg, "epochs=many\n"), UsageError);
  EXPECT_THROW(apply_config_text(cfg, "no equals sign\n"), UsageError);
  EXPECT_THROW(apply_config_text(cfg, "activation=sigmoid\n"), UsageError);
}

}  // namespace
}  // namespace charagram
