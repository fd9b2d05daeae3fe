#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "charagram/io.hpp"
#include "process.hpp"

namespace charagram {
namespace {

namespace fs = std::filesystem;
using testing::run_process;

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           (std::string("charagram_cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    pairs_ = write("pairs.tsv",
                   "cat\tcats\ndog\tdogs\nbird\tbirds\nfish\tfishes\nhorse\thorses\n"
                   "mouse\tmice\ngoose\tgeese\nox\toxen\nchild\tchildren\nfoot\tfeet\n");
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write(const std::string& name, const std::string& content) {
    const auto p = dir_ / name;
    std::ofstream(p, std::ios::binary) << content;
    return p.string();
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  testing::ProcessResult cli(std::vector<std::string> args, const std::string& input = {}) {
    args.insert(args.begin(), CHARAGRAM_CLI);
    return run_process(args, input);
  }

  std::string trained_model() {
    EXPECT_EQ(cli({"build-vocab", "--input", pairs_, "--orders", "2,3", "--out", path("vocab.tsv")}).exit_code, 0);
    const auto r = cli({"train", "--pairs", pairs_, "--vocab", path("vocab.tsv"), "--dim", "8", "--batch", "4",
                        "--epochs", "2", "--out", path("model.bin")});
    EXPECT_EQ(r.exit_code, 0) << r.err;
    return path("model.bin");
  }

  fs::path dir_;
  std::string pairs_;
};

TEST_F(Cli, BuildVocabWritesEntries) {
  const auto r = cli({"build-vocab", "--input", pairs_, "--orders", "2", "--policy", "topk:5", "--out",
                      path("v.tsv")});
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(r.out, "ngrams\t5\n");
  EXPECT_EQ(load_vocab(path("v.tsv")).size(), 5u);
}

TEST_F(Cli, TrainPrintsEpochLossesAndCurve) {
  cli({"build-vocab", "--input", pairs_, "--out", path("vocab.tsv")});
  const auto r = cli({"train", "--pairs", pairs_, "--vocab", path("vocab.tsv"), "--dim", "6", "--batch", "5",
                      "--epochs", "3", "--eval-pairs", pairs_, "--eval-every", "0.5", "--curve", path("c.tsv"),
                      "--out", path("m.bin")});
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(r.out.find("epoch\t3\tmean_batch_loss\t"), std::string::npos);
  EXPECT_NE(r.err.find("margin=0.4"), std::string::npos);
  const auto curve = testing::slurp(path("c.tsv"));
  EXPECT_EQ(curve.rfind("examples_seen\tmetric\tvalue\n", 0), 0u);
  EXPECT_NE(curve.find("dev_cosine_gap"), std::string::npos);
  EXPECT_EQ(load_model(path("m.bin")).model.dim, 6u);
}

TEST_F(Cli, ConfigFileAndFlagOverride) {
  cli({"build-vocab", "--input", pairs_, "--out", path("vocab.tsv")});
  const auto cfg = write("run.cfg", "dim=5\nepochs=1\nbatch_size=4\npairs=" + pairs_ + "\nvocab=" +
                                        path("vocab.tsv") + "\nout=" + path("m.bin") + "\n");
  const auto r = cli({"train", "--config", cfg, "--dim", "7"});
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(load_model(path("m.bin")).model.dim, 7u);
  EXPECT_EQ(cli({"train", "--config", write("bad.cfg", "dimension=3\n")}).exit_code, 1);
}

TEST_F(Cli, EmbedIsDeterministic) {
  const auto model = trained_model();
  const auto a = cli({"embed", "--model", model, "cat", "dog"});
  const auto b = cli({"embed", "--model", model, "--stdin"}, "cat\ndog\n");
  ASSERT_EQ(a.exit_code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  std::size_t lines = 0, tabs = 0;
  for (char c : a.out) lines += c == '\n', tabs += c == '\t';
  EXPECT_EQ(lines, 2u);
  EXPECT_EQ(tabs, 2u * 7u);
}

TEST_F(Cli, EvalCommands) {
  const auto model = trained_model();
  const auto word = write("ws.tsv", "cat\tcats\t9\ncat\tdog\t2\ndog\tdogs\t8.5\nfish\tgoose\t1\n");
  auto r = cli({"eval", "word", "--model", model, "--dataset", word, "--format", "tsv"});
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("ws\tspearman\t", 0), 0u);

  fs::create_directories(dir_ / "sts");
  write("sts/a.tsv", "the cat\ta cat\t4\nthe dog\tthe fish\t1\nmice\tmouse\t3.5\n");
  write("sts/b.tsv", "cats\tcat\t5\nox\tbirds\t0\nfeet\tfoot\t4\n");
  const auto groups = write("groups.tsv", "a\tyear1\nb\tyear1\n");
  r = cli({"eval", "sts", "--model", model, "--datasets", path("sts"), "--groups", groups, "--format", "tsv"});
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(r.out.find("year1\tgroup_average\t"), std::string::npos);
  EXPECT_NE(r.out.find("Average\taverage\t"), std::string::npos);

  const auto ref = write("ref.txt", "the\ncat\ndog\n");
  r = cli({"eval", "bins", "--model", model, "--datasets", path("sts"), "--by", "oov:" + ref, "--format", "tsv"});
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(r.out.find("bin:>=0\tn\t6"), std::string::npos) << r.out;

  r = cli({"eval", "word", "--model", model, "--dataset", write("bad.tsv", "a\tb\t11\n")});
  EXPECT_EQ(r.exit_code, 2);
}

TEST_F(Cli, NeighborCommands) {
  const auto model = trained_model();
  const auto words = write("words.txt", "cat\ncats\ndog\ndogs\nbird\n");
  auto r = cli({"nn", "--model", model, "--wordlist", words, "--k", "2", "cat"});
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("cat\t1\t", 0), 0u);
  EXPECT_EQ(r.out.find("\tcat\t"), std::string::npos);

  r = cli({"nn-ngram", "--model", model, "--k", "3", "\\sc"});
  ASSERT_EQ(r.exit_code, 0) << r.err;
  r = cli({"nn-ngram", "--model", model, "qqq"});
  EXPECT_EQ(r.exit_code, 2);
}

TEST_F(Cli, AuditGrad) {
  const auto model = trained_model();
  const auto r = cli({"audit-grad", "--model", model, "--pairs", pairs_, "--lambda", "1e-4"});
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("max_relative_error\t", 0), 0u);
  const double err = std::stod(r.out.substr(r.out.find('\t') + 1));
  EXPECT_LT(err, 1e-4);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(cli({"train", "--bogus"}).exit_code, 1);
  EXPECT_EQ(cli({"build-vocab", "--input", path("missing.tsv"), "--out", path("v.tsv")}).exit_code, 2);
  EXPECT_EQ(cli({"build-vocab", "--input", pairs_, "--policy", "top:3", "--out", path("v.tsv")}).exit_code, 1);
  EXPECT_EQ(cli({"embed", "--model", write("junk.bin", "not a model")}).exit_code, 2);
  cli({"build-vocab", "--input", pairs_, "--out", path("vocab.tsv")});
  EXPECT_EQ(cli({"train", "--pairs", pairs_, "--vocab", path("vocab.tsv"), "--activation", "relu", "--out",
                 path("m.bin")})
                .exit_code,
            1);
  // A huge learning rate with linear activation diverges.
  const auto r = cli({"train", "--pairs", pairs_, "--vocab", path("vocab.tsv"), "--activation", "linear", "--lr",
                      "1e300", "--epochs", "5", "--batch", "2", "--lambda", "1e300", "--out", path("m.bin")});
  EXPECT_EQ(r.exit_code, 3) << r.err;
}

}  // namespace
}  // namespace charagram
