// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "ppa/cli.hpp"
#include "ppa/config.hpp"
#include "test_util.hpp"

namespace ppa {
namespace {

namespace fs = std::filesystem;

constexpr const char* kTinySettings = R"(data.n_pairs = 80
data.heldout_pairs = 16
data.vocab_words = 40
data.vocab_size = 128
data.min_words = 5
data.max_words = 8
data.task_train = 30
data.task_test = 12
data.qa_train = 12
data.qa_test = 6
train.encoder.vocab_size = 128
train.encoder.hidden = 16
train.encoder.ffn = 32
train.encoder.heads = 2
train.encoder.num_layers = 1
train.encoder.projection = 8
train.encoder.max_positions = 64
train.max_seq_len = 64
train.batch_size = 8
train.queue_size = 16
train.epochs = 2
train.warmup_mlm_steps = 4
train.warmup_mlm_batch = 8
finetune.batch_size = 8
finetune.max_seq_len = 64
finetune.epochs = 1
finetune.warmup_steps = 2
)";

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new test::TempDir("cli");
    config_ = root_->path() / "tiny.cfg";
    std::ofstream(config_) << kTinySettings;
    data_ = root_->path() / "data";
    const Result r = run({"gen-data", "--config", config_.string(), "--out", data_.string()});
    ASSERT_EQ(r.code, kExitOk) << r.err;
  }
  static void TearDownTestSuite() { delete root_; }

  fs::path dir(const std::string& name) const { return root_->path() / name; }

  static inline test::TempDir* root_ = nullptr;
  static inline fs::path config_;
  static inline fs::path data_;
};

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, kExitUsage);
  EXPECT_EQ(run({"no-such-command"}).code, kExitUsage);
  EXPECT_EQ(run({"gen-data"}).code, kExitUsage);
  EXPECT_EQ(run({"train-align", "--data", data_.string()}).code, kExitUsage);
  EXPECT_EQ(run({"train-align", "--data", dir("absent").string(), "--out", dir("x").string()}).code, kExitUsage);
  EXPECT_EQ(run({"eval", "--model", data_.string()}).code, kExitUsage);
  EXPECT_EQ(run({"gen-data", "--out", dir("g").string(), "--seed", "abc"}).code, kExitUsage);
  EXPECT_EQ(run({"--help"}).code, kExitOk);
}

TEST_F(Cli, PaperModeNeedsForce) {
  const Result r = run({"train-align", "--paper-mode", "--data", data_.string(), "--out", dir("paper").string()});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("--force"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir("paper") / kManifestFile));
}

TEST_F(Cli, RuntimeFailuresExitOne) {
  fs::create_directories(dir("empty"));
  const Result r = run({"train-align", "--config", config_.string(), "--data", dir("empty").string(), "--out",
                        dir("fail").string()});
  EXPECT_EQ(r.code, kExitFailure);
  EXPECT_NE(r.err.find("error"), std::string::npos);
  std::ofstream(dir("bad.cfg")) << "train.batch_size = many\n";
  EXPECT_EQ(run({"gen-data", "--config", dir("bad.cfg").string(), "--out", dir("g2").string()}).code, kExitFailure);
}

TEST_F(Cli, GenDataWritesEveryFileAndAManifest) {
  for (const char* name : {"corpus.parallel.tsv", "heldout.parallel.tsv", "vocab.txt", "relation.train.base.tsv",
                           "relation.test.cipher.tsv", "qa.train.base.tsv", "qa.test.cipher.tsv", kManifestFile}) {
    EXPECT_TRUE(fs::exists(data_ / name)) << name;
  }
  const KeyValues manifest = KeyValues::load(data_ / kManifestFile);
  EXPECT_EQ(manifest.get("data.n_pairs"), "80");
  // Same settings, same bytes.
  ASSERT_EQ(run({"gen-data", "--config", config_.string(), "--out", dir("again").string()}).code, kExitOk);
  EXPECT_EQ(slurp(data_ / "corpus.parallel.tsv"), slurp(dir("again") / "corpus.parallel.tsv"));
}

TEST_F(Cli, RerunFromManifestReproducesMetricsBitwise) {
  const fs::path first = dir("align1");
  ASSERT_EQ(run({"train-align", "--config", config_.string(), "--data", data_.string(), "--out", first.string(),
                 "--seed", "5"})
                .code,
            kExitOk);
  const fs::path second = dir("align2");
  const Result r = run({"train-align", "--config", (first / kManifestFile).string(), "--data", data_.string(),
                        "--out", second.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const std::string metrics = slurp(first / "metrics.csv");
  EXPECT_GT(std::count(metrics.begin(), metrics.end(), '\n'), 10);
  EXPECT_EQ(metrics, slurp(second / "metrics.csv"));
  EXPECT_EQ(slurp(first / "retrieval.csv"), slurp(second / "retrieval.csv"));
  EXPECT_EQ(slurp(first / "encoder" / "encoder.tensors"), slurp(second / "encoder" / "encoder.tensors"));
}

TEST_F(Cli, StopAndResumeMatchesUninterruptedRun) {
  const fs::path full = dir("full");
  ASSERT_EQ(run({"train-align", "--config", config_.string(), "--data", data_.string(), "--out", full.string()}).code,
            kExitOk);
  const fs::path part = dir("part");
  const Result stopped = run({"train-align", "--config", config_.string(), "--data", data_.string(), "--out",
                              part.string(), "--stop-after", "5"});
  ASSERT_EQ(stopped.code, kExitOk) << stopped.err;
  EXPECT_FALSE(fs::exists(part / "encoder"));
  const Result resumed = run({"train-align", "--config", config_.string(), "--data", data_.string(), "--out",
                              part.string(), "--resume", (part / "checkpoint").string()});
  ASSERT_EQ(resumed.code, kExitOk) << resumed.err;
  EXPECT_EQ(slurp(full / "metrics.csv"), slurp(part / "metrics.csv"));
  EXPECT_EQ(slurp(full / "encoder" / "encoder.tensors"), slurp(part / "encoder" / "encoder.tensors"));
}

TEST_F(Cli, FinetuneAndEvalWriteReports) {
  const fs::path align = dir("align_ft");
  ASSERT_EQ(run({"train-align", "--config", config_.string(), "--data", data_.string(), "--out", align.string()}).code,
            kExitOk);
  const fs::path model = align / "encoder";
  for (const auto& extra : std::vector<std::vector<std::string>>{{}, {"--translate-train"},
                                                                 {"--translate-train", "--no-cs"},
                                                                 {"--task", "qa"}}) {
    const fs::path out = dir("ft" + std::to_string(extra.size()) + (extra.empty() ? "" : extra.back()));
    std::vector<std::string> args = {"finetune", "--config", config_.string(), "--data", data_.string(), "--model",
                                     model.string(), "--out", out.string()};
    args.insert(args.end(), extra.begin(), extra.end());
    const Result r = run(args);
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_TRUE(fs::exists(out / kManifestFile));
    EXPECT_EQ(slurp(out / "eval.csv").rfind("task,language,metric,value\n", 0), 0u);
    EXPECT_TRUE(fs::exists(out / "predictions.tsv"));
  }
  EXPECT_EQ(run({"finetune", "--config", config_.string(), "--data", data_.string(), "--model", model.string(),
                 "--out", dir("ftbad").string(), "--task", "qa", "--translate-train"})
                .code,
            kExitUsage);
  const Result ev = run({"eval", "--config", config_.string(), "--model", model.string(), "--retrieval",
                         (data_ / "heldout.parallel.tsv").string(), "--zero-shot", "--data", data_.string(), "--out",
                         dir("ev").string()});
  ASSERT_EQ(ev.code, kExitOk) << ev.err;
  EXPECT_NE(ev.out.find("retrieval top-1"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir("ev") / kManifestFile));
}

TEST_F(Cli, AblateWritesOneComparisonCsv) {
  const fs::path out = dir("ablate");
  const Result r = run({"ablate", "--config", config_.string(), "--data", data_.string(), "--out", out.string(),
                        "--no-finetune"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::ifstream in(out / "ablation.csv");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  ASSERT_EQ(lines.size(), 7u);
  for (const char* variant : {"full", "-MoCo", "-TLM", "repl TLM w/ MLM", "-CS", "warm-up only"}) {
    EXPECT_TRUE(std::any_of(lines.begin(), lines.end(),
                            [&](const std::string& l) { return l.rfind(std::string(variant) + ",", 0) == 0; }))
        << variant;
  }
  EXPECT_TRUE(fs::exists(out / kManifestFile));
}

TEST_F(Cli, PreprocessBuildsVocabularyAndFilters) {
  const fs::path input = dir("raw.tsv");
  {
    std::ofstream f(input);
    f << "a b c d e f\tg h i j k l\n";
    f << "a\tb\n";
    f << "a b c d e\tf g h i j\n";
  }
  const Result r = run({"preprocess", "--input", input.string(), "--out", dir("pre").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(dir("pre") / "vocab.txt"));
  EXPECT_NE(r.out.find("read 3 pairs"), std::string::npos) << r.out;
}

}  // namespace
}  // namespace ppa
