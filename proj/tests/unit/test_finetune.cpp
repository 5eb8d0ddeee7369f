// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "ppa/finetune.hpp"
#include "ppa/pipeline.hpp"
#include "ppa/tasks.hpp"
#include "test_util.hpp"

namespace ppa {
namespace {

// Label 1 iff token 7 occurs in the first text.
std::vector<LabeledPairExample> marker_task(std::uint64_t seed, int n) {
  Rng rng(seed);
  std::vector<LabeledPairExample> out;
  for (int i = 0; i < n; ++i) {
    LabeledPairExample ex;
    ex.text_a = test::random_tokens(rng, rng.range(4, 8), 40);
    ex.text_b = test::random_tokens(rng, rng.range(4, 8), 40);
    for (int& t : ex.text_a) {
      if (t == 7) t = 8;
    }
    ex.label = static_cast<int>(rng.below(2));
    if (ex.label == 1) ex.text_a[rng.below(ex.text_a.size())] = 7;
    ex.language = "x";
    out.push_back(std::move(ex));
  }
  return out;
}

FinetuneConfig quick_config() {
  FinetuneConfig c;
  c.batch_size = 16;
  c.max_seq_len = 64;
  c.peak_lr = 3e-3;
  c.warmup_steps = 10;
  c.epochs = 6;
  c.seed = 2;
  return c;
}

TEST(FinetuneConfig, WarmupByCountOrFraction) {
  FinetuneConfig c;
  c.warmup_steps = 1000;
  EXPECT_EQ(c.warmup_for(5000), 1000);
  // A count longer than the run warms up over the whole run.
  EXPECT_EQ(c.warmup_for(200), 200);
  c.warmup_steps = -1;
  c.warmup_fraction = 0.1;
  EXPECT_EQ(c.warmup_for(937), 94);
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(FinetuneConfig::xnli().warmup_steps, 1000);
  EXPECT_EQ(FinetuneConfig::mlqa().max_seq_len, 386);
}

TEST(BuildPairInput, LayoutAndSegments) {
  const SegmentedInput in = build_pair_input({10, 11}, {12}, 16);
  EXPECT_EQ(in.ids, (TokenSequence{Vocab::kCls, 10, 11, Vocab::kSep, 12, Vocab::kSep}));
  EXPECT_EQ(in.segments, (std::vector<int>{0, 0, 0, 0, 1, 1}));
  EXPECT_THROW(build_pair_input({10, 11}, {12}, 5), DataError);
}

TEST(Classifier, LearnsASeparableTask) {
  const auto train = marker_task(1, 400);
  const auto test_set = marker_task(2, 200);
  const EncoderParams enc = EncoderParams::initialize(test::tiny_config(), 3);
  std::vector<double> losses;
  const ClassifierModel m =
      finetune_classifier(enc, train, 2, quick_config(), [&](int, double loss) { losses.push_back(loss); });
  ASSERT_EQ(losses.size(), 6u);
  EXPECT_LT(losses.back(), losses.front());
  EXPECT_GE(accuracy(m, test_set, 64), 0.95);
  EXPECT_EQ(predict_labels(m, test_set, 64).size(), test_set.size());
}

TEST(Classifier, FrozenEncoderIsNotUpdated) {
  const auto train = marker_task(1, 64);
  const EncoderParams enc = EncoderParams::initialize(test::tiny_config(), 3);
  FinetuneConfig cfg = quick_config();
  cfg.freeze_encoder = true;
  cfg.epochs = 1;
  const ClassifierModel frozen = finetune_classifier(enc, train, 2, cfg);
  EXPECT_TRUE(frozen.encoder.identical(enc));
  cfg.freeze_encoder = false;
  EXPECT_FALSE(finetune_classifier(enc, train, 2, cfg).encoder.identical(enc));
}

TEST(Classifier, DeterministicAndValidated) {
  const auto train = marker_task(4, 48);
  const EncoderParams enc = EncoderParams::initialize(test::tiny_config(), 3);
  FinetuneConfig cfg = quick_config();
  cfg.epochs = 1;
  const ClassifierModel a = finetune_classifier(enc, train, 2, cfg);
  const ClassifierModel b = finetune_classifier(enc, train, 2, cfg);
  EXPECT_TRUE(a.encoder.identical(b.encoder));
  EXPECT_TRUE(a.head.weight.value.identical(b.head.weight.value));
  EXPECT_THROW(finetune_classifier(enc, {}, 2, cfg), std::invalid_argument);
  auto bad = train;
  bad[3].label = 2;
  EXPECT_THROW(finetune_classifier(enc, bad, 2, cfg), DataError);
}

TEST(DecodeSpan, BestScoringSpanWithinLength) {
  const std::vector<float> start = {0.0f, 3.0f, 1.0f, 0.0f};
  const std::vector<float> end = {4.0f, 0.0f, 0.0f, 2.0f};
  // end 0 precedes start 1, so (1,3) at 5 beats (0,0) at 4.
  EXPECT_EQ(decode_span(start, end, 30), (SpanPrediction{1, 3}));
  // Length 1 rules out (1,3); (0,0) wins at 4 over (1,1) and (1,2) at 3.
  EXPECT_EQ(decode_span(start, end, 1), (SpanPrediction{0, 0}));
  // Equal scores: earliest start, then shortest span.
  const std::vector<float> flat(4, 1.0f);
  EXPECT_EQ(decode_span(flat, flat, 3), (SpanPrediction{0, 0}));
}

TEST(DecodeSpan, MatchesExhaustiveSearchWithTieRule) {
  Rng rng(9);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = rng.range(1, 12);
    const int max_len = rng.range(0, 5);
    std::vector<float> s(n), e(n);
    // Small integer logits force frequent ties.
    for (int i = 0; i < n; ++i) {
      s[i] = static_cast<float>(rng.below(3));
      e[i] = static_cast<float>(rng.below(3));
    }
    SpanPrediction best{-1, -1};
    float best_score = 0.0f;
    for (int a = 0; a < n; ++a) {
      for (int b = a; b < n && b <= a + max_len; ++b) {
        const float score = s[a] + e[b];
        if (best.start < 0 || score > best_score) {
          best = {a, b};
          best_score = score;
        }
      }
    }
    ASSERT_EQ(decode_span(s, e, max_len), best) << trial;
  }
}

TEST(SpanMetrics, ExactMatchAndF1) {
  std::vector<QaExample> gold(2);
  gold[0].start = 2;
  gold[0].end = 4;
  gold[1].start = 0;
  gold[1].end = 0;
  const std::vector<SpanPrediction> pred = {{3, 5}, {0, 0}};
  EXPECT_DOUBLE_EQ(exact_match(pred, gold), 0.5);
  // First: overlap 2 tokens, precision 2/3, recall 2/3.
  EXPECT_NEAR(span_f1(pred, gold), (2.0 / 3.0 + 1.0) / 2.0, 1e-12);
}

TEST(Span, LearnsCopyQa) {
  const CipherLanguage lang(60, 5);
  const BilingualQa qa = generate_copy_qa(lang, 700, 6, 6, 10);
  std::vector<std::string> lines;
  for (const auto& ex : qa.base) lines.push_back(ex.context);
  const Vocab vocab = build_vocab(lines, 200);
  std::vector<QaExample> train, test_set;
  for (int i = 0; i < 700; ++i) (i < 600 ? train : test_set).push_back(encode_qa(vocab, qa.base[i], i));
  EncoderConfig c = test::tiny_config();
  c.vocab_size = vocab.size();
  c.hidden = 32;
  c.ffn = 64;
  c.num_layers = 2;
  const EncoderParams enc = EncoderParams::initialize(c, 7);
  FinetuneConfig cfg = quick_config();
  cfg.epochs = 12;
  const SpanModel m = finetune_span(enc, train, cfg);
  const auto pred = predict_spans(m, test_set, cfg.max_answer_len, 64);
  EXPECT_GE(exact_match(pred, test_set), 0.90);
}

TEST(Span, RejectsBadGoldSpans) {
  const EncoderParams enc = EncoderParams::initialize(test::tiny_config(), 1);
  QaExample ex;
  ex.question = {10};
  ex.context = {11, 12, 13};
  ex.start = 2;
  ex.end = 1;
  EXPECT_THROW(finetune_span(enc, std::vector<QaExample>{ex}, quick_config()), DataError);
  ex.start = 1;
  ex.end = 3;
  EXPECT_THROW(finetune_span(enc, std::vector<QaExample>{ex}, quick_config()), DataError);
}

TEST(Retrieval, MatchesCosineArgmaxOracle) {
  EncoderConfig c = test::tiny_config();
  c.mean_pooling = true;
  const EncoderParams enc = EncoderParams::initialize(c, 1);
  auto pairs = test::random_pairs(3, 30, 40, 3, 6);
  // Half the targets copy their source so the fraction is not trivially 0.
  for (std::size_t i = 0; i < pairs.size(); i += 2) pairs[i].tgt = pairs[i].src;
  std::vector<TokenSequence> src, tgt;
  for (const auto& p : pairs) {
    src.push_back(p.src);
    tgt.push_back(p.tgt);
  }
  const Tensor zs = sentence_embed(enc, src);
  const Tensor zt = sentence_embed(enc, tgt);
  auto cosine = [&](int i, int j) {
    long double dot = 0, ns = 0, nt = 0;
    for (int k = 0; k < zs.cols(); ++k) {
      dot += static_cast<long double>(zs.at(i, k)) * zt.at(j, k);
      ns += static_cast<long double>(zs.at(i, k)) * zs.at(i, k);
      nt += static_cast<long double>(zt.at(j, k)) * zt.at(j, k);
    }
    return dot / std::sqrt(ns * nt);
  };
  int hits = 0;
  for (int i = 0; i < zs.rows(); ++i) {
    int best = 0;
    for (int j = 1; j < zs.rows(); ++j) {
      if (cosine(i, j) > cosine(i, best) + 1e-6L) best = j;
    }
    hits += best == i;
  }
  EXPECT_GT(hits, 0);
  EXPECT_NEAR(evaluate_retrieval(enc, pairs), hits / 30.0, 1.0 / 30.0 + 1e-12);
  EXPECT_THROW(evaluate_retrieval(enc, {}), std::invalid_argument);
}

class TranslateTrain : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new test::TempDir("tt");
    DataConfig d;
    d.n_pairs = 50;
    d.heldout_pairs = 10;
    d.vocab_words = 60;
    d.vocab_size = 160;
    d.min_words = 5;
    d.max_words = 9;
    d.task_train = 40;
    d.task_test = 20;
    d.qa_train = 10;
    d.qa_test = 5;
    files_ = generate_data(d, dir_->path());
  }
  static void TearDownTestSuite() { delete dir_; }

  static inline test::TempDir* dir_ = nullptr;
  static inline DataFiles files_;
};

TEST_F(TranslateTrain, CodeSwitchingDoublesAndCoBatches) {
  const Vocab vocab = Vocab::load(files_.vocab());
  const auto plain = translate_train_set(vocab, files_, false);
  const auto cs = translate_train_set(vocab, files_, true);
  const auto base = read_labeled(files_.task_train("base"));
  const auto cipher = read_labeled(files_.task_train("cipher"));
  ASSERT_EQ(plain.size(), 2 * base.size());
  ASSERT_EQ(cs.size() - base.size(), 2 * base.size());
  // Every augmented example mixes languages; none is all-cipher.
  std::set<std::pair<TokenSequence, TokenSequence>> all_cipher;
  for (const auto& ex : cipher) all_cipher.insert({encode(vocab, ex.text_a), encode(vocab, ex.text_b)});
  std::map<int, int> group_sizes;
  for (const auto& ex : cs) {
    if (ex.group < 0) continue;
    ++group_sizes[ex.group];
    EXPECT_FALSE(all_cipher.count({ex.text_a, ex.text_b}));
  }
  EXPECT_EQ(group_sizes.size(), base.size());
  for (const auto& [g, n] : group_sizes) EXPECT_EQ(n, 2) << g;
  for (const auto& batch : make_group_batches(cs, 8, 3)) {
    std::map<int, int> seen;
    for (int i : batch) {
      if (cs[i].group >= 0) ++seen[cs[i].group];
    }
    for (const auto& [g, n] : seen) EXPECT_EQ(n, 2);
  }
}

TEST_F(TranslateTrain, RunsAreReproducible) {
  const Vocab vocab = Vocab::load(files_.vocab());
  EncoderConfig c = EncoderConfig::toy(vocab.size());
  c.num_layers = 1;
  const EncoderParams enc = EncoderParams::initialize(c, 1);
  FinetuneConfig cfg = quick_config();
  cfg.epochs = 1;
  const auto a = run_translate_train(enc, vocab, files_, cfg, false);
  const auto b = run_translate_train(enc, vocab, files_, cfg, false);
  EXPECT_EQ(a.base_accuracy, b.base_accuracy);
  EXPECT_EQ(a.cipher_accuracy, b.cipher_accuracy);
}

}  // namespace
}  // namespace ppa
