// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "ppa/encoder.hpp"
#include "ppa/tape.hpp"
#include "test_util.hpp"

namespace ppa {
namespace {

// Independent count: embeddings, per-layer attention and FFN blocks with
// their layer norms, the MLM output bias and the two projection matrices.
std::size_t count_by_hand(const EncoderConfig& c) {
  const std::size_t d = c.hidden, f = c.ffn;
  std::size_t n = (c.vocab_size + c.max_positions + c.segment_types) * d + 2 * d;
  n += c.num_layers * (4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d) + 2 * d);
  n += c.vocab_size;
  n += d * d + d * c.projection;
  return n;
}

TEST(EncoderParams, CountMatchesHandFormula) {
  for (const EncoderConfig& c : {test::tiny_config(), EncoderConfig::toy(512), EncoderConfig::mbert()}) {
    EXPECT_EQ(parameter_count_formula(c), count_by_hand(c));
  }
  const EncoderParams p = EncoderParams::initialize(EncoderConfig::toy(384), 1);
  EXPECT_EQ(p.parameter_count(), count_by_hand(EncoderConfig::toy(384)));
}

TEST(EncoderParams, MbertSizeIsAbout172M) {
  const double n = static_cast<double>(parameter_count_formula(EncoderConfig::mbert()));
  EXPECT_NEAR(n / 172e6, 1.0, 0.02) << n;
}

TEST(EncoderParams, InitializationIsSeededAndTruncated) {
  const EncoderParams a = EncoderParams::initialize(test::tiny_config(), 5);
  EXPECT_TRUE(a.identical(EncoderParams::initialize(test::tiny_config(), 5)));
  EXPECT_FALSE(a.identical(EncoderParams::initialize(test::tiny_config(), 6)));
  for (const Parameter& p : a.params()) {
    for (float v : p.value.data()) EXPECT_LE(std::fabs(v), 1.0f) << p.name;
    if (p.name.ends_with(".weight") || p.name.starts_with("embeddings.t")) {
      for (float v : p.value.data()) EXPECT_LE(std::fabs(v), 0.04f + 1e-7f) << p.name;
    }
  }
  EXPECT_EQ(a.get("embeddings.ln.gain").value[0], 1.0f);
  EXPECT_EQ(a.get("mlm.bias").value[0], 0.0f);
}

TEST(EncoderConfig, Validation) {
  EncoderConfig c = test::tiny_config();
  c.heads = 3;  // 16 is not divisible by 3
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = test::tiny_config();
  c.num_layers = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

std::vector<EncoderInput> sample_batch(std::uint64_t seed, int n) {
  Rng rng(seed);
  std::vector<EncoderInput> batch;
  for (int i = 0; i < n; ++i) {
    EncoderInput in;
    in.ids.push_back(Vocab::kCls);
    const TokenSequence body = test::random_tokens(rng, rng.range(3, 12), 40);
    in.ids.insert(in.ids.end(), body.begin(), body.end());
    in.segments.assign(in.ids.size(), 0);
    for (std::size_t j = in.ids.size() / 2; j < in.ids.size(); ++j) in.segments[j] = 1;
    batch.push_back(std::move(in));
  }
  return batch;
}

TEST(Forward, BatchPermutationOnlyPermutesRowsBitwise) {
  for (const bool mean : {false, true}) {
    EncoderConfig c = test::tiny_config();
    c.mean_pooling = mean;
    const EncoderParams params = EncoderParams::initialize(c, 2);
    const auto batch = sample_batch(3, 5);
    const std::vector<int> perm = {3, 0, 4, 1, 2};
    std::vector<EncoderInput> permuted;
    for (int i : perm) permuted.push_back(batch[i]);
    Tape t1(false), t2(false);
    const Tensor a = forward(t1, params, batch).pooled.value();
    const Tensor b = forward(t2, params, permuted).pooled.value();
    for (std::size_t i = 0; i < perm.size(); ++i) {
      for (int col = 0; col < a.cols(); ++col) {
        ASSERT_EQ(a.at(perm[i], col), b.at(static_cast<int>(i), col)) << "mean " << mean;
      }
    }
  }
}

TEST(Forward, SequencesDoNotSeeEachOther) {
  const EncoderParams params = EncoderParams::initialize(test::tiny_config(), 2);
  const auto batch = sample_batch(4, 3);
  Tape t1(false), t2(false);
  const EncoderOutput together = forward(t1, params, batch);
  const EncoderOutput alone = forward(t2, params, std::span<const EncoderInput>(&batch[1], 1));
  const Tensor& h = together.hidden.value();
  const Tensor& h1 = alone.hidden.value();
  const int offset = together.offsets[1];
  ASSERT_EQ(together.offsets[2] - offset, h1.rows());
  for (int r = 0; r < h1.rows(); ++r) {
    for (int c = 0; c < h1.cols(); ++c) ASSERT_EQ(h.at(offset + r, c), h1.at(r, c));
  }
}

TEST(Forward, PooledIsClsRowOrMeanOfRows) {
  const auto batch = sample_batch(5, 2);
  EncoderConfig c = test::tiny_config();
  const EncoderParams cls = EncoderParams::initialize(c, 1);
  c.mean_pooling = true;
  const EncoderParams mean = EncoderParams::initialize(c, 1);
  Tape t1(false), t2(false);
  const EncoderOutput a = forward(t1, cls, batch);
  const EncoderOutput b = forward(t2, mean, batch);
  for (int s = 0; s < 2; ++s) {
    const int begin = a.offsets[s], end = a.offsets[s + 1];
    for (int col = 0; col < c.hidden; ++col) {
      EXPECT_EQ(a.pooled.value().at(s, col), a.hidden.value().at(begin, col));
      double sum = 0.0;
      for (int r = begin; r < end; ++r) sum += b.hidden.value().at(r, col);
      EXPECT_NEAR(b.pooled.value().at(s, col), sum / (end - begin), 1e-5);
    }
  }
}

TEST(Forward, RejectsMissingClsOverlengthAndBadIds) {
  const EncoderParams params = EncoderParams::initialize(test::tiny_config(), 2);
  Tape tape(false);
  std::vector<EncoderInput> no_cls = {{{7, 8, 9}, {}}};
  EXPECT_THROW(forward(tape, params, no_cls), std::invalid_argument);
  std::vector<EncoderInput> too_long = {{TokenSequence(65, 7), {}}};
  too_long[0].ids[0] = Vocab::kCls;
  EXPECT_THROW(forward(tape, params, too_long), std::invalid_argument);
  std::vector<EncoderInput> bad_id = {{{Vocab::kCls, 40}, {}}};
  EXPECT_THROW(forward(tape, params, bad_id), std::out_of_range);
}

TEST(Projection, RowsAreUnitNorm) {
  const EncoderParams params = EncoderParams::initialize(test::tiny_config(), 2);
  const auto batch = sample_batch(6, 4);
  Tape tape(false);
  const Projection z = project(tape, params, forward(tape, params, batch).pooled);
  ASSERT_EQ(z.z_unit.value().cols(), test::tiny_config().projection);
  for (int r = 0; r < 4; ++r) {
    double norm = 0.0;
    for (float v : z.z_unit.value().row(r)) norm += static_cast<double>(v) * v;
    EXPECT_NEAR(norm, 1.0, 1e-5);
  }
}

TEST(SentenceEmbed, ChunkingDoesNotChangeResults) {
  const EncoderParams params = EncoderParams::initialize(test::tiny_config(), 2);
  Rng rng(7);
  std::vector<TokenSequence> texts;
  for (int i = 0; i < 9; ++i) texts.push_back(test::random_tokens(rng, rng.range(2, 10), 40));
  const Tensor a = sentence_embed(params, texts, 64);
  const Tensor b = sentence_embed(params, texts, 2);
  EXPECT_TRUE(a.identical(b));
  const Tensor one = sentence_embed(params, texts[4]);
  for (int c = 0; c < a.cols(); ++c) EXPECT_EQ(one[c], a.at(4, c));
}

}  // namespace
}  // namespace ppa
