// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <set>

#include "ppa/corpus.hpp"
#include "test_util.hpp"

namespace ppa {
namespace {

TEST(LengthFilter, BothSidesLongEnoughAndPairFits) {
  EXPECT_FALSE(passes_length_filter(9, 20, 128));
  EXPECT_FALSE(passes_length_filter(20, 9, 128));
  EXPECT_TRUE(passes_length_filter(10, 10, 128));
  EXPECT_TRUE(passes_length_filter(60, 65, 128));
  EXPECT_FALSE(passes_length_filter(60, 66, 128));
}

TEST(LoadParallel, FiltersAndCounts) {
  test::TempDir dir("parallel");
  const auto path = dir.path() / "p.tsv";
  {
    std::ofstream out(path);
    out << "a a a a a a a a a a\tb b b b b b b b b b\n";  // kept
    out << "a a\tb b b b b b b b b b\n";                  // short
    std::string twenty_a, twenty_b;
    for (int i = 0; i < 20; ++i) {
      twenty_a += "a ";
      twenty_b += "b ";
    }
    out << twenty_a << '\t' << twenty_b << '\n';  // 43 tokens with specials: too long
    out << "a a a a a a a a a a a\tb b b b b b b b b b b\n";  // kept
  }
  const Vocab vocab(std::vector<std::string>{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a", "b"});
  const ParallelData d = load_parallel(path, vocab, 40);
  EXPECT_EQ(d.counts.read, 4u);
  EXPECT_EQ(d.counts.kept, 2u);
  EXPECT_EQ(d.counts.dropped_short, 1u);
  EXPECT_EQ(d.counts.dropped_long, 1u);
  ASSERT_EQ(d.pairs.size(), 2u);
  EXPECT_EQ(d.pairs[0].pair_id, 0);
  EXPECT_EQ(d.pairs[1].pair_id, 3);
  EXPECT_EQ(d.pairs[1].src.size(), 11u);
}

TEST(LoadParallel, MalformedLineReportsLineNumber) {
  test::TempDir dir("badparallel");
  const auto path = dir.path() / "p.tsv";
  {
    std::ofstream out(path);
    out << "a\tb\n" << "no tab here\n";
  }
  const Vocab vocab(std::vector<std::string>{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a", "b"});
  try {
    load_parallel(path, vocab, 40);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(AlignmentBatches, ReunitingQueryAndKeyRecoversEveryPair) {
  const auto pairs = test::random_pairs(1, 37, 50);
  AlignmentBatchStream stream = make_alignment_batches(pairs, 8, 3);
  EXPECT_EQ(stream.batch_count(), 5u);
  std::set<int> seen;
  std::size_t flags_set = 0, total = 0;
  while (auto batch = stream.next()) {
    for (std::size_t i = 0; i < batch->size(); ++i) {
      const ParallelPair& p = pairs[batch->pair_indices[i]];
      EXPECT_EQ(batch->pair_ids[i], p.pair_id);
      TokenSequence src = {Vocab::kCls}, tgt = {Vocab::kCls};
      src.insert(src.end(), p.src.begin(), p.src.end());
      tgt.insert(tgt.end(), p.tgt.begin(), p.tgt.end());
      const bool flag = batch->shuffle_flags[i];
      EXPECT_EQ(batch->query_inputs[i], flag ? tgt : src);
      EXPECT_EQ(batch->key_inputs[i], flag ? src : tgt);
      seen.insert(p.pair_id);
      flags_set += flag;
      ++total;
    }
  }
  EXPECT_EQ(seen.size(), pairs.size());
  EXPECT_GT(flags_set, 0u);
  EXPECT_LT(flags_set, total);
}

TEST(AlignmentBatches, ShuffleFlagsAreFairCoins) {
  const auto pairs = test::random_pairs(2, 4000, 50);
  AlignmentBatchStream stream = make_alignment_batches(pairs, 64, 9);
  std::size_t on = 0, total = 0;
  while (auto b = stream.next()) {
    for (bool f : b->shuffle_flags) on += f;
    total += b->size();
  }
  EXPECT_NEAR(static_cast<double>(on) / total, 0.5, 0.03);
}

TEST(AlignmentBatches, IndexedAccessMatchesSequentialAndIsSeeded) {
  const auto pairs = test::random_pairs(3, 30, 50);
  AlignmentBatchStream a = make_alignment_batches(pairs, 7, 11);
  const AlignmentBatchStream b = make_alignment_batches(pairs, 7, 11);
  for (std::size_t i = 0; i < b.batch_count(); ++i) {
    const auto next = a.next();
    ASSERT_TRUE(next);
    EXPECT_EQ(next->pair_ids, b.batch(i).pair_ids);
    EXPECT_EQ(next->shuffle_flags, b.batch(i).shuffle_flags);
  }
  EXPECT_FALSE(a.next());
  EXPECT_NE(make_alignment_batches(pairs, 7, 12).batch(0).pair_ids, b.batch(0).pair_ids);
}

TEST(CipherLanguage, CipherWordsAreDistinctAndShareNoPieces) {
  const CipherLanguage lang(150, 4);
  std::set<std::string> base(lang.base_words().begin(), lang.base_words().end());
  std::set<std::string> cipher(lang.cipher_words().begin(), lang.cipher_words().end());
  EXPECT_EQ(base.size(), 150u);
  EXPECT_EQ(cipher.size(), 150u);
  for (const std::string& w : lang.base_words()) {
    for (char c : w) EXPECT_TRUE(c >= 'a' && c <= 'z');
  }
  for (const std::string& w : lang.cipher_words()) {
    for (char c : w) EXPECT_TRUE(c >= 'A' && c <= 'Z');
  }
}

TEST(CipherLanguage, TranslationIsSubstitutionPlusAdjacentSwaps) {
  const CipherLanguage lang(80, 5);
  Rng rng(6);
  std::size_t swapped = 0, slots = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const auto words = lang.sample(rng, {20, std::nullopt, std::nullopt});
    ASSERT_EQ(words.size(), 20u);
    const auto t = lang.translate(words, rng, kCipherSwapProb);
    ASSERT_EQ(t.size(), words.size());
    // Left to right, each position either keeps its word or swaps with the
    // next one and skips it.
    std::size_t i = 0;
    while (i < words.size()) {
      if (t[i] == lang.cipher_of(words[i])) {
        if (i + 1 < words.size()) ++slots;
        ++i;
        continue;
      }
      ASSERT_LT(i + 1, words.size()) << "trial " << trial;
      ASSERT_EQ(t[i], lang.cipher_of(words[i + 1])) << "trial " << trial << " position " << i;
      ASSERT_EQ(t[i + 1], lang.cipher_of(words[i])) << "trial " << trial << " position " << i;
      ++swapped;
      ++slots;
      i += 2;
    }
  }
  EXPECT_NEAR(static_cast<double>(swapped) / slots, kCipherSwapProb, 0.04);
}

TEST(CipherLanguage, TopicAndNegationConstraints) {
  const CipherLanguage lang(150, 7);
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const int topic = static_cast<int>(rng.below(kNumTopics));
    const auto words = lang.sample(rng, {15, topic, true});
    bool negated = false;
    for (const std::string& w : words) {
      negated |= w == lang.negation_word();
      const auto it = std::find(lang.base_words().begin(), lang.base_words().end(), w);
      ASSERT_NE(it, lang.base_words().end());
      const int index = static_cast<int>(it - lang.base_words().begin());
      if (lang.word_class(index) == WordClass::kNoun) EXPECT_EQ(lang.topic_of(index), topic);
    }
    EXPECT_TRUE(negated);
    for (const std::string& w : lang.sample(rng, {15, std::nullopt, false})) EXPECT_NE(w, lang.negation_word());
  }
}

TEST(CipherCorpus, DeterministicAndLengthBounded) {
  const CipherCorpus a = generate_cipher_corpus(200, 60, 3);
  const CipherCorpus b = generate_cipher_corpus(200, 60, 3);
  EXPECT_EQ(a.pairs, b.pairs);
  EXPECT_EQ(a.word_map.size(), 60u);
  for (const auto& [src, tgt] : a.pairs) {
    const auto n = split_words(src).size();
    EXPECT_GE(n, 10u);
    EXPECT_LE(n, 40u);
    EXPECT_EQ(split_words(tgt).size(), n);
  }
  EXPECT_NE(generate_cipher_corpus(200, 60, 4).pairs, a.pairs);
}

std::vector<BilingualExample> bilingual_examples(int n) {
  Rng rng(12);
  std::vector<BilingualExample> out;
  for (int i = 0; i < n; ++i) {
    const int label = static_cast<int>(rng.below(3));
    BilingualExample ex;
    ex.pivot = {test::random_tokens(rng, 5, 30), test::random_tokens(rng, 5, 30), label, "base"};
    ex.target = {test::random_tokens(rng, 5, 30), test::random_tokens(rng, 5, 30), label, "cipher"};
    out.push_back(ex);
  }
  return out;
}

TEST(CodeSwitch, EmitsTwoMixedPairsPerExampleAndNeverTheAllTargetPair) {
  const auto examples = bilingual_examples(25);
  const auto out = code_switch_augment(examples);
  ASSERT_EQ(out.size(), 2 * examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const BilingualExample& ex = examples[i];
    const LabeledPairExample& first = out[2 * i];
    const LabeledPairExample& second = out[2 * i + 1];
    EXPECT_EQ(first.text_a, ex.target.text_a);
    EXPECT_EQ(first.text_b, ex.pivot.text_b);
    EXPECT_EQ(second.text_a, ex.pivot.text_a);
    EXPECT_EQ(second.text_b, ex.target.text_b);
    for (const LabeledPairExample* e : {&first, &second}) {
      EXPECT_EQ(e->label, ex.target.label);
      EXPECT_EQ(e->group, static_cast<int>(i));
      EXPECT_FALSE(e->text_a == ex.target.text_a && e->text_b == ex.target.text_b);
      EXPECT_FALSE(e->text_a == ex.pivot.text_a && e->text_b == ex.pivot.text_b);
    }
  }
}

TEST(CodeSwitch, RejectsMismatchedLabelsOrMissingSides) {
  auto examples = bilingual_examples(3);
  examples[1].target.label = (examples[1].pivot.label + 1) % 3;
  EXPECT_THROW(code_switch_augment(examples), DataError);
  examples = bilingual_examples(3);
  examples[2].target.text_b.clear();
  EXPECT_THROW(code_switch_augment(examples), DataError);
}

TEST(GroupBatches, GroupsAreNeverSplitAndEveryExampleAppearsOnce) {
  auto examples = code_switch_augment(bilingual_examples(40));
  for (int i = 0; i < 7; ++i) examples.push_back({{5}, {6}, 0, "base", -1});
  for (const int batch_size : {1, 2, 3, 8, 32}) {
    const auto batches = make_group_batches(examples, batch_size, 5);
    std::map<int, int> batch_of_group;
    std::vector<int> seen(examples.size(), 0);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      EXPECT_LE(batches[b].size(), static_cast<std::size_t>(std::max(batch_size, 2)));
      for (int idx : batches[b]) {
        ++seen[idx];
        const int g = examples[idx].group;
        if (g < 0) continue;
        const auto [it, inserted] = batch_of_group.emplace(g, static_cast<int>(b));
        EXPECT_EQ(it->second, static_cast<int>(b)) << "group " << g << " split at batch size " << batch_size;
      }
    }
    for (int count : seen) EXPECT_EQ(count, 1);
  }
  EXPECT_EQ(make_group_batches(examples, 8, 5), make_group_batches(examples, 8, 5));
  EXPECT_NE(make_group_batches(examples, 8, 5), make_group_batches(examples, 8, 6));
}

TEST(LabeledFiles, RoundTrip) {
  test::TempDir dir("labeled");
  const std::vector<LabeledTextExample> in = {{"a b", "c", 1, "base"}, {"D E", "F G", 2, "cipher"}};
  write_labeled(dir.path() / "t.tsv", in);
  const auto out = read_labeled(dir.path() / "t.tsv");
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[1].text_a, "D E");
  EXPECT_EQ(out[1].text_b, "F G");
  EXPECT_EQ(out[1].label, 2);
  EXPECT_EQ(out[1].language, "cipher");
}

}  // namespace
}  // namespace ppa
