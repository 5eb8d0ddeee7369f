// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "ppa/rng.hpp"
#include "ppa/tokenizer.hpp"

namespace ppa {

/// Raised for malformed input files; carries the 1-based line number.
class DataError : public std::runtime_error {
 public:
  DataError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// One sentence and its translation.
struct ParallelPair {
  TokenSequence src;
  TokenSequence tgt;
  int pair_id = 0;

  bool operator==(const ParallelPair&) const = default;
};

inline constexpr int kMinSideTokens = 10;
/// [CLS] + two [SEP] around a concatenated pair.
inline constexpr int kPairSpecialTokens = 3;

/// Both sides have at least kMinSideTokens tokens and the concatenation,
/// including its three special tokens, fits in max_seq_len.
bool passes_length_filter(std::size_t src_len, std::size_t tgt_len, int max_seq_len);

struct FilterCounts {
  std::size_t read = 0;
  std::size_t kept = 0;
  std::size_t dropped_short = 0;
  std::size_t dropped_long = 0;
};

struct ParallelData {
  std::vector<ParallelPair> pairs;
  FilterCounts counts;
};

/// Reads "src\ttgt" lines, encodes both sides and keeps the pairs that pass
/// the length filter, in file order. pair_id is the 0-based line index.
ParallelData load_parallel(const std::filesystem::path& path, const Vocab& vocab, int max_seq_len);
ParallelData filter_pairs(std::span<const ParallelPair> pairs, int max_seq_len);

/// Raw text pairs from a parallel TSV without encoding or filtering.
std::vector<std::pair<std::string, std::string>> read_parallel_text(const std::filesystem::path& path);

/// Query/key inputs for one contrastive step.
struct AlignmentBatch {
  std::vector<TokenSequence> query_inputs;  // [CLS] + side
  std::vector<TokenSequence> key_inputs;    // [CLS] + other side
  std::vector<bool> shuffle_flags;          // true: translation feeds the query encoder
  std::vector<int> pair_ids;
  std::vector<int> pair_indices;            // positions in the source pair list

  std::size_t size() const { return pair_ids.size(); }
};

/// One epoch of alignment batches over a pair list.
///
/// Pair order is a seeded permutation and each pair's side assignment is an
/// independent fair coin from the same seed. The final batch may be short.
/// Batches are available by index so a resumed run can continue mid-epoch.
class AlignmentBatchStream {
 public:
  AlignmentBatchStream(std::span<const ParallelPair> pairs, int batch_size, std::uint64_t seed);

  std::size_t batch_count() const;
  AlignmentBatch batch(std::size_t index) const;
  /// Next batch in order, or nullopt at the end of the epoch.
  std::optional<AlignmentBatch> next();

 private:
  std::span<const ParallelPair> pairs_;
  int batch_size_;
  std::vector<int> order_;
  std::vector<bool> flags_;
  std::size_t cursor_ = 0;
};

AlignmentBatchStream make_alignment_batches(std::span<const ParallelPair> pairs, int batch_size, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic bilingual data

enum class WordClass { kDet, kAdj, kNoun, kVerb, kPrep, kAdv, kConj, kNeg };
inline constexpr int kNumTopics = 3;

/// A toy base language and its cipher image.
///
/// Base words are lowercase syllable strings grouped into grammatical
/// classes; nouns additionally carry one of kNumTopics topics. The cipher
/// language maps every base word to a distinct uppercase word, so the two
/// languages share no subword pieces. Sentences are random walks over a
/// fixed class-transition grammar.
class CipherLanguage {
 public:
  CipherLanguage(int vocab_words, std::uint64_t seed);

  struct SentenceSpec {
    int length = 10;
    /// Restrict nouns to this topic.
    std::optional<int> topic;
    /// Include the negation word at least once / never.
    std::optional<bool> negated;
  };

  std::vector<std::string> sample(Rng& rng, const SentenceSpec& spec) const;
  /// Word-for-word substitution followed by swapping adjacent word pairs,
  /// each non-overlapping pair independently with probability swap_prob.
  std::vector<std::string> translate(std::span<const std::string> words, Rng& rng, double swap_prob) const;
  const std::string& cipher_of(const std::string& word) const;

  int vocab_words() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& base_words() const { return words_; }
  const std::vector<std::string>& cipher_words() const { return cipher_; }
  WordClass word_class(int index) const { return classes_[index]; }
  int topic_of(int index) const { return topics_[index]; }
  const std::string& negation_word() const { return words_[negation_index_]; }

 private:
  std::vector<std::string> words_;
  std::vector<std::string> cipher_;
  std::vector<WordClass> classes_;
  std::vector<int> topics_;
  std::vector<std::vector<int>> by_class_;
  std::vector<std::vector<int>> nouns_by_topic_;
  int negation_index_ = 0;
  std::unordered_map<std::string, int> index_;
};

inline constexpr double kCipherSwapProb = 0.3;

struct CipherCorpusOptions {
  int min_words = 10;
  int max_words = 40;
  double swap_prob = kCipherSwapProb;
};

struct CipherCorpus {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::vector<std::pair<std::string, std::string>> word_map;
};

CipherCorpus generate_cipher_corpus(int n_pairs, int vocab_words, std::uint64_t seed,
                                    const CipherCorpusOptions& options = {});
CipherCorpus generate_cipher_corpus(const CipherLanguage& language, int n_pairs, std::uint64_t seed,
                                    const CipherCorpusOptions& options = {});
/// Writes <prefix>.parallel.tsv and <prefix>.wordmap.tsv.
void write_cipher_corpus(const CipherCorpus& corpus, const std::filesystem::path& prefix);

std::string join_words(std::span<const std::string> words);

// ---------------------------------------------------------------------------
// Labeled sentence-pair tasks and code-switching

struct LabeledPairExample {
  TokenSequence text_a;
  TokenSequence text_b;
  int label = 0;
  std::string language;
  /// Examples sharing a group id must land in the same batch; -1 for none.
  int group = -1;

  bool operator==(const LabeledPairExample&) const = default;
};

/// Text form of a labeled example, as stored in "a\tb\tlabel\tlanguage" files.
struct LabeledTextExample {
  std::string text_a;
  std::string text_b;
  int label = 0;
  std::string language;
};

std::vector<LabeledTextExample> read_labeled(const std::filesystem::path& path);
void write_labeled(const std::filesystem::path& path, std::span<const LabeledTextExample> examples);
LabeledPairExample encode_example(const Vocab& vocab, const LabeledTextExample& example);

/// One example available in English (the pivot) and a target language.
struct BilingualExample {
  LabeledPairExample pivot;
  LabeledPairExample target;
};

/// Emits (a_target, b_pivot) and (a_pivot, b_target) for every input, both
/// tagged with the input's index as co-batch group. The all-target pair is
/// not emitted.
std::vector<LabeledPairExample> code_switch_augment(std::span<const BilingualExample> examples);

/// Shuffles whole co-batch groups (ungrouped examples are singleton groups)
/// and packs them into batches of about batch_size. A group is never split;
/// a batch closes once adding the next group would exceed batch_size.
std::vector<std::vector<int>> make_group_batches(std::span<const LabeledPairExample> examples, int batch_size,
                                                 std::uint64_t seed);

}  // namespace ppa
