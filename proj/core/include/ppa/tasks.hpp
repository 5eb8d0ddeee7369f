// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ppa/corpus.hpp"
#include "ppa/finetune.hpp"

namespace ppa {

// Synthetic downstream tasks over a CipherLanguage. Every example exists in
// the base language and, word for word, in the cipher language, so the same
// task supports in-language training, zero-shot transfer and translate-train.

/// Relation between a premise and a hypothesis.
enum RelationLabel : int { kEntailment = 0, kContradiction = 1, kNeutral = 2 };
inline constexpr int kNumRelationLabels = 3;

struct RelationTaskOptions {
  int min_words = 5;
  int max_words = 12;
};

/// Line-aligned base-language and cipher-language versions of one task.
struct BilingualTexts {
  std::vector<LabeledTextExample> base;
  std::vector<LabeledTextExample> cipher;
};

/// Premise and hypothesis share a noun topic and the hypothesis is plain
/// (entailment), share a topic and the hypothesis contains the negation word
/// (contradiction), or draw nouns from different topics (neutral). Labels
/// are uniform.
BilingualTexts generate_relation_task(const CipherLanguage& language, int n, std::uint64_t seed,
                                      const RelationTaskOptions& options = {});

/// Copy-task QA in text form: the question is one context word and the
/// answer is that word's position. Positions count words.
struct QaTextExample {
  std::string question;
  std::string context;
  int start = 0;
  int end = 0;
  std::string language;
};

struct BilingualQa {
  std::vector<QaTextExample> base;
  std::vector<QaTextExample> cipher;
};

/// Contexts never repeat a word, so every answer is unambiguous.
BilingualQa generate_copy_qa(const CipherLanguage& language, int n, std::uint64_t seed, int min_words = 8,
                             int max_words = 16);

/// "question\tcontext\tstart\tend\tlanguage" lines.
std::vector<QaTextExample> read_qa(const std::filesystem::path& path);
void write_qa(const std::filesystem::path& path, std::span<const QaTextExample> examples);

/// Tokenizes a QA example, converting word positions into token positions.
QaExample encode_qa(const Vocab& vocab, const QaTextExample& example, int id);

/// Pairs line-aligned base and target examples for code_switch_augment.
/// Throws DataError when the lists differ in length or labels.
std::vector<BilingualExample> align_bilingual(const Vocab& vocab, std::span<const LabeledTextExample> base,
                                              std::span<const LabeledTextExample> target);

}  // namespace ppa
