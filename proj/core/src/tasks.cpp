// SPDX-License-Identifier: Apache-2.0
#include "ppa/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace ppa {

BilingualTexts generate_relation_task(const CipherLanguage& language, int n, std::uint64_t seed,
                                      const RelationTaskOptions& options) {
  if (options.min_words < 2 || options.max_words < options.min_words) {
    throw std::invalid_argument("invalid relation task sentence lengths");
  }
  Rng rng(seed);
  BilingualTexts out;
  for (int i = 0; i < n; ++i) {
    const int topic = static_cast<int>(rng.below(kNumTopics));
    const int label = static_cast<int>(rng.below(kNumRelationLabels));
    CipherLanguage::SentenceSpec premise{rng.range(options.min_words, options.max_words), topic, false};
    CipherLanguage::SentenceSpec hypothesis{rng.range(options.min_words, options.max_words), topic, false};
    if (label == kContradiction) hypothesis.negated = true;
    if (label == kNeutral) hypothesis.topic = (topic + 1 + static_cast<int>(rng.below(kNumTopics - 1))) % kNumTopics;
    const auto a = language.sample(rng, premise);
    const auto b = language.sample(rng, hypothesis);
    out.base.push_back({join_words(a), join_words(b), label, "base"});
    out.cipher.push_back({join_words(language.translate(a, rng, kCipherSwapProb)),
                          join_words(language.translate(b, rng, kCipherSwapProb)), label, "cipher"});
  }
  return out;
}

BilingualQa generate_copy_qa(const CipherLanguage& language, int n, std::uint64_t seed, int min_words,
                             int max_words) {
  if (min_words < 1 || max_words < min_words) throw std::invalid_argument("invalid QA context lengths");
  Rng rng(seed);
  BilingualQa out;
  for (int i = 0; i < n; ++i) {
    const int length = rng.range(min_words, max_words);
    std::vector<std::string> words;
    while (static_cast<int>(words.size()) < length) {
      for (const std::string& w : language.sample(rng, {length, std::nullopt, std::nullopt})) {
        if (static_cast<int>(words.size()) < length && std::find(words.begin(), words.end(), w) == words.end()) {
          words.push_back(w);
        }
      }
    }
    const int answer = static_cast<int>(rng.below(words.size()));
    out.base.push_back({words[answer], join_words(words), answer, answer, "base"});
    // Cipher contexts are substituted word for word so the answer keeps its
    // position; the grammar-level reordering is not applied here.
    std::vector<std::string> cipher;
    for (const std::string& w : words) cipher.push_back(language.cipher_of(w));
    out.cipher.push_back({cipher[answer], join_words(cipher), answer, answer, "cipher"});
  }
  return out;
}

std::vector<QaTextExample> read_qa(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open QA file " + path.string());
  std::vector<QaTextExample> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (fields.size() != 5) throw DataError("expected 5 tab-separated fields, got " + std::to_string(fields.size()), number);
    QaTextExample ex;
    ex.question = fields[0];
    ex.context = fields[1];
    try {
      ex.start = std::stoi(fields[2]);
      ex.end = std::stoi(fields[3]);
    } catch (const std::exception&) {
      throw DataError("answer positions are not integers", number);
    }
    ex.language = fields[4];
    out.push_back(std::move(ex));
  }
  return out;
}

void write_qa(const std::filesystem::path& path, std::span<const QaTextExample> examples) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const QaTextExample& ex : examples) {
    out << ex.question << '\t' << ex.context << '\t' << ex.start << '\t' << ex.end << '\t' << ex.language << '\n';
  }
}

QaExample encode_qa(const Vocab& vocab, const QaTextExample& example, int id) {
  QaExample out;
  out.id = id;
  out.language = example.language;
  out.question = encode(vocab, example.question);
  const std::vector<std::string_view> words = split_words(example.context);
  if (example.start < 0 || example.end < example.start || example.end >= static_cast<int>(words.size())) {
    throw DataError("QA example " + std::to_string(id) + ": answer words [" + std::to_string(example.start) + ", " +
                    std::to_string(example.end) + "] are outside the context");
  }
  for (int w = 0; w < static_cast<int>(words.size()); ++w) {
    if (w == example.start) out.start = static_cast<int>(out.context.size());
    const TokenSequence pieces = encode(vocab, words[w]);
    out.context.insert(out.context.end(), pieces.begin(), pieces.end());
    if (w == example.end) out.end = static_cast<int>(out.context.size()) - 1;
  }
  return out;
}

std::vector<BilingualExample> align_bilingual(const Vocab& vocab, std::span<const LabeledTextExample> base,
                                              std::span<const LabeledTextExample> target) {
  if (base.size() != target.size()) {
    throw DataError("base and target task files differ in length (" + std::to_string(base.size()) + " vs " +
                    std::to_string(target.size()) + ")");
  }
  std::vector<BilingualExample> out;
  out.reserve(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    if (base[i].label != target[i].label) {
      throw DataError("example " + std::to_string(i) + " has different labels in the two languages", i + 1);
    }
    out.push_back({encode_example(vocab, base[i]), encode_example(vocab, target[i])});
  }
  return out;
}

}  // namespace ppa
