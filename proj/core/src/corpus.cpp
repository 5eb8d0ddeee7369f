// SPDX-License-Identifier: Apache-2.0
#include "ppa/corpus.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace ppa {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace

bool passes_length_filter(std::size_t src_len, std::size_t tgt_len, int max_seq_len) {
  if (src_len < static_cast<std::size_t>(kMinSideTokens) || tgt_len < static_cast<std::size_t>(kMinSideTokens)) {
    return false;
  }
  return src_len + tgt_len + kPairSpecialTokens <= static_cast<std::size_t>(max_seq_len);
}

std::vector<std::pair<std::string, std::string>> read_parallel_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open parallel file " + path.string());
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    auto fields = split_tabs(line);
    if (fields.size() != 2) {
      throw DataError(path.string() + ": expected 2 tab-separated fields, found " + std::to_string(fields.size()),
                      line_no);
    }
    pairs.emplace_back(std::move(fields[0]), std::move(fields[1]));
  }
  return pairs;
}

ParallelData filter_pairs(std::span<const ParallelPair> pairs, int max_seq_len) {
  ParallelData out;
  for (const ParallelPair& p : pairs) {
    ++out.counts.read;
    if (p.src.size() < static_cast<std::size_t>(kMinSideTokens) ||
        p.tgt.size() < static_cast<std::size_t>(kMinSideTokens)) {
      ++out.counts.dropped_short;
    } else if (!passes_length_filter(p.src.size(), p.tgt.size(), max_seq_len)) {
      ++out.counts.dropped_long;
    } else {
      ++out.counts.kept;
      out.pairs.push_back(p);
    }
  }
  return out;
}

ParallelData load_parallel(const std::filesystem::path& path, const Vocab& vocab, int max_seq_len) {
  const auto text = read_parallel_text(path);
  std::vector<ParallelPair> encoded;
  encoded.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    encoded.push_back({encode(vocab, text[i].first), encode(vocab, text[i].second), static_cast<int>(i)});
  }
  return filter_pairs(encoded, max_seq_len);
}

AlignmentBatchStream::AlignmentBatchStream(std::span<const ParallelPair> pairs, int batch_size, std::uint64_t seed)
    : pairs_(pairs), batch_size_(batch_size), order_(pairs.size()) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  Rng rng(seed);
  std::iota(order_.begin(), order_.end(), 0);
  rng.shuffle(std::span<int>(order_));
  flags_.reserve(order_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) flags_.push_back(rng.bernoulli(0.5));
}

std::size_t AlignmentBatchStream::batch_count() const {
  return (order_.size() + static_cast<std::size_t>(batch_size_) - 1) / static_cast<std::size_t>(batch_size_);
}

AlignmentBatch AlignmentBatchStream::batch(std::size_t index) const {
  if (index >= batch_count()) throw std::out_of_range("batch index past end of epoch");
  AlignmentBatch b;
  const std::size_t begin = index * static_cast<std::size_t>(batch_size_);
  const std::size_t end = std::min(order_.size(), begin + static_cast<std::size_t>(batch_size_));
  for (std::size_t i = begin; i < end; ++i) {
    const ParallelPair& p = pairs_[static_cast<std::size_t>(order_[i])];
    const bool flipped = flags_[i];
    const TokenSequence& q = flipped ? p.tgt : p.src;
    const TokenSequence& k = flipped ? p.src : p.tgt;
    TokenSequence qi{Vocab::kCls}, ki{Vocab::kCls};
    qi.insert(qi.end(), q.begin(), q.end());
    ki.insert(ki.end(), k.begin(), k.end());
    b.query_inputs.push_back(std::move(qi));
    b.key_inputs.push_back(std::move(ki));
    b.shuffle_flags.push_back(flipped);
    b.pair_ids.push_back(p.pair_id);
    b.pair_indices.push_back(order_[i]);
  }
  return b;
}

std::optional<AlignmentBatch> AlignmentBatchStream::next() {
  if (cursor_ >= batch_count()) return std::nullopt;
  return batch(cursor_++);
}

AlignmentBatchStream make_alignment_batches(std::span<const ParallelPair> pairs, int batch_size, std::uint64_t seed) {
  return AlignmentBatchStream(pairs, batch_size, seed);
}

// ---------------------------------------------------------------------------

namespace {

constexpr int kNumClasses = 8;
constexpr int kStart = kNumClasses;

// Rows: from-class (Det, Adj, Noun, Verb, Prep, Adv, Conj, Neg, Start);
// columns: to-class in WordClass order.
constexpr std::array<std::array<double, kNumClasses>, kNumClasses + 1> kTransitions = {{
    {0.00, 0.40, 0.60, 0.00, 0.00, 0.00, 0.00, 0.00},  // det
    {0.00, 0.10, 0.90, 0.00, 0.00, 0.00, 0.00, 0.00},  // adj
    {0.00, 0.00, 0.00, 0.45, 0.20, 0.10, 0.15, 0.10},  // noun
    {0.40, 0.00, 0.20, 0.00, 0.20, 0.20, 0.00, 0.00},  // verb
    {0.60, 0.00, 0.40, 0.00, 0.00, 0.00, 0.00, 0.00},  // prep
    {0.40, 0.00, 0.00, 0.30, 0.30, 0.00, 0.00, 0.00},  // adv
    {0.50, 0.00, 0.50, 0.00, 0.00, 0.00, 0.00, 0.00},  // conj
    {0.00, 0.00, 0.00, 1.00, 0.00, 0.00, 0.00, 0.00},  // neg
    {0.50, 0.20, 0.30, 0.00, 0.00, 0.00, 0.00, 0.00},  // start
}};

std::string make_word(Rng& rng, std::string_view consonants, std::string_view vowels, int min_syl, int max_syl,
                      bool closed) {
  std::string w;
  const int syllables = rng.range(min_syl, max_syl);
  for (int s = 0; s < syllables; ++s) {
    w.push_back(consonants[rng.below(consonants.size())]);
    w.push_back(vowels[rng.below(vowels.size())]);
  }
  if (closed) w.push_back(consonants[rng.below(consonants.size())]);
  return w;
}

}  // namespace

CipherLanguage::CipherLanguage(int vocab_words, std::uint64_t seed) {
  if (vocab_words < 24) throw std::invalid_argument("cipher language needs at least 24 words");
  Rng rng(seed);
  std::set<std::string> seen_base, seen_cipher;
  while (static_cast<int>(words_.size()) < vocab_words) {
    std::string w = make_word(rng, "bdfgklmnprstvz", "aeiou", 2, 3, false);
    if (seen_base.insert(w).second) words_.push_back(std::move(w));
  }
  while (static_cast<int>(cipher_.size()) < vocab_words) {
    std::string w = make_word(rng, "BCDFGHJKLMNPQRSTVWXZ", "AEIOUY", 1, 2, true);
    if (seen_cipher.insert(w).second) cipher_.push_back(std::move(w));
  }
  // The bijection is a seeded permutation of the generated cipher words.
  rng.shuffle(std::span<std::string>(cipher_));

  const int n = vocab_words;
  auto share = [n](double f, int lo) { return std::max(lo, static_cast<int>(f * n)); };
  const std::array<int, kNumClasses> sizes = {share(0.05, 2), share(0.20, 3), 0,         share(0.20, 3),
                                              share(0.06, 2), share(0.10, 2), share(0.04, 1), 1};
  int assigned = 0;
  for (int s : sizes) assigned += s;
  const int nouns = n - assigned;
  if (nouns < kNumTopics) throw std::invalid_argument("cipher language too small for noun topics");

  by_class_.assign(kNumClasses, {});
  nouns_by_topic_.assign(kNumTopics, {});
  classes_.resize(n);
  topics_.assign(n, -1);
  int next = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    const int count = c == static_cast<int>(WordClass::kNoun) ? nouns : sizes[c];
    for (int i = 0; i < count; ++i, ++next) {
      classes_[next] = static_cast<WordClass>(c);
      by_class_[c].push_back(next);
      if (c == static_cast<int>(WordClass::kNoun)) {
        topics_[next] = i % kNumTopics;
        nouns_by_topic_[i % kNumTopics].push_back(next);
      }
    }
  }
  negation_index_ = by_class_[static_cast<int>(WordClass::kNeg)].front();
  for (int i = 0; i < n; ++i) index_.emplace(words_[i], i);
}

std::vector<std::string> CipherLanguage::sample(Rng& rng, const SentenceSpec& spec) const {
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(spec.length) + 1);
  const bool allow_neg = !spec.negated.has_value();
  int state = kStart;
  while (static_cast<int>(out.size()) < spec.length) {
    std::array<double, kNumClasses> p = kTransitions[state];
    if (!allow_neg) p[static_cast<int>(WordClass::kNeg)] = 0.0;
    double total = 0.0;
    for (double x : p) total += x;
    double u = rng.uniform() * total;
    int cls = 0;
    for (; cls < kNumClasses - 1; ++cls) {
      if (u < p[cls]) break;
      u -= p[cls];
    }
    const std::vector<int>& pool = (cls == static_cast<int>(WordClass::kNoun) && spec.topic)
                                       ? nouns_by_topic_[static_cast<std::size_t>(*spec.topic)]
                                       : by_class_[cls];
    out.push_back(words_[pool[rng.below(pool.size())]]);
    state = cls;
  }
  if (spec.negated.value_or(false)) {
    // Place the negation right after a noun, as the grammar would.
    std::vector<std::size_t> slots;
    for (std::size_t i = 0; i + 1 < out.size(); ++i)
      if (classes_[index_.at(out[i])] == WordClass::kNoun) slots.push_back(i + 1);
    const std::size_t at = slots.empty() ? out.size() / 2 : slots[rng.below(slots.size())];
    out.insert(out.begin() + static_cast<std::ptrdiff_t>(at), negation_word());
    out.pop_back();
    if (std::find(out.begin(), out.end(), negation_word()) == out.end()) out.back() = negation_word();
  }
  return out;
}

std::vector<std::string> CipherLanguage::translate(std::span<const std::string> words, Rng& rng,
                                                   double swap_prob) const {
  std::vector<std::string> out;
  out.reserve(words.size());
  for (const std::string& w : words) out.push_back(cipher_of(w));
  for (std::size_t i = 0; i + 1 < out.size();) {
    if (rng.bernoulli(swap_prob)) {
      std::swap(out[i], out[i + 1]);
      i += 2;
    } else {
      i += 1;
    }
  }
  return out;
}

const std::string& CipherLanguage::cipher_of(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) throw std::out_of_range("word '" + word + "' is not in the base lexicon");
  return cipher_[static_cast<std::size_t>(it->second)];
}

std::string join_words(std::span<const std::string> words) {
  std::string s;
  for (const std::string& w : words) {
    if (!s.empty()) s.push_back(' ');
    s += w;
  }
  return s;
}

CipherCorpus generate_cipher_corpus(const CipherLanguage& language, int n_pairs, std::uint64_t seed,
                                    const CipherCorpusOptions& options) {
  if (n_pairs < 1) throw std::invalid_argument("n_pairs must be at least 1");
  if (options.min_words < 1 || options.max_words < options.min_words) {
    throw std::invalid_argument("invalid sentence length range");
  }
  CipherCorpus corpus;
  Rng rng(derive_seed(seed, 1));
  corpus.pairs.reserve(static_cast<std::size_t>(n_pairs));
  for (int i = 0; i < n_pairs; ++i) {
    CipherLanguage::SentenceSpec spec;
    spec.length = rng.range(options.min_words, options.max_words);
    const auto src = language.sample(rng, spec);
    const auto tgt = language.translate(src, rng, options.swap_prob);
    corpus.pairs.emplace_back(join_words(src), join_words(tgt));
  }
  for (int i = 0; i < language.vocab_words(); ++i) {
    corpus.word_map.emplace_back(language.base_words()[i], language.cipher_words()[i]);
  }
  return corpus;
}

CipherCorpus generate_cipher_corpus(int n_pairs, int vocab_words, std::uint64_t seed,
                                    const CipherCorpusOptions& options) {
  return generate_cipher_corpus(CipherLanguage(vocab_words, seed), n_pairs, seed, options);
}

void write_cipher_corpus(const CipherCorpus& corpus, const std::filesystem::path& prefix) {
  const std::filesystem::path parallel = prefix.string() + ".parallel.tsv";
  const std::filesystem::path wordmap = prefix.string() + ".wordmap.tsv";
  std::ofstream p(parallel, std::ios::trunc);
  std::ofstream w(wordmap, std::ios::trunc);
  if (!p || !w) throw std::runtime_error("cannot write corpus files with prefix " + prefix.string());
  for (const auto& [src, tgt] : corpus.pairs) p << src << '\t' << tgt << '\n';
  for (const auto& [base, cipher] : corpus.word_map) w << base << '\t' << cipher << '\n';
}

// ---------------------------------------------------------------------------

std::vector<LabeledTextExample> read_labeled(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open labeled file " + path.string());
  std::vector<LabeledTextExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    auto f = split_tabs(line);
    if (f.size() != 4) {
      throw DataError(path.string() + ": expected 4 tab-separated fields, found " + std::to_string(f.size()), line_no);
    }
    int label = 0;
    try {
      std::size_t used = 0;
      label = std::stoi(f[2], &used);
      if (used != f[2].size() || label < 0) throw std::invalid_argument(f[2]);
    } catch (const std::exception&) {
      throw DataError(path.string() + ": bad label '" + f[2] + "'", line_no);
    }
    out.push_back({std::move(f[0]), std::move(f[1]), label, std::move(f[3])});
  }
  return out;
}

void write_labeled(const std::filesystem::path& path, std::span<const LabeledTextExample> examples) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& e : examples) out << e.text_a << '\t' << e.text_b << '\t' << e.label << '\t' << e.language << '\n';
}

LabeledPairExample encode_example(const Vocab& vocab, const LabeledTextExample& example) {
  return {encode(vocab, example.text_a), encode(vocab, example.text_b), example.label, example.language, -1};
}

std::vector<LabeledPairExample> code_switch_augment(std::span<const BilingualExample> examples) {
  std::vector<LabeledPairExample> out;
  out.reserve(examples.size() * 2);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const BilingualExample& ex = examples[i];
    if (ex.pivot.text_a.empty() || ex.pivot.text_b.empty() || ex.target.text_a.empty() || ex.target.text_b.empty()) {
      throw DataError("code-switch example " + std::to_string(i) + " is missing a translated counterpart");
    }
    if (ex.pivot.label != ex.target.label) {
      throw DataError("code-switch example " + std::to_string(i) + " has different labels across languages");
    }
    const int group = static_cast<int>(i);
    out.push_back({ex.target.text_a, ex.pivot.text_b, ex.target.label,
                   ex.target.language + "-" + ex.pivot.language, group});
    out.push_back({ex.pivot.text_a, ex.target.text_b, ex.target.label,
                   ex.pivot.language + "-" + ex.target.language, group});
  }
  return out;
}

std::vector<std::vector<int>> make_group_batches(std::span<const LabeledPairExample> examples, int batch_size,
                                                 std::uint64_t seed) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  // Groups in first-appearance order, then shuffled as units.
  std::vector<std::vector<int>> groups;
  std::unordered_map<int, std::size_t> slot;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const int g = examples[i].group;
    if (g < 0) {
      groups.push_back({static_cast<int>(i)});
      continue;
    }
    auto [it, inserted] = slot.emplace(g, groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(static_cast<int>(i));
  }
  Rng rng(seed);
  rng.shuffle(std::span<std::vector<int>>(groups));

  std::vector<std::vector<int>> batches;
  std::vector<int> current;
  for (const auto& g : groups) {
    if (!current.empty() && current.size() + g.size() > static_cast<std::size_t>(batch_size)) {
      batches.push_back(std::move(current));
      current.clear();
    }
    current.insert(current.end(), g.begin(), g.end());
  }
  if (!current.empty()) batches.push_back(std::move(current));
  return batches;
}

}  // namespace ppa
