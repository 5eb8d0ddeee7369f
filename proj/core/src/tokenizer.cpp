// SPDX-License-Identifier: Apache-2.0
#include "ppa/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <stdexcept>

namespace ppa {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

// Byte length of the UTF-8 sequence starting with lead byte c. Stray
// continuation bytes count as one so malformed input still advances.
std::size_t utf8_length(unsigned char c) {
  if (c < 0x80) return 1;
  if ((c >> 5) == 0x6) return 2;
  if ((c >> 4) == 0xe) return 3;
  if ((c >> 3) == 0x1e) return 4;
  return 1;
}

std::vector<std::size_t> char_boundaries(std::string_view word) {
  std::vector<std::size_t> cuts;
  std::size_t i = 0;
  while (i < word.size()) {
    cuts.push_back(i);
    i += std::min(utf8_length(static_cast<unsigned char>(word[i])), word.size() - i);
  }
  cuts.push_back(word.size());
  return cuts;
}

std::string lowered(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

using CountedToken = std::pair<std::string, long long>;

std::vector<CountedToken> by_frequency(const std::map<std::string, long long>& counts) {
  std::vector<CountedToken> v(counts.begin(), counts.end());
  std::stable_sort(v.begin(), v.end(), [](const CountedToken& a, const CountedToken& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return v;
}

}  // namespace

const std::vector<std::string>& Vocab::reserved_tokens() {
  static const std::vector<std::string> kReserved = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  return kReserved;
}

Vocab::Vocab(std::vector<std::string> tokens, bool lowercase) : tokens_(std::move(tokens)), lowercase_(lowercase) {
  const auto& reserved = reserved_tokens();
  if (tokens_.size() < reserved.size() || !std::equal(reserved.begin(), reserved.end(), tokens_.begin())) {
    throw std::invalid_argument("vocabulary must start with [PAD] [UNK] [CLS] [SEP] [MASK]");
  }
  ids_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw std::invalid_argument("empty token at id " + std::to_string(i));
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("duplicate token '" + tokens_[i] + "' at id " + std::to_string(i));
    }
    max_piece_bytes_ = std::max(max_piece_bytes_, tokens_[i].size());
  }
}

Vocab Vocab::load(const std::filesystem::path& path, bool lowercase) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocab(std::move(tokens), lowercase);
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write vocabulary " + path.string());
  for (const std::string& t : tokens_) out << t << '\n';
}

int Vocab::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? -1 : it->second;
}

std::vector<std::string_view> split_words(std::string_view text) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) words.push_back(text.substr(start, i - start));
  }
  return words;
}

Vocab build_vocab(std::span<const std::string> corpus_lines, int target_size, const VocabOptions& options) {
  if (target_size <= Vocab::kNumReserved) {
    throw std::invalid_argument("vocabulary size must exceed the " + std::to_string(Vocab::kNumReserved) +
                                " reserved tokens");
  }
  std::map<std::string, long long> word_counts;
  for (const std::string& line : corpus_lines) {
    for (std::string_view w : split_words(line)) {
      word_counts[options.lowercase ? lowered(w) : std::string(w)] += 1;
    }
  }
  if (word_counts.empty()) throw std::invalid_argument("cannot build a vocabulary from an empty corpus");

  std::map<std::string, long long> char_counts;
  std::map<std::string, long long> whole_words;
  for (const auto& [word, count] : word_counts) {
    const auto cuts = char_boundaries(word);
    for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
      std::string piece = word.substr(cuts[c], cuts[c + 1] - cuts[c]);
      if (c > 0) piece = std::string(kContinuationPrefix) + piece;
      char_counts[piece] += count;
    }
    if (cuts.size() > 2) whole_words[word] += count;
  }

  std::vector<std::string> tokens = Vocab::reserved_tokens();
  std::unordered_map<std::string, bool> taken;
  for (const auto& t : tokens) taken[t] = true;
  auto admit = [&](const std::string& piece) {
    if (static_cast<int>(tokens.size()) >= target_size || taken.count(piece)) return;
    taken[piece] = true;
    tokens.push_back(piece);
  };
  for (const auto& [piece, count] : by_frequency(char_counts)) admit(piece);
  for (const auto& [word, count] : by_frequency(whole_words)) admit(word);
  return Vocab(std::move(tokens), options.lowercase);
}

TokenSequence encode(const Vocab& vocab, std::string_view text) {
  TokenSequence ids;
  std::string buffer;
  for (std::string_view raw : split_words(text)) {
    std::string word = vocab.lowercase() ? lowered(raw) : std::string(raw);
    const auto cuts = char_boundaries(word);
    const std::size_t mark = ids.size();
    bool failed = false;
    std::size_t c = 0;
    while (c + 1 < cuts.size()) {
      int match = -1;
      std::size_t end_cut = c;
      for (std::size_t e = cuts.size() - 1; e > c; --e) {
        const std::size_t bytes = cuts[e] - cuts[c];
        if (bytes > vocab.max_piece_bytes_) continue;
        buffer.clear();
        if (c > 0) buffer.append(kContinuationPrefix);
        buffer.append(word, cuts[c], bytes);
        const int id = vocab.find(buffer);
        if (id >= Vocab::kNumReserved) {
          match = id;
          end_cut = e;
          break;
        }
      }
      if (match < 0) {
        failed = true;
        break;
      }
      ids.push_back(match);
      c = end_cut;
    }
    if (failed) {
      ids.resize(mark);
      ids.push_back(Vocab::kUnk);
    }
  }
  return ids;
}

std::string decode(const Vocab& vocab, std::span<const int> ids) {
  std::string text;
  for (int id : ids) {
    const std::string& piece = vocab.token(id);
    if (piece.starts_with(kContinuationPrefix) && piece.size() > kContinuationPrefix.size() && !text.empty()) {
      text.append(piece, kContinuationPrefix.size());
    } else {
      if (!text.empty()) text.push_back(' ');
      text.append(piece);
    }
  }
  return text;
}

}  // namespace ppa
