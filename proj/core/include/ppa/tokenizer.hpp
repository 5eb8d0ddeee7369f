// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ppa {

/// Subword ids of one text, without [CLS]/[SEP].
using TokenSequence = std::vector<int>;

/// Prefix marking a piece that continues a word.
inline constexpr std::string_view kContinuationPrefix = "##";

/// Immutable token <-> id table. Ids 0..4 are the reserved specials.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kNumReserved = 5;

  static const std::vector<std::string>& reserved_tokens();

  /// Tokens in id order; the first five must be the reserved tokens and all
  /// tokens must be distinct.
  explicit Vocab(std::vector<std::string> tokens, bool lowercase = false);

  /// One token per line, line number = id.
  static Vocab load(const std::filesystem::path& path, bool lowercase = false);
  void save(const std::filesystem::path& path) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  /// Id of a token, or -1 when absent.
  int find(std::string_view token) const;
  bool contains(std::string_view token) const { return find(token) >= 0; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  bool lowercase() const { return lowercase_; }
  static bool is_special(int id) { return id >= 0 && id < kNumReserved; }

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_ && lowercase_ == other.lowercase_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  std::size_t max_piece_bytes_ = 0;
  bool lowercase_ = false;

  friend TokenSequence encode(const Vocab& vocab, std::string_view text);
};

struct VocabOptions {
  bool lowercase = false;
};

/// Builds a subword vocabulary of at most target_size entries.
///
/// Every character seen in the corpus enters first, in both word-initial and
/// continuation form, ordered by frequency. Whole words follow by frequency.
/// Ties break lexicographically, so the result is a pure function of the
/// corpus and size. Words that do not fit are segmented into smaller pieces
/// at encode time.
Vocab build_vocab(std::span<const std::string> corpus_lines, int target_size, const VocabOptions& options = {});

/// Greedy longest-match segmentation of each whitespace-separated word. A
/// word with no complete segmentation becomes a single [UNK].
TokenSequence encode(const Vocab& vocab, std::string_view text);

/// Joins pieces back into text; continuation pieces attach to the previous
/// piece and [UNK] is rendered literally.
std::string decode(const Vocab& vocab, std::span<const int> ids);

/// Splits on ASCII whitespace.
std::vector<std::string_view> split_words(std::string_view text);

}  // namespace ppa
