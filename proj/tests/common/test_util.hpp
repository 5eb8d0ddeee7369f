// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "ppa/corpus.hpp"
#include "ppa/encoder.hpp"
#include "ppa/rng.hpp"

namespace ppa::test {

/// One layer, 16 hidden, 2 heads, 40-token vocabulary.
inline EncoderConfig tiny_config() {
  EncoderConfig c;
  c.num_layers = 1;
  c.hidden = 16;
  c.ffn = 32;
  c.heads = 2;
  c.vocab_size = 40;
  c.max_positions = 64;
  c.projection = 8;
  return c;
}

/// Random non-reserved token ids.
inline TokenSequence random_tokens(Rng& rng, int length, int vocab_size) {
  TokenSequence out;
  for (int i = 0; i < length; ++i) out.push_back(Vocab::kNumReserved + static_cast<int>(rng.below(vocab_size - 5)));
  return out;
}

inline std::vector<ParallelPair> random_pairs(std::uint64_t seed, int n, int vocab_size, int min_len = 10,
                                              int max_len = 14) {
  Rng rng(seed);
  std::vector<ParallelPair> pairs;
  for (int i = 0; i < n; ++i) {
    ParallelPair p;
    p.src = random_tokens(rng, rng.range(min_len, max_len), vocab_size);
    p.tgt = random_tokens(rng, rng.range(min_len, max_len), vocab_size);
    p.pair_id = i;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("ppa_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace ppa::test
