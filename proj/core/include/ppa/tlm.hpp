// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "ppa/corpus.hpp"
#include "ppa/encoder.hpp"
#include "ppa/rng.hpp"

namespace ppa {

/// Label value at positions that were not selected for prediction.
inline constexpr int kIgnoreLabel = -1;
inline constexpr double kMaskRate = 0.15;
inline constexpr double kMaskTokenShare = 0.8;
inline constexpr double kRandomTokenShare = 0.1;

/// Token ids with segment (token-type) ids of equal length.
struct SegmentedInput {
  TokenSequence ids;
  std::vector<int> segments;
};

/// [CLS] first [SEP] second [SEP], where first is the source side unless
/// shuffle_flag is set. Segment ids are 0 through the middle [SEP] and 1
/// after it. Throws std::invalid_argument when the result exceeds
/// max_seq_len (0 disables the check).
SegmentedInput build_tlm_input(const ParallelPair& pair, bool shuffle_flag, int max_seq_len = 0);
/// [CLS] side [SEP], all segment 0.
SegmentedInput build_mlm_input(const TokenSequence& side);

/// True for tokens that may be selected for prediction: everything except
/// [PAD], [CLS], [SEP] and [MASK].
bool maskable(int id);

struct MaskedSequence {
  TokenSequence input_ids;
  /// Original token at selected positions, kIgnoreLabel elsewhere.
  std::vector<int> labels;
  std::vector<int> mask_positions;
  std::vector<int> segments;
};

/// Counts of what happened to selected tokens, for statistics tests.
struct MaskingTally {
  std::size_t maskable = 0;
  std::size_t selected = 0;
  std::size_t to_mask = 0;
  std::size_t to_random = 0;
  std::size_t unchanged = 0;
};

/// Selects each maskable token independently with probability 0.15; a
/// selected token becomes [MASK] with probability 0.8, a uniformly drawn
/// non-reserved token with probability 0.1, and stays unchanged otherwise.
MaskedSequence apply_masking(const SegmentedInput& input, int vocab_size, Rng& rng, MaskingTally* tally = nullptr);
MaskedSequence apply_masking(const SegmentedInput& input, int vocab_size, std::uint64_t seed);

using MaskedBatch = std::vector<MaskedSequence>;

std::size_t masked_count(const MaskedBatch& batch);

/// Masked bilingual inputs for the pairs of an alignment batch, ordered by
/// that batch's shuffle flags.
MaskedBatch make_tlm_batch(std::span<const ParallelPair> pairs, const AlignmentBatch& batch, int vocab_size,
                           Rng& rng);

/// Both sides of a pair as separate monolingual sequences, masked with the
/// same scheme.
std::array<MaskedSequence, 2> mlm_variant(const ParallelPair& pair, int vocab_size, Rng& rng);
std::array<MaskedSequence, 2> mlm_variant(const ParallelPair& pair, int vocab_size, std::uint64_t seed);
/// mlm_variant over every pair of an alignment batch, source side first.
MaskedBatch make_mlm_batch(std::span<const ParallelPair> pairs, const AlignmentBatch& batch, int vocab_size,
                           Rng& rng);

/// Mean cross-entropy of the original tokens over all selected positions of
/// the batch, through the tied output layer. A batch with no selected
/// position yields a constant 0 without gradient.
Var tlm_loss(Tape& tape, EncoderParams& params, const MaskedBatch& batch);

}  // namespace ppa
