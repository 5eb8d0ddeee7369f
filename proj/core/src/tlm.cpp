// SPDX-License-Identifier: Apache-2.0
#include "ppa/tlm.hpp"

#include <stdexcept>

namespace ppa {

SegmentedInput build_tlm_input(const ParallelPair& pair, bool shuffle_flag, int max_seq_len) {
  const TokenSequence& first = shuffle_flag ? pair.tgt : pair.src;
  const TokenSequence& second = shuffle_flag ? pair.src : pair.tgt;
  SegmentedInput out;
  out.ids.reserve(first.size() + second.size() + kPairSpecialTokens);
  out.ids.push_back(Vocab::kCls);
  out.ids.insert(out.ids.end(), first.begin(), first.end());
  out.ids.push_back(Vocab::kSep);
  out.segments.assign(out.ids.size(), 0);
  out.ids.insert(out.ids.end(), second.begin(), second.end());
  out.ids.push_back(Vocab::kSep);
  out.segments.resize(out.ids.size(), 1);
  if (max_seq_len > 0 && static_cast<int>(out.ids.size()) > max_seq_len) {
    throw std::invalid_argument("pair " + std::to_string(pair.pair_id) + " needs " + std::to_string(out.ids.size()) +
                                " tokens, limit is " + std::to_string(max_seq_len));
  }
  return out;
}

SegmentedInput build_mlm_input(const TokenSequence& side) {
  SegmentedInput out;
  out.ids.reserve(side.size() + 2);
  out.ids.push_back(Vocab::kCls);
  out.ids.insert(out.ids.end(), side.begin(), side.end());
  out.ids.push_back(Vocab::kSep);
  out.segments.assign(out.ids.size(), 0);
  return out;
}

bool maskable(int id) {
  return id != Vocab::kPad && id != Vocab::kCls && id != Vocab::kSep && id != Vocab::kMask;
}

MaskedSequence apply_masking(const SegmentedInput& input, int vocab_size, Rng& rng, MaskingTally* tally) {
  if (vocab_size <= Vocab::kNumReserved) throw std::invalid_argument("vocabulary has no ordinary tokens");
  MaskedSequence out;
  out.input_ids = input.ids;
  out.segments = input.segments.empty() ? std::vector<int>(input.ids.size(), 0) : input.segments;
  out.labels.assign(input.ids.size(), kIgnoreLabel);
  const auto ordinary = static_cast<std::uint64_t>(vocab_size - Vocab::kNumReserved);
  for (std::size_t i = 0; i < input.ids.size(); ++i) {
    const int id = input.ids[i];
    if (!maskable(id)) continue;
    if (tally) ++tally->maskable;
    if (!rng.bernoulli(kMaskRate)) continue;
    out.labels[i] = id;
    out.mask_positions.push_back(static_cast<int>(i));
    const double r = rng.uniform();
    if (r < kMaskTokenShare) {
      out.input_ids[i] = Vocab::kMask;
      if (tally) ++tally->to_mask;
    } else if (r < kMaskTokenShare + kRandomTokenShare) {
      out.input_ids[i] = Vocab::kNumReserved + static_cast<int>(rng.below(ordinary));
      if (tally) ++tally->to_random;
    } else if (tally) {
      ++tally->unchanged;
    }
    if (tally) ++tally->selected;
  }
  return out;
}

MaskedSequence apply_masking(const SegmentedInput& input, int vocab_size, std::uint64_t seed) {
  Rng rng(seed);
  return apply_masking(input, vocab_size, rng);
}

std::size_t masked_count(const MaskedBatch& batch) {
  std::size_t n = 0;
  for (const MaskedSequence& s : batch) n += s.mask_positions.size();
  return n;
}

MaskedBatch make_tlm_batch(std::span<const ParallelPair> pairs, const AlignmentBatch& batch, int vocab_size,
                           Rng& rng) {
  MaskedBatch out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const ParallelPair& pair = pairs[batch.pair_indices[i]];
    out.push_back(apply_masking(build_tlm_input(pair, batch.shuffle_flags[i]), vocab_size, rng));
  }
  return out;
}

std::array<MaskedSequence, 2> mlm_variant(const ParallelPair& pair, int vocab_size, Rng& rng) {
  return {apply_masking(build_mlm_input(pair.src), vocab_size, rng),
          apply_masking(build_mlm_input(pair.tgt), vocab_size, rng)};
}

std::array<MaskedSequence, 2> mlm_variant(const ParallelPair& pair, int vocab_size, std::uint64_t seed) {
  Rng rng(seed);
  return mlm_variant(pair, vocab_size, rng);
}

MaskedBatch make_mlm_batch(std::span<const ParallelPair> pairs, const AlignmentBatch& batch, int vocab_size,
                           Rng& rng) {
  MaskedBatch out;
  out.reserve(2 * batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto both = mlm_variant(pairs[batch.pair_indices[i]], vocab_size, rng);
    out.push_back(std::move(both[0]));
    out.push_back(std::move(both[1]));
  }
  return out;
}

Var tlm_loss(Tape& tape, EncoderParams& params, const MaskedBatch& batch) {
  std::vector<int> rows, targets;
  std::vector<EncoderInput> inputs;
  inputs.reserve(batch.size());
  int offset = 0;
  for (const MaskedSequence& s : batch) {
    for (int p : s.mask_positions) {
      rows.push_back(offset + p);
      targets.push_back(s.labels[p]);
    }
    offset += static_cast<int>(s.input_ids.size());
    inputs.push_back({s.input_ids, s.segments});
  }
  if (rows.empty()) return tape.constant(Tensor::scalar(0.0f));
  const EncoderOutput out = forward(tape, params, inputs);
  const Var logits = mlm_logits(tape, params, gather_rows(out.hidden, rows));
  return cross_entropy_rows(logits, targets);
}

}  // namespace ppa
