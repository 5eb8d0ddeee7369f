// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>

#include "ppa/corpus.hpp"
#include "ppa/encoder.hpp"

namespace ppa {

/// Raised for inconsistent training or model settings.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Query encoder, momentum key encoder and the queue of negative keys.
///
/// The queue is a ring buffer of K unit vectors. Enqueueing writes at the
/// cursor and advances it, so the oldest entries are the ones overwritten.
class MoCoState {
 public:
  /// Starts from an existing query encoder (for example a warm-up MLM
  /// model). The key encoder is an exact copy; the queue holds K random unit
  /// vectors drawn from seed. Throws ConfigError when K < batch_size, m is
  /// outside [0, 1] or tau is not positive.
  MoCoState(EncoderParams query, int queue_size, double momentum, double temperature, std::uint64_t seed,
            int batch_size = 1);

  /// Freshly initialized query encoder from seed, then as above.
  static MoCoState init(const EncoderConfig& config, int queue_size, double momentum, double temperature,
                        std::uint64_t seed, int batch_size = 1);

  EncoderParams& query() { return query_; }
  const EncoderParams& query() const { return query_; }
  EncoderParams& key() { return key_; }
  const EncoderParams& key() const { return key_; }

  /// [K, d_k] storage order (not age order).
  const Tensor& queue() const { return queue_; }
  Tensor& queue_storage() { return queue_; }
  int queue_size() const { return queue_.rows(); }
  int cursor() const { return cursor_; }
  void set_cursor(int cursor);
  /// Queue rows from oldest to newest.
  Tensor queue_by_age() const;

  double momentum() const { return momentum_; }
  double temperature() const { return temperature_; }

  /// Appends rows of keys [b, d_k], evicting the oldest b entries.
  /// Throws DimensionError when b > K or widths disagree.
  void enqueue(const Tensor& keys);
  /// theta_k = m * theta_k + (1 - m) * theta_q for every parameter.
  void momentum_update();

 private:
  EncoderParams query_;
  EncoderParams key_;
  Tensor queue_;
  int cursor_ = 0;
  double momentum_;
  double temperature_;
};

/// Elementwise theta_k = m * theta_k + (1 - m) * theta_q.
void momentum_update(EncoderParams& key, const EncoderParams& query, double momentum);

/// Mean InfoNCE over rows of z_q and z_pos [B, d_k] against the queue
/// [K, d_k]. Row b contributes cross-entropy over the K + 1 logits
/// (z_q.z_pos, z_q.queue_0, ...) / tau with the positive as target. The
/// scores and log-sum-exp are evaluated in double precision.
Var info_nce(Var z_q, Var z_pos, const Tensor& queue, double temperature);
/// Single-instance form on plain vectors; the result stays in double.
double info_nce(const Tensor& z_q, const Tensor& z_pos, const Tensor& queue, double temperature);

/// Keys of a batch from the momentum encoder, without gradient: [B, d_k].
Tensor encode_keys(const EncoderParams& key, const AlignmentBatch& batch);

/// Loss of the query side of a batch against the current queue, recorded on
/// tape so that gradient reaches the query encoder.
Var alignment_loss(Tape& tape, MoCoState& state, const AlignmentBatch& batch, const Tensor& keys);

struct AlignmentStepResult {
  double loss = 0.0;
  Tensor keys;
};

/// One contrastive step without an optimizer update: loss against the
/// pre-step queue, backward into the query gradients, enqueue this batch's
/// keys, then momentum update.
AlignmentStepResult alignment_step(MoCoState& state, const AlignmentBatch& batch);

}  // namespace ppa
