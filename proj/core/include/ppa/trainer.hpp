// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "ppa/corpus.hpp"
#include "ppa/moco.hpp"
#include "ppa/optimizer.hpp"
#include "ppa/tlm.hpp"

namespace ppa {

/// Hyperparameters of alignment training and its ablation switches.
struct TrainConfig {
  EncoderConfig encoder;
  int batch_size = 64;
  int max_seq_len = 128;
  double peak_lr = 5e-4;
  double warmup_fraction = 0.1;
  double weight_decay = 0.01;
  int epochs = 3;
  int queue_size = 256;
  double momentum = 0.99;
  double temperature = 0.05;
  double clip_norm = 1.0;
  std::uint64_t seed = 1;
  bool use_moco = true;
  bool use_tlm = true;
  bool use_mlm_instead_of_tlm = false;

  /// Monolingual masked-LM steps run before alignment (0 disables).
  int warmup_mlm_steps = 400;
  int warmup_mlm_batch = 64;
  double warmup_mlm_lr = 1e-3;

  /// Throws ConfigError for out-of-range values, conflicting TLM/MLM
  /// switches, or no enabled objective.
  void validate() const;
  /// True when the TLM branch runs, in either its bilingual or monolingual
  /// (MLM replacement) form.
  bool uses_masked_lm() const { return use_tlm || use_mlm_instead_of_tlm; }
  bool operator==(const TrainConfig&) const = default;

  /// Batch 128, max length 128, peak lr 3e-5, 10% warm-up, weight decay
  /// 0.01, momentum 0.999, queue 32000, temperature 0.05, mBERT-sized
  /// encoder.
  static TrainConfig paper();
};

/// One row of the per-step metrics stream.
struct StepMetrics {
  std::int64_t step = 0;
  std::optional<double> l_moco;
  std::optional<double> l_tlm;
  double l_total = 0.0;
  double lr = 0.0;

  bool operator==(const StepMetrics&) const = default;
};

struct TrainMetrics {
  std::vector<StepMetrics> steps;
  /// Held-out retrieval accuracy after each epoch, when held-out pairs are
  /// given.
  std::vector<double> epoch_retrieval;
};

inline constexpr const char* kMetricsHeader = "step,l_moco,l_tlm,l_total,lr";
/// CSV row for a step; absent components print as NA.
std::string format_metrics_row(const StepMetrics& row);

/// Background writer that owns a CSV file. Rows are handed over through a
/// queue; close() (or destruction) drains it and joins the thread.
class MetricsWriter {
 public:
  MetricsWriter(const std::filesystem::path& path, std::string header, bool append = false);
  ~MetricsWriter();
  MetricsWriter(const MetricsWriter&) = delete;
  MetricsWriter& operator=(const MetricsWriter&) = delete;

  void push(std::string line);
  void close();

 private:
  void loop();

  std::ofstream out_;
  std::mutex mutex_;
  std::condition_variable ready_;
  std::deque<std::string> pending_;
  bool closing_ = false;
  std::thread worker_;
};

/// Monolingual masked-LM training from a fresh initialization: every side
/// of every pair is an independent [CLS] text [SEP] sequence, batches are
/// drawn uniformly at random. Stands in for a pretrained starting point.
EncoderParams warmup_mlm(const EncoderConfig& config, std::span<const ParallelPair> pairs, int steps, int batch_size,
                         double peak_lr, std::uint64_t seed);

/// Step-by-step alignment training with resumable state.
///
/// A step builds the next alignment batch, computes the contrastive loss
/// against the pre-step queue and the masked-LM loss on the same pairs in
/// the same side order, backpropagates their sum into the query encoder,
/// clips, applies AdamW, then enqueues the batch keys and updates the key
/// encoder. Everything random is derived from cfg.seed.
class PpaTrainer {
 public:
  PpaTrainer(MoCoState state, std::span<const ParallelPair> pairs, TrainConfig cfg);

  /// Reloads a checkpoint written by save(). The pair list must be the one
  /// the run started with. Throws TensorFormatError / ConfigError on
  /// damaged or mismatched checkpoints without changing anything.
  static PpaTrainer restore(const std::filesystem::path& dir, std::span<const ParallelPair> pairs);
  void save(const std::filesystem::path& dir) const;

  /// Runs one step; returns its metrics, or nullopt once training is done.
  std::optional<StepMetrics> step();
  bool done() const { return step_ >= total_steps_; }

  std::int64_t steps_done() const { return step_; }
  std::int64_t total_steps() const { return total_steps_; }
  int epoch() const { return epoch_; }
  /// True right after the last batch of an epoch was consumed.
  bool at_epoch_end() const { return batch_in_epoch_ == 0 && step_ > 0; }

  MoCoState& state() { return state_; }
  const MoCoState& state() const { return state_; }
  const TrainConfig& config() const { return cfg_; }
  const AdamW& optimizer() const { return optimizer_; }
  const Rng& mask_rng() const { return mask_rng_; }

 private:
  std::vector<Parameter*> query_params();
  void open_epoch();

  MoCoState state_;
  std::span<const ParallelPair> pairs_;
  TrainConfig cfg_;
  AdamW optimizer_;
  Rng mask_rng_;
  std::int64_t step_ = 0;
  std::int64_t total_steps_ = 0;
  std::int64_t warmup_steps_ = 0;
  int epoch_ = 0;
  std::size_t batch_in_epoch_ = 0;
  std::optional<AlignmentBatchStream> stream_;
};

struct TrainOptions {
  /// Held-out pairs for per-epoch retrieval accuracy; skipped when empty.
  std::span<const ParallelPair> heldout;
  std::optional<std::filesystem::path> metrics_csv;
  std::optional<std::filesystem::path> retrieval_csv;
  /// Append to existing CSV files instead of replacing them (resumed runs).
  bool append = false;
  /// Pause once this many steps are done; the trainer can continue later.
  std::optional<std::int64_t> stop_at_step;
  /// Called after every step.
  std::function<void(const StepMetrics&)> on_step;
};

/// Runs a trainer to completion, collecting metrics.
TrainMetrics train_ppa(PpaTrainer& trainer, const TrainOptions& options = {});
/// Convenience: alignment training of an existing encoder.
TrainMetrics train_ppa(MoCoState& state, std::span<const ParallelPair> pairs, const TrainConfig& cfg,
                       const TrainOptions& options = {});

}  // namespace ppa
