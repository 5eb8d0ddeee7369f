// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ppa/config.hpp"
#include "ppa/corpus.hpp"
#include "ppa/finetune.hpp"
#include "ppa/tasks.hpp"
#include "ppa/trainer.hpp"

namespace ppa {

/// Sizes of the generated synthetic data.
struct DataConfig {
  int n_pairs = 20000;
  int heldout_pairs = 200;
  int vocab_words = 150;
  int vocab_size = 512;
  int min_words = 10;
  int max_words = 40;
  int task_train = 3000;
  int task_test = 600;
  int qa_train = 2000;
  int qa_test = 300;
  std::uint64_t seed = 1;

  bool operator==(const DataConfig&) const = default;
};

void store(KeyValues& kv, const DataConfig& config, const std::string& prefix = "data.");
void load(const KeyValues& kv, DataConfig& config, const std::string& prefix = "data.");

/// Everything a run needs: data sizes, alignment and finetuning settings.
struct PipelineConfig {
  DataConfig data;
  TrainConfig train;
  FinetuneConfig finetune;
  /// Seeds averaged over by the ablation matrix.
  int ablate_seeds = 1;
  /// Whether the ablation matrix also finetunes each variant.
  bool ablate_finetune = true;
  /// Finetune command: translate-train instead of zero-shot, and whether
  /// translate-train uses code-switching.
  bool translate_train = false;
  bool code_switch = true;

  KeyValues to_key_values() const;
  /// Starts from base and applies kv. Unknown keys are an error.
  static PipelineConfig from_key_values(const KeyValues& kv, const PipelineConfig& base);
  static PipelineConfig from_key_values(const KeyValues& kv) { return from_key_values(kv, toy()); }
  /// Toy defaults: 20k pairs, L=2 d=64 encoder, 400 warm-up steps, 3 epochs.
  static PipelineConfig toy();
  /// Full-scale alignment and XNLI finetuning settings on the toy data.
  static PipelineConfig paper();
};

/// File names inside a data directory.
struct DataFiles {
  std::filesystem::path dir;

  std::filesystem::path corpus() const { return dir / "corpus.parallel.tsv"; }
  std::filesystem::path word_map() const { return dir / "corpus.wordmap.tsv"; }
  std::filesystem::path heldout() const { return dir / "heldout.parallel.tsv"; }
  std::filesystem::path vocab() const { return dir / "vocab.txt"; }
  std::filesystem::path task_train(const std::string& language) const {
    return dir / ("relation.train." + language + ".tsv");
  }
  std::filesystem::path task_test(const std::string& language) const {
    return dir / ("relation.test." + language + ".tsv");
  }
  std::filesystem::path qa_train(const std::string& language) const { return dir / ("qa.train." + language + ".tsv"); }
  std::filesystem::path qa_test(const std::string& language) const { return dir / ("qa.test." + language + ".tsv"); }
};

/// Generates the parallel corpus, held-out pairs, vocabulary, relation task
/// and QA task for both languages. Deterministic given the config.
DataFiles generate_data(const DataConfig& config, const std::filesystem::path& dir);

/// Encoder tensors plus their config, as <dir>/encoder.tensors and
/// <dir>/encoder.cfg.
void save_encoder(const std::filesystem::path& dir, const EncoderParams& params);
EncoderParams load_encoder(const std::filesystem::path& dir);

/// Loaded alignment data with its vocabulary.
struct AlignmentData {
  Vocab vocab;
  ParallelData train;
  ParallelData heldout;
};

AlignmentData load_alignment_data(const DataFiles& files, int max_seq_len);

struct AlignmentOutcome {
  EncoderParams warmup;
  EncoderParams aligned;
  TrainMetrics metrics;
  double warmup_retrieval = 0.0;
  double aligned_retrieval = 0.0;
};

/// Warm-up MLM (or a supplied warm-up encoder), then alignment training;
/// retrieval is measured on the held-out pairs before and after.
AlignmentOutcome run_alignment(const AlignmentData& data, const TrainConfig& cfg, const TrainOptions& options = {},
                               const std::optional<EncoderParams>& warmup = std::nullopt);

struct ClassificationOutcome {
  double base_accuracy = 0.0;
  double cipher_accuracy = 0.0;
};

/// Trains on base-language examples only and scores both test sets.
ClassificationOutcome run_zero_shot(const EncoderParams& encoder, const Vocab& vocab, const DataFiles& files,
                                    const FinetuneConfig& cfg);
/// Translate-train: base examples plus either the code-switched pairs (two
/// per example, co-batched) or, with code_switch off, the cipher examples.
ClassificationOutcome run_translate_train(const EncoderParams& encoder, const Vocab& vocab, const DataFiles& files,
                                          const FinetuneConfig& cfg, bool code_switch);
/// The training set run_translate_train would use.
std::vector<LabeledPairExample> translate_train_set(const Vocab& vocab, const DataFiles& files, bool code_switch);

/// One row of the ablation comparison.
struct AblationRow {
  std::string variant;
  double retrieval = 0.0;
  std::optional<double> zero_shot;
  std::optional<double> translate_train;
};

/// Runs the variants full, -MoCo, -TLM, repl TLM w/ MLM and -CS (plus the
/// warm-up-only baseline), averaging each metric over the seeds. Without
/// finetuning only retrieval is reported. -CS differs from the full system
/// in the translate-train stage alone.
std::vector<AblationRow> run_ablation(const PipelineConfig& config, const DataFiles& files);
void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);

}  // namespace ppa
