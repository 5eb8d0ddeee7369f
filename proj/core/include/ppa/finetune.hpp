// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ppa/corpus.hpp"
#include "ppa/encoder.hpp"
#include "ppa/optimizer.hpp"
#include "ppa/tlm.hpp"

namespace ppa {

/// Downstream training settings.
struct FinetuneConfig {
  int batch_size = 32;
  int max_seq_len = 128;
  double peak_lr = 5e-5;
  /// Warm-up by count when warmup_steps >= 0, else by fraction.
  std::int64_t warmup_steps = -1;
  double warmup_fraction = 0.1;
  double weight_decay = 0.01;
  int epochs = 2;
  double clip_norm = 1.0;
  std::uint64_t seed = 1;
  /// Train the head only; the encoder receives no gradient.
  bool freeze_encoder = false;
  int max_answer_len = 30;

  std::int64_t warmup_for(std::int64_t total_steps) const;
  void validate() const;
  bool operator==(const FinetuneConfig&) const = default;

  /// Batch 32, length 128, peak lr 5e-5, warm-up over the first 1000
  /// iterations, 2 epochs.
  static FinetuneConfig xnli();
  /// As xnli() with length 386 and peak lr 3e-5.
  static FinetuneConfig mlqa();
};

/// [CLS] a [SEP] b [SEP] with segment ids 0 up to the middle [SEP] and 1
/// after. Throws DataError when longer than max_seq_len.
SegmentedInput build_pair_input(const TokenSequence& a, const TokenSequence& b, int max_seq_len);

/// Softmax classifier over the final [CLS] state: logits = h W + b.
struct ClassifierHead {
  Parameter weight;
  Parameter bias;

  ClassifierHead(int hidden, int num_classes, std::uint64_t seed);
  int num_classes() const { return bias.value.cols(); }
};

struct ClassifierModel {
  EncoderParams encoder;
  ClassifierHead head;
};

/// Per-epoch progress reported during finetuning.
using EpochCallback = std::function<void(int epoch, double mean_loss)>;

/// Cross-entropy training of head and (unless frozen) encoder. Batches are
/// built with make_group_batches, so examples sharing a co-batch group are
/// always trained together. Throws std::invalid_argument for an empty set
/// and DataError for a label outside [0, num_classes).
ClassifierModel finetune_classifier(const EncoderParams& encoder, std::span<const LabeledPairExample> train,
                                    int num_classes, const FinetuneConfig& cfg, const EpochCallback& on_epoch = {});

/// [examples, classes] logits without gradient.
Tensor classifier_logits(const ClassifierModel& model, std::span<const LabeledPairExample> examples,
                         int max_seq_len = 128);
std::vector<int> predict_labels(const ClassifierModel& model, std::span<const LabeledPairExample> examples,
                                int max_seq_len = 128);
double accuracy(const ClassifierModel& model, std::span<const LabeledPairExample> examples, int max_seq_len = 128);

/// Extractive QA example. Gold start/end index tokens of the context.
struct QaExample {
  TokenSequence question;
  TokenSequence context;
  int start = 0;
  int end = 0;
  int id = 0;
  std::string language;
};

/// Start and end scorers applied to every token state.
struct SpanHead {
  Parameter start;
  Parameter end;

  SpanHead(int hidden, std::uint64_t seed);
};

struct SpanModel {
  EncoderParams encoder;
  SpanHead head;
};

/// Loss per example is the mean of the start and end cross-entropies over
/// the context positions only. Throws DataError naming the example when a
/// gold span is empty, reversed or outside the context.
SpanModel finetune_span(const EncoderParams& encoder, std::span<const QaExample> train, const FinetuneConfig& cfg,
                        const EpochCallback& on_epoch = {});

struct SpanPrediction {
  int start = 0;
  int end = 0;
  bool operator==(const SpanPrediction&) const = default;
};

/// Best span over context logits: maximizes start_logit + end_logit subject
/// to start <= end <= start + max_answer_len. Ties go to the earliest start,
/// then the shortest span. Indices are context positions.
SpanPrediction decode_span(std::span<const float> start_logits, std::span<const float> end_logits,
                           int max_answer_len);

std::vector<SpanPrediction> predict_spans(const SpanModel& model, std::span<const QaExample> examples,
                                          int max_answer_len, int max_seq_len = 386);
/// Fraction of exact matches and mean token-overlap F1 against gold spans.
double exact_match(std::span<const SpanPrediction> predictions, std::span<const QaExample> gold);
double span_f1(std::span<const SpanPrediction> predictions, std::span<const QaExample> gold);

/// Top-1 translation retrieval: each source is matched to the target with
/// the highest cosine similarity of sentence embeddings; ties go to the
/// lower index. Returns the fraction matched to their own translation.
double evaluate_retrieval(const EncoderParams& encoder, std::span<const ParallelPair> pairs);

struct LanguageScore {
  std::string language;
  std::string metric;
  double value = 0.0;
};

/// Scores of one evaluation run, written as CSV "task,language,metric,value".
struct EvalReport {
  std::string task;
  std::vector<LanguageScore> scores;

  void write_csv(const std::filesystem::path& path) const;
};

/// Applies a classifier trained on one language directly to a labeled test
/// set in another. Only the trained model and the test set are visible.
EvalReport evaluate_zero_shot(const ClassifierModel& model, std::span<const LabeledPairExample> test,
                              const std::string& language, int max_seq_len = 128);

/// "example_id\tprediction" lines.
void write_predictions(const std::filesystem::path& path, std::span<const int> ids,
                       std::span<const std::string> predictions);

}  // namespace ppa
