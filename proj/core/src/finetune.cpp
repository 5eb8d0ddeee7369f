// SPDX-License-Identifier: Apache-2.0
#include "ppa/finetune.hpp"
#include "ppa/moco.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace ppa {

std::int64_t FinetuneConfig::warmup_for(std::int64_t total_steps) const {
  if (warmup_steps >= 0) return std::min(warmup_steps, total_steps);
  return warmup_steps_for(total_steps, warmup_fraction);
}

void FinetuneConfig::validate() const {
  if (batch_size < 1) throw ConfigError("finetune batch_size must be at least 1");
  if (max_seq_len < 3) throw ConfigError("finetune max_seq_len is too small");
  if (epochs < 1) throw ConfigError("finetune epochs must be at least 1");
  if (!(peak_lr >= 0.0) || !(weight_decay >= 0.0)) throw ConfigError("negative finetune lr or decay");
  if (warmup_steps < 0 && !(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) {
    throw ConfigError("finetune warmup_fraction must lie in [0, 1]");
  }
  if (max_answer_len < 0) throw ConfigError("max_answer_len must be non-negative");
}

FinetuneConfig FinetuneConfig::xnli() {
  FinetuneConfig c;
  c.batch_size = 32;
  c.max_seq_len = 128;
  c.peak_lr = 5e-5;
  c.warmup_steps = 1000;
  c.epochs = 2;
  return c;
}

FinetuneConfig FinetuneConfig::mlqa() {
  FinetuneConfig c = xnli();
  c.max_seq_len = 386;
  c.peak_lr = 3e-5;
  return c;
}

SegmentedInput build_pair_input(const TokenSequence& a, const TokenSequence& b, int max_seq_len) {
  const std::size_t len = a.size() + b.size() + kPairSpecialTokens;
  if (static_cast<int>(len) > max_seq_len) {
    throw DataError("text pair needs " + std::to_string(len) + " tokens, limit is " + std::to_string(max_seq_len));
  }
  SegmentedInput out;
  out.ids.reserve(len);
  out.ids.push_back(Vocab::kCls);
  out.ids.insert(out.ids.end(), a.begin(), a.end());
  out.ids.push_back(Vocab::kSep);
  out.segments.assign(out.ids.size(), 0);
  out.ids.insert(out.ids.end(), b.begin(), b.end());
  out.ids.push_back(Vocab::kSep);
  out.segments.resize(out.ids.size(), 1);
  return out;
}

namespace {

Tensor init_matrix(int rows, int cols, Rng& rng) {
  Tensor t({rows, cols});
  for (float& x : t.data()) x = static_cast<float>(rng.truncated_normal(kInitStd));
  return t;
}

std::vector<Parameter*> trainable(EncoderParams& encoder, std::initializer_list<Parameter*> head, bool frozen) {
  std::vector<Parameter*> ps(head);
  if (!frozen)
    for (Parameter& p : encoder.params()) ps.push_back(&p);
  return ps;
}

// Batches for every epoch, drawn up front so the schedule length is known.
std::vector<std::vector<std::vector<int>>> plan_epochs(std::span<const LabeledPairExample> examples,
                                                       const FinetuneConfig& cfg) {
  std::vector<std::vector<std::vector<int>>> plan;
  for (int e = 0; e < cfg.epochs; ++e) {
    plan.push_back(make_group_batches(examples, cfg.batch_size, derive_seed(cfg.seed, 0x100 + e)));
  }
  return plan;
}

std::vector<std::vector<int>> plan_span_epoch(std::size_t n, int batch_size, std::uint64_t seed) {
  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  Rng rng(seed);
  rng.shuffle(std::span<int>(order));
  std::vector<std::vector<int>> batches;
  for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(batch_size)) {
    batches.emplace_back(order.begin() + i, order.begin() + std::min(n, i + static_cast<std::size_t>(batch_size)));
  }
  return batches;
}

Var classifier_forward(Tape& tape, EncoderParams& encoder, ClassifierHead& head,
                       std::span<const LabeledPairExample> examples, std::span<const int> which, int max_seq_len) {
  std::vector<EncoderInput> inputs;
  inputs.reserve(which.size());
  for (int i : which) {
    SegmentedInput in = build_pair_input(examples[i].text_a, examples[i].text_b, max_seq_len);
    inputs.push_back({std::move(in.ids), std::move(in.segments)});
  }
  const EncoderOutput out = forward(tape, encoder, inputs);
  return add_bias(matmul(out.pooled, tape.param(head.weight)), tape.param(head.bias));
}

}  // namespace

ClassifierHead::ClassifierHead(int hidden, int num_classes, std::uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("a classifier needs at least two classes");
  Rng rng(seed);
  weight = Parameter("classifier.weight", init_matrix(hidden, num_classes, rng));
  bias = Parameter("classifier.bias", Tensor({num_classes}));
}

ClassifierModel finetune_classifier(const EncoderParams& encoder, std::span<const LabeledPairExample> train,
                                    int num_classes, const FinetuneConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("classifier training set is empty");
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].label < 0 || train[i].label >= num_classes) {
      throw DataError("training example " + std::to_string(i) + " has label " + std::to_string(train[i].label) +
                      " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  ClassifierModel model{encoder, ClassifierHead(encoder.config().hidden, num_classes, derive_seed(cfg.seed, 0xc1))};
  model.encoder.set_trainable(!cfg.freeze_encoder);
  const auto plan = plan_epochs(train, cfg);
  std::int64_t total = 0;
  for (const auto& epoch : plan) total += static_cast<std::int64_t>(epoch.size());
  const std::int64_t warm = cfg.warmup_for(total);
  AdamW optimizer({0.9, 0.999, 1e-8, cfg.weight_decay}, decays_by_default);
  auto ps = trainable(model.encoder, {&model.head.weight, &model.head.bias}, cfg.freeze_encoder);

  std::int64_t step = 0;
  for (std::size_t e = 0; e < plan.size(); ++e) {
    double loss_sum = 0.0;
    for (const std::vector<int>& batch : plan[e]) {
      for (Parameter* p : ps) p->zero_grad();
      Tape tape;
      const Var logits = classifier_forward(tape, model.encoder, model.head, train, batch, cfg.max_seq_len);
      std::vector<int> labels;
      labels.reserve(batch.size());
      for (int i : batch) labels.push_back(train[i].label);
      const Var loss = cross_entropy_rows(logits, labels);
      tape.backward(loss);
      loss_sum += loss.value()[0];
      clip_grad_norm(ps, cfg.clip_norm);
      optimizer.step(ps, lr_at(step, total, cfg.peak_lr, warm));
      ++step;
    }
    if (on_epoch) on_epoch(static_cast<int>(e), loss_sum / static_cast<double>(plan[e].size()));
  }
  return model;
}

Tensor classifier_logits(const ClassifierModel& model, std::span<const LabeledPairExample> examples,
                         int max_seq_len) {
  const int classes = model.head.num_classes();
  Tensor out({std::max<int>(1, static_cast<int>(examples.size())), classes});
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < examples.size(); start += kChunk) {
    const std::size_t end = std::min(examples.size(), start + kChunk);
    std::vector<EncoderInput> inputs;
    for (std::size_t i = start; i < end; ++i) {
      SegmentedInput in = build_pair_input(examples[i].text_a, examples[i].text_b, max_seq_len);
      inputs.push_back({std::move(in.ids), std::move(in.segments)});
    }
    Tape tape(false);
    const EncoderOutput enc = forward(tape, model.encoder, inputs);
    const Var logits = add_bias(matmul(enc.pooled, tape.param(model.head.weight)), tape.param(model.head.bias));
    std::copy(logits.value().data().begin(), logits.value().data().end(), out.ptr() + start * classes);
  }
  return out;
}

std::vector<int> predict_labels(const ClassifierModel& model, std::span<const LabeledPairExample> examples,
                                int max_seq_len) {
  std::vector<int> labels;
  if (examples.empty()) return labels;
  const Tensor logits = classifier_logits(model, examples, max_seq_len);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    auto row = logits.row(static_cast<int>(i));
    labels.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return labels;
}

double accuracy(const ClassifierModel& model, std::span<const LabeledPairExample> examples, int max_seq_len) {
  if (examples.empty()) throw std::invalid_argument("accuracy of an empty example set");
  const std::vector<int> predicted = predict_labels(model, examples, max_seq_len);
  std::size_t right = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) right += predicted[i] == examples[i].label;
  return static_cast<double>(right) / static_cast<double>(examples.size());
}

SpanHead::SpanHead(int hidden, std::uint64_t seed) {
  Rng rng(seed);
  start = Parameter("span.start", init_matrix(hidden, 1, rng));
  end = Parameter("span.end", init_matrix(hidden, 1, rng));
}

namespace {

void check_span(const QaExample& ex) {
  const int n = static_cast<int>(ex.context.size());
  if (ex.start < 0 || ex.end < ex.start || ex.end >= n) {
    throw DataError("QA example " + std::to_string(ex.id) + ": answer span [" + std::to_string(ex.start) + ", " +
                    std::to_string(ex.end) + "] is not inside its " + std::to_string(n) + "-token context");
  }
}

struct SpanScores {
  Var start;  // [T, 1]
  Var end;
  std::vector<int> context_begin;  // packed row of each example's first context token
};

template <typename Model>
SpanScores span_forward(Tape& tape, Model& model, std::span<const QaExample> examples, std::span<const int> which,
                        int max_seq_len) {
  std::vector<EncoderInput> inputs;
  SpanScores scores;
  int offset = 0;
  for (int i : which) {
    SegmentedInput in = build_pair_input(examples[i].question, examples[i].context, max_seq_len);
    scores.context_begin.push_back(offset + 2 + static_cast<int>(examples[i].question.size()));
    offset += static_cast<int>(in.ids.size());
    inputs.push_back({std::move(in.ids), std::move(in.segments)});
  }
  const EncoderOutput out = forward(tape, model.encoder, inputs);
  scores.start = matmul(out.hidden, tape.param(model.head.start));
  scores.end = matmul(out.hidden, tape.param(model.head.end));
  return scores;
}

std::vector<int> context_rows(int begin, std::size_t length) {
  std::vector<int> rows(length);
  for (std::size_t j = 0; j < length; ++j) rows[j] = begin + static_cast<int>(j);
  return rows;
}

}  // namespace

SpanModel finetune_span(const EncoderParams& encoder, std::span<const QaExample> train, const FinetuneConfig& cfg,
                        const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("span training set is empty");
  for (const QaExample& ex : train) check_span(ex);
  SpanModel model{encoder, SpanHead(encoder.config().hidden, derive_seed(cfg.seed, 0x5a))};
  model.encoder.set_trainable(!cfg.freeze_encoder);
  std::vector<std::vector<std::vector<int>>> plan;
  std::int64_t total = 0;
  for (int e = 0; e < cfg.epochs; ++e) {
    plan.push_back(plan_span_epoch(train.size(), cfg.batch_size, derive_seed(cfg.seed, 0x200 + e)));
    total += static_cast<std::int64_t>(plan.back().size());
  }
  const std::int64_t warm = cfg.warmup_for(total);
  AdamW optimizer({0.9, 0.999, 1e-8, cfg.weight_decay}, decays_by_default);
  auto ps = trainable(model.encoder, {&model.head.start, &model.head.end}, cfg.freeze_encoder);

  std::int64_t step = 0;
  for (std::size_t e = 0; e < plan.size(); ++e) {
    double loss_sum = 0.0;
    for (const std::vector<int>& batch : plan[e]) {
      for (Parameter* p : ps) p->zero_grad();
      Tape tape;
      const SpanScores scores = span_forward(tape, model, train, batch, cfg.max_seq_len);
      Var total_loss;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const QaExample& ex = train[batch[b]];
        const std::vector<int> rows = context_rows(scores.context_begin[b], ex.context.size());
        const Var ls = cross_entropy(transpose(gather_rows(scores.start, rows)), ex.start);
        const Var le = cross_entropy(transpose(gather_rows(scores.end, rows)), ex.end);
        const Var both = add(ls, le);
        total_loss = total_loss.valid() ? add(total_loss, both) : both;
      }
      const Var loss = scale(total_loss, 0.5f / static_cast<float>(batch.size()));
      tape.backward(loss);
      loss_sum += loss.value()[0];
      clip_grad_norm(ps, cfg.clip_norm);
      optimizer.step(ps, lr_at(step, total, cfg.peak_lr, warm));
      ++step;
    }
    if (on_epoch) on_epoch(static_cast<int>(e), loss_sum / static_cast<double>(plan[e].size()));
  }
  return model;
}

SpanPrediction decode_span(std::span<const float> start_logits, std::span<const float> end_logits,
                           int max_answer_len) {
  if (start_logits.size() != end_logits.size() || start_logits.empty()) {
    throw DimensionError("span decoding needs equal, non-empty start and end logits");
  }
  const int n = static_cast<int>(start_logits.size());
  SpanPrediction best;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int s = 0; s < n; ++s) {
    const int last = std::min(n - 1, s + max_answer_len);
    for (int e = s; e <= last; ++e) {
      const double score = static_cast<double>(start_logits[s]) + end_logits[e];
      if (score > best_score) {
        best_score = score;
        best = {s, e};
      }
    }
  }
  return best;
}

std::vector<SpanPrediction> predict_spans(const SpanModel& model, std::span<const QaExample> examples,
                                          int max_answer_len, int max_seq_len) {
  std::vector<SpanPrediction> out;
  out.reserve(examples.size());
  constexpr std::size_t kChunk = 32;
  for (std::size_t start = 0; start < examples.size(); start += kChunk) {
    const std::size_t end = std::min(examples.size(), start + kChunk);
    std::vector<int> which;
    for (std::size_t i = start; i < end; ++i) which.push_back(static_cast<int>(i));
    Tape tape(false);
    const SpanScores scores = span_forward(tape, model, examples, which, max_seq_len);
    for (std::size_t b = 0; b < which.size(); ++b) {
      const std::size_t len = examples[which[b]].context.size();
      const float* s = scores.start.value().ptr() + scores.context_begin[b];
      const float* e = scores.end.value().ptr() + scores.context_begin[b];
      out.push_back(decode_span({s, len}, {e, len}, max_answer_len));
    }
  }
  return out;
}

double exact_match(std::span<const SpanPrediction> predictions, std::span<const QaExample> gold) {
  if (predictions.size() != gold.size() || gold.empty()) throw std::invalid_argument("prediction count mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i)
    hits += predictions[i].start == gold[i].start && predictions[i].end == gold[i].end;
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

double span_f1(std::span<const SpanPrediction> predictions, std::span<const QaExample> gold) {
  if (predictions.size() != gold.size() || gold.empty()) throw std::invalid_argument("prediction count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const SpanPrediction& p = predictions[i];
    const int overlap = std::min(p.end, gold[i].end) - std::max(p.start, gold[i].start) + 1;
    if (overlap <= 0) continue;
    const double precision = static_cast<double>(overlap) / (p.end - p.start + 1);
    const double recall = static_cast<double>(overlap) / (gold[i].end - gold[i].start + 1);
    total += 2.0 * precision * recall / (precision + recall);
  }
  return total / static_cast<double>(gold.size());
}

double evaluate_retrieval(const EncoderParams& encoder, std::span<const ParallelPair> pairs) {
  if (pairs.empty()) throw std::invalid_argument("retrieval needs at least one pair");
  std::vector<TokenSequence> src, tgt;
  for (const ParallelPair& p : pairs) {
    src.push_back(p.src);
    tgt.push_back(p.tgt);
  }
  const Tensor zs = sentence_embed(encoder, src);
  const Tensor zt = sentence_embed(encoder, tgt);
  const int n = zs.rows(), d = zs.cols();
  std::size_t hits = 0;
  for (int i = 0; i < n; ++i) {
    int best = 0;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      double sim = 0.0;
      for (int c = 0; c < d; ++c) sim += static_cast<double>(zs.at(i, c)) * zt.at(j, c);
      if (sim > best_sim) {
        best_sim = sim;
        best = j;
      }
    }
    hits += best == i;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write report " + path.string());
  out << "task,language,metric,value\n";
  for (const LanguageScore& s : scores) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", s.value);
    out << task << ',' << s.language << ',' << s.metric << ',' << buf << '\n';
  }
}

EvalReport evaluate_zero_shot(const ClassifierModel& model, std::span<const LabeledPairExample> test,
                              const std::string& language, int max_seq_len) {
  EvalReport report;
  report.task = "classification";
  report.scores.push_back({language, "accuracy", accuracy(model, test, max_seq_len)});
  return report;
}

void write_predictions(const std::filesystem::path& path, std::span<const int> ids,
                       std::span<const std::string> predictions) {
  if (ids.size() != predictions.size()) throw std::invalid_argument("prediction and id counts differ");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write predictions " + path.string());
  out << "example_id\tprediction\n";
  for (std::size_t i = 0; i < ids.size(); ++i) out << ids[i] << '\t' << predictions[i] << '\n';
}

}  // namespace ppa
