// SPDX-License-Identifier: Apache-2.0
#include "ppa/trainer.hpp"

#include <cstdio>
#include <stdexcept>

#include "ppa/finetune.hpp"

namespace ppa {

void TrainConfig::validate() const {
  encoder.validate();
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (max_seq_len < 1 || max_seq_len > encoder.max_positions) {
    throw ConfigError("max_seq_len must lie in [1, " + std::to_string(encoder.max_positions) + "]");
  }
  if (!(peak_lr >= 0.0)) throw ConfigError("peak_lr must be non-negative");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) throw ConfigError("warmup_fraction must lie in [0, 1]");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ConfigError("momentum must lie in [0, 1]");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (use_moco && queue_size < batch_size) {
    throw ConfigError("queue_size " + std::to_string(queue_size) + " is smaller than batch_size " +
                      std::to_string(batch_size));
  }
  if (use_tlm && use_mlm_instead_of_tlm) throw ConfigError("use_tlm and use_mlm_instead_of_tlm are exclusive");
  if (!use_moco && !use_tlm && !use_mlm_instead_of_tlm) throw ConfigError("every training objective is disabled");
  if (warmup_mlm_steps < 0 || warmup_mlm_batch < 1) throw ConfigError("invalid warm-up MLM settings");
}

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.encoder = EncoderConfig::mbert();
  c.batch_size = 128;
  c.max_seq_len = 128;
  c.peak_lr = 3e-5;
  c.warmup_fraction = 0.1;
  c.weight_decay = 0.01;
  c.epochs = 10;
  c.queue_size = 32000;
  c.momentum = 0.999;
  c.temperature = 0.05;
  c.warmup_mlm_steps = 0;
  return c;
}

std::string format_metrics_row(const StepMetrics& row) {
  auto num = [](double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
  };
  return std::to_string(row.step) + "," + (row.l_moco ? num(*row.l_moco) : "NA") + "," +
         (row.l_tlm ? num(*row.l_tlm) : "NA") + "," + num(row.l_total) + "," + num(row.lr);
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path, std::string header, bool append)
    : out_(path, append ? std::ios::app : std::ios::trunc) {
  if (!out_) throw std::runtime_error("cannot open metrics file " + path.string());
  if (!append || std::filesystem::file_size(path) == 0) out_ << header << '\n';
  worker_ = std::thread([this] { loop(); });
}

MetricsWriter::~MetricsWriter() { close(); }

void MetricsWriter::push(std::string line) {
  {
    std::lock_guard lock(mutex_);
    pending_.push_back(std::move(line));
  }
  ready_.notify_one();
}

void MetricsWriter::close() {
  {
    std::lock_guard lock(mutex_);
    if (closing_ && !worker_.joinable()) return;
    closing_ = true;
  }
  ready_.notify_one();
  if (worker_.joinable()) worker_.join();
  out_.flush();
}

void MetricsWriter::loop() {
  std::unique_lock lock(mutex_);
  for (;;) {
    ready_.wait(lock, [this] { return closing_ || !pending_.empty(); });
    while (!pending_.empty()) {
      std::string line = std::move(pending_.front());
      pending_.pop_front();
      lock.unlock();
      out_ << line << '\n';
      lock.lock();
    }
    if (closing_) return;
  }
}

EncoderParams warmup_mlm(const EncoderConfig& config, std::span<const ParallelPair> pairs, int steps, int batch_size,
                         double peak_lr, std::uint64_t seed) {
  EncoderParams params = EncoderParams::initialize(config, derive_seed(seed, 0x3a));
  if (steps <= 0) return params;
  if (pairs.empty()) throw std::invalid_argument("warm-up needs at least one sentence pair");
  std::vector<const TokenSequence*> sides;
  sides.reserve(2 * pairs.size());
  for (const ParallelPair& p : pairs) {
    sides.push_back(&p.src);
    sides.push_back(&p.tgt);
  }
  Rng rng(derive_seed(seed, 0x3b));
  AdamW optimizer({0.9, 0.999, 1e-8, 0.01}, decays_by_default);
  std::vector<Parameter*> ps;
  for (Parameter& p : params.params()) ps.push_back(&p);
  const std::int64_t warm = warmup_steps_for(steps, 0.1);
  for (int s = 0; s < steps; ++s) {
    MaskedBatch batch;
    batch.reserve(static_cast<std::size_t>(batch_size));
    for (int b = 0; b < batch_size; ++b) {
      const TokenSequence& side = *sides[rng.below(sides.size())];
      batch.push_back(apply_masking(build_mlm_input(side), config.vocab_size, rng));
    }
    params.zero_grad();
    Tape tape;
    tape.backward(tlm_loss(tape, params, batch));
    clip_grad_norm(ps, 1.0);
    optimizer.step(ps, lr_at(s, steps, peak_lr, warm));
  }
  return params;
}

PpaTrainer::PpaTrainer(MoCoState state, std::span<const ParallelPair> pairs, TrainConfig cfg)
    : state_(std::move(state)),
      pairs_(pairs),
      cfg_(std::move(cfg)),
      optimizer_({0.9, 0.999, 1e-8, cfg_.weight_decay}, decays_by_default),
      mask_rng_(derive_seed(cfg_.seed, 0x7a11)) {
  cfg_.validate();
  if (pairs_.empty()) throw std::invalid_argument("alignment training needs a non-empty corpus");
  if (!(state_.query().config() == cfg_.encoder)) throw ConfigError("encoder does not match the training config");
  if (cfg_.use_moco && state_.queue_size() != cfg_.queue_size) {
    throw ConfigError("queue holds " + std::to_string(state_.queue_size()) + " keys, config asks for " +
                      std::to_string(cfg_.queue_size));
  }
  const auto n = static_cast<std::int64_t>(pairs_.size());
  const std::int64_t per_epoch = (n + cfg_.batch_size - 1) / cfg_.batch_size;
  total_steps_ = per_epoch * cfg_.epochs;
  warmup_steps_ = warmup_steps_for(total_steps_, cfg_.warmup_fraction);
  open_epoch();
}

std::vector<Parameter*> PpaTrainer::query_params() {
  std::vector<Parameter*> ps;
  for (Parameter& p : state_.query().params()) ps.push_back(&p);
  return ps;
}

void PpaTrainer::open_epoch() {
  stream_.emplace(pairs_, cfg_.batch_size, derive_seed(cfg_.seed, 1000 + static_cast<std::uint64_t>(epoch_)));
}

std::optional<StepMetrics> PpaTrainer::step() {
  if (done()) return std::nullopt;
  const AlignmentBatch batch = stream_->batch(batch_in_epoch_);
  StepMetrics row;
  row.step = step_;
  row.lr = lr_at(step_, total_steps_, cfg_.peak_lr, warmup_steps_);

  state_.query().zero_grad();
  Tape tape;
  Tensor keys;
  Var total;
  if (cfg_.use_moco) {
    keys = encode_keys(state_.key(), batch);
    total = alignment_loss(tape, state_, batch, keys);
    row.l_moco = total.value()[0];
  }
  if (cfg_.uses_masked_lm()) {
    const MaskedBatch masked = cfg_.use_tlm ? make_tlm_batch(pairs_, batch, cfg_.encoder.vocab_size, mask_rng_)
                                            : make_mlm_batch(pairs_, batch, cfg_.encoder.vocab_size, mask_rng_);
    const Var l_tlm = tlm_loss(tape, state_.query(), masked);
    row.l_tlm = l_tlm.value()[0];
    total = total.valid() ? add(total, l_tlm) : l_tlm;
  }
  row.l_total = total.value()[0];
  tape.backward(total);

  auto ps = query_params();
  clip_grad_norm(ps, cfg_.clip_norm);
  optimizer_.step(ps, row.lr);
  if (cfg_.use_moco) {
    state_.enqueue(keys);
    state_.momentum_update();
  }

  ++step_;
  if (++batch_in_epoch_ == stream_->batch_count()) {
    batch_in_epoch_ = 0;
    ++epoch_;
    if (!done()) open_epoch();
  }
  return row;
}

TrainMetrics train_ppa(PpaTrainer& trainer, const TrainOptions& options) {
  TrainMetrics metrics;
  std::optional<MetricsWriter> steps_out;
  std::optional<MetricsWriter> retrieval_out;
  if (options.metrics_csv) steps_out.emplace(*options.metrics_csv, kMetricsHeader, options.append);
  if (options.retrieval_csv) retrieval_out.emplace(*options.retrieval_csv, "epoch,retrieval_top1", options.append);
  while (!options.stop_at_step || trainer.steps_done() < *options.stop_at_step) {
    const std::optional<StepMetrics> row = trainer.step();
    if (!row) break;
    metrics.steps.push_back(*row);
    if (steps_out) steps_out->push(format_metrics_row(*row));
    if (options.on_step) options.on_step(*row);
    if (trainer.at_epoch_end() && options.heldout.size() >= 1) {
      const double acc = evaluate_retrieval(trainer.state().query(), options.heldout);
      metrics.epoch_retrieval.push_back(acc);
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6f", acc);
      if (retrieval_out) retrieval_out->push(std::to_string(trainer.epoch()) + "," + buf);
    }
  }
  return metrics;
}

TrainMetrics train_ppa(MoCoState& state, std::span<const ParallelPair> pairs, const TrainConfig& cfg,
                       const TrainOptions& options) {
  PpaTrainer trainer(std::move(state), pairs, cfg);
  TrainMetrics metrics = train_ppa(trainer, options);
  state = std::move(trainer.state());
  return metrics;
}

}  // namespace ppa
