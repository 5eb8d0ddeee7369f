// SPDX-License-Identifier: Apache-2.0
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "ppa/config.hpp"
#include "ppa/serialize.hpp"
#include "ppa/trainer.hpp"

namespace ppa {

namespace {

constexpr const char* kCheckpointFormat = "ppa-checkpoint";
constexpr int kCheckpointVersion = 1;
constexpr const char* kStateFile = "state.txt";
constexpr const char* kTensorFile = "tensors.bin";

std::string corpus_fingerprint(std::span<const ParallelPair> pairs) {
  std::uint64_t h = fnv1a64("");
  auto mix = [&h](int v) { h = fnv1a64(std::string_view(reinterpret_cast<const char*>(&v), sizeof v), h); };
  for (const ParallelPair& p : pairs) {
    mix(p.pair_id);
    mix(static_cast<int>(p.src.size()));
    for (int t : p.src) mix(t);
    mix(static_cast<int>(p.tgt.size()));
    for (int t : p.tgt) mix(t);
  }
  return to_hex(h);
}

void copy_into(Tensor& dst, const Tensor& src, const std::string& name) {
  if (dst.shape() != src.shape()) {
    throw TensorFormatError("tensor " + name + " has shape " + shape_string(src.shape()) + ", expected " +
                            shape_string(dst.shape()));
  }
  std::copy(src.data().begin(), src.data().end(), dst.data().begin());
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void PpaTrainer::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::vector<NamedTensor> tensors;
  const auto& query = state_.query().params();
  const auto& key = state_.key().params();
  for (const Parameter& p : query) tensors.push_back({"query/" + p.name, p.value});
  for (const Parameter& p : key) tensors.push_back({"key/" + p.name, p.value});
  const bool has_moments = !optimizer_.first_moments().empty();
  if (has_moments) {
    for (std::size_t i = 0; i < query.size(); ++i) {
      tensors.push_back({"adam.m/" + query[i].name, optimizer_.first_moments()[i]});
      tensors.push_back({"adam.v/" + query[i].name, optimizer_.second_moments()[i]});
    }
  }
  tensors.push_back({"queue", state_.queue()});
  const auto tmp = dir / (std::string(kTensorFile) + ".tmp");
  write_tensors(tmp, tensors);
  std::filesystem::rename(tmp, dir / kTensorFile);

  KeyValues kv;
  kv.set("format", kCheckpointFormat);
  kv.set("version", std::to_string(kCheckpointVersion));
  kv.set("step", std::to_string(step_));
  kv.set("epoch", std::to_string(epoch_));
  kv.set("batch_in_epoch", std::to_string(batch_in_epoch_));
  kv.set("queue_cursor", std::to_string(state_.cursor()));
  kv.set("adam_steps", std::to_string(optimizer_.steps_taken()));
  kv.set("adam_moments", has_moments ? "true" : "false");
  kv.set("mask_rng", mask_rng_.save());
  kv.set("corpus_pairs", std::to_string(pairs_.size()));
  kv.set("corpus_fingerprint", corpus_fingerprint(pairs_));
  kv.set("tensors_hash", hash_file(dir / kTensorFile));
  store(kv, cfg_);
  write_text_atomic(dir / kStateFile, kv.to_text());
}

PpaTrainer PpaTrainer::restore(const std::filesystem::path& dir, std::span<const ParallelPair> pairs) {
  const KeyValues kv = KeyValues::load(dir / kStateFile);
  std::string format;
  int version = 0;
  kv.read("format", format);
  kv.read("version", version);
  if (format != kCheckpointFormat) throw ConfigError(dir.string() + " is not a training checkpoint");
  if (version != kCheckpointVersion) {
    throw ConfigError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  std::string tensors_hash;
  kv.read("tensors_hash", tensors_hash);
  if (hash_file(dir / kTensorFile) != tensors_hash) {
    throw TensorFormatError("checkpoint tensors do not match the hash recorded in " + (dir / kStateFile).string());
  }
  std::string fingerprint;
  std::size_t corpus_pairs = 0;
  kv.read("corpus_fingerprint", fingerprint);
  std::uint64_t pairs_count = 0;
  kv.read("corpus_pairs", pairs_count);
  corpus_pairs = static_cast<std::size_t>(pairs_count);
  if (corpus_pairs != pairs.size() || fingerprint != corpus_fingerprint(pairs)) {
    throw ConfigError("checkpoint was written for a different corpus");
  }

  TrainConfig cfg;
  load(kv, cfg);
  cfg.validate();
  std::int64_t step = 0, adam_steps = 0;
  int epoch = 0, cursor = 0;
  std::uint64_t batch_in_epoch = 0;
  bool has_moments = false;
  std::string rng_state;
  kv.read("step", step);
  kv.read("epoch", epoch);
  kv.read("batch_in_epoch", batch_in_epoch);
  kv.read("queue_cursor", cursor);
  kv.read("adam_steps", adam_steps);
  kv.read("adam_moments", has_moments);
  kv.read("mask_rng", rng_state);

  // Everything is validated into fresh objects before the trainer exists.
  std::unordered_map<std::string, Tensor> by_name;
  for (NamedTensor& t : read_tensors(dir / kTensorFile)) by_name.emplace(t.name, std::move(t.tensor));
  auto take = [&by_name](const std::string& name) -> const Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw TensorFormatError("checkpoint lacks tensor " + name);
    return it->second;
  };

  EncoderParams query(cfg.encoder);
  for (Parameter& p : query.params()) copy_into(p.value, take("query/" + p.name), p.name);
  MoCoState state(std::move(query), cfg.queue_size, cfg.momentum, cfg.temperature, cfg.seed,
                  cfg.use_moco ? cfg.batch_size : 1);
  for (Parameter& p : state.key().params()) copy_into(p.value, take("key/" + p.name), p.name);
  copy_into(state.queue_storage(), take("queue"), "queue");
  state.set_cursor(cursor);

  std::vector<Tensor> m, v;
  if (has_moments) {
    for (const Parameter& p : state.query().params()) {
      m.push_back(take("adam.m/" + p.name));
      v.push_back(take("adam.v/" + p.name));
      if (m.back().shape() != p.value.shape() || v.back().shape() != p.value.shape()) {
        throw TensorFormatError("optimizer moments of " + p.name + " have the wrong shape");
      }
    }
  }
  Rng rng;
  try {
    rng.restore(rng_state);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("checkpoint generator state is unreadable: ") + e.what());
  }

  PpaTrainer trainer(std::move(state), pairs, cfg);
  if (step < 0 || step > trainer.total_steps() || epoch < 0 || epoch > cfg.epochs) {
    throw ConfigError("checkpoint position is outside the training schedule");
  }
  trainer.step_ = step;
  trainer.epoch_ = epoch;
  trainer.optimizer_.restore(adam_steps, std::move(m), std::move(v));
  trainer.mask_rng_ = rng;
  if (!trainer.done()) {
    trainer.open_epoch();
    if (batch_in_epoch >= trainer.stream_->batch_count()) throw ConfigError("checkpoint batch index out of range");
  }
  trainer.batch_in_epoch_ = static_cast<std::size_t>(batch_in_epoch);
  return trainer;
}

}  // namespace ppa
