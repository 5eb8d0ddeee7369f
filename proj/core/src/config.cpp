// SPDX-License-Identifier: Apache-2.0
#include "ppa/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace ppa {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
void parse_integer(const std::string& key, const std::string& text, T& target) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ConfigError("setting '" + key + "' is not an integer: '" + text + "'");
  target = value;
}

}  // namespace

KeyValues KeyValues::parse(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(number) + " is not 'key = value': '" + body + "'");
    }
    const std::string key = trim(body.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(number) + " has an empty key");
    if (kv.values_.count(key)) throw ConfigError("setting '" + key + "' appears twice");
    kv.values_[key] = trim(body.substr(eq + 1));
  }
  return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str());
}

std::optional<std::string> KeyValues::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  read_.insert(key);
  return it->second;
}

void KeyValues::read(const std::string& key, int& target) const {
  if (auto v = get(key)) parse_integer(key, *v, target);
}

void KeyValues::read(const std::string& key, std::int64_t& target) const {
  if (auto v = get(key)) parse_integer(key, *v, target);
}

void KeyValues::read(const std::string& key, std::uint64_t& target) const {
  if (auto v = get(key)) parse_integer(key, *v, target);
}

void KeyValues::read(const std::string& key, double& target) const {
  auto v = get(key);
  if (!v) return;
  std::istringstream in(*v);
  in.imbue(std::locale::classic());
  double value = 0.0;
  in >> value;
  if (in.fail() || !in.eof()) throw ConfigError("setting '" + key + "' is not a number: '" + *v + "'");
  target = value;
}

void KeyValues::read(const std::string& key, bool& target) const {
  auto v = get(key);
  if (!v) return;
  if (*v == "true" || *v == "1") {
    target = true;
  } else if (*v == "false" || *v == "0") {
    target = false;
  } else {
    throw ConfigError("setting '" + key + "' is not a boolean: '" + *v + "'");
  }
}

void KeyValues::read(const std::string& key, std::string& target) const {
  if (auto v = get(key)) target = *v;
}

std::vector<std::string> KeyValues::unread_keys() const {
  std::vector<std::string> out;
  for (const auto& [key, value] : values_)
    if (!read_.count(key)) out.push_back(key);
  return out;
}

std::string KeyValues::to_text() const {
  std::string out;
  for (const auto& [key, value] : values_) out += key + " = " + value + "\n";
  return out;
}

std::string format_double(double value) {
  char buf[64];
  for (int precision = 1; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, value);
    if (std::strtod(buf, nullptr) == value) break;
  }
  return buf;
}

void store(KeyValues& kv, const EncoderConfig& c, const std::string& p) {
  kv.set(p + "num_layers", std::to_string(c.num_layers));
  kv.set(p + "hidden", std::to_string(c.hidden));
  kv.set(p + "ffn", std::to_string(c.ffn));
  kv.set(p + "heads", std::to_string(c.heads));
  kv.set(p + "vocab_size", std::to_string(c.vocab_size));
  kv.set(p + "max_positions", std::to_string(c.max_positions));
  kv.set(p + "projection", std::to_string(c.projection));
  kv.set(p + "segment_types", std::to_string(c.segment_types));
  kv.set(p + "mean_pooling", c.mean_pooling ? "true" : "false");
}

void load(const KeyValues& kv, EncoderConfig& c, const std::string& p) {
  kv.read(p + "num_layers", c.num_layers);
  kv.read(p + "hidden", c.hidden);
  kv.read(p + "ffn", c.ffn);
  kv.read(p + "heads", c.heads);
  kv.read(p + "vocab_size", c.vocab_size);
  kv.read(p + "max_positions", c.max_positions);
  kv.read(p + "projection", c.projection);
  kv.read(p + "segment_types", c.segment_types);
  kv.read(p + "mean_pooling", c.mean_pooling);
}

void store(KeyValues& kv, const TrainConfig& c, const std::string& p) {
  store(kv, c.encoder, p + "encoder.");
  kv.set(p + "batch_size", std::to_string(c.batch_size));
  kv.set(p + "max_seq_len", std::to_string(c.max_seq_len));
  kv.set(p + "peak_lr", format_double(c.peak_lr));
  kv.set(p + "warmup_fraction", format_double(c.warmup_fraction));
  kv.set(p + "weight_decay", format_double(c.weight_decay));
  kv.set(p + "epochs", std::to_string(c.epochs));
  kv.set(p + "queue_size", std::to_string(c.queue_size));
  kv.set(p + "momentum", format_double(c.momentum));
  kv.set(p + "temperature", format_double(c.temperature));
  kv.set(p + "clip_norm", format_double(c.clip_norm));
  kv.set(p + "seed", std::to_string(c.seed));
  kv.set(p + "use_moco", c.use_moco ? "true" : "false");
  kv.set(p + "use_tlm", c.use_tlm ? "true" : "false");
  kv.set(p + "use_mlm_instead_of_tlm", c.use_mlm_instead_of_tlm ? "true" : "false");
  kv.set(p + "warmup_mlm_steps", std::to_string(c.warmup_mlm_steps));
  kv.set(p + "warmup_mlm_batch", std::to_string(c.warmup_mlm_batch));
  kv.set(p + "warmup_mlm_lr", format_double(c.warmup_mlm_lr));
}

void load(const KeyValues& kv, TrainConfig& c, const std::string& p) {
  load(kv, c.encoder, p + "encoder.");
  kv.read(p + "batch_size", c.batch_size);
  kv.read(p + "max_seq_len", c.max_seq_len);
  kv.read(p + "peak_lr", c.peak_lr);
  kv.read(p + "warmup_fraction", c.warmup_fraction);
  kv.read(p + "weight_decay", c.weight_decay);
  kv.read(p + "epochs", c.epochs);
  kv.read(p + "queue_size", c.queue_size);
  kv.read(p + "momentum", c.momentum);
  kv.read(p + "temperature", c.temperature);
  kv.read(p + "clip_norm", c.clip_norm);
  kv.read(p + "seed", c.seed);
  kv.read(p + "use_moco", c.use_moco);
  kv.read(p + "use_tlm", c.use_tlm);
  kv.read(p + "use_mlm_instead_of_tlm", c.use_mlm_instead_of_tlm);
  kv.read(p + "warmup_mlm_steps", c.warmup_mlm_steps);
  kv.read(p + "warmup_mlm_batch", c.warmup_mlm_batch);
  kv.read(p + "warmup_mlm_lr", c.warmup_mlm_lr);
}

void store(KeyValues& kv, const FinetuneConfig& c, const std::string& p) {
  kv.set(p + "batch_size", std::to_string(c.batch_size));
  kv.set(p + "max_seq_len", std::to_string(c.max_seq_len));
  kv.set(p + "peak_lr", format_double(c.peak_lr));
  kv.set(p + "warmup_steps", std::to_string(c.warmup_steps));
  kv.set(p + "warmup_fraction", format_double(c.warmup_fraction));
  kv.set(p + "weight_decay", format_double(c.weight_decay));
  kv.set(p + "epochs", std::to_string(c.epochs));
  kv.set(p + "clip_norm", format_double(c.clip_norm));
  kv.set(p + "seed", std::to_string(c.seed));
  kv.set(p + "freeze_encoder", c.freeze_encoder ? "true" : "false");
  kv.set(p + "max_answer_len", std::to_string(c.max_answer_len));
}

void load(const KeyValues& kv, FinetuneConfig& c, const std::string& p) {
  kv.read(p + "batch_size", c.batch_size);
  kv.read(p + "max_seq_len", c.max_seq_len);
  kv.read(p + "peak_lr", c.peak_lr);
  kv.read(p + "warmup_steps", c.warmup_steps);
  kv.read(p + "warmup_fraction", c.warmup_fraction);
  kv.read(p + "weight_decay", c.weight_decay);
  kv.read(p + "epochs", c.epochs);
  kv.read(p + "clip_norm", c.clip_norm);
  kv.read(p + "seed", c.seed);
  kv.read(p + "freeze_encoder", c.freeze_encoder);
  kv.read(p + "max_answer_len", c.max_answer_len);
}

}  // namespace ppa
