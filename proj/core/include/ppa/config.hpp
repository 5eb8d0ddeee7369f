// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ppa/finetune.hpp"
#include "ppa/moco.hpp"
#include "ppa/trainer.hpp"

namespace ppa {

/// Flat "key = value" settings. Blank lines and lines starting with '#' are
/// ignored; keys are unique. Values are kept as text and parsed on access.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text);
  static KeyValues load(const std::filesystem::path& path);

  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  std::optional<std::string> get(const std::string& key) const;

  /// Typed readers that leave target unchanged when the key is absent and
  /// throw ConfigError naming the key when the value does not parse.
  void read(const std::string& key, int& target) const;
  void read(const std::string& key, std::int64_t& target) const;
  void read(const std::string& key, std::uint64_t& target) const;
  void read(const std::string& key, double& target) const;
  void read(const std::string& key, bool& target) const;
  void read(const std::string& key, std::string& target) const;

  /// Keys never passed to read() or get(); used to reject typos.
  std::vector<std::string> unread_keys() const;
  const std::map<std::string, std::string>& values() const { return values_; }

  /// One "key = value" line per entry, sorted by key.
  std::string to_text() const;

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> read_;
};

// Settings <-> key/value text. Keys are the field names behind a prefix,
// e.g. "train.batch_size"; load() only overwrites keys that are present.
void store(KeyValues& kv, const EncoderConfig& config, const std::string& prefix = "encoder.");
void load(const KeyValues& kv, EncoderConfig& config, const std::string& prefix = "encoder.");
void store(KeyValues& kv, const TrainConfig& config, const std::string& prefix = "train.");
void load(const KeyValues& kv, TrainConfig& config, const std::string& prefix = "train.");
void store(KeyValues& kv, const FinetuneConfig& config, const std::string& prefix = "finetune.");
void load(const KeyValues& kv, FinetuneConfig& config, const std::string& prefix = "finetune.");

/// Shortest decimal text that reads back to the same double.
std::string format_double(double value);

}  // namespace ppa
