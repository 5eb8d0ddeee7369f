// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ppa/ops.hpp"
#include "ppa/tokenizer.hpp"

namespace ppa {

/// Shape of a BERT-style encoder plus the contrastive projection head.
struct EncoderConfig {
  int num_layers = 2;
  int hidden = 64;
  int ffn = 256;
  int heads = 4;
  int vocab_size = 512;
  int max_positions = 128;
  int projection = 32;
  int segment_types = 2;
  /// Pool the sentence representation by averaging the last layer instead
  /// of taking the [CLS] state.
  bool mean_pooling = false;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;

  static EncoderConfig toy(int vocab_size = 512);
  /// 12 layers, 768 hidden, 3072 feed-forward, 12 heads, 110k vocabulary,
  /// 512 positions and a 300-wide projection.
  static EncoderConfig mbert();
};

/// Names and shapes of every encoder parameter, in a fixed order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const EncoderConfig& config);

/// Closed-form parameter count for a config; must agree with the layout.
std::size_t parameter_count_formula(const EncoderConfig& config);

/// Parameter set of one encoder instance. Copies are deep, so a key encoder
/// starts as a copy of the query encoder.
class EncoderParams {
 public:
  /// All tensors zero; layer-norm gains zero too.
  explicit EncoderParams(const EncoderConfig& config);

  /// Truncated normal (std 0.02, cut at two std) for weight matrices and
  /// embeddings, ones for layer-norm gains, zeros for biases.
  static EncoderParams initialize(const EncoderConfig& config, std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }
  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  std::size_t parameter_count() const;

  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;

  void zero_grad();
  /// Marks every parameter trainable or frozen.
  void set_trainable(bool trainable);
  bool same_shapes(const EncoderParams& other) const;
  /// Bitwise equality of every parameter value.
  bool identical(const EncoderParams& other) const;

 private:
  EncoderConfig config_;
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// One input sequence: ids start with [CLS]; segments, when given, has one
/// token-type id per token (all zero otherwise).
struct EncoderInput {
  TokenSequence ids;
  std::vector<int> segments;
};

struct EncoderOutput {
  /// [total tokens, hidden], sequences packed back to back.
  Var hidden;
  /// [batch, hidden]: the pooled sentence state h of each sequence.
  Var pooled;
  /// batch + 1 row offsets of each sequence inside hidden.
  std::vector<int> offsets;
};

/// Runs the encoder over a batch. Positions run 0..len-1 over each whole
/// sequence, whatever segments it contains; there is no language embedding.
/// Throws std::invalid_argument for over-length input or a missing [CLS].
EncoderOutput forward(Tape& tape, EncoderParams& params, std::span<const EncoderInput> batch);
/// Read-only variant; parameters never receive gradient.
EncoderOutput forward(Tape& tape, const EncoderParams& params, std::span<const EncoderInput> batch);

struct Projection {
  /// W2 ReLU(W1 h_norm), with h_norm the L2-normalized sentence state.
  Var z;
  /// z scaled to unit length, the form used in similarity scores.
  Var z_unit;
};

Projection project(Tape& tape, EncoderParams& params, Var pooled);
Projection project(Tape& tape, const EncoderParams& params, Var pooled);

/// Token logits of selected hidden rows through the tied input embedding and
/// the output bias: [rows, vocab].
Var mlm_logits(Tape& tape, EncoderParams& params, Var hidden_rows);

/// Unit-norm sentence embeddings of texts (each gets [CLS] prepended),
/// computed in chunks without gradient. Rows follow input order.
Tensor sentence_embed(const EncoderParams& params, std::span<const TokenSequence> texts, int chunk = 64);
/// Single-text convenience; returns a [projection] vector.
Tensor sentence_embed(const EncoderParams& params, const TokenSequence& text);

inline constexpr float kInitStd = 0.02f;

}  // namespace ppa
