// SPDX-License-Identifier: Apache-2.0
#include "ppa/encoder.hpp"

#include <stdexcept>

#include "ppa/rng.hpp"

namespace ppa {

void EncoderConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v < 1) throw std::invalid_argument(std::string(what) + " must be positive");
  };
  positive(num_layers, "num_layers");
  positive(hidden, "hidden");
  positive(ffn, "ffn");
  positive(heads, "heads");
  positive(vocab_size, "vocab_size");
  positive(max_positions, "max_positions");
  positive(projection, "projection");
  positive(segment_types, "segment_types");
  if (hidden % heads != 0) {
    throw std::invalid_argument("hidden size " + std::to_string(hidden) + " is not divisible by " +
                                std::to_string(heads) + " heads");
  }
  if (vocab_size <= Vocab::kNumReserved) throw std::invalid_argument("vocab_size must exceed the reserved tokens");
}

EncoderConfig EncoderConfig::toy(int vocab_size) {
  EncoderConfig c;
  c.vocab_size = vocab_size;
  // Two layers trained for a few hundred steps do not route enough of the
  // sentence into [CLS]; averaging does.
  c.mean_pooling = true;
  return c;
}

EncoderConfig EncoderConfig::mbert() {
  EncoderConfig c;
  c.num_layers = 12;
  c.hidden = 768;
  c.ffn = 3072;
  c.heads = 12;
  c.vocab_size = 110000;
  c.max_positions = 512;
  c.projection = 300;
  return c;
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const EncoderConfig& c) {
  c.validate();
  const int d = c.hidden;
  std::vector<std::pair<std::string, Shape>> layout = {
      {"embeddings.token", {c.vocab_size, d}},
      {"embeddings.position", {c.max_positions, d}},
      {"embeddings.segment", {c.segment_types, d}},
      {"embeddings.ln.gain", {d}},
      {"embeddings.ln.bias", {d}},
  };
  for (int l = 0; l < c.num_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    for (const char* proj : {"query", "key", "value", "output"}) {
      layout.push_back({p + "attn." + proj + ".weight", {d, d}});
      layout.push_back({p + "attn." + proj + ".bias", {d}});
    }
    layout.push_back({p + "attn.ln.gain", {d}});
    layout.push_back({p + "attn.ln.bias", {d}});
    layout.push_back({p + "ffn.in.weight", {d, c.ffn}});
    layout.push_back({p + "ffn.in.bias", {c.ffn}});
    layout.push_back({p + "ffn.out.weight", {c.ffn, d}});
    layout.push_back({p + "ffn.out.bias", {d}});
    layout.push_back({p + "ffn.ln.gain", {d}});
    layout.push_back({p + "ffn.ln.bias", {d}});
  }
  // Stored input-major: z = relu(h W1) W2, i.e. W1 and W2 transposed.
  layout.push_back({"projection.w1", {d, d}});
  layout.push_back({"projection.w2", {d, c.projection}});
  layout.push_back({"mlm.bias", {c.vocab_size}});
  return layout;
}

std::size_t parameter_count_formula(const EncoderConfig& c) {
  const std::size_t d = c.hidden, v = c.vocab_size, p = c.max_positions, f = c.ffn, k = c.projection;
  const std::size_t embeddings = v * d + p * d + static_cast<std::size_t>(c.segment_types) * d + 2 * d;
  const std::size_t attention = 4 * (d * d + d) + 2 * d;
  const std::size_t feed_forward = d * f + f + f * d + d + 2 * d;
  const std::size_t head = d * d + d * k;
  return embeddings + static_cast<std::size_t>(c.num_layers) * (attention + feed_forward) + head + v;
}

EncoderParams::EncoderParams(const EncoderConfig& config) : config_(config) {
  for (auto& [name, shape] : parameter_layout(config)) {
    index_.emplace(name, params_.size());
    params_.emplace_back(name, Tensor(shape));
  }
}

EncoderParams EncoderParams::initialize(const EncoderConfig& config, std::uint64_t seed) {
  EncoderParams ep(config);
  Rng rng(seed);
  for (Parameter& p : ep.params_) {
    if (p.name.ends_with(".gain")) {
      p.value.fill(1.0f);
    } else if (p.name.ends_with(".bias")) {
      p.value.fill(0.0f);
    } else {
      for (float& x : p.value.data()) x = static_cast<float>(rng.truncated_normal(kInitStd));
    }
  }
  return ep;
}

std::size_t EncoderParams::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += p.value.size();
  return n;
}

Parameter& EncoderParams::get(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("no encoder parameter named '" + std::string(name) + "'");
  return params_[it->second];
}

const Parameter& EncoderParams::get(std::string_view name) const {
  return const_cast<EncoderParams*>(this)->get(name);
}

void EncoderParams::zero_grad() {
  for (Parameter& p : params_) p.zero_grad();
}

void EncoderParams::set_trainable(bool trainable) {
  for (Parameter& p : params_) p.value.set_requires_grad(trainable);
}

bool EncoderParams::same_shapes(const EncoderParams& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name != other.params_[i].name || params_[i].value.shape() != other.params_[i].value.shape()) {
      return false;
    }
  }
  return true;
}

bool EncoderParams::identical(const EncoderParams& other) const {
  if (!same_shapes(other)) return false;
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (!params_[i].value.identical(other.params_[i].value)) return false;
  return true;
}

namespace {

template <typename Params>
Var linear(Tape& tape, Params& params, Var x, const std::string& prefix) {
  return add_bias(matmul(x, tape.param(params.get(prefix + ".weight"))), tape.param(params.get(prefix + ".bias")));
}

template <typename Params>
Var norm(Tape& tape, Params& params, Var x, const std::string& prefix) {
  return layer_norm(x, tape.param(params.get(prefix + ".gain")), tape.param(params.get(prefix + ".bias")));
}

template <typename Params>
EncoderOutput forward_impl(Tape& tape, Params& params, std::span<const EncoderInput> batch) {
  const EncoderConfig& c = params.config();
  if (batch.empty()) throw std::invalid_argument("encoder forward on an empty batch");
  std::vector<int> ids, positions, segments, offsets{0}, first_rows;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const EncoderInput& in = batch[b];
    if (in.ids.empty() || in.ids.front() != Vocab::kCls) {
      throw std::invalid_argument("encoder input " + std::to_string(b) + " does not start with [CLS]");
    }
    if (static_cast<int>(in.ids.size()) > c.max_positions) {
      throw std::invalid_argument("encoder input " + std::to_string(b) + " has " + std::to_string(in.ids.size()) +
                                  " tokens, limit is " + std::to_string(c.max_positions));
    }
    if (!in.segments.empty() && in.segments.size() != in.ids.size()) {
      throw std::invalid_argument("encoder input " + std::to_string(b) + " has mismatched segment ids");
    }
    first_rows.push_back(offsets.back());
    for (std::size_t t = 0; t < in.ids.size(); ++t) {
      ids.push_back(in.ids[t]);
      positions.push_back(static_cast<int>(t));
      segments.push_back(in.segments.empty() ? 0 : in.segments[t]);
    }
    offsets.push_back(static_cast<int>(ids.size()));
  }

  Var x = add(add(embedding(tape.param(params.get("embeddings.token")), ids),
                  embedding(tape.param(params.get("embeddings.position")), positions)),
              embedding(tape.param(params.get("embeddings.segment")), segments));
  x = norm(tape, params, x, "embeddings.ln");

  for (int l = 0; l < c.num_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    const Var q = linear(tape, params, x, p + "attn.query");
    const Var k = linear(tape, params, x, p + "attn.key");
    const Var v = linear(tape, params, x, p + "attn.value");
    const Var attended = multi_head_attention(q, k, v, offsets, c.heads);
    x = norm(tape, params, add(x, linear(tape, params, attended, p + "attn.output")), p + "attn.ln");
    const Var inner = gelu(linear(tape, params, x, p + "ffn.in"));
    x = norm(tape, params, add(x, linear(tape, params, inner, p + "ffn.out")), p + "ffn.ln");
  }

  EncoderOutput out;
  out.hidden = x;
  out.pooled = c.mean_pooling ? segment_mean(x, offsets) : gather_rows(x, first_rows);
  out.offsets = std::move(offsets);
  return out;
}

template <typename Params>
Projection project_impl(Tape& tape, Params& params, Var pooled) {
  const Var h_norm = l2_normalize(pooled);
  const Var z = matmul(relu(matmul(h_norm, tape.param(params.get("projection.w1")))),
                       tape.param(params.get("projection.w2")));
  return {z, l2_normalize(z)};
}

}  // namespace

EncoderOutput forward(Tape& tape, EncoderParams& params, std::span<const EncoderInput> batch) {
  return forward_impl(tape, params, batch);
}

EncoderOutput forward(Tape& tape, const EncoderParams& params, std::span<const EncoderInput> batch) {
  return forward_impl(tape, params, batch);
}

Projection project(Tape& tape, EncoderParams& params, Var pooled) { return project_impl(tape, params, pooled); }

Projection project(Tape& tape, const EncoderParams& params, Var pooled) {
  return project_impl(tape, params, pooled);
}

Var mlm_logits(Tape& tape, EncoderParams& params, Var hidden_rows) {
  const Var table = tape.param(params.get("embeddings.token"));
  return add_bias(matmul(hidden_rows, transpose(table)), tape.param(params.get("mlm.bias")));
}

Tensor sentence_embed(const EncoderParams& params, std::span<const TokenSequence> texts, int chunk) {
  const int dk = params.config().projection;
  Tensor out({static_cast<int>(texts.size()), dk});
  for (std::size_t start = 0; start < texts.size(); start += static_cast<std::size_t>(chunk)) {
    const std::size_t end = std::min(texts.size(), start + static_cast<std::size_t>(chunk));
    std::vector<EncoderInput> batch;
    for (std::size_t i = start; i < end; ++i) {
      EncoderInput in;
      in.ids.push_back(Vocab::kCls);
      in.ids.insert(in.ids.end(), texts[i].begin(), texts[i].end());
      batch.push_back(std::move(in));
    }
    Tape tape(false);
    const EncoderOutput enc = forward(tape, params, batch);
    const Tensor& z = project(tape, params, enc.pooled).z_unit.value();
    std::copy(z.data().begin(), z.data().end(), out.ptr() + start * static_cast<std::size_t>(dk));
  }
  return out;
}

Tensor sentence_embed(const EncoderParams& params, const TokenSequence& text) {
  const TokenSequence texts[1] = {text};
  Tensor z = sentence_embed(params, texts);
  return Tensor({z.cols()}, std::vector<float>(z.data().begin(), z.data().end()));
}

}  // namespace ppa
