// SPDX-License-Identifier: Apache-2.0
#include "ppa/moco.hpp"

#include <algorithm>
#include <cmath>

namespace ppa {

MoCoState::MoCoState(EncoderParams query, int queue_size, double momentum, double temperature, std::uint64_t seed,
                     int batch_size)
    : query_(std::move(query)), key_(query_), momentum_(momentum), temperature_(temperature) {
  if (queue_size < 1) throw ConfigError("queue size must be positive");
  if (queue_size < batch_size) {
    throw ConfigError("queue size " + std::to_string(queue_size) + " is smaller than the batch size " +
                      std::to_string(batch_size));
  }
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ConfigError("momentum must lie in [0, 1]");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  key_.set_trainable(false);

  const int dk = query_.config().projection;
  queue_ = Tensor({queue_size, dk});
  Rng rng(derive_seed(seed, 0x9e3));
  for (int r = 0; r < queue_size; ++r) {
    auto row = queue_.row(r);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (float& x : row) {
        x = static_cast<float>(rng.normal());
        norm += static_cast<double>(x) * x;
      }
    } while (norm == 0.0);
    const double inv = 1.0 / std::sqrt(norm);
    for (float& x : row) x = static_cast<float>(x * inv);
  }
}

MoCoState MoCoState::init(const EncoderConfig& config, int queue_size, double momentum, double temperature,
                          std::uint64_t seed, int batch_size) {
  return MoCoState(EncoderParams::initialize(config, derive_seed(seed, 0x51)), queue_size, momentum, temperature,
                   seed, batch_size);
}

void MoCoState::set_cursor(int cursor) {
  if (cursor < 0 || cursor >= queue_size()) throw std::out_of_range("queue cursor out of range");
  cursor_ = cursor;
}

Tensor MoCoState::queue_by_age() const {
  Tensor out(queue_.shape());
  const int k = queue_size();
  for (int i = 0; i < k; ++i) {
    auto src = queue_.row((cursor_ + i) % k);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

void MoCoState::enqueue(const Tensor& keys) {
  if (keys.rank() != 2 || keys.cols() != queue_.cols() || keys.rows() > queue_size()) {
    throw DimensionError("cannot enqueue keys of shape " + shape_string(keys.shape()) + " into queue " +
                         shape_string(queue_.shape()));
  }
  for (int r = 0; r < keys.rows(); ++r) {
    auto src = keys.row(r);
    std::copy(src.begin(), src.end(), queue_.row(cursor_).begin());
    cursor_ = (cursor_ + 1) % queue_size();
  }
}

void MoCoState::momentum_update() { ppa::momentum_update(key_, query_, momentum_); }

void momentum_update(EncoderParams& key, const EncoderParams& query, double momentum) {
  if (!key.same_shapes(query)) throw DimensionError("key and query encoders differ in shape");
  // Double arithmetic rounds once per element, so m = 0 and m = 1 copy
  // exactly and no cancellation error builds up in float.
  const double rest = 1.0 - momentum;
  for (std::size_t i = 0; i < key.params().size(); ++i) {
    auto k = key.params()[i].value.data();
    auto q = query.params()[i].value.data();
    for (std::size_t j = 0; j < k.size(); ++j) {
      k[j] = static_cast<float>(momentum * static_cast<double>(k[j]) + rest * static_cast<double>(q[j]));
    }
  }
}

namespace {

// Sum over rows of -log softmax(s)[0], s = (q.p, q.queue_j) * inv_t, in
// double. Writes the softmax of each row to probs when given.
double info_nce_sum(const float* q, const float* p, int b, int d, const Tensor& queue, double inv_t,
                    double* probs) {
  const int k = queue.rows();
  double total = 0.0;
  std::vector<double> s(k + 1);
  for (int r = 0; r < b; ++r) {
    const float* qr = q + static_cast<std::size_t>(r) * d;
    const float* pr = p + static_cast<std::size_t>(r) * d;
    double dot = 0.0;
    for (int c = 0; c < d; ++c) dot += static_cast<double>(qr[c]) * pr[c];
    s[0] = dot * inv_t;
    for (int j = 0; j < k; ++j) {
      const float* kr = queue.ptr() + static_cast<std::size_t>(j) * d;
      double acc = 0.0;
      for (int c = 0; c < d; ++c) acc += static_cast<double>(qr[c]) * kr[c];
      s[j + 1] = acc * inv_t;
    }
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (double v : s) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    total += lse - s[0];
    if (probs) {
      double* out = probs + static_cast<std::size_t>(r) * (k + 1);
      for (int j = 0; j <= k; ++j) out[j] = std::exp(s[j] - lse);
    }
  }
  return total;
}

}  // namespace

Var info_nce(Var z_q, Var z_pos, const Tensor& queue, double temperature) {
  const Tensor& q = z_q.value();
  const Tensor& p = z_pos.value();
  if (q.rank() != 2 || p.shape() != q.shape() || queue.rank() != 2 || queue.cols() != q.cols()) {
    throw DimensionError("info_nce shapes " + shape_string(q.shape()) + ", " + shape_string(p.shape()) +
                         " and queue " + shape_string(queue.shape()) + " do not agree");
  }
  const int b = q.rows(), d = q.cols(), k = queue.rows();
  const double inv_t = 1.0 / temperature;
  // probs[b, 0..k] kept for backward.
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(b) * (k + 1));
  const double total = info_nce_sum(q.ptr(), p.ptr(), b, d, queue, inv_t, probs->data());
  Tape& tape = *z_q.tape;
  return tape.record(
      Tensor::scalar(static_cast<float>(total / b)), {z_q, z_pos},
      [probs, queue, b, d, k, inv_t](Tape& t, int self) {
        const double g = t.grad(self)[0] * inv_t / b;
        const int qid = t.input(self, 0), pid = t.input(self, 1);
        const Tensor& qv = t.value(qid);
        const Tensor& pv = t.value(pid);
        const bool need_q = t.requires_grad(qid), need_p = t.requires_grad(pid);
        std::vector<double> acc(d);
        for (int r = 0; r < b; ++r) {
          const double* pr = probs->data() + static_cast<std::size_t>(r) * (k + 1);
          const double coeff_pos = pr[0] - 1.0;
          if (need_q) {
            const float* prow = pv.ptr() + static_cast<std::size_t>(r) * d;
            for (int c = 0; c < d; ++c) acc[c] = coeff_pos * prow[c];
            for (int j = 0; j < k; ++j) {
              const float* kr = queue.ptr() + static_cast<std::size_t>(j) * d;
              for (int c = 0; c < d; ++c) acc[c] += pr[j + 1] * kr[c];
            }
            float* gq = t.grad(qid).ptr() + static_cast<std::size_t>(r) * d;
            for (int c = 0; c < d; ++c) gq[c] += static_cast<float>(g * acc[c]);
          }
          if (need_p) {
            const float* qrow = qv.ptr() + static_cast<std::size_t>(r) * d;
            float* gp = t.grad(pid).ptr() + static_cast<std::size_t>(r) * d;
            for (int c = 0; c < d; ++c) gp[c] += static_cast<float>(g * coeff_pos * qrow[c]);
          }
        }
      });
}

double info_nce(const Tensor& z_q, const Tensor& z_pos, const Tensor& queue, double temperature) {
  if (z_q.size() != z_pos.size() || queue.rank() != 2 || static_cast<int>(z_q.size()) != queue.cols()) {
    throw DimensionError("info_nce vectors " + shape_string(z_q.shape()) + ", " + shape_string(z_pos.shape()) +
                         " do not match queue " + shape_string(queue.shape()));
  }
  return info_nce_sum(z_q.ptr(), z_pos.ptr(), 1, static_cast<int>(z_q.size()), queue, 1.0 / temperature, nullptr);
}

Tensor encode_keys(const EncoderParams& key, const AlignmentBatch& batch) {
  std::vector<EncoderInput> inputs(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) inputs[i].ids = batch.key_inputs[i];
  Tape tape(false);
  const EncoderOutput out = forward(tape, key, inputs);
  return project(tape, key, out.pooled).z_unit.value();
}

Var alignment_loss(Tape& tape, MoCoState& state, const AlignmentBatch& batch, const Tensor& keys) {
  std::vector<EncoderInput> inputs(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) inputs[i].ids = batch.query_inputs[i];
  const EncoderOutput out = forward(tape, state.query(), inputs);
  const Projection z = project(tape, state.query(), out.pooled);
  return info_nce(z.z_unit, tape.constant(keys), state.queue(), state.temperature());
}

AlignmentStepResult alignment_step(MoCoState& state, const AlignmentBatch& batch) {
  AlignmentStepResult result;
  result.keys = encode_keys(state.key(), batch);
  Tape tape;
  const Var loss = alignment_loss(tape, state, batch, result.keys);
  tape.backward(loss);
  result.loss = loss.value()[0];
  state.enqueue(result.keys);
  state.momentum_update();
  return result;
}

}  // namespace ppa
