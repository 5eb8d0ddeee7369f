// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ppa/tensor.hpp"

namespace ppa {

/// Linear ramp from 0 to peak over the warm-up steps, then linear decay to 0
/// at total_steps. Steps outside [0, total_steps] are clamped.
double lr_at(std::int64_t step, std::int64_t total_steps, double peak, std::int64_t warmup_steps);
/// Warm-up length as a fraction of total_steps, rounded to nearest.
std::int64_t warmup_steps_for(std::int64_t total_steps, double warmup_fraction);

/// Scales every gradient so the global L2 norm is at most max_norm.
/// Returns the norm before clipping. max_norm <= 0 disables clipping.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay. Each step first shrinks a decayed
/// parameter by (1 - lr * weight_decay), then applies the bias-corrected
/// adaptive update. Arithmetic is in double per element.
class AdamW {
 public:
  /// decays(name) selects which parameters receive weight decay; all do
  /// when it is empty.
  explicit AdamW(AdamWOptions options = {}, std::function<bool(const std::string&)> decays = {});

  /// Applies one update to params using their grad tensors. The parameter
  /// list must be the same, in the same order, on every call.
  void step(std::span<Parameter* const> params, double lr);

  std::int64_t steps_taken() const { return steps_; }
  const AdamWOptions& options() const { return options_; }

  /// Moment tensors in parameter order, for checkpoints.
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }
  void restore(std::int64_t steps, std::vector<Tensor> m, std::vector<Tensor> v);

 private:
  AdamWOptions options_;
  std::function<bool(const std::string&)> decays_;
  std::int64_t steps_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

/// BERT convention: biases and layer-norm gains are not decayed.
bool decays_by_default(const std::string& name);

}  // namespace ppa
