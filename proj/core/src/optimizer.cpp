// SPDX-License-Identifier: Apache-2.0
#include "ppa/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ppa {

double lr_at(std::int64_t step, std::int64_t total_steps, double peak, std::int64_t warmup_steps) {
  if (total_steps <= 0) return 0.0;
  step = std::clamp<std::int64_t>(step, 0, total_steps);
  warmup_steps = std::clamp<std::int64_t>(warmup_steps, 0, total_steps);
  if (warmup_steps > 0 && step <= warmup_steps) {
    return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  if (total_steps == warmup_steps) return 0.0;
  return peak * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup_steps);
}

std::int64_t warmup_steps_for(std::int64_t total_steps, double warmup_fraction) {
  if (warmup_fraction < 0.0 || warmup_fraction > 1.0) throw std::invalid_argument("warmup fraction outside [0, 1]");
  return std::llround(warmup_fraction * static_cast<double>(total_steps));
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  double sq = 0.0;
  for (const Parameter* p : params) {
    if (p->grad.shape() != p->value.shape()) continue;
    for (float g : p->grad.data()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const float factor = static_cast<float>(max_norm / (norm + 1e-6));
    for (Parameter* p : params) {
      if (p->grad.shape() != p->value.shape()) continue;
      for (float& g : p->grad.data()) g *= factor;
    }
  }
  return norm;
}

bool decays_by_default(const std::string& name) {
  return !(name.ends_with(".bias") || name.ends_with(".gain"));
}

AdamW::AdamW(AdamWOptions options, std::function<bool(const std::string&)> decays)
    : options_(options), decays_(std::move(decays)) {}

void AdamW::step(std::span<Parameter* const> params, double lr) {
  if (m_.empty()) {
    for (const Parameter* p : params) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }
  if (m_.size() != params.size()) throw std::logic_error("optimizer parameter list changed between steps");
  ++steps_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (p.value.shape() != m_[i].shape()) throw DimensionError("optimizer state does not match parameter " + p.name);
    const bool has_grad = p.grad.shape() == p.value.shape();
    const double shrink = (!decays_ || decays_(p.name)) ? 1.0 - lr * options_.weight_decay : 1.0;
    auto w = p.value.data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = has_grad ? p.grad[j] : 0.0;
      const double mj = b1 * m[j] + (1.0 - b1) * g;
      const double vj = b2 * v[j] + (1.0 - b2) * g * g;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double update = (mj / c1) / (std::sqrt(vj / c2) + options_.eps);
      w[j] = static_cast<float>(static_cast<double>(w[j]) * shrink - lr * update);
    }
  }
}

void AdamW::restore(std::int64_t steps, std::vector<Tensor> m, std::vector<Tensor> v) {
  if (m.size() != v.size()) throw std::invalid_argument("moment lists differ in length");
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace ppa
