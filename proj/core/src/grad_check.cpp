// SPDX-License-Identifier: Apache-2.0
#include "ppa/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "ppa/ops.hpp"
#include "ppa/rng.hpp"

namespace ppa {

namespace {

std::vector<Var> bind_inputs(Tape& tape, const std::vector<Tensor>& inputs) {
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.leaf(t));
  return vars;
}

double weighted_output(const OpUnderTest& op, const std::vector<Tensor>& inputs, const Tensor& weights) {
  Tape tape(false);
  const std::vector<Var> vars = bind_inputs(tape, inputs);
  const Tensor& out = op(tape, vars).value();
  double total = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) total += static_cast<double>(out[i]) * weights[i];
  return total;
}

}  // namespace

GradCheckReport grad_check(const OpUnderTest& op, std::vector<Tensor> inputs, double tolerance,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  report.tolerance = tolerance;
  Rng rng(derive_seed(options.seed, 0x6772616463686bULL));

  Tape tape(true);
  const std::vector<Var> vars = bind_inputs(tape, inputs);
  const Var out = op(tape, vars);
  Tensor weights(out.shape());
  for (float& w : weights.data()) w = static_cast<float>(rng.uniform(-1.0, 1.0));
  const Var loss = sum(mul(out, tape.constant(weights)));
  tape.backward(loss);

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = tape.grad_of(vars[k]);
    if (!inputs[k].requires_grad()) {
      const bool all_zero = std::all_of(analytic.data().begin(), analytic.data().end(), [](float g) { return g == 0.0f; });
      if (!all_zero) report.frozen_inputs_with_gradient.push_back(static_cast<int>(k));
      continue;
    }
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const float original = inputs[k][i];
      auto at = [&](double offset) {
        inputs[k][i] = static_cast<float>(original + offset);
        const double v = weighted_output(op, inputs, weights);
        inputs[k][i] = original;
        return v;
      };
      double numeric = 0.0;
      if (options.five_point) {
        const double h = options.step;
        numeric = (at(-2 * h) - 8 * at(-h) + 8 * at(h) - at(2 * h)) / (12 * h);
      } else {
        // Divide by the step actually representable in float32.
        const float hi = static_cast<float>(original + options.step);
        const float lo = static_cast<float>(original - options.step);
        numeric = (at(options.step) - at(-options.step)) / (static_cast<double>(hi) - static_cast<double>(lo));
      }
      const double a = analytic[i];
      const double abs_err = std::fabs(a - numeric);
      const double rel_err = abs_err / std::max({std::fabs(a), std::fabs(numeric), options.floor});
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel_err > report.max_rel_error || report.elements_checked == 0) {
        report.max_rel_error = std::max(report.max_rel_error, rel_err);
        report.worst_element = std::to_string(k) + "#" + std::to_string(i);
      }
      ++report.elements_checked;
    }
  }
  report.passed = report.max_rel_error <= tolerance && report.frozen_inputs_with_gradient.empty();
  return report;
}

GradCheckReport grad_check(const OpUnderTest& op, std::span<const Shape> input_shapes, double tolerance,
                           const GradCheckOptions& options) {
  Rng rng(derive_seed(options.seed, 0x696e70757473ULL));
  std::vector<Tensor> inputs;
  for (const Shape& s : input_shapes) {
    Tensor t(s);
    for (float& v : t.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    t.set_requires_grad(true);
    inputs.push_back(std::move(t));
  }
  return grad_check(op, std::move(inputs), tolerance, options);
}

}  // namespace ppa
