// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ppa/tape.hpp"

namespace ppa {

/// Outcome of comparing reverse-mode gradients with central differences.
struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t elements_checked = 0;
  /// "input#index" of the element with the largest relative error.
  std::string worst_element;
  /// Inputs with requires_grad unset whose reverse-mode gradient was not
  /// exactly zero. Always empty for a correct tape.
  std::vector<int> frozen_inputs_with_gradient;
  double tolerance = 0.0;
  bool passed = false;
};

/// Builds the output of the operation under test from its inputs.
using OpUnderTest = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckOptions {
  /// Difference step on the float32 input values.
  double step = 3e-2;
  /// Fourth-order five-point stencil instead of the two-point central
  /// difference. Its smaller truncation error allows a larger step, which
  /// keeps float32 rounding out of the estimate.
  bool five_point = true;
  /// Relative error denominator is max(|analytic|, |numeric|, floor).
  double floor = 1e-2;
  std::uint64_t seed = 0;
};

/// Checks gradients of an op with explicit inputs. Each input is perturbed
/// only when its requires_grad flag is set. The op output is reduced with
/// fixed random weights drawn from options.seed, so every output element
/// contributes to the scalar being differentiated.
GradCheckReport grad_check(const OpUnderTest& op, std::vector<Tensor> inputs, double tolerance,
                           const GradCheckOptions& options = {});

/// Same, with inputs drawn uniformly from [-1, 1] for the given shapes.
GradCheckReport grad_check(const OpUnderTest& op, std::span<const Shape> input_shapes, double tolerance,
                           const GradCheckOptions& options = {});

}  // namespace ppa
