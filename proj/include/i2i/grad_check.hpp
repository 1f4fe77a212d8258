#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "i2i/tensor.hpp"

namespace i2i {

using ScalarFn = std::function<Tensor(std::span<const Tensor>)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// Round-off floor relative to max(1, |f|). At h = 1e-5 a central difference
  /// carries ~1e-10 |f| of absolute noise, so smaller derivatives cannot be
  /// resolved to 1e-4. Coordinates with both derivatives under the floor are
  /// skipped unless they disagree by more than 1% of it.
  double degenerate_below = 1e-6;
  /// Test hook: multiplies every analytic derivative (1.0 = untouched).
  double analytic_scale = 1.0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  /// "input <i>[<j>]" of the worst coordinate.
  std::string worst;
};

/// Compares reverse-mode gradients against central differences for every
/// coordinate of every input that requires a gradient. Inputs must be leaves;
/// they are perturbed in place and restored.
///
/// Relative error per coordinate is |analytic - numeric| / max(1e-8, |numeric|).
GradCheckResult grad_check(const ScalarFn& fn, std::vector<Tensor> inputs, const GradCheckOptions& options = {});

}  // namespace i2i
