#include "i2i/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "i2i/errors.hpp"

namespace i2i {

GradCheckResult grad_check(const ScalarFn& fn, std::vector<Tensor> inputs, const GradCheckOptions& options) {
  Tensor root = fn(inputs);
  if (root.numel() != 1) throw ShapeError("grad_check: function must be scalar-valued, got " + shape_str(root.shape()));
  const Gradients grads = backward(root);

  GradCheckResult result;
  const double h = options.step;
  const double floor = options.degenerate_below * std::max(1.0, std::fabs(root.item()));
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].requires_grad()) continue;
    const std::vector<double> analytic = grads.of(inputs[i]);
    auto values = inputs[i].mutable_values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      double plus = 0.0, minus = 0.0;
      {
        NoGradGuard no_grad;
        values[j] = saved + h;
        plus = fn(inputs).item();
        values[j] = saved - h;
        minus = fn(inputs).item();
      }
      values[j] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double a = analytic[j] * options.analytic_scale;
      if (std::max(std::fabs(a), std::fabs(numeric)) < floor && std::fabs(a - numeric) <= 1e-2 * floor) {
        ++result.skipped;
        continue;
      }
      ++result.checked;
      const double err = std::fabs(a - numeric) / std::max(1e-8, std::fabs(numeric));
      if (err > result.max_rel_error || !std::isfinite(err)) {
        result.max_rel_error = std::isfinite(err) ? err : INFINITY;
        result.worst = "input " + std::to_string(i) + "[" + std::to_string(j) + "]";
      }
    }
  }
  return result;
}

}  // namespace i2i
