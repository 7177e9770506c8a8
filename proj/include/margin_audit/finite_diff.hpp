#pragma once

#include <functional>

#include "margin_audit/tensor.hpp"

namespace margin_audit {

// Scalar function that also reports its analytic gradient into `grad`.
using DifferentiableFunction = std::function<double(const Tensor& point, Tensor& grad)>;

struct FiniteDiffReport {
  // max_i |analytic_i - central_i| / (|analytic_i| + 1e-12)
  double max_relative_error = 0.0;
  // max_i |analytic_i - central_i|, the meaningful figure when the gradient vanishes
  double max_absolute_error = 0.0;
};

// Compares the analytic gradient against central differences with step h.
// Throws NumericsError when h <= 0 or any evaluation is non-finite.
FiniteDiffReport finite_diff_check(const DifferentiableFunction& f, const Tensor& point,
                                   double h = 1e-6);

}  // namespace margin_audit
