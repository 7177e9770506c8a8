#include "margin_audit/finite_diff.hpp"

#include <algorithm>
#include <cmath>

namespace margin_audit {

FiniteDiffReport finite_diff_check(const DifferentiableFunction& f, const Tensor& point,
                                   double h) {
  if (!(h > 0.0)) throw NumericsError("finite difference step must be positive");
  Tensor analytic;
  const double f0 = f(point, analytic);
  if (!std::isfinite(f0)) throw NumericsError("function value is not finite at the base point");
  if (analytic.size() != point.size() || !analytic.all_finite()) {
    throw NumericsError("analytic gradient has wrong size or non-finite entries");
  }

  FiniteDiffReport report;
  Tensor probe = point;
  Tensor scratch;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double x = point.data[i];
    probe.data[i] = x + h;
    const double fp = f(probe, scratch);
    probe.data[i] = x - h;
    const double fm = f(probe, scratch);
    probe.data[i] = x;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericsError("function value is not finite near coordinate " + std::to_string(i));
    }
    const double central = (fp - fm) / (2.0 * h);
    const double abs_err = std::abs(analytic.data[i] - central);
    report.max_absolute_error = std::max(report.max_absolute_error, abs_err);
    report.max_relative_error =
        std::max(report.max_relative_error, abs_err / (std::abs(analytic.data[i]) + 1e-12));
  }
  return report;
}

}  // namespace margin_audit
