#include "svq/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace svq {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport compare_with_central_differences(std::span<const double> analytic,
                                                 std::span<const std::size_t> coords, const PerturbedEval& eval,
                                                 double h, double tol) {
  GradCheckReport report;
  for (std::size_t k = 0; k < coords.size(); ++k) {
    const std::size_t i = coords[k];
    const auto plus = eval(i, h);
    const auto minus = eval(i, -h);
    if (!plus || !minus) {
      ++report.skipped;
      continue;
    }
    const double numeric = (*plus - *minus) / (2.0 * h);
    const double a = analytic[k];
    ++report.checked;
    if (!std::isfinite(a) || !std::isfinite(numeric)) {
      report.pass = false;
      report.worst_index = i;
      report.max_rel_error = std::numeric_limits<double>::infinity();
      report.failure = "non-finite gradient at coordinate " + std::to_string(i);
      return report;
    }
    const double err = relative_error(a, numeric);
    if (err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_index = i;
    }
  }
  if (report.max_rel_error > tol) {
    report.pass = false;
    report.failure = "max relative error " + std::to_string(report.max_rel_error) + " at coordinate " +
                     std::to_string(report.worst_index) + " exceeds " + std::to_string(tol);
  }
  return report;
}

GradCheckReport finite_difference_check(const ScalarFn& f, const Array& p, double h, double tol) {
  std::vector<double> analytic;
  {
    Tape tape;
    const Var param = tape.parameter(p);
    const Var loss = f(tape, param);
    tape.backward(loss);
    const Array g = tape.grad(param);
    analytic.assign(g.data().begin(), g.data().end());
  }
  std::vector<std::size_t> coords(p.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  const PerturbedEval eval = [&](std::size_t i, double delta) -> std::optional<double> {
    Array shifted = p;
    shifted[i] += delta;
    Tape tape;
    return f(tape, tape.parameter(std::move(shifted))).value().item();
  };
  return compare_with_central_differences(analytic, coords, eval, h, tol);
}

}  // namespace svq
