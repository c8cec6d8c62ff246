#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>

#include "svq/array.hpp"
#include "svq/autodiff.hpp"

namespace svq {

struct GradCheckReport {
  bool pass = true;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates where the function was not locally smooth
  std::string failure;      // set when pass is false
};

// Relative error |a - n| / max(|a|, |n|, floor); the floor keeps near-zero
// gradients from turning round-off into huge ratios.
double relative_error(double analytic, double numeric, double floor = 1e-4);

// Builds f on a fresh tape with p as the only parameter, backpropagates, and
// compares every coordinate with (f(p+h) - f(p-h)) / 2h.
using ScalarFn = std::function<Var(Tape&, const Var&)>;
GradCheckReport finite_difference_check(const ScalarFn& f, const Array& p, double h = 1e-5, double tol = 1e-4);

// Generic form: eval(coord, delta) returns f with coordinate `coord` shifted
// by delta, or nullopt when the point is not differentiable there (skipped).
using PerturbedEval = std::function<std::optional<double>(std::size_t coord, double delta)>;
GradCheckReport compare_with_central_differences(std::span<const double> analytic,
                                                 std::span<const std::size_t> coords, const PerturbedEval& eval,
                                                 double h, double tol);

}  // namespace svq
