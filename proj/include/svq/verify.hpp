#pragma once

// Oracle checks behind the `verify` command: finite-difference gradients for
// every op and for both composite objectives, brute-force nearest-code
// agreement, the straight-through contract, mask counting laws, and
// hand-computed loss values.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "svq/array.hpp"
#include "svq/autodiff.hpp"
#include "svq/gradcheck.hpp"
#include "svq/rng.hpp"

namespace svq {

struct CheckResult {
  std::string name;
  bool pass = true;
  double max_error = 0.0;
  std::string detail;
};

struct VerifyReport {
  std::vector<CheckResult> checks;

  bool all_pass() const;
  std::size_t failures() const;
  // One line per check plus a summary line.
  std::string to_text() const;
};

// One differentiable op under test: f maps a parameter to a scalar, sample
// draws a random point where f is smooth.
struct OpCase {
  std::string name;
  ScalarFn f;
  std::function<Array(Rng&)> sample;
};

std::vector<OpCase> op_cases();
// x^2 recorded with a deliberately wrong backward (g * x); the negative
// control the gradient suite must reject.
OpCase faulty_op_case();

CheckResult check_op_gradient(const OpCase& op, std::uint64_t seed, std::size_t points = 10, double h = 1e-5,
                              double tol = 1e-4);

CheckResult check_svq_objective_gradient(std::uint64_t seed, double tol = 1e-3);
CheckResult check_pretrain_objective_gradient(std::uint64_t seed, double tol = 1e-3);
CheckResult check_nearest_code_oracle(std::uint64_t seed, std::size_t trials = 1000);
CheckResult check_straight_through_contract(std::uint64_t seed);
CheckResult check_stop_gradient_routing(std::uint64_t seed);
CheckResult check_mask_laws(std::uint64_t seed, std::size_t seeds = 200);
CheckResult check_loss_hand_values();

struct VerifyOptions {
  std::uint64_t seed = 2024;
  bool inject_faulty_op = false;
};

VerifyReport run_verification(const VerifyOptions& options = {});

}  // namespace svq
