#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Finite-difference and closed-form oracle suites shared by the test
// binaries, the `gradcheck` command and the acceptance run.
namespace layoutmuse::diagnostics {

struct CheckResult {
  std::string suite;
  std::string name;
  bool ok = false;
  double max_rel_error = 0.0;  // or absolute error for closed forms
  std::string detail;
};

/// Every autodiff op against central differences on randomized shapes
/// (rel 1e-3 in float32, 1e-6 in float64).
template <typename T>
std::vector<CheckResult> op_suite(std::uint64_t seed);

/// Second-order gradient of (||w|| - 1)^2 for a linear critic, to 1e-6.
std::vector<CheckResult> penalty_closed_form();
/// training::gradient_penalty for linear critics of norm 1 and 3.
std::vector<CheckResult> training_penalty_closed_form();
/// soft_composite gradients w.r.t. grid values and sprite pixels on 16x16 canvases.
std::vector<CheckResult> compositor_suite(std::uint64_t seed, int trials);

std::vector<CheckResult> run_all();

}  // namespace layoutmuse::diagnostics
