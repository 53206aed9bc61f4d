#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "layoutmuse/autodiff/tape.hpp"

namespace layoutmuse::ad {

struct GradCheckResult {
  bool ok = true;
  /// Worst per-input relative error ||analytic - numeric|| / max(||analytic||, ||numeric||).
  double max_rel_error = 0.0;
  std::string detail;
};

template <typename T>
using GradFn = std::function<BasicVar<T>(BasicTape<T>&, std::span<const BasicVar<T>>)>;

/// Compares reverse-mode gradients of `fn` against central differences.
/// Non-scalar outputs are contracted with a fixed pseudo-random projection.
template <typename T>
GradCheckResult gradcheck(const GradFn<T>& fn, const std::vector<BasicTensor<T>>& inputs, double eps,
                          double rtol, std::uint64_t projection_seed = 7);

}  // namespace layoutmuse::ad
