#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "topogan/tensor.hpp"

namespace topogan::ad {

using NamedTensor = std::pair<std::string, Tensor>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_name;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// Relative error |a - n| / max(|a|, |n|, floor). Below `floor` the measure
/// turns absolute; central differences cannot resolve smaller gradients.
double relative_error(double analytic, double numeric, double floor = 1e-3);

/// Compares the analytic gradient of `loss` (rebuilt on each call) against
/// central differences with step `h` for every entry of every tensor in
/// `params`. The tensors must be leaves that require gradients. The error
/// floor is scaled by max(1, |loss|), since difference round-off grows with
/// the magnitude of the loss.
GradCheckReport grad_check(const std::function<Tensor()>& loss,
                           std::vector<NamedTensor> params, double h = 1e-6,
                           double floor = 1e-3);

}  // namespace topogan::ad
