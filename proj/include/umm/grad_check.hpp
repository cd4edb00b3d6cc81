#pragma once

#include <functional>
#include <vector>

#include "umm/tensor.hpp"

namespace umm {

inline constexpr double kGradCheckFloor = 1e-6;

/// Worst coordinate-wise relative error between the analytic gradient of a
/// scalar function and fourth-order central differences, with denominator
/// max(|analytic|, |numeric|, kGradCheckFloor). Below the floor the check is
/// absolute: |analytic - numeric| / 1e-6.
double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, const Tensor<double>& x,
                  double step);

/// Same comparison over a set of parameter tensors perturbed in place.
/// `max_coords` > 0 limits the coordinates probed per tensor to an evenly
/// strided subset.
double grad_check_params(const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>> params,
                         double step, std::size_t max_coords = 0);

}  // namespace umm
