#pragma once

#include <functional>

#include "gancs/tensor.hpp"

namespace gancs {

/// Central-difference gradient of a scalar function, one coordinate at a time.
/// Test oracle only: cost is 2·x.size() evaluations of f.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

}  // namespace gancs
