#pragma once

#include <functional>

#include "specgen/tensor.hpp"

namespace specgen::ad {

/// Max over coordinates of |analytic - numeric| / (|analytic| + |numeric| + 1e-12),
/// numeric by central differences with step h. f must return a scalar.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

}  // namespace specgen::ad
