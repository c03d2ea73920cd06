#pragma once

#include <functional>

#include "dspl/tensor.hpp"

namespace dspl {

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every
/// element of `x`. `f` must be deterministic; eps must lie in [1e-7, 1e-3].
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double eps = 1e-5);

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor).
double max_relative_error(std::span<const double> a, std::span<const double> b,
                          double floor = 1e-8);

}  // namespace dspl
