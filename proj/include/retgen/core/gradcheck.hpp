#pragma once

#include "retgen/core/autodiff.hpp"

#include <functional>

namespace retgen {

/// Central differences (f(p+eps) - f(p-eps)) / (2 eps), one coordinate at a
/// time. `f` must be deterministic; parameters are restored on return.
Gradients finite_difference_grad(const std::function<double()>& f, const ParameterList& params,
                                 double eps = 1e-5);

/// max |a-b| / max(|a|, |b|, floor) over every coordinate of every parameter.
double max_relative_error(const Gradients& a, const Gradients& b, const ConstParameterList& params,
                          double floor = 1e-8);

}  // namespace retgen
