#pragma once

#include <functional>
#include <span>
#include <string>

#include "capsfuse/autodiff.hpp"

namespace capsfuse {

// Builds a scalar loss on the given tape from a leaf holding the input.
using ScalarFn = std::function<ad::Var(ad::Tape&, ad::Var)>;
// Builds a scalar loss on the given tape from whatever parameters it closes over.
using LossFn = std::function<ad::Var(ad::Tape&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double autodiff_value = 0.0;
  double numeric_value = 0.0;
};

// Central differences (f(x+eps e_i) - f(x-eps e_i)) / (2 eps) against the
// autodiff gradient, per coordinate. Relative error uses max(|a|, |b|, 1e-8)
// as denominator. eps must lie in (0, 1e-2].
double finite_diff_check(const ScalarFn& fn, const Tensor& x, double eps);

// Same check over every coordinate of every listed parameter. Parameter
// values are perturbed in place and restored; gradients are left zeroed.
GradCheckResult finite_diff_check(const LossFn& fn, std::span<Parameter* const> params, double eps);

}  // namespace capsfuse
