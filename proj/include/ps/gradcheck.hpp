#pragma once

#include "ps/tensor.hpp"

namespace ps {

// Compares reverse-mode gradients of a scalar-valued f against central
// differences at x. Returns the max over components of
//   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// x is perturbed in place element by element and restored afterwards.
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                               Tensor x, double eps);

}  // namespace ps
