#pragma once

#include <functional>

#include "cdseg/tensor.hpp"

namespace cdseg::ad {

using ScalarFn = std::function<Tensor(const Tensor&)>;

/// Compares the reverse-mode gradient of `f` at `point` with central
/// differences of step `eps`. Returns
///   max_i |analytic_i - numeric_i| / max(1, |analytic_i|).
/// Throws kDomain if any evaluation inside the stencil is non-finite.
double grad_check(const ScalarFn& f, const Tensor& point, double eps = 1e-4);

}  // namespace cdseg::ad
