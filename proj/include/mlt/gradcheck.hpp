#pragma once

#include <functional>
#include <span>
#include <vector>

#include "mlt/tensor.hpp"

namespace mlt {

using ScalarFn = std::function<Tensor(const Tensor&)>;
using ClosedScalarFn = std::function<Tensor()>;

/// Worst |analytic - central difference| / max(1, |analytic|) over all
/// coordinates of `x`. `f` must be deterministic and scalar valued; any
/// randomness (dropout) has to be reseeded inside it.
double gradcheck(const ScalarFn& f, const Tensor& x, double h = 1e-5);

/// Same check for a closure over several tensors. `params` are perturbed in
/// place and restored. Returns one worst error per tensor.
std::vector<double> gradcheck(const ClosedScalarFn& f, std::span<const Tensor> params,
                              double h = 1e-5);

}  // namespace mlt
