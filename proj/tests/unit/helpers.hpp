#pragma once

#include <cmath>
#include <vector>

#include "hsifuse/autograd.hpp"
#include "hsifuse/grad_check.hpp"
#include "hsifuse/ops.hpp"

namespace th {

using namespace hsifuse;

inline Var leaf(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    return Var(Tensor::uniform(std::move(s), rng, lo, hi, DType::f64), true);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.flat(i) - b.flat(i)));
    return m;
}

/// Scalar loss that weights each output element differently, so that
/// gradient errors cannot cancel in a plain sum.
inline Var weighted_sum(const Var& y, uint64_t seed = 99) {
    Rng r(seed);
    Var w = ops::constant(Tensor::uniform(y.shape(), r, 0.5, 1.5, y.dtype()));
    return ops::sum_all(ops::mul(y, w));
}

}  // namespace th
