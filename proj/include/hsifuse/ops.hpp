#pragma once

#include <vector>

#include "hsifuse/autograd.hpp"

namespace hsifuse {

/// Differentiable primitives. Binary ops broadcast length-1 axes; operands
/// of lower rank are left-padded with length-1 axes.
namespace ops {

Var constant(Tensor t);
Var constant_like(const Var& like, double value);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// Throws NonFiniteError when b contains an exact zero.
Var div(const Var& a, const Var& b);

Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Var gelu(const Var& a);
Var exp(const Var& a);
Var abs(const Var& a);

/// [m,k]x[k,n], or batched [B,m,k]x[B,k,n] / [B,m,k]x[k,n].
Var matmul(const Var& a, const Var& b);
/// a x b^T without materializing the transpose: [..,m,k]x[..,n,k].
Var matmul_nt(const Var& a, const Var& b);

enum class Reduce { sum, mean, max };
Var reduce(Reduce op, const Var& a, std::vector<int64_t> axes, bool keepdim = false);
Var sum(const Var& a, std::vector<int64_t> axes, bool keepdim = false);
Var mean(const Var& a, std::vector<int64_t> axes, bool keepdim = false);
Var max(const Var& a, std::vector<int64_t> axes, bool keepdim = false);
Var sum_all(const Var& a);
Var mean_all(const Var& a);

/// Max-subtracted softmax. Throws NonFiniteError on NaN input.
Var softmax(const Var& a, int64_t axis);

Var reshape(const Var& a, Shape shape);
Var permute(const Var& a, std::vector<int64_t> order);
Var transpose(const Var& a, int64_t axis0, int64_t axis1);
Var concat(const std::vector<Var>& parts, int64_t axis);
Var slice(const Var& a, int64_t axis, int64_t start, int64_t length);
/// Materializes a broadcast to `shape`.
Var expand(const Var& a, Shape shape);

/// (x - mean) / sqrt(var + eps) over `axes` (biased variance).
Var standardize(const Var& a, std::vector<int64_t> axes, double eps = 1e-5);

/// mean(|a - b|) as a scalar of shape [1].
Var l1_loss(const Var& a, const Var& b);

}  // namespace ops

namespace detail {
/// Axis normalization shared by op implementations.
int64_t norm_axis(int64_t axis, int64_t rank);
Shape broadcast_shape(const Shape& a, const Shape& b);
/// Sums `g` down to `target` (inverse of broadcasting).
Tensor reduce_to(const Tensor& g, const Shape& target);
Tensor add_tensors(const Tensor& a, const Tensor& b);
}  // namespace detail

}  // namespace hsifuse
