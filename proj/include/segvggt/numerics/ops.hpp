#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "segvggt/numerics/tensor.hpp"

// Differentiable primitives. Each op records a backward rule on the active
// tape when any input requires a gradient; otherwise it only computes.
//
// "Rows" of a tensor are all leading dimensions folded together, so last-dim
// ops (softmax, layer_norm, linear) accept any rank >= 1.

namespace segvggt::numerics {

/// Floor applied inside log() and divisions so exact zeros stay finite.
inline constexpr double kLogFloor = 1e-300;

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);     // [m x k] * [k x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m x k] * [n x k]^T
/// x [.. x in] * w [in x out] + bias [out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor transpose(const Tensor& a);

// Elementwise. Binary ops require equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor huber(const Tensor& x, double delta);

// Reductions to a scalar (shape [1]).
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// sum_i x_i * weights_i with constant weights.
Tensor weighted_sum(const Tensor& x, std::span<const double> weights);
/// sum_r weights_r * x[r, index_r] over the rows of a matrix.
Tensor pick(const Tensor& x, std::span<const std::size_t> index, std::span<const double> weights);
/// Scalar list to vector, e.g. gathering per-pair losses.
Tensor stack_scalars(const std::vector<Tensor>& scalars);

// Last-dimension ops.
Tensor softmax_lastdim(const Tensor& x);
Tensor log_softmax_lastdim(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
/// Divides each row by its Euclidean norm.
Tensor normalize_rows(const Tensor& x);

// Structure.
Tensor reshape(const Tensor& x, Shape shape);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index);

// Attention building blocks.
/// Per-head scaled dot products: q [n x d], k [m x d] -> [heads x n x m],
/// head h uses columns [h*d/heads, (h+1)*d/heads) scaled by 1/sqrt(d/heads).
Tensor mha_scores(const Tensor& q, const Tensor& k, std::size_t heads);
/// Per-head weighted values: p [heads x n x m], v [m x d] -> [n x d] with
/// head outputs concatenated along columns.
Tensor mha_combine(const Tensor& p, const Tensor& v);
/// Mean over the leading dimension: [h x ...] -> [...].
Tensor mean_leading(const Tensor& x);
/// Column-segment sums: x [n x m], boundaries b_0=0 < ... < b_S=m -> [n x S].
Tensor segment_sum_cols(const Tensor& x, std::span<const std::size_t> boundaries);

}  // namespace segvggt::numerics
