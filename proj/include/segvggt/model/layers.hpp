#pragma once

#include <span>
#include <string>
#include <vector>

#include "segvggt/model/params.hpp"

// Transformer building blocks shared by the token aggregator and the query
// decoder. Token and query matrices are [rows x dim].

namespace segvggt::model {

struct AttentionWeights {
  Tensor ln_gain, ln_bias, qkv_w, qkv_b, out_w, out_b;
  static AttentionWeights from(const ParamStore& p, const std::string& prefix);
};

struct MlpWeights {
  Tensor ln_gain, ln_bias, w1, b1, w2, b2;
  static MlpWeights from(const ParamStore& p, const std::string& prefix);
};

struct CrossAttentionWeights {
  Tensor wq, wk, wv, wo;
  static CrossAttentionWeights from(const ParamStore& p, const std::string& prefix);
};

/// Pre-norm multi-head self-attention with residual. Attention is restricted
/// to each segment [b_s, b_{s+1}) of rows; a single segment covering every row
/// gives global attention. When `probabilities` is given, the per-segment
/// [heads x n x n] attention maps are appended to it.
Tensor self_attention(const Tensor& x, const AttentionWeights& w, std::size_t heads,
                      std::span<const std::size_t> segments,
                      std::vector<Tensor>* probabilities = nullptr);

/// Pre-norm two-layer GELU MLP with residual.
Tensor mlp_residual(const Tensor& x, const MlpWeights& w);

struct CrossAttentionResult {
  Tensor queries;        // q + concat_h(A_h T W_v) W_o
  Tensor attention;      // [O x M], head mean of the softmax rows
  Tensor probabilities;  // [heads x O x M]
};

/// Queries attend over every token; no normalization is applied, so with
/// identity projections and one head this is q + softmax(q T^T / sqrt(d)) T.
CrossAttentionResult query_cross_attention(const Tensor& queries, const Tensor& tokens,
                                           const CrossAttentionWeights& w, std::size_t heads);

}  // namespace segvggt::model
