#include "segvggt/model/layers.hpp"

#include "segvggt/numerics/ops.hpp"

namespace segvggt::model {

namespace nm = numerics;

AttentionWeights AttentionWeights::from(const ParamStore& p, const std::string& prefix) {
  return {p.get(prefix + ".ln_g"),  p.get(prefix + ".ln_b"),  p.get(prefix + ".qkv_w"),
          p.get(prefix + ".qkv_b"), p.get(prefix + ".out_w"), p.get(prefix + ".out_b")};
}

MlpWeights MlpWeights::from(const ParamStore& p, const std::string& prefix) {
  return {p.get(prefix + ".ln_g"), p.get(prefix + ".ln_b"), p.get(prefix + ".w1"),
          p.get(prefix + ".b1"),   p.get(prefix + ".w2"),   p.get(prefix + ".b2")};
}

CrossAttentionWeights CrossAttentionWeights::from(const ParamStore& p, const std::string& prefix) {
  return {p.get(prefix + ".wq"), p.get(prefix + ".wk"), p.get(prefix + ".wv"), p.get(prefix + ".wo")};
}

Tensor self_attention(const Tensor& x, const AttentionWeights& w, std::size_t heads,
                      std::span<const std::size_t> segments, std::vector<Tensor>* probabilities) {
  const std::size_t d = x.cols();
  if (segments.size() < 2 || segments.front() != 0 || segments.back() != x.rows()) {
    throw nm::ContractError("self_attention: segments must cover all rows");
  }
  const Tensor qkv = nm::linear(nm::layer_norm(x, w.ln_gain, w.ln_bias), w.qkv_w, w.qkv_b);
  const Tensor q = nm::slice_cols(qkv, 0, d);
  const Tensor k = nm::slice_cols(qkv, d, 2 * d);
  const Tensor v = nm::slice_cols(qkv, 2 * d, 3 * d);
  std::vector<Tensor> outputs;
  outputs.reserve(segments.size() - 1);
  for (std::size_t s = 0; s + 1 < segments.size(); ++s) {
    const std::size_t b = segments[s], e = segments[s + 1];
    const bool whole = b == 0 && e == x.rows();
    const Tensor qs = whole ? q : nm::slice_rows(q, b, e);
    const Tensor ks = whole ? k : nm::slice_rows(k, b, e);
    const Tensor vs = whole ? v : nm::slice_rows(v, b, e);
    const Tensor p = nm::softmax_lastdim(nm::mha_scores(qs, ks, heads));
    if (probabilities) probabilities->push_back(p);
    outputs.push_back(nm::mha_combine(p, vs));
  }
  const Tensor attended = outputs.size() == 1 ? outputs.front() : nm::concat_rows(outputs);
  return nm::add(x, nm::linear(attended, w.out_w, w.out_b));
}

Tensor mlp_residual(const Tensor& x, const MlpWeights& w) {
  const Tensor h = nm::gelu(nm::linear(nm::layer_norm(x, w.ln_gain, w.ln_bias), w.w1, w.b1));
  return nm::add(x, nm::linear(h, w.w2, w.b2));
}

CrossAttentionResult query_cross_attention(const Tensor& queries, const Tensor& tokens,
                                           const CrossAttentionWeights& w, std::size_t heads) {
  const Tensor none;
  const Tensor q = nm::linear(queries, w.wq, none);
  const Tensor k = nm::linear(tokens, w.wk, none);
  const Tensor v = nm::linear(tokens, w.wv, none);
  CrossAttentionResult out;
  out.probabilities = nm::softmax_lastdim(nm::mha_scores(q, k, heads));
  out.attention = nm::mean_leading(out.probabilities);
  out.queries = nm::add(queries, nm::linear(nm::mha_combine(out.probabilities, v), w.wo, none));
  return out;
}

}  // namespace segvggt::model
