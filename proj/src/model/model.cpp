#include "segvggt/model/model.hpp"

#include <chrono>
#include <numbers>

#include "segvggt/numerics/ops.hpp"

namespace segvggt::model {

namespace nm = numerics;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Entry order produced by a per-patch projection to s*s outputs, mapped to
// row-major pixels of the (rows*s) x (cols*s) raster.
std::vector<std::size_t> shuffle_order(std::size_t rows, std::size_t cols, std::size_t s) {
  std::vector<std::size_t> order(rows * cols * s * s);
  const std::size_t width = cols * s;
  for (std::size_t py = 0; py < rows; ++py) {
    for (std::size_t px = 0; px < cols; ++px) {
      const std::size_t patch = py * cols + px;
      for (std::size_t dy = 0; dy < s; ++dy) {
        for (std::size_t dx = 0; dx < s; ++dx) {
          order[(py * s + dy) * width + px * s + dx] = patch * s * s + dy * s + dx;
        }
      }
    }
  }
  return order;
}

// Repeats `order` for n consecutive blocks of `stride` entries.
std::vector<std::size_t> tile_order(const std::vector<std::size_t>& order, std::size_t n,
                                    std::size_t stride) {
  std::vector<std::size_t> out;
  out.reserve(order.size() * n);
  for (std::size_t v = 0; v < n; ++v) {
    for (auto i : order) out.push_back(v * stride + i);
  }
  return out;
}

}  // namespace

Model::Model(const ModelConfig& config) : Model(config, init_params(config)) {}

Model::Model(const ModelConfig& config, ParamStore params) : config_(config), params_(std::move(params)) {
  config_.validate();
  const std::size_t gh = config_.height / config_.patch, gw = config_.width / config_.patch;
  depth_order_ = shuffle_order(gh, gw, config_.patch);
  feature_order_ = shuffle_order(gh, gw, config_.patch / 2);
}

void Model::check_images(const std::vector<Image>& images, std::size_t min_views) const {
  if (images.size() < min_views) {
    throw ConfigError("model needs at least " + std::to_string(min_views) + " views, got " +
                      std::to_string(images.size()));
  }
  const std::size_t expected = config_.height * config_.width * 3;
  for (const auto& img : images) {
    if (img.size() != expected) {
      throw ConfigError("image has " + std::to_string(img.size()) + " values, model expects " +
                        std::to_string(config_.height) + "x" + std::to_string(config_.width) + "x3");
    }
  }
}

Tensor Model::embed(const std::vector<Image>& images) const {
  check_images(images, 1);
  const std::size_t n = images.size(), p = config_.patch, w = config_.width;
  const std::size_t gh = config_.height / p, gw = w / p, k = gh * gw, row = 3 * p * p;

  std::vector<double> patches(n * k * row);
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t py = 0; py < gh; ++py) {
      for (std::size_t px = 0; px < gw; ++px) {
        double* out = patches.data() + (v * k + py * gw + px) * row;
        for (std::size_t dy = 0; dy < p; ++dy) {
          const double* src = images[v].data() + ((py * p + dy) * w + px * p) * 3;
          std::copy(src, src + 3 * p, out + dy * 3 * p);
        }
      }
    }
  }
  const Tensor projected =
      nm::linear(Tensor({n * k, row}, std::move(patches)), params_.get("embed.w"), params_.get("embed.b"));

  const Tensor& pos = params_.get("embed.pos");
  const std::vector<std::size_t> repeat(k, 0);
  const Tensor ref_rows = nm::gather_rows(nm::reshape(params_.get("embed.ref"), {1, config_.dim}), repeat);
  std::vector<Tensor> pos_blocks{nm::add(pos, ref_rows)};
  for (std::size_t v = 1; v < n; ++v) pos_blocks.push_back(pos);
  const Tensor patch_tokens = nm::add(projected, n == 1 ? pos_blocks[0] : nm::concat_rows(pos_blocks));

  const Tensor& special = params_.get("embed.special");
  const Tensor special_ref = nm::add(special, params_.get("embed.special_ref"));
  std::vector<Tensor> parts;
  for (std::size_t v = 0; v < n; ++v) {
    parts.push_back(v == 0 ? special_ref : special);
    parts.push_back(nm::slice_rows(patch_tokens, v * k, (v + 1) * k));
  }
  return nm::concat_rows(parts);
}

Tensor Model::camera_head(const Tensor& camera_tokens) const {
  const Tensor h = nm::gelu(nm::linear(camera_tokens, params_.get("camera.w1"), params_.get("camera.b1")));
  const Tensor raw = nm::linear(h, params_.get("camera.w2"), params_.get("camera.b2"));
  const Tensor quaternion = nm::normalize_rows(nm::slice_cols(raw, 0, 4));
  const Tensor translation = nm::slice_cols(raw, 4, 7);
  const Tensor fov = nm::scale(nm::sigmoid(nm::slice_cols(raw, 7, 9)), std::numbers::pi);
  return nm::concat_cols({quaternion, translation, fov});
}

Tensor Model::depth_head(const Tensor& patch_tokens) const {
  const std::size_t k = config_.patches_per_view(), pp = config_.patch * config_.patch;
  const std::size_t n = patch_tokens.rows() / k, hw = config_.height * config_.width;
  const Tensor logits = nm::linear(patch_tokens, params_.get("depth.w"), params_.get("depth.b"));
  const auto order = tile_order(depth_order_, n, k * pp);
  const Tensor pixels = nm::gather_rows(nm::reshape(logits, {n * k * pp, 1}), order);
  return nm::exp(nm::reshape(pixels, {n, hw}));
}

Tensor Model::feature_head(const Tensor& patch_tokens) const {
  const std::size_t k = config_.patches_per_view(), d = config_.dim;
  const std::size_t sub = (config_.patch / 2) * (config_.patch / 2);
  const std::size_t n = patch_tokens.rows() / k;
  const Tensor projected = nm::linear(patch_tokens, params_.get("feature.w"), params_.get("feature.b"));
  const auto order = tile_order(feature_order_, n, k * sub);
  return nm::gather_rows(nm::reshape(projected, {n * k * sub, d}), order);
}

Tensor Model::classify(const Tensor& queries) const {
  const Tensor h = nm::gelu(nm::linear(queries, params_.get("class.w1"), params_.get("class.b1")));
  return nm::linear(h, params_.get("class.w2"), params_.get("class.b2"));
}

ModelOutputs Model::forward(const std::vector<Image>& images, const ForwardOptions& options) const {
  check_images(images, 2);
  const std::size_t n = images.size(), per_view = config_.tokens_per_view();
  const std::size_t k = config_.patches_per_view(), heads = config_.heads;

  ModelOutputs out;
  out.views = n;
  for (std::size_t v = 0; v <= n; ++v) out.view_boundaries.push_back(v * per_view);
  const std::size_t total = n * per_view;
  const std::vector<std::size_t> whole{0, total};
  const std::vector<std::size_t> query_span{0, config_.queries};

  auto t0 = Clock::now();
  Tensor tokens = embed(images);
  if (options.times) options.times->embed += seconds_since(t0);

  t0 = Clock::now();
  Tensor queries = params_.get("queries");
  auto* frame_maps = options.keep_self_attention ? &out.frame_attention : nullptr;
  auto* global_maps = options.keep_self_attention ? &out.global_attention : nullptr;
  auto* query_maps = options.keep_self_attention ? &out.query_attention : nullptr;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string b = "blocks." + std::to_string(l);
    tokens = self_attention(tokens, AttentionWeights::from(params_, b + ".frame"), heads,
                            out.view_boundaries, frame_maps);
    tokens = mlp_residual(tokens, MlpWeights::from(params_, b + ".frame_mlp"));
    tokens = self_attention(tokens, AttentionWeights::from(params_, b + ".global"), heads, whole, global_maps);
    tokens = mlp_residual(tokens, MlpWeights::from(params_, b + ".global_mlp"));

    auto cross = query_cross_attention(queries, tokens, CrossAttentionWeights::from(params_, b + ".cross"), heads);
    out.cross_attention.push_back(cross.attention);
    queries = self_attention(cross.queries, AttentionWeights::from(params_, b + ".query"), heads, query_span,
                             query_maps);
    queries = mlp_residual(queries, MlpWeights::from(params_, b + ".query_mlp"));
  }
  if (options.times) options.times->aggregator += seconds_since(t0);

  t0 = Clock::now();
  const Tensor final_tokens = nm::layer_norm(tokens, params_.get("final.ln_g"), params_.get("final.ln_b"));
  std::vector<std::size_t> camera_rows, patch_rows;
  for (std::size_t v = 0; v < n; ++v) {
    camera_rows.push_back(v * per_view);
    for (std::size_t i = 0; i < k; ++i) patch_rows.push_back(v * per_view + kSpecialTokens + i);
  }
  const Tensor patch_tokens = nm::gather_rows(final_tokens, patch_rows);
  out.cameras = camera_head(nm::gather_rows(final_tokens, camera_rows));
  out.depth = depth_head(patch_tokens);
  out.features = feature_head(patch_tokens);
  out.queries = queries;
  out.class_logits = classify(queries);
  out.mask_logits = nm::matmul_nt(queries, out.features);
  if (options.times) options.times->heads += seconds_since(t0);
  return out;
}

Tensor mask_probability(const Tensor& query, const Tensor& features) {
  const Tensor q = query.rank() == 1 ? nm::reshape(query, {1, query.numel()}) : query;
  return nm::sigmoid(nm::matmul_nt(q, features));
}

}  // namespace segvggt::model
