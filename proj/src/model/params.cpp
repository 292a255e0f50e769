#include "segvggt/model/params.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <random>

#include "segvggt/io/binary.hpp"

namespace segvggt::model {

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
  value.set_requires_grad(true);
  entries_.emplace_back(name, std::move(value));
  return entries_.back().second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw std::out_of_range("no parameter named " + name);
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& [n, _] : entries_) {
    if (n == name) return true;
  }
  return false;
}

std::size_t ParamStore::numel() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [_, t] : entries_) out.push_back(t);
  return out;
}

void ParamStore::zero_grad() const {
  for (const auto& [_, t] : entries_) t.zero_grad();
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& [n, t] : entries_) out.add(n, t.clone());
  return out;
}

bool ParamStore::same_values(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& [na, a] = entries_[i];
    const auto& [nb, b] = other.entries_[i];
    if (na != nb || a.shape() != b.shape()) return false;
    if (std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) != 0) return false;
  }
  return true;
}

namespace {

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Tensor normal(numerics::Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(numerics::shape_numel(shape));
    for (auto& x : v) x = dist(rng_);
    return Tensor(std::move(shape), std::move(v));
  }
  /// Weight [in x out] with variance 1/in, optionally shrunk.
  Tensor weight(std::size_t in, std::size_t out, double gain = 1.0) {
    return normal({in, out}, gain / std::sqrt(static_cast<double>(in)));
  }

 private:
  std::mt19937_64 rng_;
};

void add_attention(ParamStore& p, Initializer& init, const std::string& prefix, const ModelConfig& c,
                   double residual_gain) {
  const std::size_t d = c.dim;
  p.add(prefix + ".ln_g", Tensor::filled({d}, 1.0));
  p.add(prefix + ".ln_b", Tensor::zeros({d}));
  p.add(prefix + ".qkv_w", init.weight(d, 3 * d));
  p.add(prefix + ".qkv_b", Tensor::zeros({3 * d}));
  p.add(prefix + ".out_w", init.weight(d, d, residual_gain));
  p.add(prefix + ".out_b", Tensor::zeros({d}));
}

void add_mlp(ParamStore& p, Initializer& init, const std::string& prefix, const ModelConfig& c,
             double residual_gain) {
  const std::size_t d = c.dim, h = c.mlp_hidden;
  p.add(prefix + ".ln_g", Tensor::filled({d}, 1.0));
  p.add(prefix + ".ln_b", Tensor::zeros({d}));
  p.add(prefix + ".w1", init.weight(d, h));
  p.add(prefix + ".b1", Tensor::zeros({h}));
  p.add(prefix + ".w2", init.weight(h, d, residual_gain));
  p.add(prefix + ".b2", Tensor::zeros({d}));
}

}  // namespace

ParamStore init_params(const ModelConfig& c) {
  c.validate();
  Initializer init(c.init_seed);
  ParamStore p;
  const std::size_t d = c.dim, pp = c.patch * c.patch, half = (c.patch / 2) * (c.patch / 2);
  const double residual_gain = 1.0 / std::sqrt(2.0 * static_cast<double>(c.layers));

  p.add("embed.w", init.weight(3 * pp, d));
  p.add("embed.b", Tensor::zeros({d}));
  p.add("embed.pos", init.normal({c.patches_per_view(), d}, 0.02));
  p.add("embed.special", init.normal({kSpecialTokens, d}, 0.02));
  p.add("embed.special_ref", init.normal({kSpecialTokens, d}, 0.02));
  p.add("embed.ref", init.normal({d}, 0.02));
  p.add("queries", init.normal({c.queries, d}, 0.02));

  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string b = "blocks." + std::to_string(l);
    add_attention(p, init, b + ".frame", c, residual_gain);
    add_mlp(p, init, b + ".frame_mlp", c, residual_gain);
    add_attention(p, init, b + ".global", c, residual_gain);
    add_mlp(p, init, b + ".global_mlp", c, residual_gain);
    p.add(b + ".cross.wq", init.weight(d, d));
    p.add(b + ".cross.wk", init.weight(d, d));
    p.add(b + ".cross.wv", init.weight(d, d));
    p.add(b + ".cross.wo", init.weight(d, d, residual_gain));
    add_attention(p, init, b + ".query", c, residual_gain);
    add_mlp(p, init, b + ".query_mlp", c, residual_gain);
  }

  p.add("final.ln_g", Tensor::filled({d}, 1.0));
  p.add("final.ln_b", Tensor::zeros({d}));

  p.add("camera.w1", init.weight(d, d));
  p.add("camera.b1", Tensor::zeros({d}));
  p.add("camera.w2", init.weight(d, 9, 0.1));
  // Identity rotation and the generator's default field of view as the prior.
  const double fov_logit = std::log(0.8 / (std::numbers::pi - 0.8));
  p.add("camera.b2", Tensor({9}, {1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, fov_logit, fov_logit}));

  p.add("depth.w", init.weight(d, pp, 0.1));
  p.add("depth.b", Tensor::filled({pp}, std::log(6.0)));

  p.add("feature.w", init.weight(d, half * d));
  p.add("feature.b", Tensor::zeros({half * d}));

  p.add("class.w1", init.weight(d, d));
  p.add("class.b1", Tensor::zeros({d}));
  p.add("class.w2", init.weight(d, c.classes + 1, 0.1));
  p.add("class.b2", Tensor::zeros({c.classes + 1}));
  return p;
}

namespace {

void write_config(io::ByteWriter& w, const ModelConfig& c) {
  for (std::size_t v : {c.layers, c.dim, c.heads, c.patch, c.queries, c.classes, c.height, c.width,
                        c.mlp_hidden}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  w.f64(c.mask_threshold);
  w.u64(c.init_seed);
}

ModelConfig read_config(io::ByteReader& r) {
  ModelConfig c;
  for (std::size_t* f : {&c.layers, &c.dim, &c.heads, &c.patch, &c.queries, &c.classes, &c.height,
                         &c.width, &c.mlp_hidden}) {
    *f = r.u32();
  }
  c.mask_threshold = r.f64();
  c.init_seed = r.u64();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    r.fail(e.what());
  }
  return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const ParamStore& params) {
  io::ByteWriter w;
  w.magic("SVGT");
  w.u32(kCheckpointVersion);
  write_config(w, config);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params.entries()) {
    w.string(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto dim : t.shape()) w.u32(static_cast<std::uint32_t>(dim));
    w.f64s(t.data());
  }
  w.save(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto r = io::ByteReader::open(path);
  r.expect_magic("SVGT");
  const auto version = r.u32();
  if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.config = read_config(r);
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.string();
    const auto rank = r.u32();
    if (rank == 0 || rank > 8) r.fail("bad rank for parameter " + name);
    numerics::Shape shape(rank);
    for (auto& dim : shape) {
      dim = r.u32();
      if (dim == 0) r.fail("zero extent in parameter " + name);
    }
    auto values = r.f64s(numerics::shape_numel(shape));
    ck.params.add(name, Tensor(std::move(shape), std::move(values)));
  }
  r.expect_end();
  // The layout must match what this config would create.
  const ParamStore expected = init_params(ck.config);
  if (expected.size() != ck.params.size()) r.fail("parameter count does not match config");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& [ne, te] = expected.entries()[i];
    const auto& [na, ta] = ck.params.entries()[i];
    if (ne != na || te.shape() != ta.shape()) r.fail("parameter " + na + " does not match config layout");
  }
  return ck;
}

}  // namespace segvggt::model
