#include "segvggt/model/config.hpp"

#include <set>

namespace segvggt::model {

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("model config: " + what); };
  if (layers < 1) fail("layers must be >= 1");
  if (dim < 1 || heads < 1 || dim % heads) fail("dim must be a positive multiple of heads");
  if (patch < 2 || patch % 2) fail("patch must be even and >= 2");
  if (height == 0 || width == 0 || height % patch || width % patch) {
    fail("resolution " + std::to_string(height) + "x" + std::to_string(width) +
         " not divisible by patch " + std::to_string(patch));
  }
  if (height % 2 || width % 2) fail("resolution must be even");
  if (queries < 1) fail("need at least one query");
  if (classes < 1) fail("need at least one class");
  if (mlp_hidden < 1) fail("mlp_hidden must be >= 1");
  if (!(mask_threshold > 0.0 && mask_threshold < 1.0)) fail("mask_threshold must lie in (0, 1)");
}

ModelConfig ModelConfig::minimal() {
  ModelConfig c;
  c.layers = 2;
  c.dim = 16;
  c.heads = 2;
  c.patch = 8;
  c.queries = 4;
  c.classes = 2;
  c.height = 16;
  c.width = 16;
  c.mlp_hidden = 16;
  return c;
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"layers", c.layers},   {"dim", c.dim},       {"heads", c.heads},
          {"patch", c.patch},     {"queries", c.queries}, {"classes", c.classes},
          {"height", c.height},   {"width", c.width},   {"mlp_hidden", c.mlp_hidden},
          {"mask_threshold", c.mask_threshold}, {"init_seed", c.init_seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"layers", "dim",   "heads",      "patch",
                                           "queries", "classes", "height", "width",
                                           "mlp_hidden", "mask_threshold", "init_seed"};
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown model config key \"" + key + "\"");
  }
  ModelConfig c;
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  try {
    take("layers", c.layers);
    take("dim", c.dim);
    take("heads", c.heads);
    take("patch", c.patch);
    take("queries", c.queries);
    take("classes", c.classes);
    take("height", c.height);
    take("width", c.width);
    take("mlp_hidden", c.mlp_hidden);
    take("mask_threshold", c.mask_threshold);
    take("init_seed", c.init_seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace segvggt::model
