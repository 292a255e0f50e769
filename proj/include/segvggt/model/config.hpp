#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace segvggt::model {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr std::size_t kRegisterTokens = 4;
/// Camera token plus registers, prepended to each view's patch tokens.
inline constexpr std::size_t kSpecialTokens = 1 + kRegisterTokens;

struct ModelConfig {
  std::size_t layers = 4;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t patch = 8;
  std::size_t queries = 16;
  std::size_t classes = 4;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t mlp_hidden = 128;
  double mask_threshold = 0.5;
  std::uint64_t init_seed = 0;

  /// Throws ConfigError when a divisibility or range contract fails.
  void validate() const;

  std::size_t patches_per_view() const { return (height / patch) * (width / patch); }
  std::size_t tokens_per_view() const { return patches_per_view() + kSpecialTokens; }
  std::size_t mask_height() const { return height / 2; }
  std::size_t mask_width() const { return width / 2; }
  std::size_t mask_pixels() const { return mask_height() * mask_width(); }

  /// Smallest configuration used for gradient verification.
  static ModelConfig minimal();

  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace segvggt::model
