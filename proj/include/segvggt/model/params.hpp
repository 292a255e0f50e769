#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "segvggt/model/config.hpp"
#include "segvggt/numerics/tensor.hpp"

namespace segvggt::model {

using numerics::Tensor;

/// Named trainable tensors in a fixed registration order. Order defines the
/// checkpoint layout and the optimizer's state layout.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor value);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t numel() const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;

  void zero_grad() const;
  /// Deep copy with fresh storage (gradients dropped).
  ParamStore clone() const;
  /// Bitwise equality of names, shapes and values.
  bool same_values(const ParamStore& other) const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// Deterministic initialization from config.init_seed.
ParamStore init_params(const ModelConfig& config);

inline constexpr std::uint32_t kCheckpointVersion = 1;

// "SVGT", u32 version, config record, u32 count, then per parameter:
// string name, u32 rank, u32 dims, f64 values.
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const ParamStore& params);
struct Checkpoint {
  ModelConfig config;
  ParamStore params;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace segvggt::model
