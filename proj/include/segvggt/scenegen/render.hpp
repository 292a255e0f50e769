#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "segvggt/scenegen/scene.hpp"

namespace segvggt::scenegen {

/// One rendered view. Rasters are row-major; rgb is interleaved and quantized
/// to multiples of 1/255 so it survives 8-bit storage exactly.
struct ViewSample {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> rgb;
  std::vector<double> depth;            // kInvalidDepth where no surface
  std::vector<std::int32_t> instance_map;  // kBackground off-object
  CameraParams camera;

  std::size_t pixels() const { return height * width; }
  bool operator==(const ViewSample&) const = default;
};

/// Per-pixel ray casting; nearest hit wins. Requires H, W >= 8 and even.
ViewSample render_view(const SceneSpec& scene, const CameraParams& camera, std::size_t height,
                       std::size_t width);

struct TargetVisibility {
  std::vector<double> probabilities;
  std::vector<std::size_t> pixel_counts;
  std::size_t total() const;
};

class VisibilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fraction of instance k's pixels falling in each view.
TargetVisibility visibility_distribution(const std::vector<ViewSample>& views, int instance);
TargetVisibility visibility_from_counts(const std::vector<std::size_t>& counts);

/// Instances with fewer visible pixels are dropped from supervision.
inline constexpr std::size_t kMinSupervisedPixels = 4;

}  // namespace segvggt::scenegen
