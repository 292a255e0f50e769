#include "segvggt/scenegen/render.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace segvggt::scenegen {

namespace {

const Eigen::Vector3d kLight = Eigen::Vector3d(0.35, 0.25, 0.9).normalized();
constexpr std::array<double, 3> kSky{0.70, 0.80, 0.95};

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

std::array<double, 3> shade(const Hit& hit, const SceneSpec& scene) {
  std::array<double, 3> base;
  if (hit.ground) {
    const bool even = (static_cast<long>(std::floor(hit.point.x())) +
                       static_cast<long>(std::floor(hit.point.y()))) % 2 == 0;
    base = even ? std::array<double, 3>{0.55, 0.55, 0.52} : std::array<double, 3>{0.45, 0.45, 0.43};
  } else {
    base = scene.objects[static_cast<std::size_t>(hit.instance)].color;
  }
  const double lambert = 0.35 + 0.65 * std::max(0.0, hit.normal.dot(kLight));
  return {base[0] * lambert, base[1] * lambert, base[2] * lambert};
}

}  // namespace

ViewSample render_view(const SceneSpec& scene, const CameraParams& camera, std::size_t height,
                       std::size_t width) {
  if (height < 8 || width < 8 || height % 2 || width % 2) {
    throw std::invalid_argument("render resolution must be even and at least 8x8, got " +
                                std::to_string(height) + "x" + std::to_string(width));
  }
  camera.validate();
  ViewSample view;
  view.height = height;
  view.width = width;
  view.camera = camera;
  view.rgb.resize(height * width * 3);
  view.depth.assign(height * width, kInvalidDepth);
  view.instance_map.assign(height * width, kBackground);
  for (std::size_t v = 0; v < height; ++v) {
    for (std::size_t u = 0; u < width; ++u) {
      const std::size_t i = v * width + u;
      const auto hit = cast_ray(scene, camera, height, width, static_cast<double>(u) + 0.5,
                                static_cast<double>(v) + 0.5);
      std::array<double, 3> color = kSky;
      if (hit) {
        view.depth[i] = hit->depth;
        view.instance_map[i] = hit->instance;
        color = shade(*hit, scene);
      }
      for (int c = 0; c < 3; ++c) view.rgb[3 * i + c] = quantize(color[c]);
    }
  }
  return view;
}

std::size_t TargetVisibility::total() const {
  return std::accumulate(pixel_counts.begin(), pixel_counts.end(), std::size_t{0});
}

TargetVisibility visibility_from_counts(const std::vector<std::size_t>& counts) {
  TargetVisibility out;
  out.pixel_counts = counts;
  const std::size_t total = out.total();
  if (total == 0) throw VisibilityError("instance has no visible pixels in any view");
  out.probabilities.resize(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    out.probabilities[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
  }
  return out;
}

TargetVisibility visibility_distribution(const std::vector<ViewSample>& views, int instance) {
  std::vector<std::size_t> counts;
  counts.reserve(views.size());
  for (const auto& v : views) {
    counts.push_back(static_cast<std::size_t>(
        std::count(v.instance_map.begin(), v.instance_map.end(), instance)));
  }
  try {
    return visibility_from_counts(counts);
  } catch (const VisibilityError&) {
    throw VisibilityError("instance " + std::to_string(instance) + " has no visible pixels in any view");
  }
}

}  // namespace segvggt::scenegen
