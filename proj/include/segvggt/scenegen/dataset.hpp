#pragma once

#include <filesystem>
#include <vector>

#include "segvggt/io/binary.hpp"
#include "segvggt/scenegen/render.hpp"

// On-disk dataset layout:
//   manifest.json                 format_version, scene table, instance tables
//   scene_{s}/cameras.json        per view quaternion, translation, fov (%.17g)
//   scene_{s}/view_{i}.ppm        P6, 8-bit RGB
//   scene_{s}/view_{i}.depth      "SVDP" u32 H, u32 W, H*W f64 (LE), -1 invalid
//   scene_{s}/view_{i}.inst       "SVIN" u32 H, u32 W, H*W i32 (LE), -1 background
//   scene_{s}/view_{i}.half.*     the same three rasters at (H/2, W/2)

namespace segvggt::scenegen {

inline constexpr int kDatasetFormatVersion = 1;

using DatasetError = io::FormatError;

struct InstanceInfo {
  int id = 0;
  int class_index = 0;
  bool operator==(const InstanceInfo&) const = default;
};

struct SceneRecord {
  std::size_t index = 0;
  std::size_t num_classes = kDefaultClassCount;
  std::vector<InstanceInfo> instances;
  std::vector<ViewSample> views;       // full resolution
  std::vector<ViewSample> half_views;  // mask resolution, same cameras

  std::size_t num_views() const { return views.size(); }
  std::size_t height() const { return views.empty() ? 0 : views.front().height; }
  std::size_t width() const { return views.empty() ? 0 : views.front().width; }
  int class_of(int instance) const;

  bool operator==(const SceneRecord&) const = default;
};

/// Renders every camera of the scene at (H, W) and (H/2, W/2).
SceneRecord render_scene(const SceneSpec& scene, std::size_t index, std::size_t height,
                         std::size_t width);

void write_dataset(const std::vector<SceneRecord>& scenes, const std::filesystem::path& dir);
std::vector<SceneRecord> read_dataset(const std::filesystem::path& dir);
/// Reads one scene directory; its instance table comes from ../manifest.json.
SceneRecord read_scene(const std::filesystem::path& scene_dir);

// Raster codecs, exposed for tools and tests.
void write_depth_raster(const std::filesystem::path& path, std::size_t height, std::size_t width,
                        std::span<const double> values);
std::vector<double> read_depth_raster(const std::filesystem::path& path, std::size_t& height,
                                      std::size_t& width);
void write_instance_raster(const std::filesystem::path& path, std::size_t height, std::size_t width,
                           std::span<const std::int32_t> values);
std::vector<std::int32_t> read_instance_raster(const std::filesystem::path& path, std::size_t& height,
                                               std::size_t& width);
void write_ppm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               std::span<const double> rgb);
std::vector<double> read_ppm(const std::filesystem::path& path, std::size_t& height, std::size_t& width);

}  // namespace segvggt::scenegen
