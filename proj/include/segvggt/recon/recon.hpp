#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "segvggt/scenegen/camera.hpp"

namespace segvggt::recon {

using scenegen::CameraParams;
using scenegen::Intrinsics;
using Point = Eigen::Vector3d;
using BinaryMask = std::vector<std::uint8_t>;

inline constexpr double kDefaultVisibilityEps = 1e-3;

/// 1 where probability > tau (strict); tau must lie in (0, 1).
BinaryMask binarize(std::span<const double> probabilities, double tau);

struct PixelPoint {
  std::size_t pixel = 0;  // row-major index in the source raster
  Point world;
};

/// World points of every valid pixel (depth > 0) of an H x W depth raster.
std::vector<PixelPoint> unproject(std::span<const double> depth, std::size_t height, std::size_t width,
                                  const CameraParams& camera);
Point unproject_pixel(double x, double y, double depth, const Intrinsics& k, const CameraParams& camera);

struct Projection {
  double x = 0.0, y = 0.0;  // continuous pixel coordinates
  double depth = 0.0;       // camera-frame z
};
/// Projection of a world point, or nullopt behind the camera.
std::optional<Projection> reproject(const Point& world, const CameraParams& camera, std::size_t height,
                                    std::size_t width);

/// Max object-class probability times the mean mask probability over pixels
/// above tau (0 when there are none).
double score(double class_probability, std::span<const double> mask_probabilities, double tau);

struct InstancePrediction {
  std::size_t query = 0;
  int class_index = 0;
  double class_probability = 0.0;
  double score = 0.0;
  /// Binary masks at (mask_height, mask_width), one per view, view-major.
  BinaryMask masks;
};

struct PointCloudSeg {
  std::vector<Point> points;
  std::vector<int> labels;  // index into the instance arrays, -1 unassigned
  std::vector<int> classes;
  std::vector<double> scores;

  std::size_t instances() const { return classes.size(); }
  /// Points labeled `instance`.
  std::vector<Point> instance_points(int instance) const;
};

/// Unprojects every valid full-resolution pixel; a pixel belongs to the
/// highest-scored prediction whose nearest-neighbor upsampled mask covers it
/// (lower query index on equal scores).
PointCloudSeg assemble_instances(const std::vector<InstancePrediction>& predictions,
                                 const std::vector<std::vector<double>>& depths,
                                 const std::vector<CameraParams>& cameras, std::size_t height,
                                 std::size_t width);

/// Reference cloud with gt labels, built from gt rasters.
struct ReferenceCloud {
  std::vector<Point> points;
  std::vector<int> labels;  // gt instance id, -1 background
  std::vector<std::size_t> source_view;
};
ReferenceCloud reference_cloud(const std::vector<std::vector<double>>& depths,
                               const std::vector<std::vector<std::int32_t>>& instance_maps,
                               const std::vector<CameraParams>& cameras, std::size_t height,
                               std::size_t width);

struct MappingResult {
  std::vector<int> labels;  // prediction index per reference point, -1 none
  std::size_t invisible_points = 0;
};

/// Projects each reference point into every view; it is visible where it lands
/// inside the image with |z - D(u, v)| < eps. A point takes label j when more
/// than half of its visible projections fall inside prediction j's mask; the
/// prediction with the most hits wins (then higher score, then lower index).
MappingResult map_to_reference(const std::vector<Point>& points,
                               const std::vector<InstancePrediction>& predictions,
                               const std::vector<CameraParams>& cameras,
                               const std::vector<std::vector<double>>& depths, std::size_t height,
                               std::size_t width, double visibility_eps = kDefaultVisibilityEps);

/// Within each segment every point takes the segment's most frequent label
/// (-1 included); ties go to the smaller label.
std::vector<int> superpoint_vote(std::span<const int> labels, std::span<const std::size_t> segments);

/// Segment ids grouping reference points by (label, voxel of edge `voxel`).
std::vector<std::size_t> voxel_segments(const ReferenceCloud& cloud, double voxel);

// "SVPR" prediction file: u32 count; per instance i32 class, f64 score,
// u32 points, f64 xyz triples; then u32 has_masks and, when set, u32 views,
// u32 height, u32 width followed by views*height*width mask bytes per instance.
struct PredictionFile {
  std::vector<int> classes;
  std::vector<double> scores;
  std::vector<std::vector<Point>> points;
  std::size_t views = 0, mask_height = 0, mask_width = 0;
  std::vector<BinaryMask> masks;  // empty when the file carries none

  bool operator==(const PredictionFile&) const = default;
};

PredictionFile make_prediction_file(const std::vector<InstancePrediction>& predictions,
                                    const PointCloudSeg& cloud, std::size_t views, std::size_t mask_height,
                                    std::size_t mask_width);
void write_predictions(const std::filesystem::path& path, const PredictionFile& file);
PredictionFile read_predictions(const std::filesystem::path& path);
/// Prediction records usable by map_to_reference.
std::vector<InstancePrediction> predictions_from_file(const PredictionFile& file);

}  // namespace segvggt::recon
