#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "segvggt/scenegen/camera.hpp"

namespace segvggt::scenegen {

inline constexpr int kBackground = -1;
inline constexpr double kInvalidDepth = -1.0;

/// Default class table: small/large spheres and small/large boxes.
enum class ObjectClass : int { sphere_small = 0, sphere_large = 1, box_small = 2, box_large = 3 };
inline constexpr std::size_t kDefaultClassCount = 4;

enum class PrimitiveKind { sphere, box };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::sphere;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  /// Sphere radius in x (y and z equal it); box half extents per axis.
  Eigen::Vector3d half_extents = Eigen::Vector3d::Ones();
  int class_index = 0;
  int instance_id = 0;
  std::array<double, 3> color{0.5, 0.5, 0.5};

  double radius() const { return half_extents.x(); }
  bool operator==(const Primitive&) const = default;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::vector<Primitive> objects;
  bool ground_plane = true;
  std::vector<CameraParams> cameras;
  std::size_t num_classes = kDefaultClassCount;

  /// Throws std::invalid_argument on duplicate/non-consecutive ids or bad classes.
  void validate() const;
  bool operator==(const SceneSpec&) const = default;
};

struct LayoutBounds {
  double half_extent = 3.0;  // objects sampled in [-e, e]^2 on the ground
  double min_gap = 0.15;     // clearance between object footprints
  double orbit_radius_min = 6.0;
  double orbit_radius_max = 7.0;
  double camera_height_min = 2.5;
  double camera_height_max = 3.5;
  double angle_jitter = 0.15;  // radians added to the even orbit spacing
  double fov = 0.8;            // vertical and horizontal (radians)
  int max_attempts = 200;
};

class GenerationError : public std::runtime_error {
 public:
  GenerationError(std::uint64_t seed, const std::string& what);
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

/// Deterministic in `seed`. Objects rest on the ground without overlapping;
/// cameras sit on a jittered orbit looking at the object centroid and each
/// sees at least one object.
SceneSpec generate_scene(std::uint64_t seed, std::size_t n_objects, std::size_t n_views,
                         const LayoutBounds& bounds = {});

struct Hit {
  double depth = kInvalidDepth;  // camera-frame z
  int instance = kBackground;
  bool ground = false;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal = Eigen::Vector3d::Zero();
};

/// Nearest surface along the ray through pixel coordinates (x, y), or nullopt
/// for sky.
std::optional<Hit> cast_ray(const SceneSpec& scene, const CameraParams& camera, std::size_t height,
                            std::size_t width, double x, double y);

}  // namespace segvggt::scenegen
