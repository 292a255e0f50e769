#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace segvggt::scenegen {

class CameraError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Pinhole camera. Extrinsics map world to camera: x_cam = R x_world + t, with
/// camera axes x right, y down, z forward. Intrinsics follow from the field of
/// view and the raster size; the principal point is the image center.
struct CameraParams {
  std::array<double, 4> rotation{1.0, 0.0, 0.0, 0.0};  // unit quaternion, w first
  std::array<double, 3> translation{0.0, 0.0, 0.0};
  std::array<double, 2> fov{1.0, 1.0};  // vertical, horizontal (radians)

  /// Layout of the 9-vector regressed by the camera head.
  std::array<double, 9> to_vector() const;
  static CameraParams from_vector(std::span<const double> g);

  /// Throws CameraError unless the quaternion is unit (1e-9) and fov in (0, pi).
  void validate() const;

  Eigen::Matrix3d rotation_matrix() const;
  Eigen::Vector3d translation_vector() const;
  /// Camera center in world coordinates, -R^T t.
  Eigen::Vector3d center() const;

  Eigen::Vector3d world_to_camera(const Eigen::Vector3d& p) const;
  Eigen::Vector3d camera_to_world(const Eigen::Vector3d& p) const;

  bool operator==(const CameraParams&) const = default;
};

struct Intrinsics {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;

  static Intrinsics from(const CameraParams& camera, std::size_t height, std::size_t width);

  /// Camera-frame direction with unit z through pixel coordinates (x, y);
  /// pixel (u, v) has its center at (u + 0.5, v + 0.5).
  Eigen::Vector3d ray(double x, double y) const;
  /// Pixel coordinates of a camera-frame point with z > 0.
  Eigen::Vector2d project(const Eigen::Vector3d& p_cam) const;
};

/// Camera at `eye` looking at `target` with world z as up.
CameraParams look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                     std::array<double, 2> fov);

/// Pose of `camera` expressed in the frame of `reference` (reference becomes
/// identity). Field of view is carried over unchanged.
CameraParams relative_to(const CameraParams& reference, const CameraParams& camera);

CameraParams from_rotation(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation,
                           std::array<double, 2> fov);

}  // namespace segvggt::scenegen
