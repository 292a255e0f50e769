#include "segvggt/scenegen/camera.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace segvggt::scenegen {

std::array<double, 9> CameraParams::to_vector() const {
  return {rotation[0], rotation[1], rotation[2], rotation[3], translation[0],
          translation[1], translation[2], fov[0], fov[1]};
}

CameraParams CameraParams::from_vector(std::span<const double> g) {
  if (g.size() != 9) throw CameraError("camera vector must have 9 entries");
  CameraParams c;
  c.rotation = {g[0], g[1], g[2], g[3]};
  c.translation = {g[4], g[5], g[6]};
  c.fov = {g[7], g[8]};
  return c;
}

void CameraParams::validate() const {
  const double norm = std::sqrt(rotation[0] * rotation[0] + rotation[1] * rotation[1] +
                                rotation[2] * rotation[2] + rotation[3] * rotation[3]);
  if (!(std::abs(norm - 1.0) <= 1e-9)) {
    throw CameraError("camera quaternion norm " + std::to_string(norm) + " is not 1");
  }
  for (double f : fov) {
    if (!(f > 0.0 && f < std::numbers::pi)) {
      throw CameraError("camera field of view " + std::to_string(f) + " outside (0, pi)");
    }
  }
  for (double t : translation) {
    if (!std::isfinite(t)) throw CameraError("camera translation is not finite");
  }
}

Eigen::Matrix3d CameraParams::rotation_matrix() const {
  const Eigen::Quaterniond q(rotation[0], rotation[1], rotation[2], rotation[3]);
  return q.toRotationMatrix();
}

Eigen::Vector3d CameraParams::translation_vector() const {
  return {translation[0], translation[1], translation[2]};
}

Eigen::Vector3d CameraParams::center() const {
  return -(rotation_matrix().transpose() * translation_vector());
}

Eigen::Vector3d CameraParams::world_to_camera(const Eigen::Vector3d& p) const {
  return rotation_matrix() * p + translation_vector();
}

Eigen::Vector3d CameraParams::camera_to_world(const Eigen::Vector3d& p) const {
  return rotation_matrix().transpose() * (p - translation_vector());
}

Intrinsics Intrinsics::from(const CameraParams& camera, std::size_t height, std::size_t width) {
  Intrinsics k;
  k.fy = 0.5 * static_cast<double>(height) / std::tan(0.5 * camera.fov[0]);
  k.fx = 0.5 * static_cast<double>(width) / std::tan(0.5 * camera.fov[1]);
  k.cx = 0.5 * static_cast<double>(width);
  k.cy = 0.5 * static_cast<double>(height);
  return k;
}

Eigen::Vector3d Intrinsics::ray(double x, double y) const {
  return {(x - cx) / fx, (y - cy) / fy, 1.0};
}

Eigen::Vector2d Intrinsics::project(const Eigen::Vector3d& p_cam) const {
  return {fx * p_cam.x() / p_cam.z() + cx, fy * p_cam.y() / p_cam.z() + cy};
}

CameraParams from_rotation(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation,
                           std::array<double, 2> fov) {
  Eigen::Quaterniond q(rotation);
  q.normalize();
  if (q.w() < 0) q.coeffs() *= -1.0;
  CameraParams c;
  c.rotation = {q.w(), q.x(), q.y(), q.z()};
  c.translation = {translation.x(), translation.y(), translation.z()};
  c.fov = fov;
  return c;
}

CameraParams look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                     std::array<double, 2> fov) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  const Eigen::Vector3d up_world(0.0, 0.0, 1.0);
  Eigen::Vector3d right = forward.cross(up_world);
  if (right.norm() < 1e-9) right = Eigen::Vector3d::UnitX();
  right.normalize();
  const Eigen::Vector3d down = forward.cross(right);
  Eigen::Matrix3d r;
  r.row(0) = right.transpose();
  r.row(1) = down.transpose();
  r.row(2) = forward.transpose();
  return from_rotation(r, -(r * eye), fov);
}

CameraParams relative_to(const CameraParams& reference, const CameraParams& camera) {
  const Eigen::Matrix3d r_ref = reference.rotation_matrix();
  const Eigen::Matrix3d r_cam = camera.rotation_matrix();
  const Eigen::Matrix3d r_rel = r_cam * r_ref.transpose();
  const Eigen::Vector3d t_rel = camera.translation_vector() - r_rel * reference.translation_vector();
  return from_rotation(r_rel, t_rel, camera.fov);
}

}  // namespace segvggt::scenegen
