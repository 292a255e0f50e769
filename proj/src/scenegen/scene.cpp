#include "segvggt/scenegen/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "segvggt/scenegen/render.hpp"

namespace segvggt::scenegen {

GenerationError::GenerationError(std::uint64_t seed, const std::string& what)
    : std::runtime_error("scene generation failed for seed " + std::to_string(seed) + ": " + what),
      seed_(seed) {}

void SceneSpec::validate() const {
  for (std::size_t i = 0; i < objects.size(); ++i) {
    if (objects[i].instance_id != static_cast<int>(i)) {
      throw std::invalid_argument("instance ids must be consecutive from 0");
    }
    if (objects[i].class_index < 0 || static_cast<std::size_t>(objects[i].class_index) >= num_classes) {
      throw std::invalid_argument("object class index out of range");
    }
    if ((objects[i].half_extents.array() <= 0.0).any()) {
      throw std::invalid_argument("object has non-positive size");
    }
  }
  for (const auto& c : cameras) c.validate();
}

namespace {

std::array<double, 3> hsv_color(double hue, double sat, double val) {
  const double h = hue * 6.0;
  const int sector = static_cast<int>(std::floor(h)) % 6;
  const double f = h - std::floor(h);
  const double p = val * (1 - sat), q = val * (1 - sat * f), t = val * (1 - sat * (1 - f));
  switch (sector) {
    case 0: return {val, t, p};
    case 1: return {q, val, p};
    case 2: return {p, val, t};
    case 3: return {p, q, val};
    case 4: return {t, p, val};
    default: return {val, p, q};
  }
}

double footprint(const Primitive& p) {
  return p.kind == PrimitiveKind::sphere ? p.radius() : std::hypot(p.half_extents.x(), p.half_extents.y());
}

Primitive sample_object(std::mt19937_64& rng, int instance_id, const LayoutBounds& b) {
  std::uniform_int_distribution<int> cls(0, static_cast<int>(kDefaultClassCount) - 1);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> pos(-b.half_extent, b.half_extent);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

  Primitive p;
  p.instance_id = instance_id;
  p.class_index = cls(rng);
  switch (static_cast<ObjectClass>(p.class_index)) {
    case ObjectClass::sphere_small:
      p.kind = PrimitiveKind::sphere;
      p.half_extents = Eigen::Vector3d::Constant(range(0.35, 0.55));
      break;
    case ObjectClass::sphere_large:
      p.kind = PrimitiveKind::sphere;
      p.half_extents = Eigen::Vector3d::Constant(range(0.7, 0.95));
      break;
    case ObjectClass::box_small:
      p.kind = PrimitiveKind::box;
      p.half_extents = {range(0.3, 0.5), range(0.3, 0.5), range(0.3, 0.5)};
      break;
    case ObjectClass::box_large:
      p.kind = PrimitiveKind::box;
      p.half_extents = {range(0.6, 0.85), range(0.6, 0.85), range(0.45, 0.85)};
      break;
  }
  const double x = pos(rng), y = pos(rng);
  p.center = {x, y, p.half_extents.z()};
  p.color = hsv_color(u01(rng), range(0.55, 0.9), range(0.75, 0.95));
  return p;
}

bool sees_an_object(const SceneSpec& scene, const CameraParams& camera) {
  const auto probe = render_view(scene, camera, 16, 16);
  return std::any_of(probe.instance_map.begin(), probe.instance_map.end(),
                     [](std::int32_t v) { return v >= 0; });
}

}  // namespace

SceneSpec generate_scene(std::uint64_t seed, std::size_t n_objects, std::size_t n_views,
                         const LayoutBounds& bounds) {
  if (n_objects < 1) throw GenerationError(seed, "need at least one object");
  if (n_views < 2) throw GenerationError(seed, "need at least two views");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

  SceneSpec scene;
  scene.seed = seed;
  scene.num_classes = kDefaultClassCount;

  bool placed = false;
  for (int attempt = 0; attempt < bounds.max_attempts && !placed; ++attempt) {
    scene.objects.clear();
    placed = true;
    for (std::size_t i = 0; i < n_objects && placed; ++i) {
      bool ok = false;
      for (int tries = 0; tries < 50 && !ok; ++tries) {
        Primitive p = sample_object(rng, static_cast<int>(i), bounds);
        ok = std::all_of(scene.objects.begin(), scene.objects.end(), [&](const Primitive& q) {
          const double dist = std::hypot(p.center.x() - q.center.x(), p.center.y() - q.center.y());
          return dist > footprint(p) + footprint(q) + bounds.min_gap;
        });
        if (ok) scene.objects.push_back(p);
      }
      placed = ok;
    }
  }
  if (!placed) throw GenerationError(seed, "could not place objects without overlap");

  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& o : scene.objects) centroid += o.center;
  centroid /= static_cast<double>(scene.objects.size());
  centroid.z() = 0.5;

  const std::array<double, 2> fov{bounds.fov, bounds.fov};
  bool cameras_ok = false;
  for (int attempt = 0; attempt < bounds.max_attempts && !cameras_ok; ++attempt) {
    scene.cameras.clear();
    const double start = range(0.0, 2.0 * std::numbers::pi);
    cameras_ok = true;
    for (std::size_t i = 0; i < n_views; ++i) {
      const double angle = start + 2.0 * std::numbers::pi * static_cast<double>(i) /
                                       static_cast<double>(n_views) +
                           range(-bounds.angle_jitter, bounds.angle_jitter);
      const double radius = range(bounds.orbit_radius_min, bounds.orbit_radius_max);
      const double height = range(bounds.camera_height_min, bounds.camera_height_max);
      const Eigen::Vector3d eye(centroid.x() + radius * std::cos(angle),
                                centroid.y() + radius * std::sin(angle), height);
      scene.cameras.push_back(look_at(eye, centroid, fov));
      if (!sees_an_object(scene, scene.cameras.back())) {
        cameras_ok = false;
        break;
      }
    }
  }
  if (!cameras_ok) throw GenerationError(seed, "no camera placement sees an object from every view");
  scene.validate();
  return scene;
}

namespace {

constexpr double kMinT = 1e-9;

std::optional<double> intersect_sphere(const Primitive& s, const Eigen::Vector3d& o,
                                       const Eigen::Vector3d& d) {
  const Eigen::Vector3d oc = o - s.center;
  const double a = d.dot(d);
  const double b = 2.0 * oc.dot(d);
  const double c = oc.dot(oc) - s.radius() * s.radius();
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return std::nullopt;
  const double root = std::sqrt(disc);
  const double t0 = (-b - root) / (2.0 * a);
  if (t0 > kMinT) return t0;
  const double t1 = (-b + root) / (2.0 * a);
  if (t1 > kMinT) return t1;
  return std::nullopt;
}

std::optional<std::pair<double, Eigen::Vector3d>> intersect_box(const Primitive& box,
                                                                const Eigen::Vector3d& o,
                                                                const Eigen::Vector3d& d) {
  const Eigen::Vector3d lo = box.center - box.half_extents;
  const Eigen::Vector3d hi = box.center + box.half_extents;
  double t_near = -INFINITY, t_far = INFINITY;
  int axis = -1;
  double sign = 0.0;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-300) {
      if (o[i] < lo[i] || o[i] > hi[i]) return std::nullopt;
      continue;
    }
    double t1 = (lo[i] - o[i]) / d[i];
    double t2 = (hi[i] - o[i]) / d[i];
    double face = -1.0;
    if (t1 > t2) {
      std::swap(t1, t2);
      face = 1.0;
    }
    if (t1 > t_near) {
      t_near = t1;
      axis = i;
      sign = face;
    }
    t_far = std::min(t_far, t2);
  }
  if (t_near > t_far || t_near <= kMinT || axis < 0) return std::nullopt;
  Eigen::Vector3d n = Eigen::Vector3d::Zero();
  n[axis] = sign;
  return std::make_pair(t_near, n);
}

}  // namespace

std::optional<Hit> cast_ray(const SceneSpec& scene, const CameraParams& camera, std::size_t height,
                            std::size_t width, double x, double y) {
  const Intrinsics k = Intrinsics::from(camera, height, width);
  const Eigen::Matrix3d rt = camera.rotation_matrix().transpose();
  const Eigen::Vector3d origin = camera.center();
  const Eigen::Vector3d dir = rt * k.ray(x, y);

  std::optional<Hit> best;
  auto consider = [&](double t, int instance, bool ground, const Eigen::Vector3d& normal) {
    if (best && t >= best->depth) return;
    Hit h;
    h.depth = t;
    h.instance = instance;
    h.ground = ground;
    h.point = origin + t * dir;
    h.normal = normal;
    best = h;
  };

  for (const auto& obj : scene.objects) {
    if (obj.kind == PrimitiveKind::sphere) {
      if (auto t = intersect_sphere(obj, origin, dir)) {
        consider(*t, obj.instance_id, false, (origin + *t * dir - obj.center).normalized());
      }
    } else if (auto hit = intersect_box(obj, origin, dir)) {
      consider(hit->first, obj.instance_id, false, hit->second);
    }
  }
  if (scene.ground_plane && dir.z() < 0.0) {
    const double t = -origin.z() / dir.z();
    if (t > kMinT && (!best || t < best->depth)) consider(t, kBackground, true, Eigen::Vector3d::UnitZ());
  }
  return best;
}

}  // namespace segvggt::scenegen
