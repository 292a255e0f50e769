#include "segvggt/recon/recon.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <tuple>

#include "segvggt/io/binary.hpp"

namespace segvggt::recon {

BinaryMask binarize(std::span<const double> probabilities, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("binarize: threshold must lie in (0, 1)");
  BinaryMask out(probabilities.size());
  for (std::size_t i = 0; i < probabilities.size(); ++i) out[i] = probabilities[i] > tau ? 1 : 0;
  return out;
}

Point unproject_pixel(double x, double y, double depth, const Intrinsics& k, const CameraParams& camera) {
  return camera.camera_to_world(k.ray(x, y) * depth);
}

std::vector<PixelPoint> unproject(std::span<const double> depth, std::size_t height, std::size_t width,
                                  const CameraParams& camera) {
  if (depth.size() != height * width) throw std::invalid_argument("unproject: raster size mismatch");
  const auto k = Intrinsics::from(camera, height, width);
  std::vector<PixelPoint> out;
  for (std::size_t v = 0; v < height; ++v) {
    for (std::size_t u = 0; u < width; ++u) {
      const double d = depth[v * width + u];
      if (d > 0.0) out.push_back({v * width + u, unproject_pixel(u + 0.5, v + 0.5, d, k, camera)});
    }
  }
  return out;
}

std::optional<Projection> reproject(const Point& world, const CameraParams& camera, std::size_t height,
                                    std::size_t width) {
  const Point p = camera.world_to_camera(world);
  if (p.z() <= 0.0) return std::nullopt;
  const Eigen::Vector2d px = Intrinsics::from(camera, height, width).project(p);
  return Projection{px.x(), px.y(), p.z()};
}

double score(double class_probability, std::span<const double> mask_probabilities, double tau) {
  double sum = 0.0;
  std::size_t count = 0;
  for (double m : mask_probabilities) {
    if (m > tau) {
      sum += m;
      ++count;
    }
  }
  return count ? class_probability * sum / static_cast<double>(count) : 0.0;
}

std::vector<Point> PointCloudSeg::instance_points(int instance) const {
  std::vector<Point> out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (labels[i] == instance) out.push_back(points[i]);
  }
  return out;
}

namespace {

// Prediction order by descending score, ascending query on ties.
std::vector<std::size_t> by_priority(const std::vector<InstancePrediction>& predictions) {
  std::vector<std::size_t> order(predictions.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (predictions[a].score != predictions[b].score) return predictions[a].score > predictions[b].score;
    return predictions[a].query < predictions[b].query;
  });
  return order;
}

void check_views(std::size_t depths, std::size_t cameras, const char* op) {
  if (depths != cameras) throw std::invalid_argument(std::string(op) + ": views and cameras disagree");
}

}  // namespace

PointCloudSeg assemble_instances(const std::vector<InstancePrediction>& predictions,
                                 const std::vector<std::vector<double>>& depths,
                                 const std::vector<CameraParams>& cameras, std::size_t height,
                                 std::size_t width) {
  check_views(depths.size(), cameras.size(), "assemble_instances");
  const std::size_t mh = height / 2, mw = width / 2, views = depths.size();
  for (const auto& p : predictions) {
    if (p.masks.size() != views * mh * mw) throw std::invalid_argument("assemble_instances: mask size mismatch");
  }
  const auto order = by_priority(predictions);
  PointCloudSeg cloud;
  for (const auto& p : predictions) {
    cloud.classes.push_back(p.class_index);
    cloud.scores.push_back(p.score);
  }
  for (std::size_t v = 0; v < views; ++v) {
    for (const auto& px : unproject(depths[v], height, width, cameras[v])) {
      const std::size_t y = px.pixel / width, x = px.pixel % width;
      const std::size_t m = v * mh * mw + (y / 2) * mw + x / 2;
      int label = -1;
      for (std::size_t i : order) {
        if (predictions[i].masks[m]) {
          label = static_cast<int>(i);
          break;
        }
      }
      if (label < 0) continue;
      cloud.points.push_back(px.world);
      cloud.labels.push_back(label);
    }
  }
  return cloud;
}

ReferenceCloud reference_cloud(const std::vector<std::vector<double>>& depths,
                               const std::vector<std::vector<std::int32_t>>& instance_maps,
                               const std::vector<CameraParams>& cameras, std::size_t height,
                               std::size_t width) {
  check_views(depths.size(), cameras.size(), "reference_cloud");
  ReferenceCloud cloud;
  for (std::size_t v = 0; v < depths.size(); ++v) {
    for (const auto& px : unproject(depths[v], height, width, cameras[v])) {
      cloud.points.push_back(px.world);
      cloud.labels.push_back(instance_maps[v][px.pixel]);
      cloud.source_view.push_back(v);
    }
  }
  return cloud;
}

MappingResult map_to_reference(const std::vector<Point>& points,
                               const std::vector<InstancePrediction>& predictions,
                               const std::vector<CameraParams>& cameras,
                               const std::vector<std::vector<double>>& depths, std::size_t height,
                               std::size_t width, double visibility_eps) {
  check_views(depths.size(), cameras.size(), "map_to_reference");
  const std::size_t views = depths.size(), per_view = height * width;
  for (const auto& p : predictions) {
    if (p.masks.size() != views * per_view) throw std::invalid_argument("map_to_reference: mask size mismatch");
  }
  std::vector<Intrinsics> intrinsics;
  for (const auto& c : cameras) intrinsics.push_back(Intrinsics::from(c, height, width));

  MappingResult result;
  result.labels.assign(points.size(), -1);
  std::vector<std::size_t> hits(predictions.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::fill(hits.begin(), hits.end(), 0);
    std::size_t visible = 0;
    for (std::size_t v = 0; v < views; ++v) {
      const Point p = cameras[v].world_to_camera(points[i]);
      if (p.z() <= 0.0) continue;
      const Eigen::Vector2d px = intrinsics[v].project(p);
      if (!(px.x() >= 0.0 && px.y() >= 0.0 && px.x() < static_cast<double>(width) &&
            px.y() < static_cast<double>(height))) {
        continue;
      }
      const std::size_t pixel = static_cast<std::size_t>(px.y()) * width + static_cast<std::size_t>(px.x());
      const double d = depths[v][pixel];
      if (!(d > 0.0) || std::abs(p.z() - d) >= visibility_eps) continue;
      ++visible;
      for (std::size_t j = 0; j < predictions.size(); ++j) hits[j] += predictions[j].masks[v * per_view + pixel];
    }
    if (visible == 0) {
      ++result.invisible_points;
      continue;
    }
    int best = -1;
    for (std::size_t j = 0; j < predictions.size(); ++j) {
      if (2 * hits[j] <= visible) continue;
      if (best < 0 || hits[j] > hits[static_cast<std::size_t>(best)] ||
          (hits[j] == hits[static_cast<std::size_t>(best)] &&
           predictions[j].score > predictions[static_cast<std::size_t>(best)].score)) {
        best = static_cast<int>(j);
      }
    }
    result.labels[i] = best;
  }
  return result;
}

std::vector<int> superpoint_vote(std::span<const int> labels, std::span<const std::size_t> segments) {
  if (labels.size() != segments.size()) throw std::invalid_argument("superpoint_vote: size mismatch");
  std::map<std::size_t, std::map<int, std::size_t>> votes;
  for (std::size_t i = 0; i < labels.size(); ++i) ++votes[segments[i]][labels[i]];
  std::map<std::size_t, int> winner;
  for (const auto& [segment, counts] : votes) {
    int best = 0;
    std::size_t best_count = 0;
    for (const auto& [label, count] : counts) {  // ascending labels: ties keep the smaller
      if (count > best_count) {
        best = label;
        best_count = count;
      }
    }
    winner[segment] = best;
  }
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = winner[segments[i]];
  return out;
}

std::vector<std::size_t> voxel_segments(const ReferenceCloud& cloud, double voxel) {
  if (!(voxel > 0.0)) throw std::invalid_argument("voxel_segments: voxel size must be positive");
  std::map<std::tuple<int, long, long, long>, std::size_t> ids;
  std::vector<std::size_t> out(cloud.points.size());
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const auto& p = cloud.points[i];
    const auto key = std::make_tuple(cloud.labels[i], static_cast<long>(std::floor(p.x() / voxel)),
                                     static_cast<long>(std::floor(p.y() / voxel)),
                                     static_cast<long>(std::floor(p.z() / voxel)));
    out[i] = ids.try_emplace(key, ids.size()).first->second;
  }
  return out;
}

PredictionFile make_prediction_file(const std::vector<InstancePrediction>& predictions,
                                    const PointCloudSeg& cloud, std::size_t views, std::size_t mask_height,
                                    std::size_t mask_width) {
  PredictionFile f;
  f.views = views;
  f.mask_height = mask_height;
  f.mask_width = mask_width;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    f.classes.push_back(predictions[i].class_index);
    f.scores.push_back(predictions[i].score);
    f.points.push_back(cloud.instance_points(static_cast<int>(i)));
    f.masks.push_back(predictions[i].masks);
  }
  return f;
}

void write_predictions(const std::filesystem::path& path, const PredictionFile& f) {
  io::ByteWriter w;
  w.magic("SVPR");
  w.u32(static_cast<std::uint32_t>(f.classes.size()));
  for (std::size_t i = 0; i < f.classes.size(); ++i) {
    w.i32(f.classes[i]);
    w.f64(f.scores[i]);
    w.u32(static_cast<std::uint32_t>(f.points[i].size()));
    for (const auto& p : f.points[i]) {
      w.f64(p.x());
      w.f64(p.y());
      w.f64(p.z());
    }
  }
  const bool has_masks = !f.masks.empty() || (f.classes.empty() && f.views > 0);
  w.u32(has_masks ? 1 : 0);
  if (has_masks) {
    w.u32(static_cast<std::uint32_t>(f.views));
    w.u32(static_cast<std::uint32_t>(f.mask_height));
    w.u32(static_cast<std::uint32_t>(f.mask_width));
    for (const auto& m : f.masks) {
      if (m.size() != f.views * f.mask_height * f.mask_width) {
        throw std::invalid_argument("write_predictions: mask size does not match header");
      }
      w.bytes(m);
    }
  }
  w.save(path);
}

PredictionFile read_predictions(const std::filesystem::path& path) {
  auto r = io::ByteReader::open(path);
  r.expect_magic("SVPR");
  PredictionFile f;
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    f.classes.push_back(r.i32());
    f.scores.push_back(r.f64());
    const auto n = r.u32();
    const auto xyz = r.f64s(3 * static_cast<std::size_t>(n));
    std::vector<Point> pts(n);
    for (std::size_t k = 0; k < n; ++k) pts[k] = Point(xyz[3 * k], xyz[3 * k + 1], xyz[3 * k + 2]);
    f.points.push_back(std::move(pts));
  }
  const auto has_masks = r.u32();
  if (has_masks > 1) r.fail("bad mask flag");
  if (has_masks) {
    f.views = r.u32();
    f.mask_height = r.u32();
    f.mask_width = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
      auto bytes = r.bytes(f.views * f.mask_height * f.mask_width);
      for (auto b : bytes) {
        if (b > 1) r.fail("mask bytes must be 0 or 1");
      }
      f.masks.push_back(std::move(bytes));
    }
  }
  r.expect_end();
  return f;
}

std::vector<InstancePrediction> predictions_from_file(const PredictionFile& file) {
  if (file.masks.size() != file.classes.size()) {
    throw std::invalid_argument("prediction file carries no masks; it cannot be mapped to a reference cloud");
  }
  std::vector<InstancePrediction> out;
  for (std::size_t i = 0; i < file.classes.size(); ++i) {
    InstancePrediction p;
    p.query = i;
    p.class_index = file.classes[i];
    p.score = file.scores[i];
    p.masks = file.masks[i];
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace segvggt::recon
