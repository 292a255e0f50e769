#include "segvggt/scenegen/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

namespace segvggt::scenegen {

namespace fs = std::filesystem;
using nlohmann::json;

int SceneRecord::class_of(int instance) const {
  for (const auto& info : instances) {
    if (info.id == instance) return info.class_index;
  }
  throw std::out_of_range("unknown instance " + std::to_string(instance));
}

SceneRecord render_scene(const SceneSpec& scene, std::size_t index, std::size_t height,
                         std::size_t width) {
  if (height % 4 || width % 4) {
    throw std::invalid_argument("scene resolution must be divisible by 4 so the half-resolution "
                                "rasters stay even");
  }
  SceneRecord record;
  record.index = index;
  record.num_classes = scene.num_classes;
  for (const auto& o : scene.objects) record.instances.push_back({o.instance_id, o.class_index});
  for (const auto& cam : scene.cameras) {
    record.views.push_back(render_view(scene, cam, height, width));
    record.half_views.push_back(render_view(scene, cam, height / 2, width / 2));
  }
  return record;
}

namespace {

void write_raster_header(io::ByteWriter& w, std::string_view magic, std::size_t h, std::size_t width) {
  w.magic(magic);
  w.u32(static_cast<std::uint32_t>(h));
  w.u32(static_cast<std::uint32_t>(width));
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <std::size_t N>
std::string format_array(const std::array<double, N>& a) {
  std::string s = "[";
  for (std::size_t i = 0; i < N; ++i) {
    if (i) s += ", ";
    s += format_double(a[i]);
  }
  return s + "]";
}

std::string cameras_json(const std::vector<ViewSample>& views) {
  std::ostringstream os;
  os << "{\n  \"views\": [\n";
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto& c = views[i].camera;
    os << "    {\"rotation\": " << format_array(c.rotation) << ", \"translation\": "
       << format_array(c.translation) << ", \"fov\": " << format_array(c.fov) << "}"
       << (i + 1 < views.size() ? "," : "") << "\n";
  }
  os << "  ]\n}\n";
  return os.str();
}

json parse_json_file(const fs::path& path) {
  const std::string text = io::read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw DatasetError(path.string(), e.byte, e.what());
  }
}

template <std::size_t N>
std::array<double, N> json_array(const json& j, const char* key, const fs::path& file) {
  if (!j.contains(key) || !j[key].is_array() || j[key].size() != N) {
    throw DatasetError(file.string(), 0, std::string("camera field \"") + key + "\" malformed");
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = j[key][i].get<double>();
  return out;
}

std::vector<CameraParams> read_cameras(const fs::path& path) {
  const json j = parse_json_file(path);
  if (!j.contains("views") || !j["views"].is_array()) {
    throw DatasetError(path.string(), 0, "missing \"views\" array");
  }
  std::vector<CameraParams> cams;
  for (const auto& v : j["views"]) {
    CameraParams c;
    c.rotation = json_array<4>(v, "rotation", path);
    c.translation = json_array<3>(v, "translation", path);
    c.fov = json_array<2>(v, "fov", path);
    cams.push_back(c);
  }
  return cams;
}

void write_view(const fs::path& stem, const ViewSample& v) {
  write_ppm(stem.string() + ".ppm", v.height, v.width, v.rgb);
  write_depth_raster(stem.string() + ".depth", v.height, v.width, v.depth);
  write_instance_raster(stem.string() + ".inst", v.height, v.width, v.instance_map);
}

ViewSample read_view(const fs::path& stem, std::size_t height, std::size_t width,
                     const CameraParams& camera) {
  ViewSample v;
  v.camera = camera;
  std::size_t h = 0, w = 0;
  auto check = [&](const std::string& file) {
    if (h != height || w != width) {
      throw DatasetError(file, 4, "raster is " + std::to_string(h) + "x" + std::to_string(w) +
                                      ", manifest says " + std::to_string(height) + "x" +
                                      std::to_string(width));
    }
  };
  v.rgb = read_ppm(stem.string() + ".ppm", h, w);
  check(stem.string() + ".ppm");
  v.depth = read_depth_raster(stem.string() + ".depth", h, w);
  check(stem.string() + ".depth");
  v.instance_map = read_instance_raster(stem.string() + ".inst", h, w);
  check(stem.string() + ".inst");
  v.height = height;
  v.width = width;
  return v;
}

json scene_entry(const SceneRecord& s) {
  json inst = json::array();
  for (const auto& i : s.instances) inst.push_back({{"id", i.id}, {"class", i.class_index}});
  return {{"index", s.index},
          {"dir", "scene_" + std::to_string(s.index)},
          {"N", s.num_views()},
          {"H", s.height()},
          {"W", s.width()},
          {"C", s.num_classes},
          {"instances", inst}};
}

json read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  json m = parse_json_file(path);
  if (!m.contains("format_version") || !m["format_version"].is_number_integer()) {
    throw DatasetError(path.string(), 0, "missing integer format_version");
  }
  const int version = m["format_version"].get<int>();
  if (version != kDatasetFormatVersion) {
    throw DatasetError(path.string(), 0, "unsupported format_version " + std::to_string(version));
  }
  if (!m.contains("scenes") || !m["scenes"].is_array()) {
    throw DatasetError(path.string(), 0, "missing scene list");
  }
  return m;
}

SceneRecord read_scene_entry(const fs::path& dir, const json& entry, const fs::path& manifest) {
  SceneRecord s;
  try {
    s.index = entry.at("index").get<std::size_t>();
    s.num_classes = entry.at("C").get<std::size_t>();
    for (const auto& i : entry.at("instances")) {
      s.instances.push_back({i.at("id").get<int>(), i.at("class").get<int>()});
    }
    const auto n = entry.at("N").get<std::size_t>();
    const auto h = entry.at("H").get<std::size_t>();
    const auto w = entry.at("W").get<std::size_t>();
    const fs::path scene_dir = dir / entry.at("dir").get<std::string>();
    const auto cams = read_cameras(scene_dir / "cameras.json");
    if (cams.size() != n) {
      throw DatasetError((scene_dir / "cameras.json").string(), 0,
                         "has " + std::to_string(cams.size()) + " views, manifest says " + std::to_string(n));
    }
    for (std::size_t i = 0; i < n; ++i) {
      const fs::path stem = scene_dir / ("view_" + std::to_string(i));
      s.views.push_back(read_view(stem, h, w, cams[i]));
      s.half_views.push_back(read_view(stem.string() + ".half", h / 2, w / 2, cams[i]));
    }
  } catch (const json::exception& e) {
    throw DatasetError(manifest.string(), 0, std::string("malformed scene entry: ") + e.what());
  }
  return s;
}

}  // namespace

void write_dataset(const std::vector<SceneRecord>& scenes, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest{{"format_version", kDatasetFormatVersion}, {"scenes", json::array()}};
  for (const auto& s : scenes) {
    const fs::path scene_dir = dir / ("scene_" + std::to_string(s.index));
    fs::create_directories(scene_dir);
    io::write_text(scene_dir / "cameras.json", cameras_json(s.views));
    for (std::size_t i = 0; i < s.views.size(); ++i) {
      const fs::path stem = scene_dir / ("view_" + std::to_string(i));
      write_view(stem, s.views[i]);
      write_view(stem.string() + ".half", s.half_views[i]);
    }
    manifest["scenes"].push_back(scene_entry(s));
  }
  io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<SceneRecord> read_dataset(const fs::path& dir) {
  const json m = read_manifest(dir);
  std::vector<SceneRecord> scenes;
  for (const auto& entry : m["scenes"]) scenes.push_back(read_scene_entry(dir, entry, dir / "manifest.json"));
  return scenes;
}

SceneRecord read_scene(const fs::path& scene_dir) {
  const fs::path canonical = fs::weakly_canonical(scene_dir);
  const fs::path root = canonical.parent_path();
  const json m = read_manifest(root);
  const std::string name = canonical.filename().string();
  for (const auto& entry : m["scenes"]) {
    if (entry.value("dir", std::string()) == name) return read_scene_entry(root, entry, root / "manifest.json");
  }
  throw DatasetError((root / "manifest.json").string(), 0, "no scene entry for directory " + name);
}

void write_depth_raster(const fs::path& path, std::size_t height, std::size_t width,
                        std::span<const double> values) {
  io::ByteWriter w;
  write_raster_header(w, "SVDP", height, width);
  w.f64s(values);
  w.save(path);
}

std::vector<double> read_depth_raster(const fs::path& path, std::size_t& height, std::size_t& width) {
  auto r = io::ByteReader::open(path);
  r.expect_magic("SVDP");
  height = r.u32();
  width = r.u32();
  auto values = r.f64s(height * width);
  r.expect_end();
  return values;
}

void write_instance_raster(const fs::path& path, std::size_t height, std::size_t width,
                           std::span<const std::int32_t> values) {
  io::ByteWriter w;
  write_raster_header(w, "SVIN", height, width);
  w.i32s(values);
  w.save(path);
}

std::vector<std::int32_t> read_instance_raster(const fs::path& path, std::size_t& height,
                                               std::size_t& width) {
  auto r = io::ByteReader::open(path);
  r.expect_magic("SVIN");
  height = r.u32();
  width = r.u32();
  auto values = r.i32s(height * width);
  r.expect_end();
  return values;
}

void write_ppm(const fs::path& path, std::size_t height, std::size_t width, std::span<const double> rgb) {
  io::ByteWriter w;
  const std::string header = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  w.magic(header);
  std::vector<std::uint8_t> bytes(rgb.size());
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    bytes[i] = static_cast<std::uint8_t>(std::lround(std::clamp(rgb[i], 0.0, 1.0) * 255.0));
  }
  w.bytes(bytes);
  w.save(path);
}

std::vector<double> read_ppm(const fs::path& path, std::size_t& height, std::size_t& width) {
  const auto data = io::read_file(path);
  std::size_t pos = 0;
  auto fail = [&](const std::string& what) { throw DatasetError(path.string(), pos, what); };
  auto skip_space = [&] {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(data[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&]() -> std::size_t {
    skip_space();
    if (pos >= data.size() || !std::isdigit(data[pos])) fail("expected a number in PPM header");
    std::size_t v = 0;
    while (pos < data.size() && std::isdigit(data[pos])) v = v * 10 + (data[pos++] - '0');
    return v;
  };
  if (data.size() < 2 || data[0] != 'P' || data[1] != '6') fail("not a P6 PPM");
  pos = 2;
  width = number();
  height = number();
  const std::size_t maxval = number();
  if (maxval != 255) fail("only 8-bit PPM supported");
  if (pos >= data.size() || !std::isspace(data[pos])) fail("missing header terminator");
  ++pos;
  const std::size_t n = height * width * 3;
  if (data.size() - pos < n) fail("truncated pixel data");
  if (data.size() - pos > n) fail("trailing bytes after pixel data");
  std::vector<double> rgb(n);
  for (std::size_t i = 0; i < n; ++i) rgb[i] = static_cast<double>(data[pos + i]) / 255.0;
  return rgb;
}

}  // namespace segvggt::scenegen
