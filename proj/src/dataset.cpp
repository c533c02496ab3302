#include "bsplat/dataset.hpp"

#include <png.h>

#include <cstring>
#include <fstream>
#include <random>
#include <set>

#include <json.hpp>

#include "bsplat/image_io.hpp"
#include "bsplat/ply.hpp"

namespace bsplat {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void schema_error(const fs::path& file, const std::string& why) {
  throw IoError(IoError::Kind::kSchema, file.string() + ": " + why);
}

template <typename T>
T field(const json& obj, const char* key, const fs::path& file, const std::string& where) {
  if (!obj.contains(key)) schema_error(file, where + " is missing '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    schema_error(file, where + " has a malformed '" + key + "'");
  }
}

std::pair<int, int> png_size(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw IoError(IoError::Kind::kMissingFile, "image not found: " + path.string());
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw IoError(IoError::Kind::kMalformed, "cannot decode PNG " + path.string() + ": " + img.message);
  const std::pair<int, int> size{int(img.width), int(img.height)};
  png_image_free(&img);
  return size;
}

Camera<double> parse_camera(const json& c, const fs::path& file, std::size_t index) {
  const std::string where = "camera[" + std::to_string(index) + "]";
  if (!c.is_object()) schema_error(file, where + " is not an object");
  Camera<double> cam;
  cam.id = field<int>(c, "id", file, where);
  cam.width = field<int>(c, "width", file, where);
  cam.height = field<int>(c, "height", file, where);
  cam.fx = field<double>(c, "fx", file, where);
  cam.fy = field<double>(c, "fy", file, where);
  cam.cx = c.contains("cx") ? field<double>(c, "cx", file, where) : cam.width / 2.0;
  cam.cy = c.contains("cy") ? field<double>(c, "cy", file, where) : cam.height / 2.0;
  const auto m = field<std::vector<std::vector<double>>>(c, "world_to_view", file, where);
  if (m.size() != 3 && m.size() != 4) schema_error(file, where + ": world_to_view must have 3 or 4 rows");
  for (std::size_t r = 0; r < m.size(); ++r)
    if (m[r].size() != 4) schema_error(file, where + ": world_to_view rows must have 4 entries");
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 3; ++k) cam.rotation(r, k) = m[std::size_t(r)][std::size_t(k)];
    cam.translation[r] = m[std::size_t(r)][3];
  }
  if (m.size() == 4 && (m[3][0] != 0.0 || m[3][1] != 0.0 || m[3][2] != 0.0 || m[3][3] != 1.0))
    schema_error(file, where + ": world_to_view bottom row must be [0,0,0,1]");
  try {
    cam.validate();
  } catch (const InputError& e) {
    schema_error(file, e.what());
  }
  return cam;
}

}  // namespace

std::vector<int> Dataset::train_views() const {
  std::vector<int> v;
  for (std::size_t i = 0; i < cameras.size(); ++i)
    if (!is_test[i]) v.push_back(int(i));
  return v;
}

std::vector<int> Dataset::test_views() const {
  std::vector<int> v;
  for (std::size_t i = 0; i < cameras.size(); ++i)
    if (is_test[i]) v.push_back(int(i));
  return v;
}

int Dataset::view_of_id(int camera_id) const {
  for (std::size_t i = 0; i < cameras.size(); ++i)
    if (cameras[i].id == camera_id) return int(i);
  throw InputError("unknown view id " + std::to_string(camera_id));
}

Image<float> Dataset::load_image(int view) const {
  if (view < 0 || std::size_t(view) >= cameras.size()) throw InputError("view index " + std::to_string(view) + " out of range");
  const Camera<double>& cam = cameras[std::size_t(view)];
  Image<float> img = images.empty() ? read_png(image_paths[std::size_t(view)]) : images[std::size_t(view)];
  if (img.width != cam.width || img.height != cam.height) {
    throw IoError(IoError::Kind::kResolutionMismatch,
                  "image for camera " + std::to_string(cam.id) + " is " + std::to_string(img.width) + "x" +
                      std::to_string(img.height) + ", camera declares " + std::to_string(cam.width) + "x" +
                      std::to_string(cam.height));
  }
  return img;
}

void Dataset::compute_extent() {
  center.setZero();
  if (cameras.empty()) {
    extent = 1.0;
    return;
  }
  for (const auto& c : cameras) center += c.center();
  center /= double(cameras.size());
  double radius = 0.0;
  for (const auto& c : cameras) radius = std::max(radius, (c.center() - center).norm());
  extent = radius > 0.0 ? radius : 1.0;
}

std::vector<Camera<double>> load_cameras(const fs::path& file, std::vector<std::string>* image_names,
                                         std::vector<bool>* is_test) {
  if (!fs::is_regular_file(file)) throw IoError(IoError::Kind::kMissingFile, "file not found: " + file.string());
  std::ifstream in(file);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(IoError::Kind::kSchema, file.string() + ": invalid JSON: " + e.what());
  }
  if (!doc.is_object()) schema_error(file, "top level must be an object");
  if (field<int>(doc, "version", file, "document") != 1) schema_error(file, "unsupported version (expected 1)");
  if (!doc.contains("cameras") || !doc["cameras"].is_array()) schema_error(file, "'cameras' must be an array");
  std::vector<Camera<double>> cams;
  std::set<int> ids;
  for (std::size_t i = 0; i < doc["cameras"].size(); ++i) {
    const json& c = doc["cameras"][i];
    Camera<double> cam = parse_camera(c, file, i);
    if (!ids.insert(cam.id).second) schema_error(file, "duplicate camera id " + std::to_string(cam.id));
    const std::string where = "camera[" + std::to_string(i) + "]";
    if (image_names) image_names->push_back(field<std::string>(c, "image", file, where));
    if (is_test) {
      const std::string split = c.contains("split") ? field<std::string>(c, "split", file, where) : "train";
      if (split != "train" && split != "test") schema_error(file, where + ": split must be \"train\" or \"test\"");
      is_test->push_back(split == "test");
    }
    cams.push_back(cam);
  }
  return cams;
}

Dataset load_dataset(const fs::path& dir, const LoadOptions& options) {
  Dataset ds;
  ds.root = dir;
  const fs::path cameras_file = dir / "cameras.json";
  std::vector<std::string> names;
  ds.cameras = load_cameras(cameras_file, &names, &ds.is_test);
  if (ds.cameras.empty()) schema_error(cameras_file, "no cameras");
  if (ds.train_views().empty()) schema_error(cameras_file, "no camera in the train split");
  for (std::size_t i = 0; i < ds.cameras.size(); ++i) {
    const fs::path p = dir / names[i];
    ds.image_paths.push_back(p);
    if (!options.verify_images) continue;
    const auto [w, h] = png_size(p);
    if (w != ds.cameras[i].width || h != ds.cameras[i].height) {
      throw IoError(IoError::Kind::kResolutionMismatch,
                    p.string() + " is " + std::to_string(w) + "x" + std::to_string(h) + ", camera " +
                        std::to_string(ds.cameras[i].id) + " declares " + std::to_string(ds.cameras[i].width) + "x" +
                        std::to_string(ds.cameras[i].height));
    }
  }
  ds.compute_extent();

  const fs::path points_file = dir / "points.ply";
  if (fs::exists(points_file)) {
    const PlyTable t = read_ply(points_file);
    const auto &x = t.column("x"), &y = t.column("y"), &z = t.column("z");
    const bool colored = t.find("red") && t.find("green") && t.find("blue");
    double max_color = 0.0;
    if (colored)
      for (const char* ch : {"red", "green", "blue"})
        for (double v : t.column(ch)) max_color = std::max(max_color, v);
    const double color_scale = max_color > 1.0 ? 255.0 : 1.0;
    for (std::size_t i = 0; i < t.rows(); ++i) {
      ds.points.emplace_back(x[i], y[i], z[i]);
      if (colored) {
        ds.point_colors.emplace_back(srgb_to_linear(t.column("red")[i] / color_scale),
                                     srgb_to_linear(t.column("green")[i] / color_scale),
                                     srgb_to_linear(t.column("blue")[i] / color_scale));
      } else {
        ds.point_colors.emplace_back(0.5, 0.5, 0.5);
      }
    }
    ds.points_from_file = true;
  } else {
    std::mt19937_64 rng(options.seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    while (int(ds.points.size()) < options.random_points) {
      const Vec3<double> p(u(rng), u(rng), u(rng));
      if (p.squaredNorm() > 1.0) continue;
      ds.points.push_back(ds.center + ds.extent * p);
      ds.point_colors.emplace_back(0.5, 0.5, 0.5);
    }
  }
  return ds;
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
  if (ds.images.size() != ds.cameras.size()) throw InputError("save_dataset: dataset has no in-memory images");
  fs::create_directories(dir / "images");
  json doc;
  doc["version"] = 1;
  doc["cameras"] = json::array();
  for (std::size_t i = 0; i < ds.cameras.size(); ++i) {
    const Camera<double>& c = ds.cameras[i];
    char name[32];
    std::snprintf(name, sizeof(name), "images/%03zu.png", i);
    write_png(dir / name, ds.images[i]);
    json m = json::array();
    for (int r = 0; r < 3; ++r) m.push_back({c.rotation(r, 0), c.rotation(r, 1), c.rotation(r, 2), c.translation[r]});
    m.push_back({0.0, 0.0, 0.0, 1.0});
    json cj;
    cj["id"] = c.id;
    cj["image"] = name;
    cj["width"] = c.width;
    cj["height"] = c.height;
    cj["fx"] = c.fx;
    cj["fy"] = c.fy;
    cj["cx"] = c.cx;
    cj["cy"] = c.cy;
    cj["world_to_view"] = m;
    cj["split"] = ds.is_test[i] ? "test" : "train";
    doc["cameras"].push_back(cj);
  }
  std::ofstream out(dir / "cameras.json");
  out << doc.dump(2) << "\n";
  if (!out) throw IoError(IoError::Kind::kWrite, "cannot write " + (dir / "cameras.json").string());

  if (!ds.points.empty()) {
    PlyTable t;
    t.names = {"x", "y", "z", "red", "green", "blue"};
    t.columns.assign(6, std::vector<double>(ds.points.size()));
    for (std::size_t i = 0; i < ds.points.size(); ++i) {
      for (int a = 0; a < 3; ++a) t.columns[std::size_t(a)][i] = ds.points[i][a];
      for (int a = 0; a < 3; ++a) t.columns[std::size_t(3 + a)][i] = encode_srgb8(ds.point_colors[i][a]);
    }
    write_ply(dir / "points.ply", t, {"red", "green", "blue"});
  }
}

}  // namespace bsplat
