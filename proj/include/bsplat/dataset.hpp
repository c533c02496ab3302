#pragma once

// Multi-view datasets: cameras.json (version 1), PNG images and an optional
// points.ply with the initial point cloud.
//
// cameras.json:
//   { "version": 1,
//     "cameras": [ { "id": 0, "image": "images/000.png", "width": 64, "height": 64,
//                    "fx": 76.8, "fy": 76.8, "cx": 32, "cy": 32,
//                    "world_to_view": [[r00,r01,r02,t0],[r10,r11,r12,t1],[r20,r21,r22,t2],[0,0,0,1]],
//                    "split": "train" } ] }
// The view frame looks down +z with +y pointing down the image. "split" is
// "train" (default) or "test"; the bottom matrix row may be omitted.

#include <filesystem>
#include <optional>
#include <vector>

#include "bsplat/image.hpp"
#include "bsplat/math.hpp"

namespace bsplat {

struct Dataset {
  std::filesystem::path root;
  std::vector<Camera<double>> cameras;
  std::vector<std::filesystem::path> image_paths;  // absolute; empty for in-memory datasets
  std::vector<Image<float>> images;                // in-memory images; empty for on-disk datasets
  std::vector<bool> is_test;
  std::vector<Vec3<double>> points;
  std::vector<Vec3<double>> point_colors;  // linear RGB
  bool points_from_file = false;
  Vec3<double> center = Vec3<double>::Zero();
  double extent = 1.0;  // radius of the bounding sphere of the camera centers

  std::size_t size() const { return cameras.size(); }
  std::vector<int> train_views() const;
  std::vector<int> test_views() const;
  /// Index of the camera with the given id; throws InputError naming the id otherwise.
  int view_of_id(int camera_id) const;
  /// Decoded image of view `view` (index into cameras). Throws IoError on a
  /// missing file or a resolution that differs from the camera's.
  Image<float> load_image(int view) const;
  /// Sets center and extent from the camera centers.
  void compute_extent();
};

struct LoadOptions {
  /// Number of random points when points.ply is absent.
  int random_points = 1000;
  std::uint64_t seed = 0;
  /// Check that every image exists and has the declared size.
  bool verify_images = true;
};

/// Throws IoError: kMissingFile (cameras.json or an image, naming the path),
/// kSchema (cameras.json structure), kResolutionMismatch.
Dataset load_dataset(const std::filesystem::path& dir, const LoadOptions& options = {});

/// Reads just the camera list of a cameras.json file.
std::vector<Camera<double>> load_cameras(const std::filesystem::path& cameras_json,
                                         std::vector<std::string>* image_names = nullptr,
                                         std::vector<bool>* is_test = nullptr);

/// Writes cameras.json, images/NNN.png and points.ply (when points exist) into `dir`.
/// In-memory images are required.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

}  // namespace bsplat
