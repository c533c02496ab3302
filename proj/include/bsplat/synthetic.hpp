#pragma once

// Procedural ground-truth scenes: random Gaussians inside the unit sphere seen
// by a ring of inward-looking cameras.

#include <array>
#include <cstdint>
#include <optional>

#include "bsplat/dataset.hpp"
#include "bsplat/gaussian_set.hpp"

namespace bsplat {

struct SyntheticOptions {
  std::uint64_t seed = 7;
  int n_gaussians = 50;
  int n_cameras = 8;
  int width = 64;
  int height = 64;
  double ring_radius = 4.0;
  /// Focal length as a multiple of the image width.
  double focal_factor = 1.2;
  /// Every view with index % test_every == test_every / 2 goes to the test split (0: no test split).
  int test_every = 8;
  /// Standard deviation of the noise added to ground-truth centers for the initial points.
  double init_noise = 0.02;
  std::array<double, 3> background{0.0, 0.0, 0.0};
  /// Adds a small bright Gaussian at the center of a large dark one and leaves it
  /// out of the initial points.
  bool with_patch = false;
};

struct SyntheticScene {
  Dataset dataset;                 // in-memory images
  GaussianSet<double> truth;       // SH degree 0, every parameter float-exact
  std::optional<Vec3<double>> patch_position;
};

/// Deterministic in all arguments. Target images are rendered from `truth` and
/// quantized to 8-bit sRGB, so they equal what a PNG round trip returns.
SyntheticScene generate_synthetic(const SyntheticOptions& options);

/// Camera at `center` looking at `target`; world up is +z.
Camera<double> look_at_camera(const Vec3<double>& center, const Vec3<double>& target, int width, int height,
                              double focal, int id);

}  // namespace bsplat
