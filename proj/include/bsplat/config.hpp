#pragma once

// Training configuration. Stored as a JSON document; unknown keys are rejected
// and every field has a default (see docs/config.schema.json).

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "bsplat/density.hpp"
#include "bsplat/optimizer.hpp"
#include "bsplat/rasterizer.hpp"

namespace bsplat {

enum class Precision { kFloat32, kFloat64 };

/// Which per-pixel signal ranks pixels for compensation.
enum class ErrorMapMode {
  kResidual,      // |rendered - target| per pixel
  kL1Gradient,    // |d L1 / d color|
  kLossGradient,  // |d loss / d color|
};

struct TrainConfig {
  std::string dataset;
  std::string output;
  std::uint64_t seed = 0;
  long iterations = 30000;
  int threads = 1;
  Precision precision = Precision::kFloat64;
  int cache_capacity = 8;
  int sh_degree = 2;
  /// One more SH band becomes active every this many iterations (0: all bands from the start).
  long sh_increase_interval = 1000;
  std::array<double, 3> background{0.0, 0.0, 0.0};
  double loss_lambda = 0.2;
  ErrorMapMode error_map = ErrorMapMode::kResidual;
  long eval_interval = 500;
  /// Random initial points when the dataset has no points.ply.
  int init_points = 1000;
  bool save_eval_images = true;
  /// Initial isotropic scale = mean distance to this many nearest initial points.
  int init_scale_neighbors = 3;

  BudgetPolicy budget;
  /// rates.position_steps <= 0 decays the position rate over the whole run.
  LearningRates rates = [] {
    LearningRates r;
    r.position_steps = 0;
    return r;
  }();
  bool position_lr_scale_by_extent = true;
  AdamSettings adam;
  long opacity_reset_at = -1;  // -1 disables
  double opacity_reset_value = 0.01;
  bool reset_position_moments = false;

  RenderSettings render;

  /// Throws ConfigError on out-of-range values (budget-vs-point-count is checked by train).
  void validate() const;
};

/// Parses a config document. Throws ConfigError naming unknown keys or bad values.
TrainConfig config_from_json(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);
/// Complete effective configuration; config_from_json(config_to_json(c)) == c.
std::string config_to_json(const TrainConfig& config);

const char* to_string(Precision p);
const char* to_string(ErrorMapMode m);
const char* to_string(BudgetMode m);
const char* to_string(ContributionMode m);

}  // namespace bsplat
