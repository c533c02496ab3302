#pragma once

// End-to-end training: the per-iteration pipeline (fetch, render, loss,
// backward, Adam, structural events), periodic evaluation and run reports.

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "bsplat/config.hpp"
#include "bsplat/dataset.hpp"
#include "bsplat/density.hpp"
#include "bsplat/optimizer.hpp"

namespace bsplat {

struct ViewMetrics {
  int camera_id = 0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct EvalRecord {
  long iteration = 0;
  std::size_t gaussians = 0;
  double train_psnr = 0.0, train_ssim = 0.0;
  double test_psnr = 0.0, test_ssim = 0.0;  // zero when there is no test split
  std::vector<ViewMetrics> test_views;
};

struct SeriesPoint {
  long iteration = 0;
  std::size_t gaussians = 0;
};

struct MemoryReport {
  std::size_t bytes_per_gaussian = 0;
  std::size_t primitive_bytes = 0;  // peak count x bytes_per_gaussian
  std::size_t peak_transient_bytes = 0;
  std::size_t cache_bytes = 0;
  std::size_t peak_total_bytes = 0;
};

struct RunReport {
  long iterations = 0;
  std::uint64_t seed = 0;
  std::string precision;
  std::string mode;
  std::size_t budget = 0;
  std::size_t initial_gaussians = 0;
  std::size_t final_gaussians = 0;
  /// Max over iteration boundaries, equal to the max of `series`.
  std::size_t peak_gaussians = 0;
  /// Max including counts inside an iteration (between a compensation flush and its prune).
  std::size_t peak_gaussians_within_step = 0;
  double color_balance = 0.0;
  MemoryReport memory;
  std::vector<EvalRecord> evals;
  std::vector<SeriesPoint> series;  // one point per iteration boundary, starting at 0
  std::vector<StructuralEvent> events;
  /// Wall-clock seconds per phase. Kept out of to_json so reports are reproducible.
  std::map<std::string, double> timings;
  std::size_t cache_peak_resident = 0;
  std::size_t cache_evictions = 0;

  const EvalRecord& final_eval() const { return evals.back(); }
  std::string to_json() const;
  std::string series_csv() const;
  std::string events_jsonl() const;
  std::string timings_json() const;
};

template <typename S>
struct TrainHooks {
  /// Called after every iteration boundary.
  std::function<void(long iteration, const ModelState<S>& model)> on_iteration;
  /// Called for every evaluation render (records are kept).
  std::function<void(long iteration, int view, const RenderOutput<S>& render)> on_eval_render;
};

template <typename S>
struct TrainResult {
  GaussianSet<S> set;
  RunReport report;
  std::vector<std::pair<std::string, Image<S>>> eval_images;  // final test renders, by file name
};

/// Builds the initial primitives from the dataset points: DC color from the
/// point color, opacity 0.1, identity rotation, isotropic scale from the mean
/// squared distance to the nearest neighbors.
template <typename S>
GaussianSet<S> initial_gaussians(const Dataset& dataset, int sh_degree, int neighbors, double fallback_scale);

/// Throws ConfigError (invalid config, budget below the initial count),
/// NumericError (non-finite loss or parameters), IoError (dataset images).
template <typename S>
TrainResult<S> train(const Dataset& dataset, const TrainConfig& config, const TrainHooks<S>& hooks = {});

/// Renders `views`, clamps to [0, 1], quantizes to 8-bit sRGB like stored
/// images, and scores against the dataset images. Aggregates are view means.
template <typename S>
std::vector<ViewMetrics> evaluate_views(const GaussianSet<S>& set, const Dataset& dataset, const std::vector<int>& views,
                                        const RenderSettings& settings, std::vector<Image<S>>* renders = nullptr);

/// Writes checkpoint.ply, report.json, series.csv, events.jsonl, config.json,
/// timings.json and eval/*.png. Refuses a non-empty directory unless `force`.
template <typename S>
void write_run(const std::filesystem::path& dir, const TrainResult<S>& result, const TrainConfig& config, bool force);

/// Throws IoError(kWrite) when `dir` exists and is not empty and `force` is false.
void prepare_run_directory(const std::filesystem::path& dir, bool force);

}  // namespace bsplat
