#pragma once

// Tile-based, depth-ordered alpha blending. One forward pass produces the
// color image, the alpha-blended depth image, the final transmittance, the
// per-Gaussian maximum ray contribution and the blend records the backward
// pass replays.

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "bsplat/gaussian_set.hpp"
#include "bsplat/image.hpp"
#include "bsplat/math.hpp"

namespace bsplat {

/// What per_gaussian_max_contrib measures on each ray: alpha * tau (with
/// tau = alpha * T) or tau alone.
enum class ContributionMode { kAlphaTau, kTau };

struct RenderSettings {
  int tile_size = 16;
  double alpha_max = 0.99;
  double alpha_skip = 1.0 / 255.0;
  double t_stop = 1e-4;
  ProjectionSettings projection;
  std::array<double, 3> background{0.0, 0.0, 0.0};
  /// Divide the blended depth by the accumulated alpha.
  bool normalized_depth = false;
  /// Keep per-pixel blend records for the backward pass.
  bool keep_records = true;
  ContributionMode contribution = ContributionMode::kAlphaTau;
  /// Highest SH degree evaluated; -1 uses every band the set stores.
  int active_sh_degree = -1;
  int threads = 1;

  int sh_degree_for(int stored) const { return active_sh_degree < 0 ? stored : std::min(stored, active_sh_degree); }

  /// No contributor skipping, no early stop, no footprint culling: the
  /// renderer then evaluates the plain blending sum over every Gaussian in
  /// front of the near plane.
  static RenderSettings exact() {
    RenderSettings s;
    s.alpha_skip = 0.0;
    s.t_stop = 0.0;
    s.projection.cull_footprint = false;
    return s;
  }
};

template <typename S>
struct TileEntry {
  int id;
  S depth;
};

template <typename S>
struct TileGrid {
  int tile_size = 16;
  int tiles_x = 0;
  int tiles_y = 0;
  std::vector<std::vector<TileEntry<S>>> lists;  // row-major over tiles, front-to-back

  const std::vector<TileEntry<S>>& at(int tx, int ty) const { return lists[std::size_t(ty) * tiles_x + tx]; }
};

/// Assigns every projected Gaussian to the tiles its footprint overlaps and
/// sorts each tile list by (depth, id). With `full_coverage` every Gaussian
/// goes into every tile.
template <typename S>
TileGrid<S> bin_and_sort(const std::vector<std::optional<Projected2D<S>>>& projected, int width, int height,
                         int tile_size, bool full_coverage = false);

template <typename S>
struct BlendRecord {
  int id;
  S alpha;
  S transmittance;  // T before this contributor
};

struct PixelSpan {
  int tile = 0;
  int begin = 0;
  int count = 0;
};

template <typename S>
struct RenderOutput {
  int width = 0;
  int height = 0;
  Image<S> color;                // H x W x 3
  Image<S> depth;                // H x W x 1
  Image<S> final_transmittance;  // H x W x 1
  std::vector<S> max_contrib;    // per Gaussian, in [0, 1]

  std::vector<std::optional<Projected2D<S>>> projected;
  Eigen::Matrix<S, Eigen::Dynamic, 3, Eigen::RowMajor> colors;        // per Gaussian, clamped
  Eigen::Array<bool, Eigen::Dynamic, 3, Eigen::RowMajor> color_clamped;  // channel hit the zero clamp

  std::vector<std::vector<BlendRecord<S>>> tile_records;
  std::vector<PixelSpan> pixel_spans;  // row-major over pixels

  Camera<S> camera;
  RenderSettings settings;
  std::uint64_t set_generation = 0;
  Eigen::Index set_size = 0;

  std::span<const BlendRecord<S>> records_at(int x, int y) const {
    const PixelSpan& s = pixel_spans[std::size_t(y) * width + x];
    if (s.count == 0) return {};
    return std::span<const BlendRecord<S>>(tile_records[std::size_t(s.tile)]).subspan(std::size_t(s.begin), std::size_t(s.count));
  }

  std::size_t record_count() const {
    std::size_t n = 0;
    for (const auto& t : tile_records) n += t.size();
    return n;
  }

  /// Bytes held by the blend records and per-pixel spans.
  std::size_t record_bytes() const {
    return record_count() * sizeof(BlendRecord<S>) + pixel_spans.size() * sizeof(PixelSpan);
  }
};

template <typename S>
RenderOutput<S> render(const GaussianSet<S>& set, const Camera<S>& cam, const RenderSettings& settings = {});

/// Depth of the contributor with the largest blend weight alpha * T at pixel (x, y),
/// or nullopt when no Gaussian contributed there.
template <typename S>
std::optional<S> dominant_depth(const RenderOutput<S>& out, int x, int y);

/// Renders and returns dominant_depth for each query pixel. Throws InputError
/// for pixels outside the image.
template <typename S>
std::vector<std::optional<S>> render_depth_at(const GaussianSet<S>& set, const Camera<S>& cam,
                                              std::span<const Eigen::Vector2i> pixels,
                                              const RenderSettings& settings = {});

}  // namespace bsplat
