#include "bsplat/rasterizer.hpp"

#include <algorithm>
#include <cmath>

#include "bsplat/parallel.hpp"

namespace bsplat {

template <typename S>
TileGrid<S> bin_and_sort(const std::vector<std::optional<Projected2D<S>>>& projected, int width, int height,
                         int tile_size, bool full_coverage) {
  if (tile_size < 1) throw InputError("tile size must be positive");
  TileGrid<S> grid;
  grid.tile_size = tile_size;
  grid.tiles_x = (width + tile_size - 1) / tile_size;
  grid.tiles_y = (height + tile_size - 1) / tile_size;
  grid.lists.resize(std::size_t(grid.tiles_x) * grid.tiles_y);

  for (std::size_t id = 0; id < projected.size(); ++id) {
    const auto& p = projected[id];
    if (!p) continue;
    int x0 = 0, x1 = grid.tiles_x - 1, y0 = 0, y1 = grid.tiles_y - 1;
    if (!full_coverage) {
      const S r = S(p->radius);
      x0 = std::max(x0, int(std::floor((p->mean2d.x() - r) / S(tile_size))));
      x1 = std::min(x1, int(std::floor((p->mean2d.x() + r) / S(tile_size))));
      y0 = std::max(y0, int(std::floor((p->mean2d.y() - r) / S(tile_size))));
      y1 = std::min(y1, int(std::floor((p->mean2d.y() + r) / S(tile_size))));
    }
    for (int ty = y0; ty <= y1; ++ty)
      for (int tx = x0; tx <= x1; ++tx)
        grid.lists[std::size_t(ty) * grid.tiles_x + tx].push_back({int(id), p->depth});
  }
  for (auto& list : grid.lists) {
    std::sort(list.begin(), list.end(), [](const TileEntry<S>& a, const TileEntry<S>& b) {
      return a.depth < b.depth || (a.depth == b.depth && a.id < b.id);
    });
  }
  return grid;
}

template <typename S>
RenderOutput<S> render(const GaussianSet<S>& set, const Camera<S>& cam, const RenderSettings& settings) {
  cam.validate();
  const Eigen::Index n = set.size();
  const int w = cam.width, h = cam.height;

  RenderOutput<S> out;
  out.width = w;
  out.height = h;
  out.camera = cam;
  out.settings = settings;
  out.set_generation = set.generation();
  out.set_size = n;
  out.color = Image<S>(w, h, 3);
  out.depth = Image<S>(w, h, 1);
  out.final_transmittance = Image<S>(w, h, 1, S(1));
  out.max_contrib.assign(std::size_t(n), S(0));
  out.projected.resize(std::size_t(n));
  out.colors.setZero(n, 3);
  out.color_clamped.setConstant(n, 3, false);

  const Vec3<S> cam_center = cam.center();
  const int coeff_count = sh_coeff_count(settings.sh_degree_for(set.sh_degree()));
  std::vector<S> opacity(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    out.projected[std::size_t(i)] = project_gaussian(set.position(i), set.rotation(i), set.log_scale(i), cam, settings.projection);
    if (!out.projected[std::size_t(i)]) continue;
    opacity[std::size_t(i)] = set.opacity(i);
    const Vec3<S> dir = (set.position(i) - cam_center).normalized();
    const Vec3<S> raw = eval_sh_color_unclamped<S>(set.sh_coeffs(i).topRows(coeff_count), dir);
    for (int c = 0; c < 3; ++c) {
      out.color_clamped(i, c) = raw[c] < S(0);
      out.colors(i, c) = std::max(raw[c], S(0));
    }
  }

  const TileGrid<S> grid = bin_and_sort(out.projected, w, h, settings.tile_size, !settings.projection.cull_footprint);
  const int tile_count = grid.tiles_x * grid.tiles_y;
  out.tile_records.resize(std::size_t(tile_count));
  out.pixel_spans.resize(std::size_t(w) * h);

  const S alpha_max = S(settings.alpha_max), alpha_skip = S(settings.alpha_skip), t_stop = S(settings.t_stop);
  const Vec3<S> background(S(settings.background[0]), S(settings.background[1]), S(settings.background[2]));
  const bool alpha_tau = settings.contribution == ContributionMode::kAlphaTau;

  const int workers = std::max(1, std::min(settings.threads, tile_count));
  std::vector<std::vector<S>> worker_contrib(std::size_t(workers > 1 ? workers : 0), std::vector<S>(std::size_t(n), S(0)));

  parallel_for(tile_count, workers, [&](int worker, int tile) {
    std::vector<S>& contrib = workers > 1 ? worker_contrib[std::size_t(worker)] : out.max_contrib;
    const auto& list = grid.lists[std::size_t(tile)];
    auto& records = out.tile_records[std::size_t(tile)];
    const int tx = tile % grid.tiles_x, ty = tile / grid.tiles_x;
    const int px0 = tx * grid.tile_size, py0 = ty * grid.tile_size;
    const int px1 = std::min(w, px0 + grid.tile_size), py1 = std::min(h, py0 + grid.tile_size);

    for (int py = py0; py < py1; ++py) {
      for (int px = px0; px < px1; ++px) {
        const Vec2<S> pix(S(px) + S(0.5), S(py) + S(0.5));
        PixelSpan& span = out.pixel_spans[std::size_t(py) * w + px];
        span.tile = tile;
        span.begin = int(records.size());
        S t = S(1);
        Vec3<S> c = Vec3<S>::Zero();
        S d = S(0);
        for (const TileEntry<S>& e : list) {
          const Projected2D<S>& p = *out.projected[std::size_t(e.id)];
          const S power = gaussian_power(p.conic, Vec2<S>(pix - p.mean2d));
          if (power > S(0)) continue;
          const S alpha = std::min(alpha_max, opacity[std::size_t(e.id)] * std::exp(power));
          if (alpha < alpha_skip) continue;
          const S next_t = t * (S(1) - alpha);
          if (next_t < t_stop) break;
          const S weight = alpha * t;
          c += weight * out.colors.row(e.id).transpose();
          d += weight * p.depth;
          if (settings.keep_records) records.push_back({e.id, alpha, t});
          S& m = contrib[std::size_t(e.id)];
          m = std::max(m, alpha_tau ? alpha * weight : weight);
          t = next_t;
        }
        span.count = int(records.size()) - span.begin;
        c += t * background;
        for (int ch = 0; ch < 3; ++ch) out.color.at(px, py, ch) = c[ch];
        if (settings.normalized_depth && t < S(1)) d /= (S(1) - t);
        out.depth.at(px, py) = d;
        out.final_transmittance.at(px, py) = t;
      }
    }
  });

  for (const auto& wc : worker_contrib)
    for (Eigen::Index i = 0; i < n; ++i) out.max_contrib[std::size_t(i)] = std::max(out.max_contrib[std::size_t(i)], wc[std::size_t(i)]);
  return out;
}

template <typename S>
std::optional<S> dominant_depth(const RenderOutput<S>& out, int x, int y) {
  if (x < 0 || y < 0 || x >= out.width || y >= out.height)
    throw InputError("pixel (" + std::to_string(x) + ", " + std::to_string(y) + ") is outside the image");
  if (out.pixel_spans.empty()) throw ContractError("render output carries no blend records");
  std::optional<S> best_depth;
  S best = S(-1);
  for (const BlendRecord<S>& r : out.records_at(x, y)) {
    const S weight = r.alpha * r.transmittance;
    if (weight > best) {
      best = weight;
      best_depth = out.projected[std::size_t(r.id)]->depth;
    }
  }
  return best_depth;
}

template <typename S>
std::vector<std::optional<S>> render_depth_at(const GaussianSet<S>& set, const Camera<S>& cam,
                                              std::span<const Eigen::Vector2i> pixels, const RenderSettings& settings) {
  for (const auto& p : pixels)
    if (p.x() < 0 || p.y() < 0 || p.x() >= cam.width || p.y() >= cam.height)
      throw InputError("pixel (" + std::to_string(p.x()) + ", " + std::to_string(p.y()) + ") is outside the image");
  RenderSettings s = settings;
  s.keep_records = true;
  const RenderOutput<S> out = render(set, cam, s);
  std::vector<std::optional<S>> depths;
  depths.reserve(pixels.size());
  for (const auto& p : pixels) depths.push_back(dominant_depth(out, p.x(), p.y()));
  return depths;
}

#define BSPLAT_INSTANTIATE(S)                                                                                      \
  template TileGrid<S> bin_and_sort(const std::vector<std::optional<Projected2D<S>>>&, int, int, int, bool);     \
  template RenderOutput<S> render(const GaussianSet<S>&, const Camera<S>&, const RenderSettings&);                \
  template std::optional<S> dominant_depth(const RenderOutput<S>&, int, int);                                     \
  template std::vector<std::optional<S>> render_depth_at(const GaussianSet<S>&, const Camera<S>&,                 \
                                                         std::span<const Eigen::Vector2i>, const RenderSettings&);
BSPLAT_INSTANTIATE(float)
BSPLAT_INSTANTIATE(double)
#undef BSPLAT_INSTANTIATE

}  // namespace bsplat
