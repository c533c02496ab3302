#pragma once

// Test-only reference implementations. They favor the most direct formulation
// (global sorts, per-ray enumeration, dense 2D windows) over speed.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "bsplat/gaussian_set.hpp"
#include "bsplat/image.hpp"
#include "bsplat/math.hpp"
#include "bsplat/rasterizer.hpp"

namespace bsplat::oracle {

/// Pinhole camera at the origin looking down +z.
inline Camera<double> axis_camera(int width, int height, double focal) {
  Camera<double> cam;
  cam.fx = cam.fy = focal;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  cam.width = width;
  cam.height = height;
  return cam;
}

struct SceneOptions {
  int count = 10;
  int width = 24;
  int height = 24;
  int sh_degree = 1;
  double max_opacity = 0.9;
  double min_scale = 0.08;
  double max_scale = 0.4;
};

/// Random Gaussians in front of an axis camera, inside its frustum, with
/// positive base colors.
inline GaussianSet<double> random_scene(std::mt19937_64& rng, const SceneOptions& o, Camera<double>* cam_out = nullptr) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  const Camera<double> cam = axis_camera(o.width, o.height, 1.1 * o.width);
  GaussianSet<double> set(o.sh_degree);
  for (int i = 0; i < o.count; ++i) {
    Gaussian<double> g;
    const double z = 2.0 + 3.0 * u(rng);
    const double px = (0.1 + 0.8 * u(rng)) * o.width, py = (0.1 + 0.8 * u(rng)) * o.height;
    g.position = Vec3<double>((px - cam.cx) / cam.fx * z, (py - cam.cy) / cam.fy * z, z);
    g.rotation = Vec4<double>(n01(rng), n01(rng), n01(rng), n01(rng)).normalized();
    for (int a = 0; a < 3; ++a) g.log_scale[a] = std::log(o.min_scale + (o.max_scale - o.min_scale) * u(rng));
    g.opacity_logit = logit(0.1 + (o.max_opacity - 0.1) * u(rng));
    g.sh = Eigen::Matrix<double, Eigen::Dynamic, 3>::Zero(sh_coeff_count(o.sh_degree), 3);
    for (int c = 0; c < 3; ++c) g.sh(0, c) = (0.3 + 0.5 * u(rng) - 0.5) / kShC0;
    for (int k = 1; k < g.sh.rows(); ++k)
      for (int c = 0; c < 3; ++c) g.sh(k, c) = 0.05 * n01(rng);
    set.push_back(g);
  }
  if (cam_out) *cam_out = cam;
  return set;
}

struct NaiveRender {
  Image<double> color, depth, transmittance;
  std::vector<double> max_contrib;
  /// Sum over contributors of alpha * T, per pixel.
  Image<double> weight_sum;
};

/// Per pixel: every Gaussian in front of the near plane, globally sorted by
/// (depth, id), blended front to back. Honors alpha_skip, alpha_max and
/// t_stop the same way the renderer documents them; no footprint culling.
inline NaiveRender naive_render(const GaussianSet<double>& set, const Camera<double>& cam,
                                const RenderSettings& settings) {
  using S = double;
  const int w = cam.width, h = cam.height;
  const Eigen::Index n = set.size();
  NaiveRender out{Image<double>(w, h, 3), Image<double>(w, h, 1), Image<double>(w, h, 1),
                  std::vector<double>(std::size_t(n), 0.0), Image<double>(w, h, 1)};
  ProjectionSettings proj = settings.projection;
  proj.cull_footprint = false;
  std::vector<std::optional<Projected2D<S>>> p(static_cast<std::size_t>(n));
  std::vector<Vec3<S>> colors(static_cast<std::size_t>(n));
  std::vector<int> order;
  const int coeffs = sh_coeff_count(settings.sh_degree_for(set.sh_degree()));
  for (Eigen::Index i = 0; i < n; ++i) {
    p[std::size_t(i)] = project_gaussian(set.position(i), set.rotation(i), set.log_scale(i), cam, proj);
    if (!p[std::size_t(i)]) continue;
    order.push_back(int(i));
    const Vec3<S> dir = (set.position(i) - cam.center()).normalized();
    colors[std::size_t(i)] = eval_sh_color<S>(set.sh_coeffs(i).topRows(coeffs), dir);
  }
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return p[std::size_t(a)]->depth < p[std::size_t(b)]->depth;
  });
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Vec2<S> pix(S(x) + S(0.5), S(y) + S(0.5));
      double t = 1.0, d = 0.0, wsum = 0.0;
      double c[3] = {0, 0, 0};
      for (int id : order) {
        const auto& pr = *p[std::size_t(id)];
        const Vec2<S> delta = pix - pr.mean2d;
        const double power = -0.5 * (pr.conic[0] * delta.x() * delta.x() + pr.conic[2] * delta.y() * delta.y()) -
                             pr.conic[1] * delta.x() * delta.y();
        if (power > 0.0) continue;
        const double alpha = std::min(settings.alpha_max, set.opacity(id) * std::exp(power));
        if (alpha < settings.alpha_skip) continue;
        const double next_t = t * (1.0 - alpha);
        if (next_t < settings.t_stop) break;
        const double weight = alpha * t;
        for (int ch = 0; ch < 3; ++ch) c[ch] += weight * colors[std::size_t(id)][ch];
        d += weight * pr.depth;
        wsum += weight;
        const double contrib = settings.contribution == ContributionMode::kAlphaTau ? alpha * weight : weight;
        out.max_contrib[std::size_t(id)] = std::max(out.max_contrib[std::size_t(id)], contrib);
        t = next_t;
      }
      for (int ch = 0; ch < 3; ++ch) out.color.at(x, y, ch) = c[ch] + t * settings.background[std::size_t(ch)];
      out.depth.at(x, y) = settings.normalized_depth ? (1.0 - t > 0.0 ? d / (1.0 - t) : 0.0) : d;
      out.transmittance.at(x, y) = t;
      out.weight_sum.at(x, y) = wsum;
    }
  }
  return out;
}

/// PSNR from the definition, one sample at a time.
template <typename S>
double scalar_psnr(const Image<S>& a, const Image<S>& b) {
  long double sum = 0.0L;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x)
      for (int c = 0; c < a.channels; ++c) {
        const long double d = (long double)a.at(x, y, c) - (long double)b.at(x, y, c);
        sum += d * d;
      }
  const long double mse = sum / (long double)(a.width * a.height * a.channels);
  return double(10.0L * std::log10(1.0L / mse));
}

/// SSIM with a dense 11x11 window (zero padding), per channel, averaged.
inline double reference_ssim(const Image<double>& a, const Image<double>& b) {
  double g[11], gs = 0.0;
  for (int i = 0; i < 11; ++i) {
    g[i] = std::exp(-double((i - 5) * (i - 5)) / (2.0 * 1.5 * 1.5));
    gs += g[i];
  }
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0.0;
  for (int c = 0; c < a.channels; ++c)
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width; ++x) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int dy = -5; dy <= 5; ++dy)
          for (int dx = -5; dx <= 5; ++dx) {
            const int xx = x + dx, yy = y + dy;
            if (xx < 0 || yy < 0 || xx >= a.width || yy >= a.height) continue;
            const double wgt = g[dx + 5] * g[dy + 5] / (gs * gs);
            const double va = a.at(xx, yy, c), vb = b.at(xx, yy, c);
            mx += wgt * va;
            my += wgt * vb;
            sxx += wgt * va * va;
            syy += wgt * vb * vb;
            sxy += wgt * va * vb;
          }
        const double vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
        total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
  return total / double(a.width * a.height * a.channels);
}

/// Central finite difference of f around x along one coordinate.
inline double central_difference(const std::function<double(double)>& f, double x, double step) {
  return (f(x + step) - f(x - step)) / (2.0 * step);
}

/// |analytic - numeric| <= abs_floor, or relative error <= rel_tol.
inline bool gradient_close(double analytic, double numeric, double rel_tol, double abs_floor) {
  const double diff = std::abs(analytic - numeric);
  if (diff <= abs_floor) return true;
  return diff / std::max(std::abs(analytic), std::abs(numeric)) <= rel_tol;
}

/// SH basis up to degree 1 written out from the real spherical harmonics.
inline std::vector<double> sh_basis_degree1(const Vec3<double>& d) {
  const double y00 = 0.5 * std::sqrt(1.0 / M_PI);
  const double c1 = std::sqrt(3.0 / (4.0 * M_PI));
  return {y00, -c1 * d.y(), c1 * d.z(), -c1 * d.x()};
}

}  // namespace bsplat::oracle
