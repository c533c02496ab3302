#include "bsplat/backward.hpp"

#include <algorithm>
#include <cmath>

#include "bsplat/parallel.hpp"

namespace bsplat {
namespace {

// Screen-space partials for one Gaussian accumulated over pixels.
template <typename S>
struct ScreenGrads {
  ParamMatrix<S> mean2d;  // N x 2
  ParamMatrix<S> conic;   // N x 3 (a, b, c)
  ParamMatrix<S> color;   // N x 3
  ScalarVector<S> opacity;
  std::vector<bool> touched;

  explicit ScreenGrads(Eigen::Index n)
      : mean2d(ParamMatrix<S>::Zero(n, 2)), conic(ParamMatrix<S>::Zero(n, 3)), color(ParamMatrix<S>::Zero(n, 3)),
        opacity(ScalarVector<S>::Zero(n)), touched(std::size_t(n), false) {}

  void add(const ScreenGrads& o) {
    mean2d += o.mean2d;
    conic += o.conic;
    color += o.color;
    opacity += o.opacity;
    for (std::size_t i = 0; i < touched.size(); ++i) touched[i] = touched[i] || o.touched[i];
  }
};

// d loss / d q for R = R(q / |q|), given G = d loss / d R.
template <typename S>
Vec4<S> rotation_backward(const Vec4<S>& q_raw, const Mat3<S>& g) {
  const S norm = q_raw.norm();
  const Vec4<S> q = q_raw / norm;
  const S w = q[0], x = q[1], y = q[2], z = q[3];
  Vec4<S> dq;
  dq[0] = S(2) * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
  dq[1] = S(2) * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - S(2) * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
                  w * g(2, 1) - S(2) * x * g(2, 2));
  dq[2] = S(2) * (-S(2) * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
                  z * g(2, 1) - S(2) * y * g(2, 2));
  dq[3] = S(2) * (-S(2) * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - S(2) * z * g(1, 1) +
                  y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
  return (dq - q * q.dot(dq)) / norm;
}

}  // namespace

template <typename S>
GradientBundle<S> GradientBundle<S>::zeros(const GaussianSet<S>& set, int width, int height) {
  const Eigen::Index n = set.size();
  GradientBundle b;
  b.d_position = ParamMatrix<S>::Zero(n, 3);
  b.d_rotation = ParamMatrix<S>::Zero(n, 4);
  b.d_log_scale = ParamMatrix<S>::Zero(n, 3);
  b.d_opacity_logit = ParamMatrix<S>::Zero(n, 1);
  b.d_sh_dc = ParamMatrix<S>::Zero(n, 3);
  b.d_sh_rest = ParamMatrix<S>::Zero(n, set.sh_rest.cols());
  b.d_mean2d = ParamMatrix<S>::Zero(n, 2);
  b.grad_pos_2d_norm = ScalarVector<S>::Zero(n);
  b.grad_color_norm = ScalarVector<S>::Zero(n);
  b.visible.assign(std::size_t(n), false);
  b.pixel_error_map = Image<S>(width, height, 1);
  return b;
}

template <typename S>
GradientBundle<S> backward(const GaussianSet<S>& set, const RenderOutput<S>& fwd, const Image<S>& dl_dcolor,
                           const Image<S>* error_source) {
  if (fwd.set_generation != set.generation() || fwd.set_size != set.size())
    throw ContractError("blend records are stale: the Gaussian set changed after the forward pass");
  if (!fwd.settings.keep_records || fwd.pixel_spans.size() != std::size_t(fwd.width) * fwd.height)
    throw ContractError("forward pass did not keep blend records");
  if (dl_dcolor.width != fwd.width || dl_dcolor.height != fwd.height || dl_dcolor.channels != 3)
    throw InputError("backward: loss gradient does not match the rendered image");
  const Image<S>& err = error_source ? *error_source : dl_dcolor;
  if (err.width != fwd.width || err.height != fwd.height)
    throw InputError("backward: error source does not match the rendered image");

  const Eigen::Index n = set.size();
  const int w = fwd.width, h = fwd.height;
  GradientBundle<S> out = GradientBundle<S>::zeros(set, w, h);

  for (std::size_t p = 0; p < fwd.pixel_spans.size(); ++p) {
    S sq = S(0);
    for (int c = 0; c < err.channels; ++c) sq += err.data[p * err.channels + c] * err.data[p * err.channels + c];
    out.pixel_error_map.data[p] = std::sqrt(sq);
  }

  std::vector<S> opacity(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) opacity[std::size_t(i)] = set.opacity(i);
  const S alpha_max = S(fwd.settings.alpha_max);
  const Vec3<S> background(S(fwd.settings.background[0]), S(fwd.settings.background[1]), S(fwd.settings.background[2]));

  const int tile_count = int(fwd.tile_records.size());
  const int workers = std::max(1, std::min(fwd.settings.threads, tile_count));
  std::vector<ScreenGrads<S>> partial(static_cast<std::size_t>(workers), ScreenGrads<S>(n));

  // Pixels grouped by tile so each worker touches its own tiles only.
  std::vector<std::vector<int>> tile_pixels(static_cast<std::size_t>(tile_count));
  for (std::size_t p = 0; p < fwd.pixel_spans.size(); ++p)
    if (fwd.pixel_spans[p].count > 0) tile_pixels[std::size_t(fwd.pixel_spans[p].tile)].push_back(int(p));

  parallel_for(tile_count, workers, [&](int worker, int tile) {
    ScreenGrads<S>& acc = partial[std::size_t(worker)];
    for (int p : tile_pixels[std::size_t(tile)]) {
      const int px = p % w, py = p / w;
      const auto recs = fwd.records_at(px, py);
      const Vec3<S> g(dl_dcolor.at(px, py, 0), dl_dcolor.at(px, py, 1), dl_dcolor.at(px, py, 2));
      const Vec2<S> pix(S(px) + S(0.5), S(py) + S(0.5));
      Vec3<S> behind = background;
      for (auto it = recs.rbegin(); it != recs.rend(); ++it) {
        const BlendRecord<S>& r = *it;
        const std::size_t id = std::size_t(r.id);
        const Vec3<S> c = fwd.colors.row(r.id).transpose();
        acc.touched[id] = true;
        acc.color.row(r.id) += (r.alpha * r.transmittance * g).transpose();
        const S d_alpha = r.transmittance * g.dot(c - behind);
        behind = r.alpha * c + (S(1) - r.alpha) * behind;

        const Projected2D<S>& pr = *fwd.projected[id];
        const Vec2<S> d = pix - pr.mean2d;
        const S power = gaussian_power(pr.conic, d);
        const S falloff = std::exp(power);
        if (opacity[id] * falloff >= alpha_max) continue;  // clamped: alpha is constant
        acc.opacity[r.id] += d_alpha * falloff;
        const S d_power = d_alpha * r.alpha;
        const Vec3<S>& k = pr.conic;
        acc.mean2d(r.id, 0) += d_power * (k[0] * d.x() + k[1] * d.y());
        acc.mean2d(r.id, 1) += d_power * (k[1] * d.x() + k[2] * d.y());
        acc.conic(r.id, 0) += d_power * S(-0.5) * d.x() * d.x();
        acc.conic(r.id, 1) += d_power * -d.x() * d.y();
        acc.conic(r.id, 2) += d_power * S(-0.5) * d.y() * d.y();
      }
    }
  });
  for (int k = 1; k < workers; ++k) partial[0].add(partial[std::size_t(k)]);
  const ScreenGrads<S>& sg = partial[0];

  const Camera<S>& cam = fwd.camera;
  const Vec3<S> cam_center = cam.center();
  const int degree = fwd.settings.sh_degree_for(set.sh_degree());
  const int k_count = sh_coeff_count(degree);
  const S ndc_x = S(0.5) * S(w), ndc_y = S(0.5) * S(h);

  for (Eigen::Index i = 0; i < n; ++i) {
    if (!sg.touched[std::size_t(i)]) continue;
    const Projected2D<S>& pr = *fwd.projected[std::size_t(i)];
    out.visible[std::size_t(i)] = true;
    out.d_mean2d.row(i) = sg.mean2d.row(i);
    out.grad_pos_2d_norm[i] = std::hypot(sg.mean2d(i, 0) * ndc_x, sg.mean2d(i, 1) * ndc_y);
    out.grad_color_norm[i] = sg.color.row(i).norm();

    const S o = opacity[std::size_t(i)];
    out.d_opacity_logit(i, 0) = sg.opacity[i] * o * (S(1) - o);

    // Mean: (fx tx / tz + cx, fy ty / tz + cy).
    const Vec3<S>& t = pr.view_position;
    const S iz = S(1) / t.z(), iz2 = iz * iz, iz3 = iz2 * iz;
    Vec3<S> dt;
    dt.x() = sg.mean2d(i, 0) * cam.fx * iz;
    dt.y() = sg.mean2d(i, 1) * cam.fy * iz;
    dt.z() = -(sg.mean2d(i, 0) * cam.fx * t.x() + sg.mean2d(i, 1) * cam.fy * t.y()) * iz2;

    // Conic = inverse(cov2d).
    Mat2<S> kmat;
    kmat << pr.conic[0], pr.conic[1], pr.conic[1], pr.conic[2];
    Mat2<S> gk;
    gk << sg.conic(i, 0), S(0.5) * sg.conic(i, 1), S(0.5) * sg.conic(i, 1), sg.conic(i, 2);
    const Mat2<S> g_cov2d = -kmat * gk * kmat;

    // cov2d = J M J^T + dilation, M = W Sigma W^T.
    const Mat23<S> j = projection_jacobian(t, cam.fx, cam.fy);
    const Vec4<S> q = set.rotation(i);
    const Vec3<S> scale = set.log_scale(i).array().exp().matrix();
    const Mat3<S> rot = quat_to_rotation(q);
    const Mat3<S> rs = rot * scale.asDiagonal();
    const Mat3<S> sigma = rs * rs.transpose();
    const Mat3<S> m = cam.rotation * sigma * cam.rotation.transpose();
    const Mat3<S> g_m = j.transpose() * g_cov2d * j;
    const Mat23<S> g_j = S(2) * g_cov2d * j * m;

    dt.x() += g_j(0, 2) * (-cam.fx * iz2);
    dt.y() += g_j(1, 2) * (-cam.fy * iz2);
    dt.z() += g_j(0, 0) * (-cam.fx * iz2) + g_j(0, 2) * (S(2) * cam.fx * t.x() * iz3) +
              g_j(1, 1) * (-cam.fy * iz2) + g_j(1, 2) * (S(2) * cam.fy * t.y() * iz3);

    Vec3<S> d_mu = cam.rotation.transpose() * dt;

    // Sigma = (R S)(R S)^T.
    const Mat3<S> g_sigma = cam.rotation.transpose() * g_m * cam.rotation;
    const Mat3<S> g_rs = S(2) * g_sigma * rs;
    const Mat3<S> g_scale_mat = rot.transpose() * g_rs;
    for (int a = 0; a < 3; ++a) out.d_log_scale(i, a) = g_scale_mat(a, a) * scale[a];
    const Mat3<S> g_rot = g_rs * scale.asDiagonal();
    out.d_rotation.row(i) = rotation_backward(q, g_rot).transpose();

    // View-dependent color.
    const Vec3<S> v = set.position(i) - cam_center;
    const S vnorm = v.norm();
    const Vec3<S> dir = v / vnorm;
    const Eigen::Matrix<S, 16, 1> basis = sh_basis(dir, degree);
    Vec3<S> dc = sg.color.row(i).transpose();
    for (int c = 0; c < 3; ++c)
      if (fwd.color_clamped(i, c)) dc[c] = S(0);
    out.d_sh_dc.row(i) = (basis[0] * dc).transpose();
    if (degree > 0) {
      const Eigen::Matrix<S, 16, 3> bj = sh_basis_jacobian(dir, degree);
      Vec3<S> d_dir = Vec3<S>::Zero();
      for (int kk = 1; kk < k_count; ++kk) {
        const Vec3<S> coeff = set.sh_rest.block(i, 3 * (kk - 1), 1, 3).transpose();
        out.d_sh_rest.block(i, 3 * (kk - 1), 1, 3) = (basis[kk] * dc).transpose();
        d_dir += coeff.dot(dc) * bj.row(kk).transpose();
      }
      d_mu += (d_dir - dir * dir.dot(d_dir)) / vnorm;
    }
    out.d_position.row(i) = d_mu.transpose();
  }
  return out;
}

template <typename S>
void accumulate_stats(GaussianSet<S>& set, const GradientBundle<S>& bundle) {
  if (bundle.d_position.rows() != set.size()) throw ContractError("gradient bundle does not match the Gaussian set");
  for (Eigen::Index i = 0; i < set.size(); ++i) {
    if (!bundle.visible[std::size_t(i)]) continue;
    set.stats.grad_pos_accum[i] += bundle.grad_pos_2d_norm[i];
    set.stats.grad_color_accum[i] += bundle.grad_color_norm[i];
    set.stats.view_count[i] += 1;
    set.stats.pos_grad_accum.row(i) += bundle.d_position.row(i);
  }
}

namespace {

template <typename S>
S median_of(std::vector<S> v) {
  if (v.empty()) return S(0);
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + std::ptrdiff_t(mid), v.end());
  S m = v[mid];
  if (v.size() % 2 == 0) {
    const S lower = *std::max_element(v.begin(), v.begin() + std::ptrdiff_t(mid));
    m = S(0.5) * (m + lower);
  }
  return m;
}

}  // namespace

template <typename S>
S calibrate_color_balance(const TrainingStats<S>& stats) {
  std::vector<S> p, c;
  for (Eigen::Index i = 0; i < stats.view_count.size(); ++i) {
    if (stats.view_count[i] == 0) continue;
    p.push_back(stats.grad_pos_accum[i] / S(stats.view_count[i]));
    c.push_back(stats.grad_color_accum[i] / S(stats.view_count[i]));
  }
  const S mp = median_of(std::move(p)), mc = median_of(std::move(c));
  if (!(mp > S(0)) || !(mc > S(0))) return S(1);
  return mp / mc;
}

template <typename S>
ScalarVector<S> hybrid_score(const TrainingStats<S>& stats, S beta) {
  const Eigen::Index n = stats.view_count.size();
  ScalarVector<S> mix = ScalarVector<S>::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (stats.view_count[i] == 0) continue;
    const S views = S(stats.view_count[i]);
    mix[i] = stats.grad_pos_accum[i] / views + beta * stats.grad_color_accum[i] / views;
  }
  return mix;
}

#define BSPLAT_INSTANTIATE(S)                                                                                   \
  template struct GradientBundle<S>;                                                                           \
  template GradientBundle<S> backward(const GaussianSet<S>&, const RenderOutput<S>&, const Image<S>&,          \
                                      const Image<S>*);                                                        \
  template void accumulate_stats(GaussianSet<S>&, const GradientBundle<S>&);                                   \
  template S calibrate_color_balance(const TrainingStats<S>&);                                                 \
  template ScalarVector<S> hybrid_score(const TrainingStats<S>&, S);
BSPLAT_INSTANTIATE(float)
BSPLAT_INSTANTIATE(double)
#undef BSPLAT_INSTANTIATE

}  // namespace bsplat
