#pragma once

// Gaussian primitive math: covariance construction, perspective projection of
// 3D Gaussians to screen-space ellipses, spherical-harmonics color and the
// per-pixel alpha falloff. Everything here is a pure function templated on the
// scalar type.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>

#include "bsplat/errors.hpp"

namespace bsplat {

template <typename S> using Vec2 = Eigen::Matrix<S, 2, 1>;
template <typename S> using Vec3 = Eigen::Matrix<S, 3, 1>;
template <typename S> using Vec4 = Eigen::Matrix<S, 4, 1>;
template <typename S> using Mat2 = Eigen::Matrix<S, 2, 2>;
template <typename S> using Mat3 = Eigen::Matrix<S, 3, 3>;
template <typename S> using Mat23 = Eigen::Matrix<S, 2, 3>;

/// Maximum supported spherical-harmonics degree.
inline constexpr int kMaxShDegree = 3;

/// Number of SH coefficients per color channel for a given degree.
constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

template <typename S> S sigmoid(S x) { return S(1) / (S(1) + std::exp(-x)); }
template <typename S> S logit(S p) { return std::log(p / (S(1) - p)); }

/// Rotation matrix of the quaternion (w, x, y, z). The quaternion is normalized first.
template <typename S>
Mat3<S> quat_to_rotation(const Vec4<S>& q_raw) {
  const Vec4<S> q = q_raw.normalized();
  const S w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3<S> r;
  r << S(1) - S(2) * (y * y + z * z), S(2) * (x * y - w * z), S(2) * (x * z + w * y),
      S(2) * (x * y + w * z), S(1) - S(2) * (x * x + z * z), S(2) * (y * z - w * x),
      S(2) * (x * z - w * y), S(2) * (y * z + w * x), S(1) - S(2) * (x * x + y * y);
  return r;
}

/// Sigma = R S S^T R^T with S = diag(exp(log_scale)).
template <typename S>
Mat3<S> build_covariance(const Vec4<S>& rotation, const Vec3<S>& log_scale) {
  const Mat3<S> rs = quat_to_rotation(rotation) * log_scale.array().exp().matrix().asDiagonal();
  Mat3<S> cov = rs * rs.transpose();
  // Exact symmetry; the product is symmetric up to rounding only.
  cov = S(0.5) * (cov + cov.transpose()).eval();
  return cov;
}

/// Pinhole camera. `rotation`/`translation` map world points into view space,
/// where +z is the viewing direction and pixel (i, j) has its center at (i + 0.5, j + 0.5).
template <typename S>
struct Camera {
  Mat3<S> rotation = Mat3<S>::Identity();
  Vec3<S> translation = Vec3<S>::Zero();
  S fx = S(1), fy = S(1), cx = S(0), cy = S(0);
  int width = 1, height = 1;
  int id = 0;

  Vec3<S> to_view(const Vec3<S>& world) const { return rotation * world + translation; }
  Vec3<S> center() const { return -rotation.transpose() * translation; }

  /// World-space point at view-space depth `depth` along the ray through pixel coordinate `pixel`.
  Vec3<S> back_project(const Vec2<S>& pixel, S depth) const {
    const Vec3<S> view((pixel.x() - cx) / fx * depth, (pixel.y() - cy) / fy * depth, depth);
    return rotation.transpose() * (view - translation);
  }

  template <typename T>
  Camera<T> cast() const {
    Camera<T> c;
    c.rotation = rotation.template cast<T>();
    c.translation = translation.template cast<T>();
    c.fx = T(fx);
    c.fy = T(fy);
    c.cx = T(cx);
    c.cy = T(cy);
    c.width = width;
    c.height = height;
    c.id = id;
    return c;
  }

  /// Throws InputError when the intrinsics or the rotation block are invalid.
  void validate(double tol = 1e-6) const {
    if (!(fx > S(0)) || !(fy > S(0))) throw InputError("camera " + std::to_string(id) + ": focal lengths must be positive");
    if (width < 1 || height < 1) throw InputError("camera " + std::to_string(id) + ": image size must be at least 1x1");
    const double err = double((rotation * rotation.transpose() - Mat3<S>::Identity()).cwiseAbs().maxCoeff());
    if (!(err <= tol)) throw InputError("camera " + std::to_string(id) + ": rotation block is not orthonormal");
  }
};

/// Screen-space footprint of one Gaussian.
template <typename S>
struct Projected2D {
  Vec2<S> mean2d;
  Mat2<S> cov2d;   // includes the dilation
  Vec3<S> conic;   // (a, b, c) of inverse(cov2d) = [[a, b], [b, c]]
  Vec3<S> view_position;
  S depth = S(0);
  int radius = 0;
};

struct ProjectionSettings {
  double near_plane = 0.01;
  double dilation = 0.3;
  double cull_sigma = 3.0;
  /// When false only the near plane culls; off-screen Gaussians are kept.
  bool cull_footprint = true;
};

/// Perspective Jacobian of (fx x/z + cx, fy y/z + cy) at view-space point t.
template <typename S>
Mat23<S> projection_jacobian(const Vec3<S>& t, S fx, S fy) {
  const S iz = S(1) / t.z();
  Mat23<S> j;
  j << fx * iz, S(0), -fx * t.x() * iz * iz,
      S(0), fy * iz, -fy * t.y() * iz * iz;
  return j;
}

/// EWA projection of a 3D Gaussian. Returns nullopt when culled.
template <typename S>
std::optional<Projected2D<S>> project_gaussian(const Vec3<S>& position, const Vec4<S>& rotation,
                                               const Vec3<S>& log_scale, const Camera<S>& cam,
                                               const ProjectionSettings& settings = {}) {
  const Vec3<S> t = cam.to_view(position);
  if (!(t.z() > S(settings.near_plane))) return std::nullopt;

  const Mat23<S> jw = projection_jacobian(t, cam.fx, cam.fy) * cam.rotation;
  Mat2<S> cov2d = jw * build_covariance(rotation, log_scale) * jw.transpose();
  cov2d(0, 1) = cov2d(1, 0) = S(0.5) * (cov2d(0, 1) + cov2d(1, 0));
  cov2d(0, 0) += S(settings.dilation);
  cov2d(1, 1) += S(settings.dilation);

  const S det = cov2d(0, 0) * cov2d(1, 1) - cov2d(0, 1) * cov2d(0, 1);
  if (!(det > S(0))) return std::nullopt;

  Projected2D<S> p;
  p.view_position = t;
  p.depth = t.z();
  p.mean2d = Vec2<S>(cam.fx * t.x() / t.z() + cam.cx, cam.fy * t.y() / t.z() + cam.cy);
  p.cov2d = cov2d;
  p.conic = Vec3<S>(cov2d(1, 1) / det, -cov2d(0, 1) / det, cov2d(0, 0) / det);

  const S mid = S(0.5) * (cov2d(0, 0) + cov2d(1, 1));
  const S lambda_max = mid + std::sqrt(std::max(S(0), mid * mid - det));
  p.radius = std::max(1, int(std::ceil(S(settings.cull_sigma) * std::sqrt(lambda_max))));

  if (settings.cull_footprint) {
    const S r = S(p.radius);
    if (p.mean2d.x() + r < S(0) || p.mean2d.x() - r > S(cam.width) ||
        p.mean2d.y() + r < S(0) || p.mean2d.y() - r > S(cam.height)) {
      return std::nullopt;
    }
  }
  return p;
}

// Real SH basis constants, degree 0..3.
inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr double kShC1 = 0.4886025119029199;
inline constexpr double kShC2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                                   -1.0925484305920792, 0.5462742152960396};
inline constexpr double kShC3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                                   0.3731763325901154, -0.4570457994644658, 1.445305721320277,
                                   -0.5900435899266435};

/// Basis values Y_k(dir) for k < sh_coeff_count(degree); remaining entries are zero.
template <typename S>
Eigen::Matrix<S, 16, 1> sh_basis(const Vec3<S>& dir, int degree) {
  Eigen::Matrix<S, 16, 1> y = Eigen::Matrix<S, 16, 1>::Zero();
  const S x = dir.x(), yy = dir.y(), z = dir.z();
  y[0] = S(kShC0);
  if (degree < 1) return y;
  y[1] = -S(kShC1) * yy;
  y[2] = S(kShC1) * z;
  y[3] = -S(kShC1) * x;
  if (degree < 2) return y;
  const S xx = x * x, y2 = yy * yy, zz = z * z;
  y[4] = S(kShC2[0]) * x * yy;
  y[5] = S(kShC2[1]) * yy * z;
  y[6] = S(kShC2[2]) * (S(2) * zz - xx - y2);
  y[7] = S(kShC2[3]) * x * z;
  y[8] = S(kShC2[4]) * (xx - y2);
  if (degree < 3) return y;
  y[9] = S(kShC3[0]) * yy * (S(3) * xx - y2);
  y[10] = S(kShC3[1]) * x * yy * z;
  y[11] = S(kShC3[2]) * yy * (S(4) * zz - xx - y2);
  y[12] = S(kShC3[3]) * z * (S(2) * zz - S(3) * xx - S(3) * y2);
  y[13] = S(kShC3[4]) * x * (S(4) * zz - xx - y2);
  y[14] = S(kShC3[5]) * z * (xx - y2);
  y[15] = S(kShC3[6]) * x * (xx - S(3) * y2);
  return y;
}

/// d Y_k / d dir, treating the direction components as independent variables.
template <typename S>
Eigen::Matrix<S, 16, 3> sh_basis_jacobian(const Vec3<S>& dir, int degree) {
  Eigen::Matrix<S, 16, 3> j = Eigen::Matrix<S, 16, 3>::Zero();
  const S x = dir.x(), y = dir.y(), z = dir.z();
  if (degree < 1) return j;
  j.row(1) << S(0), -S(kShC1), S(0);
  j.row(2) << S(0), S(0), S(kShC1);
  j.row(3) << -S(kShC1), S(0), S(0);
  if (degree < 2) return j;
  const S xx = x * x, yy = y * y, zz = z * z;
  const S a0 = S(kShC2[0]), a1 = S(kShC2[1]), a2 = S(kShC2[2]), a3 = S(kShC2[3]), a4 = S(kShC2[4]);
  j.row(4) << a0 * y, a0 * x, S(0);
  j.row(5) << S(0), a1 * z, a1 * y;
  j.row(6) << -S(2) * a2 * x, -S(2) * a2 * y, S(4) * a2 * z;
  j.row(7) << a3 * z, S(0), a3 * x;
  j.row(8) << S(2) * a4 * x, -S(2) * a4 * y, S(0);
  if (degree < 3) return j;
  const S b0 = S(kShC3[0]), b1 = S(kShC3[1]), b2 = S(kShC3[2]), b3 = S(kShC3[3]), b4 = S(kShC3[4]),
          b5 = S(kShC3[5]), b6 = S(kShC3[6]);
  j.row(9) << S(6) * b0 * x * y, b0 * (S(3) * xx - S(3) * yy), S(0);
  j.row(10) << b1 * y * z, b1 * x * z, b1 * x * y;
  j.row(11) << -S(2) * b2 * x * y, b2 * (S(4) * zz - xx - S(3) * yy), S(8) * b2 * y * z;
  j.row(12) << -S(6) * b3 * x * z, -S(6) * b3 * y * z, b3 * (S(6) * zz - S(3) * xx - S(3) * yy);
  j.row(13) << b4 * (S(4) * zz - S(3) * xx - yy), -S(2) * b4 * x * y, S(8) * b4 * x * z;
  j.row(14) << S(2) * b5 * x * z, -S(2) * b5 * y * z, b5 * (xx - yy);
  j.row(15) << b6 * (S(3) * xx - S(3) * yy), -S(6) * b6 * x * y, S(0);
  return j;
}

/// Unclamped color 0.5 + sum_k Y_k(dir) * coeffs.row(k). `coeffs` is K x 3 (one row per basis function).
template <typename S, typename Derived>
Vec3<S> eval_sh_color_unclamped(const Eigen::MatrixBase<Derived>& coeffs, const Vec3<S>& dir) {
  const int k = int(coeffs.rows());
  int degree = 0;
  while (sh_coeff_count(degree) < k) ++degree;
  const Eigen::Matrix<S, 16, 1> y = sh_basis(dir, degree);
  Vec3<S> c = Vec3<S>::Constant(S(0.5));
  for (int i = 0; i < k; ++i) c += y[i] * coeffs.row(i).transpose();
  return c;
}

/// View-dependent color, clamped at zero.
template <typename S, typename Derived>
Vec3<S> eval_sh_color(const Eigen::MatrixBase<Derived>& coeffs, const Vec3<S>& dir) {
  return eval_sh_color_unclamped<S>(coeffs, dir).cwiseMax(S(0));
}

/// Mahalanobis exponent -1/2 d^T conic d for d = pixel - mean.
template <typename S>
S gaussian_power(const Vec3<S>& conic, const Vec2<S>& d) {
  return S(-0.5) * (conic[0] * d.x() * d.x() + conic[2] * d.y() * d.y()) - conic[1] * d.x() * d.y();
}

/// alpha = min(alpha_max, o * exp(-1/2 d^T conic d)).
template <typename S>
S eval_alpha(const Projected2D<S>& p, S opacity, const Vec2<S>& pixel, S alpha_max = S(0.99)) {
  const S power = gaussian_power(p.conic, Vec2<S>(pixel - p.mean2d));
  return std::min(alpha_max, opacity * std::exp(std::min(power, S(0))));
}

}  // namespace bsplat
