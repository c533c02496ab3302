#include "bsplat/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "bsplat/image_io.hpp"
#include "bsplat/rasterizer.hpp"

namespace bsplat {

namespace {

double to_float(double v) { return double(float(v)); }

Vec3<double> random_in_ball(std::mt19937_64& rng, double radius) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  while (true) {
    const Vec3<double> p(u(rng), u(rng), u(rng));
    if (p.squaredNorm() <= 1.0) return radius * p;
  }
}

Gaussian<double> make_gaussian(const Vec3<double>& pos, const Vec4<double>& rot, const Vec3<double>& scale,
                               double opacity, const Vec3<double>& color) {
  Gaussian<double> g;
  g.position = pos.unaryExpr(&to_float);
  g.rotation = rot.normalized().unaryExpr(&to_float);
  g.log_scale = scale.array().log().matrix().unaryExpr(&to_float);
  g.opacity_logit = to_float(logit(opacity));
  g.sh = Eigen::Matrix<double, Eigen::Dynamic, 3>::Zero(1, 3);
  g.sh.row(0) = ((color.array() - 0.5) / kShC0).matrix().transpose().unaryExpr(&to_float);
  return g;
}

}  // namespace

Camera<double> look_at_camera(const Vec3<double>& center, const Vec3<double>& target, int width, int height,
                              double focal, int id) {
  const Vec3<double> forward = (target - center).normalized();
  Vec3<double> up(0.0, 0.0, 1.0);
  if (std::abs(forward.dot(up)) > 0.999) up = Vec3<double>(0.0, 1.0, 0.0);
  const Vec3<double> right = forward.cross(up).normalized();
  const Vec3<double> down = forward.cross(right);
  Camera<double> cam;
  cam.rotation.row(0) = right.transpose();
  cam.rotation.row(1) = down.transpose();
  cam.rotation.row(2) = forward.transpose();
  cam.translation = -cam.rotation * center;
  cam.fx = cam.fy = focal;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  cam.width = width;
  cam.height = height;
  cam.id = id;
  return cam;
}

SyntheticScene generate_synthetic(const SyntheticOptions& o) {
  if (o.n_gaussians < 1) throw InputError("generate_synthetic: need at least one Gaussian");
  if (o.n_cameras < 2) throw InputError("generate_synthetic: need at least two cameras");
  if (o.width < 1 || o.height < 1) throw InputError("generate_synthetic: resolution must be positive");

  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  SyntheticScene scene;
  scene.truth = GaussianSet<double>(0);
  std::vector<bool> in_init;

  if (o.with_patch && o.n_gaussians >= 2) {
    // Patch first so it wins depth ties against its host.
    const Vec3<double> at = random_in_ball(rng, 0.3);
    const Vec4<double> identity(1.0, 0.0, 0.0, 0.0);
    scene.truth.push_back(make_gaussian(at, identity, Vec3<double>::Constant(0.05), 0.95, Vec3<double>(1.0, 0.95, 0.3)));
    scene.truth.push_back(make_gaussian(at, identity, Vec3<double>::Constant(0.3), 0.9, Vec3<double>(0.05, 0.1, 0.2)));
    scene.patch_position = scene.truth.position(0);
    in_init = {false, true};
  }
  while (scene.truth.size() < o.n_gaussians) {
    const Vec3<double> pos = random_in_ball(rng, 1.0);
    const Vec4<double> rot(normal(rng), normal(rng), normal(rng), normal(rng));
    Vec3<double> scale;
    for (int a = 0; a < 3; ++a) scale[a] = std::exp(std::log(0.04) + u01(rng) * std::log(0.2 / 0.04));
    const double opacity = 0.5 + 0.45 * u01(rng);
    const Vec3<double> color(0.05 + 0.9 * u01(rng), 0.05 + 0.9 * u01(rng), 0.05 + 0.9 * u01(rng));
    scene.truth.push_back(make_gaussian(pos, rot.norm() > 1e-9 ? rot : Vec4<double>(1, 0, 0, 0), scale, opacity, color));
    in_init.push_back(true);
  }

  Dataset& ds = scene.dataset;
  const double focal = o.focal_factor * o.width;
  RenderSettings settings;
  settings.background = o.background;
  for (int i = 0; i < o.n_cameras; ++i) {
    const double theta = 2.0 * std::numbers::pi * i / o.n_cameras;
    const double elevation = (i % 2 == 0 ? 0.25 : -0.25);
    const Vec3<double> center = o.ring_radius * Vec3<double>(std::cos(theta) * std::cos(elevation),
                                                             std::sin(theta) * std::cos(elevation), std::sin(elevation));
    ds.cameras.push_back(look_at_camera(center, Vec3<double>::Zero(), o.width, o.height, focal, i));
    ds.is_test.push_back(o.test_every > 0 && i % o.test_every == o.test_every / 2);
    const RenderOutput<double> out = render(scene.truth, ds.cameras.back(), settings);
    ds.images.push_back(quantize_srgb8(out.color).cast<float>());
  }
  ds.compute_extent();

  for (Eigen::Index i = 0; i < scene.truth.size(); ++i) {
    if (!in_init[std::size_t(i)]) continue;
    Vec3<double> p = scene.truth.position(i);
    for (int a = 0; a < 3; ++a) p[a] += o.init_noise * normal(rng);
    ds.points.push_back(p);
    const Vec3<double> color = (0.5 + kShC0 * scene.truth.sh_dc.row(i).array()).matrix().transpose();
    ds.point_colors.push_back(color.cwiseMax(0.0).cwiseMin(1.0));
  }
  ds.points_from_file = true;
  return scene;
}

}  // namespace bsplat
