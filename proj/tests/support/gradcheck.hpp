#pragma once

// Central-difference check of every parameter gradient of
// render -> loss_and_grad -> backward, in double precision.

#include <random>
#include <string>
#include <vector>

#include "bsplat/backward.hpp"
#include "bsplat/loss.hpp"
#include "bsplat/rasterizer.hpp"
#include "support/oracles.hpp"

namespace bsplat::oracle {

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst_rel = 0.0;  // over entries with magnitude above 1e-6
  double worst_abs = 0.0;
  double largest = 0.0;  // largest |analytic| seen, to show the check is not vacuous
  std::string first_failure;
};

/// Target = rendered image + random offsets of magnitude >= 0.05, so the L1
/// term stays differentiable under the finite-difference step.
inline Image<double> offset_target(const Image<double>& rendered, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.05, 0.2);
  std::bernoulli_distribution sign(0.5);
  Image<double> t = rendered;
  for (double& v : t.data) v += sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

inline double scene_loss(const GaussianSet<double>& set, const Camera<double>& cam, const Image<double>& target,
                         const RenderSettings& settings, double lambda) {
  RenderSettings s = settings;
  s.keep_records = false;
  return loss_and_grad(render(set, cam, s).color, target, lambda).loss;
}

inline GradCheckResult check_gradients(GaussianSet<double> set, const Camera<double>& cam, const Image<double>& target,
                                       const RenderSettings& settings, double lambda, double step, double rel_tol,
                                       double abs_floor) {
  const auto fwd = render(set, cam, settings);
  const auto loss = loss_and_grad(fwd.color, target, lambda);
  const auto grads = backward(set, fwd, loss.grad);
  static const char* names[] = {"position", "rotation", "log_scale", "opacity", "sh_dc", "sh_rest"};
  GradCheckResult r;
  for (int g = 0; g < kParamGroupCount; ++g) {
    ParamMatrix<double>& p = set.param(ParamGroup(g));
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      for (Eigen::Index j = 0; j < p.cols(); ++j) {
        const double saved = p(i, j);
        const double numeric = central_difference(
            [&](double v) {
              p(i, j) = v;
              set.touch();
              return scene_loss(set, cam, target, settings, lambda);
            },
            saved, step);
        p(i, j) = saved;
        set.touch();
        const double analytic = grads.grad(ParamGroup(g))(i, j);
        ++r.checked;
        const double diff = std::abs(analytic - numeric);
        const double mag = std::max(std::abs(analytic), std::abs(numeric));
        if (mag > 1e-6) r.worst_rel = std::max(r.worst_rel, diff / mag);
        r.worst_abs = std::max(r.worst_abs, diff);
        r.largest = std::max(r.largest, std::abs(analytic));
        if (!gradient_close(analytic, numeric, rel_tol, abs_floor)) {
          if (r.failed == 0)
            r.first_failure = std::string(names[g]) + "[" + std::to_string(i) + "," + std::to_string(j) +
                              "] analytic " + std::to_string(analytic) + " numeric " + std::to_string(numeric);
          ++r.failed;
        }
      }
    }
  }
  return r;
}

}  // namespace bsplat::oracle
