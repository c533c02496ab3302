#pragma once

// Reverse-mode gradients of the image loss with respect to every Gaussian
// parameter. Besides parameter gradients the pass keeps two per-Gaussian
// densification signals apart: the screen-space position gradient norm and
// the color gradient norm.

#include <vector>

#include "bsplat/gaussian_set.hpp"
#include "bsplat/image.hpp"
#include "bsplat/rasterizer.hpp"

namespace bsplat {

template <typename S>
struct GradientBundle {
  ParamMatrix<S> d_position, d_rotation, d_log_scale, d_opacity_logit, d_sh_dc, d_sh_rest;
  ParamMatrix<S> d_mean2d;           // N x 2, pixel units
  ScalarVector<S> grad_pos_2d_norm;  // |d loss / d mean2d| in normalized device units
  ScalarVector<S> grad_color_norm;   // |d loss / d color|
  std::vector<bool> visible;         // contributed to at least one pixel
  Image<S> pixel_error_map;          // H x W x 1

  ParamMatrix<S>& grad(ParamGroup g) {
    switch (g) {
      case ParamGroup::kPosition: return d_position;
      case ParamGroup::kRotation: return d_rotation;
      case ParamGroup::kLogScale: return d_log_scale;
      case ParamGroup::kOpacity: return d_opacity_logit;
      case ParamGroup::kShDc: return d_sh_dc;
      case ParamGroup::kShRest: return d_sh_rest;
    }
    return d_position;
  }
  const ParamMatrix<S>& grad(ParamGroup g) const { return const_cast<GradientBundle*>(this)->grad(g); }

  /// Zero gradients shaped for `set`.
  static GradientBundle zeros(const GaussianSet<S>& set, int width, int height);
};

/// Replays the blend records of `forward` in reverse. `dl_dcolor` is the loss
/// gradient per pixel (H x W x 3). The error map is the per-pixel norm of
/// `error_source` when given, otherwise of `dl_dcolor`.
/// Throws ContractError when `forward` was not rendered from the current state of `set`.
template <typename S>
GradientBundle<S> backward(const GaussianSet<S>& set, const RenderOutput<S>& forward, const Image<S>& dl_dcolor,
                           const Image<S>* error_source = nullptr);

/// Adds one view's densification signals and position gradients to `set.stats`.
template <typename S>
void accumulate_stats(GaussianSet<S>& set, const GradientBundle<S>& bundle);

/// Median-matching balance factor: median(mean grad_pos) / median(mean grad_color)
/// over primitives seen at least once. Returns 1 when either median is zero.
template <typename S>
S calibrate_color_balance(const TrainingStats<S>& stats);

/// Hybrid densification score: mean position-gradient norm + beta * mean color-gradient norm.
template <typename S>
ScalarVector<S> hybrid_score(const TrainingStats<S>& stats, S beta);

}  // namespace bsplat
