#pragma once

#include "bsplat/image.hpp"

namespace bsplat {

/// Mean SSIM over all pixels and channels: 11x11 Gaussian window (sigma 1.5),
/// zero padding, C1 = 0.01^2, C2 = 0.03^2.
template <typename S>
S ssim(const Image<S>& a, const Image<S>& b);

/// Mean SSIM and its gradient with respect to `a`.
template <typename S>
S ssim_with_grad(const Image<S>& a, const Image<S>& b, Image<S>& grad_a);

template <typename S>
struct LossResult {
  S loss = S(0);
  S l1 = S(0);
  S ssim = S(0);
  Image<S> grad;     // d loss / d rendered
  Image<S> grad_l1;  // L1 term only, (1 - lambda) * sign / N
};

/// loss = (1 - lambda) * mean|a - b| + lambda * (1 - SSIM(a, b)). With lambda == 0 the SSIM
/// term is skipped entirely.
template <typename S>
LossResult<S> loss_and_grad(const Image<S>& rendered, const Image<S>& target, S lambda);

}  // namespace bsplat
