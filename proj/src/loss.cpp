#include "bsplat/loss.hpp"

#include <array>
#include <cmath>

namespace bsplat {
namespace {

constexpr int kWindow = 11;
constexpr int kHalf = kWindow / 2;

template <typename S>
std::array<S, kWindow> gaussian_window() {
  std::array<S, kWindow> w{};
  S sum = S(0);
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kHalf;
    w[i] = S(std::exp(-d * d / (2.0 * 1.5 * 1.5)));
    sum += w[i];
  }
  for (auto& v : w) v /= sum;
  return w;
}

/// Separable zero-padded "same" filter of a single-channel plane.
template <typename S>
std::vector<S> blur(const std::vector<S>& in, int width, int height) {
  static const std::array<S, kWindow> w = gaussian_window<S>();
  std::vector<S> tmp(in.size(), S(0)), out(in.size(), S(0));
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      S acc = S(0);
      for (int k = -kHalf; k <= kHalf; ++k) {
        const int xx = x + k;
        if (xx >= 0 && xx < width) acc += w[k + kHalf] * in[std::size_t(y) * width + xx];
      }
      tmp[std::size_t(y) * width + x] = acc;
    }
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      S acc = S(0);
      for (int k = -kHalf; k <= kHalf; ++k) {
        const int yy = y + k;
        if (yy >= 0 && yy < height) acc += w[k + kHalf] * tmp[std::size_t(yy) * width + x];
      }
      out[std::size_t(y) * width + x] = acc;
    }
  return out;
}

template <typename S>
S ssim_impl(const Image<S>& a, const Image<S>& b, Image<S>* grad_a) {
  require_same_shape(a, b, "ssim");
  const S c1 = S(0.01 * 0.01), c2 = S(0.03 * 0.03);
  const int w = a.width, h = a.height;
  const std::size_t np = a.pixel_count();
  const S total = S(np * std::size_t(a.channels));
  if (grad_a) *grad_a = Image<S>(w, h, a.channels);

  S sum = S(0);
  std::vector<S> x(np), y(np), xx(np), yy(np), xy(np);
  for (int c = 0; c < a.channels; ++c) {
    for (std::size_t p = 0; p < np; ++p) {
      x[p] = a.data[p * a.channels + c];
      y[p] = b.data[p * a.channels + c];
      xx[p] = x[p] * x[p];
      yy[p] = y[p] * y[p];
      xy[p] = x[p] * y[p];
    }
    const auto mu_x = blur(x, w, h), mu_y = blur(y, w, h);
    const auto e_xx = blur(xx, w, h), e_yy = blur(yy, w, h), e_xy = blur(xy, w, h);

    std::vector<S> d_mu(grad_a ? np : 0), d_exx(grad_a ? np : 0), d_exy(grad_a ? np : 0);
    for (std::size_t p = 0; p < np; ++p) {
      const S a1 = S(2) * mu_x[p] * mu_y[p] + c1;
      const S a2 = S(2) * (e_xy[p] - mu_x[p] * mu_y[p]) + c2;
      const S b1 = mu_x[p] * mu_x[p] + mu_y[p] * mu_y[p] + c1;
      const S b2 = (e_xx[p] - mu_x[p] * mu_x[p]) + (e_yy[p] - mu_y[p] * mu_y[p]) + c2;
      const S s = (a1 * a2) / (b1 * b2);
      sum += s;
      if (grad_a) {
        const S inv = S(1) / (b1 * b2);
        d_mu[p] = S(2) * mu_y[p] * (a2 - a1) * inv - S(2) * mu_x[p] * s * (b2 - b1) * inv;
        d_exx[p] = -s / b2;
        d_exy[p] = S(2) * a1 * inv;
      }
    }
    if (grad_a) {
      const auto g_mu = blur(d_mu, w, h), g_exx = blur(d_exx, w, h), g_exy = blur(d_exy, w, h);
      for (std::size_t p = 0; p < np; ++p) {
        grad_a->data[p * a.channels + c] = (g_mu[p] + S(2) * x[p] * g_exx[p] + y[p] * g_exy[p]) / total;
      }
    }
  }
  return sum / total;
}

}  // namespace

template <typename S>
S ssim(const Image<S>& a, const Image<S>& b) {
  return ssim_impl<S>(a, b, nullptr);
}

template <typename S>
S ssim_with_grad(const Image<S>& a, const Image<S>& b, Image<S>& grad_a) {
  return ssim_impl<S>(a, b, &grad_a);
}

template <typename S>
LossResult<S> loss_and_grad(const Image<S>& rendered, const Image<S>& target, S lambda) {
  require_same_shape(rendered, target, "loss");
  LossResult<S> r;
  const S n = S(rendered.data.size());
  r.grad_l1 = Image<S>(rendered.width, rendered.height, rendered.channels);
  S l1 = S(0);
  for (std::size_t i = 0; i < rendered.data.size(); ++i) {
    const S d = rendered.data[i] - target.data[i];
    l1 += std::abs(d);
    const S sign = d > S(0) ? S(1) : (d < S(0) ? S(-1) : S(0));
    r.grad_l1.data[i] = (S(1) - lambda) * sign / n;
  }
  r.l1 = l1 / n;
  r.grad = r.grad_l1;
  r.loss = (S(1) - lambda) * r.l1;
  if (lambda != S(0)) {
    Image<S> g;
    r.ssim = ssim_with_grad(rendered, target, g);
    r.loss += lambda * (S(1) - r.ssim);
    for (std::size_t i = 0; i < r.grad.data.size(); ++i) r.grad.data[i] -= lambda * g.data[i];
  } else {
    r.ssim = ssim(rendered, target);
  }
  return r;
}

template float ssim(const Image<float>&, const Image<float>&);
template double ssim(const Image<double>&, const Image<double>&);
template float ssim_with_grad(const Image<float>&, const Image<float>&, Image<float>&);
template double ssim_with_grad(const Image<double>&, const Image<double>&, Image<double>&);
template LossResult<float> loss_and_grad(const Image<float>&, const Image<float>&, float);
template LossResult<double> loss_and_grad(const Image<double>&, const Image<double>&, double);

}  // namespace bsplat
