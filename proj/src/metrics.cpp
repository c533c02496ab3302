#include "bsplat/metrics.hpp"

#include <cmath>

#include "bsplat/gaussian_set.hpp"

namespace bsplat {

template <typename S>
double psnr(const Image<S>& a, const Image<S>& b) {
  require_same_shape(a, b, "psnr");
  if (a.data.empty()) throw InputError("psnr: empty images");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = double(a.data[i]) - double(b.data[i]);
    sum += d * d;
  }
  const double mse = sum / double(a.data.size());
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(1.0 / mse);
}

std::size_t bytes_per_gaussian(int sh_degree, std::size_t scalar_bytes) {
  std::size_t params = 0;
  for (int g = 0; g < kParamGroupCount; ++g) params += std::size_t(GaussianSet<float>::group_columns(ParamGroup(g), sh_degree));
  // grad_pos_accum, grad_color_accum, importance, pos_grad_accum (3) as scalars; view_count and age as ints.
  const std::size_t stats = 6 * scalar_bytes + 2 * sizeof(int);
  return 3 * params * scalar_bytes + stats;
}

template double psnr(const Image<float>&, const Image<float>&);
template double psnr(const Image<double>&, const Image<double>&);

}  // namespace bsplat
