#pragma once

#include <cstddef>
#include <limits>

#include "bsplat/image.hpp"

namespace bsplat {

/// Returned by psnr for identical images.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// 10 log10(1 / MSE) over all samples; kPsnrIdentical when MSE is zero.
/// Throws InputError on a shape mismatch.
template <typename S>
double psnr(const Image<S>& a, const Image<S>& b);

/// Bytes charged per primitive: parameters plus two Adam moments, plus the
/// training statistics kept alongside.
std::size_t bytes_per_gaussian(int sh_degree, std::size_t scalar_bytes);

/// Modeled memory: peak primitive count x bytes per primitive + peak transient
/// render buffers (blend records) + resident image cache bytes.
class MemoryAccountant {
 public:
  MemoryAccountant(int sh_degree, std::size_t scalar_bytes)
      : per_gaussian_(bytes_per_gaussian(sh_degree, scalar_bytes)) {}

  void observe_gaussians(std::size_t count) { peak_count_ = std::max(peak_count_, count); }
  void observe_transient(std::size_t bytes) { peak_transient_ = std::max(peak_transient_, bytes); }
  void observe_cache(std::size_t bytes) { peak_cache_ = std::max(peak_cache_, bytes); }

  std::size_t per_gaussian() const { return per_gaussian_; }
  std::size_t peak_count() const { return peak_count_; }
  std::size_t primitive_bytes() const { return peak_count_ * per_gaussian_; }
  std::size_t peak_transient() const { return peak_transient_; }
  std::size_t peak_cache() const { return peak_cache_; }
  std::size_t peak_total() const { return primitive_bytes() + peak_transient_ + peak_cache_; }

 private:
  std::size_t per_gaussian_;
  std::size_t peak_count_ = 0;
  std::size_t peak_transient_ = 0;
  std::size_t peak_cache_ = 0;
};

}  // namespace bsplat
