#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "bsplat/errors.hpp"

namespace bsplat {

/// Interleaved row-major image, linear-light values.
template <typename S>
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<S> data;

  Image() = default;
  Image(int w, int h, int c, S fill = S(0)) : width(w), height(h), channels(c), data(std::size_t(w) * h * c, fill) {}

  std::size_t pixel_count() const { return std::size_t(width) * height; }
  std::size_t index(int x, int y, int c = 0) const { return (std::size_t(y) * width + x) * channels + c; }
  S& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  const S& at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

  bool same_shape(const Image& o) const { return width == o.width && height == o.height && channels == o.channels; }

  template <typename T>
  Image<T> cast() const {
    Image<T> out(width, height, channels);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = T(data[i]);
    return out;
  }
};

template <typename S>
void require_same_shape(const Image<S>& a, const Image<S>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw InputError(std::string(what) + ": image dimensions differ (" + std::to_string(a.width) + "x" +
                     std::to_string(a.height) + "x" + std::to_string(a.channels) + " vs " + std::to_string(b.width) +
                     "x" + std::to_string(b.height) + "x" + std::to_string(b.channels) + ")");
  }
}

}  // namespace bsplat
