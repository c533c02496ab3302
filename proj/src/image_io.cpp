#include "bsplat/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace bsplat {

namespace {

const std::array<float, 256>& decode_table() {
  static const std::array<float, 256> table = [] {
    std::array<float, 256> t{};
    for (int i = 0; i < 256; ++i) t[std::size_t(i)] = float(srgb_to_linear(i / 255.0));
    return t;
  }();
  return table;
}

void require_exists(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path))
    throw IoError(IoError::Kind::kMissingFile, "file not found: " + path.string());
}

}  // namespace

double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double l) {
  l = std::clamp(l, 0.0, 1.0);
  return l <= 0.0031308 ? 12.92 * l : 1.055 * std::pow(l, 1.0 / 2.4) - 0.055;
}

std::uint8_t encode_srgb8(double linear) {
  if (!(linear == linear)) return 0;
  return std::uint8_t(std::lround(linear_to_srgb(linear) * 255.0));
}

float decode_srgb8(std::uint8_t code) { return decode_table()[code]; }

template <typename S>
Image<S> quantize_srgb8(const Image<S>& linear) {
  Image<S> out(linear.width, linear.height, linear.channels);
  for (std::size_t i = 0; i < linear.data.size(); ++i) out.data[i] = S(decode_srgb8(encode_srgb8(double(linear.data[i]))));
  return out;
}

Image<float> read_png(const std::filesystem::path& path) {
  require_exists(path);
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw IoError(IoError::Kind::kMalformed, "cannot decode PNG " + path.string() + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError(IoError::Kind::kMalformed, "cannot decode PNG " + path.string() + ": " + img.message);
  }
  Image<float> out(int(img.width), int(img.height), 3);
  for (std::size_t i = 0; i < buffer.size(); ++i) out.data[i] = decode_srgb8(buffer[i]);
  return out;
}

template <typename S>
void write_png(const std::filesystem::path& path, const Image<S>& linear) {
  if (linear.channels != 1 && linear.channels < 3) throw InputError("write_png: need 1 or at least 3 channels");
  const int out_channels = linear.channels == 1 ? 1 : 3;
  std::vector<std::uint8_t> buffer(linear.pixel_count() * std::size_t(out_channels));
  for (std::size_t p = 0; p < linear.pixel_count(); ++p)
    for (int c = 0; c < out_channels; ++c)
      buffer[p * std::size_t(out_channels) + std::size_t(c)] = encode_srgb8(double(linear.data[p * std::size_t(linear.channels) + std::size_t(c)]));
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = png_uint_32(linear.width);
  img.height = png_uint_32(linear.height);
  img.format = out_channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buffer.data(), 0, nullptr))
    throw IoError(IoError::Kind::kWrite, "cannot write PNG " + path.string() + ": " + img.message);
}

template <typename S>
void write_pfm(const std::filesystem::path& path, const Image<S>& image) {
  if (image.channels != 1) throw InputError("write_pfm: depth images must have one channel");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(IoError::Kind::kWrite, "cannot open " + path.string() + " for writing");
  out << "Pf\n" << image.width << ' ' << image.height << "\n-1.0\n";
  std::vector<float> row(std::size_t(image.width));
  for (int y = image.height - 1; y >= 0; --y) {
    for (int x = 0; x < image.width; ++x) row[std::size_t(x)] = float(image.at(x, y));
    out.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size() * sizeof(float)));
  }
  if (!out) throw IoError(IoError::Kind::kWrite, "failed writing " + path.string());
}

Image<float> read_pfm(const std::filesystem::path& path) {
  require_exists(path);
  std::ifstream in(path, std::ios::binary);
  std::string magic;
  int w = 0, h = 0;
  double scale = 0.0;
  in >> magic >> w >> h >> scale;
  in.get();
  if (!in || (magic != "Pf" && magic != "PF") || w < 1 || h < 1 || scale == 0.0)
    throw IoError(IoError::Kind::kMalformed, "malformed PFM header in " + path.string());
  const int channels = magic == "PF" ? 3 : 1;
  const bool little = scale < 0.0;
  Image<float> out(w, h, channels);
  std::vector<std::uint32_t> row(std::size_t(w) * std::size_t(channels));
  for (int y = h - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size() * 4));
    if (!in) throw IoError(IoError::Kind::kMalformed, "truncated PFM payload in " + path.string());
    for (std::size_t i = 0; i < row.size(); ++i) {
      std::uint32_t bits = row[i];
      if (little != (std::endian::native == std::endian::little)) bits = __builtin_bswap32(bits);
      out.data[std::size_t(y) * row.size() + i] = std::bit_cast<float>(bits);
    }
  }
  return out;
}

template Image<float> quantize_srgb8(const Image<float>&);
template Image<double> quantize_srgb8(const Image<double>&);
template void write_png(const std::filesystem::path&, const Image<float>&);
template void write_png(const std::filesystem::path&, const Image<double>&);
template void write_pfm(const std::filesystem::path&, const Image<float>&);
template void write_pfm(const std::filesystem::path&, const Image<double>&);

}  // namespace bsplat
