#pragma once

// 8-bit sRGB PNG <-> linear float images, and PFM depth output.

#include <cstdint>
#include <filesystem>

#include "bsplat/image.hpp"

namespace bsplat {

/// Standard sRGB EOTF (encoded value in [0,1] to linear light).
double srgb_to_linear(double encoded);
/// Inverse EOTF, input clamped to [0,1].
double linear_to_srgb(double linear);

/// 8-bit sRGB code for a linear value (clamped, rounded to nearest).
std::uint8_t encode_srgb8(double linear);
/// Linear value of an 8-bit sRGB code; exact inverse of the decode used by read_png.
float decode_srgb8(std::uint8_t code);

/// Round-trips every sample through 8-bit sRGB, i.e. what write_png then read_png would return.
template <typename S>
Image<S> quantize_srgb8(const Image<S>& linear);

/// Decodes a PNG to linear RGB floats. Grayscale inputs are expanded and alpha is dropped.
/// Throws IoError(kMissingFile) when the file does not exist, IoError(kMalformed) when it cannot be decoded.
Image<float> read_png(const std::filesystem::path& path);

/// Writes the first three channels (or the single channel as gray) as 8-bit sRGB.
template <typename S>
void write_png(const std::filesystem::path& path, const Image<S>& linear);

/// Single-channel little-endian PFM ("Pf", scale -1, rows bottom to top).
template <typename S>
void write_pfm(const std::filesystem::path& path, const Image<S>& image);

/// Reads a file written by write_pfm (either endianness, one or three channels).
Image<float> read_pfm(const std::filesystem::path& path);

}  // namespace bsplat
