#pragma once

// Checkpoints in the common 3DGS PLY layout: x y z nx ny nz f_dc_0..2
// f_rest_* opacity scale_0..2 rot_0..3, binary little-endian float32.
// f_rest is channel-major: all red coefficients, then green, then blue.

#include <filesystem>

#include "bsplat/gaussian_set.hpp"

namespace bsplat {

template <typename S>
void save_checkpoint(const GaussianSet<S>& set, const std::filesystem::path& path);

/// Throws IoError: kMissingFile, kMalformed (header, payload, non-finite values),
/// kSchema (missing property or an f_rest count that matches no SH degree).
/// Quaternions are renormalized; an all-zero quaternion becomes the identity.
template <typename S>
GaussianSet<S> load_checkpoint(const std::filesystem::path& path);

}  // namespace bsplat
