#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "bsplat/backward.hpp"
#include "bsplat/gaussian_set.hpp"

namespace bsplat {

struct LearningRates {
  double position_init = 1.6e-4;
  double position_final = 1.6e-6;
  long position_steps = 30000;
  /// Multiplier on the position rate, usually the scene extent.
  double position_scale = 1.0;
  double sh_dc = 2.5e-3;
  double sh_rest = 2.5e-3 / 20.0;
  double opacity = 5e-2;
  double log_scale = 5e-3;
  double rotation = 1e-3;

  /// Exponential decay from position_init to position_final over position_steps.
  double position_at(long iteration) const;
  double for_group(ParamGroup g, long iteration) const;
};

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-15;
};

/// First and second moments per parameter group, row-aligned with a GaussianSet.
template <typename S>
struct AdamState {
  std::array<ParamMatrix<S>, kParamGroupCount> first, second;
  long step = 0;
  std::uint64_t aligned_stamp = 0;

  static AdamState matching(const GaussianSet<S>& set);

  bool aligned_with(const GaussianSet<S>& set) const {
    return aligned_stamp == set.structure_stamp() && first[0].rows() == set.size();
  }
  void require_aligned(const GaussianSet<S>& set) const {
    if (!aligned_with(set)) throw ContractError("optimizer state is not row-aligned with the Gaussian set");
  }
  std::size_t bytes() const;
};

/// A Gaussian set plus its optimizer state. Structural edits go through here
/// so both stay row-aligned.
template <typename S>
struct ModelState {
  GaussianSet<S> set;
  AdamState<S> adam;

  ModelState() : adam(AdamState<S>::matching(set)) {}
  explicit ModelState(GaussianSet<S> s) : set(std::move(s)), adam(AdamState<S>::matching(set)) {}

  Eigen::Index size() const { return set.size(); }
  void keep(std::span<const int> rows);
  void remove_where(const std::vector<bool>& remove);
  /// Appends rows with zero moments and zero statistics.
  void append(const GaussianSet<S>& rows);
};

/// One bias-corrected Adam update of every parameter group. Quaternions are
/// renormalized afterwards. Throws ContractError on misalignment.
template <typename S>
void adam_step(ModelState<S>& model, const GradientBundle<S>& grads, const LearningRates& rates, long iteration,
               const AdamSettings& settings = {});

/// Lowers every opacity to min(current, reset_value) and zeroes the opacity
/// moments; optionally also zeroes the position moments.
template <typename S>
void reset_opacity(ModelState<S>& model, S reset_value, bool reset_position_moments = false);

}  // namespace bsplat
