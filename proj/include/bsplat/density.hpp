#pragma once

// Memory-bounded density control. Growth (clone/split ranked by the hybrid
// position+color gradient score, with clones nudged along their accumulated
// position gradient), error-driven compensation, opacity pruning and
// importance-ranked budget pruning, all under a hard primitive budget.

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bsplat/backward.hpp"
#include "bsplat/optimizer.hpp"
#include "bsplat/rasterizer.hpp"

namespace bsplat {

enum class BudgetMode {
  kIterative,  // grow, compensate and prune under the budget at every step
  kOneShot,    // densify without the budget, prune to it once at densify_end
};

struct BudgetPolicy {
  std::size_t budget = 100000;
  long grow_interval = 50;
  long budget_prune_interval = 100;
  long densify_begin = 500;
  long densify_end = 10000;
  long compensate_begin = 10000;
  long compensate_end = 15000;
  long compensate_interval = 100;
  int top_k = 100;
  double opacity_threshold = 0.005;
  /// Primitives whose largest axis exceeds this fraction of the scene extent are split.
  double split_scale_fraction = 0.01;
  /// At most this fraction of the budget is added per growth event.
  double growth_cap_fraction = 0.05;
  double grow_threshold = 2e-4;
  /// Weight of the color-gradient channel; 0 calibrates it at the first growth event.
  double color_balance = 0.0;
  /// Clone displacement = shift_scale * accumulated position gradient.
  double shift_scale = -1.0;
  double compensation_opacity = 0.1;
  /// During the densify window, each budget-prune event at full budget frees this
  /// fraction of the budget (lowest importance first) for the next growth event.
  double recycle_fraction = 0.0;
  ContributionMode importance_mode = ContributionMode::kAlphaTau;
  bool enable_growth = true;
  bool enable_compensation = true;
  BudgetMode mode = BudgetMode::kIterative;

  /// Throws ConfigError when intervals, windows or the budget are inconsistent.
  void validate(long total_iterations, std::size_t initial_count) const;
};

/// One structural event, written as a line of the event log.
struct StructuralEvent {
  long iteration = 0;
  std::string kind;
  std::size_t before = 0;
  std::size_t after = 0;
  double threshold = 0.0;

  std::string to_json_line() const;
};

struct GrowResult {
  std::size_t cloned = 0;
  std::size_t split = 0;
  std::vector<int> clone_ids;   // rows of the shifted copies after the event
  std::vector<int> parent_ids;  // rows of their parents after the event
};

/// Clones or splits the highest-scoring primitives above `policy.grow_threshold`.
/// At most ceil(growth_cap_fraction * budget) are selected and, when `enforce_budget`,
/// never more than budget - size. Clones are shifted by shift_new; split parents are replaced
/// by two children with scales divided by 1.6 sampled from the parent's density.
template <typename S>
GrowResult grow(ModelState<S>& model, const ScalarVector<S>& scores, const BudgetPolicy& policy, S scene_extent,
                std::mt19937_64& rng, bool enforce_budget = true);

/// Moves each clone by eta * (accumulated position gradient of its parent), with the
/// displacement length clamped to the parent's largest scale axis.
template <typename S>
void shift_new(GaussianSet<S>& set, std::span<const int> clone_ids, std::span<const int> parent_ids, S eta);

/// Removes every primitive with opacity below `threshold`. Returns the number removed.
template <typename S>
std::size_t opacity_prune(ModelState<S>& model, S threshold);

/// Max over all rays of all `cameras` of the per-ray contribution (see ContributionMode).
template <typename S>
ScalarVector<S> importance_scores(const GaussianSet<S>& set, std::span<const Camera<S>> cameras,
                                  const RenderSettings& settings);

/// Rows removed by a prune to `budget`: the size - budget smallest by
/// (score, opacity, row), ascending. Empty when size <= budget.
template <typename S>
std::vector<int> least_important(const GaussianSet<S>& set, const ScalarVector<S>& scores, std::size_t budget);

/// Removes least_important(set, scores, budget). Returns the removed rows.
template <typename S>
std::vector<int> budget_prune(ModelState<S>& model, const ScalarVector<S>& scores, std::size_t budget);

template <typename S>
struct CompensationEntry {
  Vec3<S> position;
  Vec3<S> color;
  int view = 0;
};

template <typename S>
using CompensationBuffer = std::vector<CompensationEntry<S>>;

/// Appends the back-projections of the top-k pixels of `grads.pixel_error_map`
/// (ties in row-major order, zero-error pixels ignored). Returns the number appended.
template <typename S>
std::size_t collect_compensation(const RenderOutput<S>& forward, const GradientBundle<S>& grads,
                                 const Image<S>& target, const Camera<S>& cam, CompensationBuffer<S>& buffer, int k);

/// Spawns one primitive per buffered entry: DC color equal to the stored color,
/// opacity `opacity`, isotropic scale equal to the distance to the nearest existing
/// center, identity rotation. Clears the buffer. Returns the number added.
template <typename S>
std::size_t flush_compensation(ModelState<S>& model, CompensationBuffer<S>& buffer, S opacity, S fallback_scale);

/// Runs the scheduled structural work at the end of each training iteration.
template <typename S>
class DensityController {
 public:
  DensityController(BudgetPolicy policy, S scene_extent, std::vector<Camera<S>> train_cameras,
                    RenderSettings render_settings, std::uint64_t seed);

  /// Whether gradient statistics should be accumulated for iteration t.
  bool collects_stats(long t) const;

  /// Executes growth/compensation/pruning scheduled for iteration t.
  void end_iteration(ModelState<S>& model, long t, const RenderOutput<S>& forward, const GradientBundle<S>& grads,
                     const Image<S>& target, const Camera<S>& cam);

  const std::vector<StructuralEvent>& events() const { return events_; }
  std::size_t peak_size() const { return peak_size_; }
  S color_balance() const { return beta_; }
  const CompensationBuffer<S>& buffer() const { return buffer_; }
  const BudgetPolicy& policy() const { return policy_; }

 private:
  void record(long t, const char* kind, std::size_t before, std::size_t after, double threshold = 0.0);
  void prune_to(ModelState<S>& model, long t, std::size_t target, const char* kind);

  BudgetPolicy policy_;
  S extent_;
  std::vector<Camera<S>> cameras_;
  RenderSettings render_settings_;
  std::mt19937_64 rng_;
  S beta_ = S(0);
  bool beta_ready_ = false;
  CompensationBuffer<S> buffer_;
  std::vector<StructuralEvent> events_;
  std::size_t peak_size_ = 0;
};

}  // namespace bsplat
