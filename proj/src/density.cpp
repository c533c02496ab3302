#include "bsplat/density.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

namespace bsplat {

void BudgetPolicy::validate(long total_iterations, std::size_t initial_count) const {
  if (budget < 1) throw ConfigError("budget must be at least 1");
  if (budget < initial_count)
    throw ConfigError("budget (" + std::to_string(budget) + ") is below the initial point count (" +
                      std::to_string(initial_count) + ")");
  if (grow_interval < 1 || budget_prune_interval < 1 || compensate_interval < 1)
    throw ConfigError("grow, budget-prune and compensation intervals must be at least 1");
  if (densify_begin < 0 || densify_begin > densify_end) throw ConfigError("densify window is empty or negative");
  if (compensate_begin < 0 || compensate_begin > compensate_end) throw ConfigError("compensation window is empty or negative");
  if (enable_growth && enable_compensation && compensate_begin < densify_end)
    throw ConfigError("compensation window must start at or after the end of the densify window");
  if (top_k < 0) throw ConfigError("top_k must be non-negative");
  if (!(opacity_threshold >= 0.0 && opacity_threshold < 1.0)) throw ConfigError("opacity_threshold must be in [0, 1)");
  if (!(compensation_opacity > 0.0 && compensation_opacity < 1.0)) throw ConfigError("compensation_opacity must be in (0, 1)");
  if (!(growth_cap_fraction >= 0.0) || !(recycle_fraction >= 0.0 && recycle_fraction < 1.0) || !(color_balance >= 0.0))
    throw ConfigError("growth_cap_fraction, recycle_fraction and color_balance must be non-negative (recycle < 1)");
  (void)total_iterations;  // windows past the end of the run simply never fire
}

std::string StructuralEvent::to_json_line() const {
  nlohmann::ordered_json j;
  j["iteration"] = iteration;
  j["event"] = kind;
  j["before"] = before;
  j["after"] = after;
  j["threshold"] = threshold;
  return j.dump();
}

template <typename S>
void shift_new(GaussianSet<S>& set, std::span<const int> clone_ids, std::span<const int> parent_ids, S eta) {
  if (clone_ids.size() != parent_ids.size()) throw InputError("shift_new: clone and parent lists differ in length");
  for (std::size_t k = 0; k < clone_ids.size(); ++k) {
    const int p = parent_ids[k];
    Vec3<S> disp = eta * set.stats.pos_grad_accum.row(p).transpose();
    const S len = disp.norm();
    const S limit = set.max_scale(p);
    if (len > limit) disp *= limit / len;
    set.positions.row(clone_ids[k]) += disp.transpose();
  }
  set.touch();
}

template <typename S>
GrowResult grow(ModelState<S>& model, const ScalarVector<S>& scores, const BudgetPolicy& policy, S scene_extent,
                std::mt19937_64& rng, bool enforce_budget) {
  GaussianSet<S>& set = model.set;
  const Eigen::Index n = set.size();
  if (scores.size() != n) throw InputError("grow: score vector does not match the Gaussian set");
  GrowResult result;

  std::vector<int> candidates;
  for (Eigen::Index i = 0; i < n; ++i)
    if (scores[i] > S(policy.grow_threshold)) candidates.push_back(int(i));
  std::sort(candidates.begin(), candidates.end(),
            [&](int a, int b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });

  std::size_t take = candidates.size();
  take = std::min(take, std::size_t(std::ceil(policy.growth_cap_fraction * double(policy.budget))));
  if (enforce_budget) take = std::min(take, policy.budget > std::size_t(n) ? policy.budget - std::size_t(n) : std::size_t(0));
  if (take == 0) return result;
  candidates.resize(take);

  const S split_threshold = S(policy.split_scale_fraction) * scene_extent;
  std::vector<int> clone_parents, split_parents;
  for (int i : candidates) (set.max_scale(i) > split_threshold ? split_parents : clone_parents).push_back(i);

  // Clones: exact copies, then shifted.
  if (!clone_parents.empty()) {
    GaussianSet<S> copies(set.sh_degree());
    for (int p : clone_parents) copies.push_back(set.get(p));
    model.append(copies);
    std::vector<int> ids(clone_parents.size());
    std::iota(ids.begin(), ids.end(), int(n));
    shift_new(model.set, ids, clone_parents, S(policy.shift_scale));
    result.clone_ids = ids;
    result.parent_ids = clone_parents;
  }

  // Splits: two children drawn from the parent's density, parent removed.
  if (!split_parents.empty()) {
    std::normal_distribution<double> normal(0.0, 1.0);
    GaussianSet<S> children(set.sh_degree());
    const S shrink = std::log(S(1.6));
    for (int p : split_parents) {
      const Gaussian<S> parent = model.set.get(p);
      const Mat3<S> rot = quat_to_rotation(parent.rotation);
      const Vec3<S> scale = parent.log_scale.array().exp().matrix();
      for (int c = 0; c < 2; ++c) {
        Gaussian<S> child = parent;
        const Vec3<S> z(S(normal(rng)), S(normal(rng)), S(normal(rng)));
        child.position = parent.position + rot * scale.cwiseProduct(z);
        child.log_scale = parent.log_scale.array() - shrink;
        children.push_back(child);
      }
    }
    model.append(children);
    std::vector<bool> remove(std::size_t(model.size()), false);
    for (int p : split_parents) remove[std::size_t(p)] = true;
    model.remove_where(remove);

    // Re-index clone bookkeeping after the parents' rows were removed.
    std::vector<int> shift(remove.size(), 0);
    int removed = 0;
    for (std::size_t i = 0; i < remove.size(); ++i) {
      shift[i] = removed;
      if (remove[i]) ++removed;
    }
    for (int& id : result.clone_ids) id -= shift[std::size_t(id)];
    for (int& id : result.parent_ids) id -= shift[std::size_t(id)];
  }
  result.cloned = clone_parents.size();
  result.split = split_parents.size();
  return result;
}

template <typename S>
std::size_t opacity_prune(ModelState<S>& model, S threshold) {
  std::vector<bool> remove(std::size_t(model.size()), false);
  std::size_t count = 0;
  for (Eigen::Index i = 0; i < model.size(); ++i) {
    if (model.set.opacity(i) < threshold) {
      remove[std::size_t(i)] = true;
      ++count;
    }
  }
  if (count > 0) model.remove_where(remove);
  return count;
}

template <typename S>
ScalarVector<S> importance_scores(const GaussianSet<S>& set, std::span<const Camera<S>> cameras,
                                  const RenderSettings& settings) {
  RenderSettings s = settings;
  s.keep_records = false;
  ScalarVector<S> score = ScalarVector<S>::Zero(set.size());
  for (const Camera<S>& cam : cameras) {
    const RenderOutput<S> out = render(set, cam, s);
    for (Eigen::Index i = 0; i < set.size(); ++i) score[i] = std::max(score[i], out.max_contrib[std::size_t(i)]);
  }
  return score;
}

template <typename S>
std::vector<int> least_important(const GaussianSet<S>& set, const ScalarVector<S>& scores, std::size_t budget) {
  const std::size_t n = std::size_t(set.size());
  if (std::size_t(scores.size()) != n) throw InputError("budget_prune: score vector does not match the Gaussian set");
  if (n <= budget) return {};
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<S> opacity(n);
  for (std::size_t i = 0; i < n; ++i) opacity[i] = set.opacity(Eigen::Index(i));
  const std::size_t k = n - budget;
  std::partial_sort(order.begin(), order.begin() + std::ptrdiff_t(k), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] < scores[b];
    if (opacity[std::size_t(a)] != opacity[std::size_t(b)]) return opacity[std::size_t(a)] < opacity[std::size_t(b)];
    return a < b;
  });
  order.resize(k);
  return order;
}

template <typename S>
std::vector<int> budget_prune(ModelState<S>& model, const ScalarVector<S>& scores, std::size_t budget) {
  std::vector<int> victims = least_important(model.set, scores, budget);
  if (victims.empty()) return victims;
  std::vector<bool> remove(std::size_t(model.size()), false);
  for (int v : victims) remove[std::size_t(v)] = true;
  model.remove_where(remove);
  return victims;
}

template <typename S>
std::size_t collect_compensation(const RenderOutput<S>& fwd, const GradientBundle<S>& grads, const Image<S>& target,
                                 const Camera<S>& cam, CompensationBuffer<S>& buffer, int k) {
  const Image<S>& err = grads.pixel_error_map;
  if (err.width != fwd.width || err.height != fwd.height) throw InputError("collect_compensation: error map size mismatch");
  if (target.width != fwd.width || target.height != fwd.height || target.channels < 3)
    throw InputError("collect_compensation: target image size mismatch");
  std::vector<int> hot;
  for (std::size_t p = 0; p < err.data.size(); ++p)
    if (err.data[p] > S(0)) hot.push_back(int(p));
  const std::size_t take = std::min(hot.size(), std::size_t(std::max(k, 0)));
  std::partial_sort(hot.begin(), hot.begin() + std::ptrdiff_t(take), hot.end(), [&](int a, int b) {
    return err.data[std::size_t(a)] > err.data[std::size_t(b)] || (err.data[std::size_t(a)] == err.data[std::size_t(b)] && a < b);
  });

  std::size_t appended = 0;
  const S near = S(fwd.settings.projection.near_plane);
  for (std::size_t i = 0; i < take; ++i) {
    const int x = hot[i] % fwd.width, y = hot[i] / fwd.width;
    S depth = S(0);
    if (const auto d = dominant_depth(fwd, x, y)) depth = *d;
    else depth = fwd.depth.at(x, y);
    if (!(depth > near)) continue;
    CompensationEntry<S> e;
    e.position = cam.back_project(Vec2<S>(S(x) + S(0.5), S(y) + S(0.5)), depth);
    e.color = Vec3<S>(target.at(x, y, 0), target.at(x, y, 1), target.at(x, y, 2));
    e.view = cam.id;
    buffer.push_back(e);
    ++appended;
  }
  return appended;
}

template <typename S>
std::size_t flush_compensation(ModelState<S>& model, CompensationBuffer<S>& buffer, S opacity, S fallback_scale) {
  if (buffer.empty()) return 0;
  const GaussianSet<S>& set = model.set;
  GaussianSet<S> spawned(set.sh_degree());
  const S floor_scale = fallback_scale * S(1e-3);
  for (const CompensationEntry<S>& e : buffer) {
    S nearest = std::numeric_limits<S>::infinity();
    for (Eigen::Index i = 0; i < set.size(); ++i) nearest = std::min(nearest, (set.positions.row(i).transpose() - e.position).squaredNorm());
    const S scale = set.empty() ? fallback_scale : std::max(std::sqrt(nearest), floor_scale);
    Gaussian<S> g;
    g.position = e.position;
    g.log_scale = Vec3<S>::Constant(std::log(scale));
    g.opacity_logit = logit(opacity);
    g.sh = Eigen::Matrix<S, Eigen::Dynamic, 3>::Zero(sh_coeff_count(set.sh_degree()), 3);
    g.sh.row(0) = ((e.color.array() - S(0.5)) / S(kShC0)).matrix().transpose();
    spawned.push_back(g);
  }
  model.append(spawned);
  const std::size_t added = buffer.size();
  buffer.clear();
  return added;
}

template <typename S>
DensityController<S>::DensityController(BudgetPolicy policy, S scene_extent, std::vector<Camera<S>> train_cameras,
                                        RenderSettings render_settings, std::uint64_t seed)
    : policy_(policy), extent_(scene_extent), cameras_(std::move(train_cameras)), render_settings_(render_settings), rng_(seed) {
  render_settings_.contribution = policy_.importance_mode;
  render_settings_.keep_records = false;
}

template <typename S>
bool DensityController<S>::collects_stats(long t) const {
  return policy_.enable_growth && t <= policy_.densify_end;
}

template <typename S>
void DensityController<S>::record(long t, const char* kind, std::size_t before, std::size_t after, double threshold) {
  events_.push_back({t, kind, before, after, threshold});
}

template <typename S>
void DensityController<S>::prune_to(ModelState<S>& model, long t, std::size_t target, const char* kind) {
  if (std::size_t(model.size()) <= target) return;
  const std::size_t before = std::size_t(model.size());
  const ScalarVector<S> scores = importance_scores(model.set, std::span<const Camera<S>>(cameras_), render_settings_);
  model.set.stats.importance = scores;
  const std::vector<int> removed = budget_prune(model, scores, target);
  double cutoff = 0.0;
  for (int r : removed) cutoff = std::max(cutoff, double(scores[r]));
  record(t, kind, before, std::size_t(model.size()), cutoff);
}

template <typename S>
void DensityController<S>::end_iteration(ModelState<S>& model, long t, const RenderOutput<S>& forward,
                                         const GradientBundle<S>& grads, const Image<S>& target, const Camera<S>& cam) {
  const std::size_t budget = policy_.budget;
  const bool one_shot = policy_.mode == BudgetMode::kOneShot;
  const bool densify = policy_.enable_growth && t >= policy_.densify_begin && t <= policy_.densify_end;
  const bool compensate = !one_shot && policy_.enable_compensation && t >= policy_.compensate_begin &&
                          t <= policy_.compensate_end;
  peak_size_ = std::max(peak_size_, std::size_t(model.size()));

  if (densify) {
    if (t % policy_.grow_interval == 0) {
      const std::size_t before = std::size_t(model.size());
      if (one_shot || before < budget) {
        if (!beta_ready_) {
          beta_ = policy_.color_balance > 0.0 ? S(policy_.color_balance) : calibrate_color_balance(model.set.stats);
          beta_ready_ = true;
        }
        const ScalarVector<S> scores = hybrid_score(model.set.stats, beta_);
        grow(model, scores, policy_, extent_, rng_, !one_shot);
        peak_size_ = std::max(peak_size_, std::size_t(model.size()));
        record(t, "grow", before, std::size_t(model.size()), policy_.grow_threshold);
      }
      const std::size_t before_prune = std::size_t(model.size());
      opacity_prune(model, S(policy_.opacity_threshold));
      record(t, "opacity_prune", before_prune, std::size_t(model.size()), policy_.opacity_threshold);
      model.set.reset_accumulators();
    }
  } else if (compensate) {
    collect_compensation(forward, grads, target, cam, buffer_, policy_.top_k);
    if (t % policy_.compensate_interval == 0 && !buffer_.empty()) {
      const std::size_t before = std::size_t(model.size());
      flush_compensation(model, buffer_, S(policy_.compensation_opacity), extent_ * S(0.01));
      peak_size_ = std::max(peak_size_, std::size_t(model.size()));
      record(t, "compensate", before, std::size_t(model.size()));
      prune_to(model, t, budget, "budget_prune");
    }
  }

  if (!one_shot || t >= policy_.densify_end || !policy_.enable_growth) {
    prune_to(model, t, budget, one_shot ? "one_shot_prune" : "budget_prune");
  }
  if (!one_shot && densify && policy_.recycle_fraction > 0.0 && t % policy_.budget_prune_interval == 0 &&
      std::size_t(model.size()) >= budget) {
    const std::size_t freed = std::size_t(std::ceil(policy_.recycle_fraction * double(budget)));
    prune_to(model, t, budget > freed ? budget - freed : 0, "recycle_prune");
  }
}

#define BSPLAT_INSTANTIATE(S)                                                                                    \
  template void shift_new(GaussianSet<S>&, std::span<const int>, std::span<const int>, S);                      \
  template GrowResult grow(ModelState<S>&, const ScalarVector<S>&, const BudgetPolicy&, S, std::mt19937_64&,   \
                           bool);                                                                               \
  template std::size_t opacity_prune(ModelState<S>&, S);                                                        \
  template ScalarVector<S> importance_scores(const GaussianSet<S>&, std::span<const Camera<S>>,                 \
                                             const RenderSettings&);                                            \
  template std::vector<int> least_important(const GaussianSet<S>&, const ScalarVector<S>&, std::size_t);        \
  template std::vector<int> budget_prune(ModelState<S>&, const ScalarVector<S>&, std::size_t);                  \
  template std::size_t collect_compensation(const RenderOutput<S>&, const GradientBundle<S>&, const Image<S>&,  \
                                            const Camera<S>&, CompensationBuffer<S>&, int);                     \
  template std::size_t flush_compensation(ModelState<S>&, CompensationBuffer<S>&, S, S);                        \
  template class DensityController<S>;
BSPLAT_INSTANTIATE(float)
BSPLAT_INSTANTIATE(double)
#undef BSPLAT_INSTANTIATE

}  // namespace bsplat
