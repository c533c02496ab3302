#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "bsplat/math.hpp"

namespace bsplat {

template <typename S> using ParamMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S> using ScalarVector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// Optimizer parameter groups; each maps to one row-aligned matrix of the set.
enum class ParamGroup { kPosition = 0, kRotation, kLogScale, kOpacity, kShDc, kShRest };
inline constexpr int kParamGroupCount = 6;

/// One primitive in value form.
template <typename S>
struct Gaussian {
  Vec3<S> position = Vec3<S>::Zero();
  Vec4<S> rotation = Vec4<S>(S(1), S(0), S(0), S(0));  // (w, x, y, z)
  Vec3<S> log_scale = Vec3<S>::Zero();
  S opacity_logit = S(0);
  Eigen::Matrix<S, Eigen::Dynamic, 3> sh = Eigen::Matrix<S, Eigen::Dynamic, 3>::Zero(1, 3);  // K x 3

  S opacity() const { return sigmoid(opacity_logit); }
  Mat3<S> covariance() const { return build_covariance(rotation, log_scale); }
};

template <typename S>
std::optional<Projected2D<S>> project_gaussian(const Gaussian<S>& g, const Camera<S>& cam,
                                               const ProjectionSettings& settings = {}) {
  return project_gaussian(g.position, g.rotation, g.log_scale, cam, settings);
}

/// Per-primitive statistics gathered between structural events.
template <typename S>
struct TrainingStats {
  ScalarVector<S> grad_pos_accum;    // sum over views of the screen-space position gradient norm
  ScalarVector<S> grad_color_accum;  // sum over views of the color gradient norm
  Eigen::VectorXi view_count;        // views in which the primitive contributed to a pixel
  ParamMatrix<S> pos_grad_accum;     // N x 3 sum of world-space position gradients
  ScalarVector<S> importance;        // last computed ray-contribution score
  Eigen::VectorXi age;               // optimizer steps since creation
};

/// Structure-of-arrays store of Gaussian parameters. Rows of every parameter
/// matrix and of the statistics stay index-aligned through every structural edit.
template <typename S>
class GaussianSet {
 public:
  explicit GaussianSet(int sh_degree = 0) : sh_degree_(sh_degree) {
    if (sh_degree < 0 || sh_degree > kMaxShDegree) throw InputError("SH degree must be in [0, 3]");
    resize(0);
  }

  int sh_degree() const { return sh_degree_; }
  int sh_rest_count() const { return sh_coeff_count(sh_degree_) - 1; }
  Eigen::Index size() const { return positions.rows(); }
  bool empty() const { return size() == 0; }

  /// Incremented by every structural edit (row insertion or removal).
  std::uint64_t structure_stamp() const { return structure_stamp_; }
  /// Incremented by every mutation, including in-place parameter updates.
  std::uint64_t generation() const { return generation_; }
  void touch() { ++generation_; }

  ParamMatrix<S>& param(ParamGroup g) { return *params()[std::size_t(g)]; }
  const ParamMatrix<S>& param(ParamGroup g) const {
    return *const_cast<GaussianSet*>(this)->params()[std::size_t(g)];
  }

  static int group_columns(ParamGroup g, int sh_degree) {
    switch (g) {
      case ParamGroup::kPosition: return 3;
      case ParamGroup::kRotation: return 4;
      case ParamGroup::kLogScale: return 3;
      case ParamGroup::kOpacity: return 1;
      case ParamGroup::kShDc: return 3;
      case ParamGroup::kShRest: return 3 * (sh_coeff_count(sh_degree) - 1);
    }
    return 0;
  }

  S opacity(Eigen::Index i) const { return sigmoid(opacity_logits(i, 0)); }
  Vec3<S> position(Eigen::Index i) const { return positions.row(i).transpose(); }
  Vec4<S> rotation(Eigen::Index i) const { return rotations.row(i).transpose(); }
  Vec3<S> log_scale(Eigen::Index i) const { return log_scales.row(i).transpose(); }
  S max_scale(Eigen::Index i) const { return std::exp(log_scales.row(i).maxCoeff()); }

  /// K x 3 SH coefficient block of primitive i (row k = basis function k).
  Eigen::Matrix<S, Eigen::Dynamic, 3> sh_coeffs(Eigen::Index i) const {
    const int k = sh_coeff_count(sh_degree_);
    Eigen::Matrix<S, Eigen::Dynamic, 3> c(k, 3);
    c.row(0) = sh_dc.row(i);
    for (int j = 1; j < k; ++j) c.row(j) = sh_rest.block(i, 3 * (j - 1), 1, 3);
    return c;
  }

  Gaussian<S> get(Eigen::Index i) const {
    Gaussian<S> g;
    g.position = position(i);
    g.rotation = rotation(i);
    g.log_scale = log_scale(i);
    g.opacity_logit = opacity_logits(i, 0);
    g.sh = sh_coeffs(i);
    return g;
  }

  void set(Eigen::Index i, const Gaussian<S>& g) {
    positions.row(i) = g.position.transpose();
    rotations.row(i) = g.rotation.transpose();
    log_scales.row(i) = g.log_scale.transpose();
    opacity_logits(i, 0) = g.opacity_logit;
    const int k = sh_coeff_count(sh_degree_);
    sh_dc.row(i).setZero();
    sh_rest.row(i).setZero();
    for (int j = 0; j < std::min<int>(k, int(g.sh.rows())); ++j) {
      if (j == 0) sh_dc.row(i) = g.sh.row(0);
      else sh_rest.block(i, 3 * (j - 1), 1, 3) = g.sh.row(j);
    }
    touch();
  }

  /// Appends one primitive with zeroed statistics.
  Eigen::Index push_back(const Gaussian<S>& g) {
    const Eigen::Index n = size();
    grow_rows(n + 1);
    set(n, g);
    return n;
  }

  /// Appends all rows of `other` (same SH degree) with zeroed statistics.
  void append(const GaussianSet& other) {
    if (other.sh_degree_ != sh_degree_) throw InputError("cannot append sets with different SH degrees");
    const Eigen::Index n = size(), m = other.size();
    grow_rows(n + m);
    for (int g = 0; g < kParamGroupCount; ++g) {
      param(ParamGroup(g)).bottomRows(m) = other.param(ParamGroup(g));
    }
    touch();
  }

  /// Keeps exactly the listed rows, in the listed order.
  void keep(std::span<const int> rows) {
    const Eigen::Index m = Eigen::Index(rows.size());
    for (int g = 0; g < kParamGroupCount; ++g) {
      ParamMatrix<S>& p = param(ParamGroup(g));
      ParamMatrix<S> next(m, p.cols());
      for (Eigen::Index r = 0; r < m; ++r) next.row(r) = p.row(rows[r]);
      p.swap(next);
    }
    auto pick_vec = [&](auto& v) {
      std::remove_reference_t<decltype(v)> next(m);
      for (Eigen::Index r = 0; r < m; ++r) next(r) = v(rows[r]);
      v.swap(next);
    };
    pick_vec(stats.grad_pos_accum);
    pick_vec(stats.grad_color_accum);
    pick_vec(stats.view_count);
    pick_vec(stats.importance);
    pick_vec(stats.age);
    ParamMatrix<S> pg(m, 3);
    for (Eigen::Index r = 0; r < m; ++r) pg.row(r) = stats.pos_grad_accum.row(rows[r]);
    stats.pos_grad_accum.swap(pg);
    ++structure_stamp_;
    touch();
  }

  /// Removes rows where `remove[i]` is true.
  void remove_where(const std::vector<bool>& remove) {
    std::vector<int> rows;
    rows.reserve(std::size_t(size()));
    for (Eigen::Index i = 0; i < size(); ++i)
      if (!remove[std::size_t(i)]) rows.push_back(int(i));
    keep(rows);
  }

  /// Zeroes gradient accumulators (importance and age are kept).
  void reset_accumulators() {
    stats.grad_pos_accum.setZero();
    stats.grad_color_accum.setZero();
    stats.view_count.setZero();
    stats.pos_grad_accum.setZero();
  }

  /// Resizes to n rows; new rows are zero with identity rotation.
  void resize(Eigen::Index n) { grow_rows(n); }

  template <typename T>
  GaussianSet<T> cast() const {
    GaussianSet<T> out(sh_degree_);
    out.resize(size());
    for (int g = 0; g < kParamGroupCount; ++g) out.param(ParamGroup(g)) = param(ParamGroup(g)).template cast<T>();
    out.stats.grad_pos_accum = stats.grad_pos_accum.template cast<T>();
    out.stats.grad_color_accum = stats.grad_color_accum.template cast<T>();
    out.stats.view_count = stats.view_count;
    out.stats.pos_grad_accum = stats.pos_grad_accum.template cast<T>();
    out.stats.importance = stats.importance.template cast<T>();
    out.stats.age = stats.age;
    return out;
  }

  ParamMatrix<S> positions, rotations, log_scales, opacity_logits, sh_dc, sh_rest;
  TrainingStats<S> stats;

 private:
  std::array<ParamMatrix<S>*, kParamGroupCount> params() {
    return {&positions, &rotations, &log_scales, &opacity_logits, &sh_dc, &sh_rest};
  }

  void grow_rows(Eigen::Index n) {
    const Eigen::Index old = positions.rows();
    if (n == old && positions.cols() == 3) return;
    for (int g = 0; g < kParamGroupCount; ++g) {
      ParamMatrix<S>& p = param(ParamGroup(g));
      const int cols = group_columns(ParamGroup(g), sh_degree_);
      ParamMatrix<S> next = ParamMatrix<S>::Zero(n, cols);
      const Eigen::Index keep_rows = std::min(old, n);
      if (keep_rows > 0 && p.cols() == cols) next.topRows(keep_rows) = p.topRows(keep_rows);
      p.swap(next);
    }
    for (Eigen::Index r = std::min(old, n); r < n; ++r) rotations(r, 0) = S(1);
    auto grow_vec = [&](auto& v) {
      std::remove_reference_t<decltype(v)> next = std::remove_reference_t<decltype(v)>::Zero(n);
      const Eigen::Index k = std::min<Eigen::Index>(v.size(), n);
      if (k > 0) next.head(k) = v.head(k);
      v.swap(next);
    };
    grow_vec(stats.grad_pos_accum);
    grow_vec(stats.grad_color_accum);
    grow_vec(stats.view_count);
    grow_vec(stats.importance);
    grow_vec(stats.age);
    ParamMatrix<S> pg = ParamMatrix<S>::Zero(n, 3);
    const Eigen::Index k = std::min<Eigen::Index>(stats.pos_grad_accum.rows(), n);
    if (k > 0) pg.topRows(k) = stats.pos_grad_accum.topRows(k);
    stats.pos_grad_accum.swap(pg);
    ++structure_stamp_;
    touch();
  }

  int sh_degree_;
  std::uint64_t structure_stamp_ = 0;
  std::uint64_t generation_ = 0;
};

}  // namespace bsplat
