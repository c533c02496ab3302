#include "bsplat/optimizer.hpp"

#include <algorithm>
#include <cmath>

namespace bsplat {

double LearningRates::position_at(long iteration) const {
  const double frac = position_steps > 0 ? std::clamp(double(iteration) / double(position_steps), 0.0, 1.0) : 1.0;
  return position_scale * position_init * std::pow(position_final / position_init, frac);
}

double LearningRates::for_group(ParamGroup g, long iteration) const {
  switch (g) {
    case ParamGroup::kPosition: return position_at(iteration);
    case ParamGroup::kRotation: return rotation;
    case ParamGroup::kLogScale: return log_scale;
    case ParamGroup::kOpacity: return opacity;
    case ParamGroup::kShDc: return sh_dc;
    case ParamGroup::kShRest: return sh_rest;
  }
  return 0.0;
}

template <typename S>
AdamState<S> AdamState<S>::matching(const GaussianSet<S>& set) {
  AdamState st;
  for (int g = 0; g < kParamGroupCount; ++g) {
    const auto& p = set.param(ParamGroup(g));
    st.first[std::size_t(g)] = ParamMatrix<S>::Zero(p.rows(), p.cols());
    st.second[std::size_t(g)] = ParamMatrix<S>::Zero(p.rows(), p.cols());
  }
  st.aligned_stamp = set.structure_stamp();
  return st;
}

template <typename S>
std::size_t AdamState<S>::bytes() const {
  std::size_t n = 0;
  for (int g = 0; g < kParamGroupCount; ++g)
    n += std::size_t(first[std::size_t(g)].size() + second[std::size_t(g)].size()) * sizeof(S);
  return n;
}

template <typename S>
void ModelState<S>::keep(std::span<const int> rows) {
  adam.require_aligned(set);
  set.keep(rows);
  for (auto* moments : {&adam.first, &adam.second}) {
    for (auto& m : *moments) {
      ParamMatrix<S> next(Eigen::Index(rows.size()), m.cols());
      for (std::size_t r = 0; r < rows.size(); ++r) next.row(Eigen::Index(r)) = m.row(rows[r]);
      m.swap(next);
    }
  }
  adam.aligned_stamp = set.structure_stamp();
}

template <typename S>
void ModelState<S>::remove_where(const std::vector<bool>& remove) {
  std::vector<int> rows;
  for (Eigen::Index i = 0; i < set.size(); ++i)
    if (!remove[std::size_t(i)]) rows.push_back(int(i));
  keep(rows);
}

template <typename S>
void ModelState<S>::append(const GaussianSet<S>& rows) {
  adam.require_aligned(set);
  set.append(rows);
  for (auto* moments : {&adam.first, &adam.second}) {
    for (auto& m : *moments) {
      ParamMatrix<S> next = ParamMatrix<S>::Zero(set.size(), m.cols());
      next.topRows(m.rows()) = m;
      m.swap(next);
    }
  }
  adam.aligned_stamp = set.structure_stamp();
}

template <typename S>
void adam_step(ModelState<S>& model, const GradientBundle<S>& grads, const LearningRates& rates, long iteration,
               const AdamSettings& settings) {
  AdamState<S>& st = model.adam;
  GaussianSet<S>& set = model.set;
  st.require_aligned(set);
  if (grads.d_position.rows() != set.size()) throw ContractError("gradient bundle does not match the Gaussian set");

  ++st.step;
  const S b1 = S(settings.beta1), b2 = S(settings.beta2), eps = S(settings.epsilon);
  const S c1 = S(1) - std::pow(b1, S(st.step));
  const S c2 = S(1) - std::pow(b2, S(st.step));
  for (int gi = 0; gi < kParamGroupCount; ++gi) {
    const ParamGroup g = ParamGroup(gi);
    ParamMatrix<S>& p = set.param(g);
    if (p.size() == 0) continue;
    const ParamMatrix<S>& grad = grads.grad(g);
    auto m = st.first[std::size_t(gi)].array();
    auto v = st.second[std::size_t(gi)].array();
    m = b1 * m + (S(1) - b1) * grad.array();
    v = b2 * v + (S(1) - b2) * grad.array().square();
    const S lr = S(rates.for_group(g, iteration));
    p.array() -= lr * (m / c1) / ((v / c2).sqrt() + eps);
  }
  for (Eigen::Index i = 0; i < set.size(); ++i) {
    const S norm = set.rotations.row(i).norm();
    if (norm > S(0)) set.rotations.row(i) /= norm;
    else set.rotations.row(i) << S(1), S(0), S(0), S(0);
  }
  set.stats.age.array() += 1;
  set.touch();
}

template <typename S>
void reset_opacity(ModelState<S>& model, S reset_value, bool reset_position_moments) {
  GaussianSet<S>& set = model.set;
  model.adam.require_aligned(set);
  const S reset_logit = logit(reset_value);
  for (Eigen::Index i = 0; i < set.size(); ++i) set.opacity_logits(i, 0) = std::min(set.opacity_logits(i, 0), reset_logit);
  const std::size_t op = std::size_t(ParamGroup::kOpacity), pos = std::size_t(ParamGroup::kPosition);
  model.adam.first[op].setZero();
  model.adam.second[op].setZero();
  if (reset_position_moments) {
    model.adam.first[pos].setZero();
    model.adam.second[pos].setZero();
  }
  set.touch();
}

#define BSPLAT_INSTANTIATE(S)                                                                                  \
  template struct AdamState<S>;                                                                               \
  template struct ModelState<S>;                                                                              \
  template void adam_step(ModelState<S>&, const GradientBundle<S>&, const LearningRates&, long,               \
                          const AdamSettings&);                                                               \
  template void reset_opacity(ModelState<S>&, S, bool);
BSPLAT_INSTANTIATE(float)
BSPLAT_INSTANTIATE(double)
#undef BSPLAT_INSTANTIATE

}  // namespace bsplat
