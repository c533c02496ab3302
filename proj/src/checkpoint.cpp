#include "bsplat/checkpoint.hpp"

#include <cmath>

#include "bsplat/ply.hpp"

namespace bsplat {

template <typename S>
void save_checkpoint(const GaussianSet<S>& set, const std::filesystem::path& path) {
  const std::size_t n = std::size_t(set.size());
  const int rest = set.sh_rest_count();
  PlyTable t;
  auto add = [&](const std::string& name, auto&& value) {
    t.names.push_back(name);
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = double(value(Eigen::Index(i)));
    t.columns.push_back(std::move(col));
  };
  const char* axes[] = {"x", "y", "z"};
  for (int a = 0; a < 3; ++a) add(axes[a], [&](Eigen::Index i) { return set.positions(i, a); });
  for (const char* name : {"nx", "ny", "nz"}) add(name, [](Eigen::Index) { return 0.0; });
  for (int c = 0; c < 3; ++c) add("f_dc_" + std::to_string(c), [&](Eigen::Index i) { return set.sh_dc(i, c); });
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < rest; ++k)
      add("f_rest_" + std::to_string(c * rest + k), [&](Eigen::Index i) { return set.sh_rest(i, 3 * k + c); });
  add("opacity", [&](Eigen::Index i) { return set.opacity_logits(i, 0); });
  for (int a = 0; a < 3; ++a) add("scale_" + std::to_string(a), [&](Eigen::Index i) { return set.log_scales(i, a); });
  for (int a = 0; a < 4; ++a) add("rot_" + std::to_string(a), [&](Eigen::Index i) { return set.rotations(i, a); });
  write_ply(path, t);
}

template <typename S>
GaussianSet<S> load_checkpoint(const std::filesystem::path& path) {
  const PlyTable t = read_ply(path);
  int f_rest = 0;
  while (t.find("f_rest_" + std::to_string(f_rest))) ++f_rest;
  int degree = -1;
  for (int d = 0; d <= kMaxShDegree; ++d)
    if (3 * (sh_coeff_count(d) - 1) == f_rest) degree = d;
  if (degree < 0)
    throw IoError(IoError::Kind::kSchema, path.string() + ": " + std::to_string(f_rest) +
                                              " f_rest properties match no SH degree");
  const int rest = sh_coeff_count(degree) - 1;

  GaussianSet<S> set(degree);
  const Eigen::Index n = Eigen::Index(t.rows());
  set.resize(n);
  auto fill = [&](const std::string& name, auto&& assign) {
    const std::vector<double>& col = t.column(name);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double v = col[std::size_t(i)];
      if (!std::isfinite(v))
        throw IoError(IoError::Kind::kMalformed, path.string() + ": non-finite '" + name + "' at vertex " + std::to_string(i));
      assign(i, S(v));
    }
  };
  const char* axes[] = {"x", "y", "z"};
  for (int a = 0; a < 3; ++a) fill(axes[a], [&](Eigen::Index i, S v) { set.positions(i, a) = v; });
  for (int c = 0; c < 3; ++c) fill("f_dc_" + std::to_string(c), [&](Eigen::Index i, S v) { set.sh_dc(i, c) = v; });
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < rest; ++k)
      fill("f_rest_" + std::to_string(c * rest + k), [&](Eigen::Index i, S v) { set.sh_rest(i, 3 * k + c) = v; });
  fill("opacity", [&](Eigen::Index i, S v) { set.opacity_logits(i, 0) = v; });
  for (int a = 0; a < 3; ++a) fill("scale_" + std::to_string(a), [&](Eigen::Index i, S v) { set.log_scales(i, a) = v; });
  for (int a = 0; a < 4; ++a) fill("rot_" + std::to_string(a), [&](Eigen::Index i, S v) { set.rotations(i, a) = v; });
  for (Eigen::Index i = 0; i < n; ++i) {
    const S norm = set.rotations.row(i).norm();
    if (norm > S(0)) {
      if (norm != S(1)) set.rotations.row(i) /= norm;
    } else {
      set.rotations.row(i) << S(1), S(0), S(0), S(0);
    }
  }
  set.touch();
  return set;
}

template void save_checkpoint(const GaussianSet<float>&, const std::filesystem::path&);
template void save_checkpoint(const GaussianSet<double>&, const std::filesystem::path&);
template GaussianSet<float> load_checkpoint(const std::filesystem::path&);
template GaussianSet<double> load_checkpoint(const std::filesystem::path&);

}  // namespace bsplat
