#pragma once

// Command-line front end: train, render, eval, synth, inspect.
// Exit codes: 0 success, 2 usage or configuration, 3 numeric failure, 4 I/O.

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "bsplat/dataset.hpp"
#include "bsplat/gaussian_set.hpp"

namespace bsplat {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitIo = 4;

/// Environment variable overriding the configured cache capacity (a --cache-capacity flag wins).
inline constexpr const char* kCacheCapacityEnv = "BSPLAT_CACHE_CAPACITY";

int run_cli(int argc, const char* const* argv);
/// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Lower nearest-rank percentile: element floor(p / 100 * (n - 1)) of the sorted values.
double percentile(std::vector<double> values, double p);

struct Histogram {
  std::vector<double> edges;         // bins + 1 edges
  std::vector<std::size_t> counts;   // one per bin; the last bin includes its upper edge
};

/// `bins` equal-width bins over [lo, hi]; values outside are clamped into the end bins.
Histogram histogram(const std::vector<double>& values, double lo, double hi, int bins);

struct InspectSummary {
  std::size_t count = 0;
  int sh_degree = 0;
  std::vector<double> opacities;
  Histogram opacity_histogram;     // [0, 1], 10 bins
  Histogram log10_scale_histogram;  // largest axis, [-4, 1], 10 bins
  /// Importance-score percentiles (0, 10, 25, 50, 75, 90, 100) when a dataset was supplied.
  std::optional<std::vector<std::pair<double, double>>> importance_percentiles;

  std::string to_json() const;
};

InspectSummary inspect_set(const GaussianSet<double>& set, const Dataset* dataset = nullptr);

}  // namespace bsplat
