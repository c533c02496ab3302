#include "bsplat/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "bsplat/checkpoint.hpp"
#include "bsplat/config.hpp"
#include "bsplat/density.hpp"
#include "bsplat/image_io.hpp"
#include "bsplat/synthetic.hpp"
#include "bsplat/trainer.hpp"

namespace bsplat {

namespace fs = std::filesystem;
using ordered = nlohmann::ordered_json;

namespace {

// Raised for command-line misuse that CLI11 itself does not catch.
class UsageError : public Error {
 public:
  using Error::Error;
};

ordered metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

template <typename F>
decltype(auto) with_precision(Precision p, F&& f) {
  if (p == Precision::kFloat32) return f(float{});
  return f(double{});
}

Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::kFloat32;
  if (s == "f64") return Precision::kFloat64;
  throw UsageError("--precision must be f32 or f64");
}

std::optional<int> env_cache_capacity() {
  const char* v = std::getenv(kCacheCapacityEnv);
  if (!v || !*v) return std::nullopt;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw UsageError(std::string(kCacheCapacityEnv) + " must be a positive integer");
  return int(n);
}

struct TrainArgs {
  std::string config, dataset, out, precision;
  std::optional<std::size_t> budget;
  std::optional<long> iters;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads, cache_capacity;
  bool force = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : load_config(a.config);
  if (const auto env = env_cache_capacity()) cfg.cache_capacity = *env;
  if (!a.dataset.empty()) cfg.dataset = a.dataset;
  if (!a.out.empty()) cfg.output = a.out;
  if (a.budget) cfg.budget.budget = *a.budget;
  if (a.iters) cfg.iterations = *a.iters;
  if (a.seed) cfg.seed = *a.seed;
  if (a.threads) cfg.threads = *a.threads;
  if (a.cache_capacity) cfg.cache_capacity = *a.cache_capacity;
  if (!a.precision.empty()) cfg.precision = parse_precision(a.precision);
  cfg.render.threads = cfg.threads;
  cfg.render.background = cfg.background;
  if (cfg.dataset.empty()) throw UsageError("no dataset given (set \"dataset\" in the config or pass --dataset)");
  if (cfg.output.empty()) throw UsageError("no output directory given (set \"output\" in the config or pass --out)");
  cfg.validate();
  if (!fs::is_directory(cfg.dataset)) throw IoError(IoError::Kind::kMissingFile, "dataset directory not found: " + cfg.dataset);

  LoadOptions lo;
  lo.random_points = cfg.init_points;
  lo.seed = cfg.seed;
  const Dataset ds = load_dataset(cfg.dataset, lo);
  prepare_run_directory(cfg.output, a.force);
  return with_precision(cfg.precision, [&](auto tag) {
    using S = decltype(tag);
    const TrainResult<S> result = train<S>(ds, cfg);
    write_run(cfg.output, result, cfg, true);
    const EvalRecord& e = result.report.final_eval();
    out << "trained " << cfg.iterations << " iterations: " << result.report.final_gaussians << " Gaussians (peak "
        << result.report.peak_gaussians << "), train PSNR " << e.train_psnr << " dB, test PSNR " << e.test_psnr
        << " dB\nrun directory: " << cfg.output << "\n";
    return kExitOk;
  });
}

struct RenderArgs {
  std::string checkpoint, cameras, out, precision = "f64";
  std::vector<int> views;
  std::vector<double> background;
  bool depth = false, force = false;
  int threads = 1;
};

int cmd_render(const RenderArgs& a, std::ostream& out) {
  std::vector<std::string> names;
  const std::vector<Camera<double>> cams = load_cameras(a.cameras, &names);
  std::vector<int> indices;
  if (a.views.empty()) {
    for (std::size_t i = 0; i < cams.size(); ++i) indices.push_back(int(i));
  } else {
    for (int id : a.views) {
      const auto it = std::find_if(cams.begin(), cams.end(), [&](const Camera<double>& c) { return c.id == id; });
      if (it == cams.end()) throw UsageError("view id " + std::to_string(id) + " is not in " + a.cameras);
      indices.push_back(int(it - cams.begin()));
    }
  }
  RenderSettings settings;
  settings.threads = a.threads;
  if (!a.background.empty()) {
    if (a.background.size() != 3) throw UsageError("--background takes three values");
    settings.background = {a.background[0], a.background[1], a.background[2]};
  }
  return with_precision(parse_precision(a.precision), [&](auto tag) {
    using S = decltype(tag);
    const GaussianSet<S> set = load_checkpoint<S>(a.checkpoint);
    prepare_run_directory(a.out, a.force);
    for (int i : indices) {
      const Camera<S> cam = cams[std::size_t(i)].template cast<S>();
      const RenderOutput<S> r = render(set, cam, settings);
      const fs::path image = fs::path(a.out) / names[std::size_t(i)];
      fs::create_directories(image.parent_path());
      write_png(image, r.color);
      out << image.string() << "\n";
      if (a.depth) {
        fs::path depth = image;
        depth.replace_extension(".pfm");
        write_pfm(depth, r.depth);
        out << depth.string() << "\n";
      }
    }
    // A cameras.json next to the renders makes the output a dataset for `eval`.
    std::ifstream src(a.cameras);
    std::ofstream dst(fs::path(a.out) / "cameras.json");
    dst << src.rdbuf();
    return kExitOk;
  });
}

struct EvalArgs {
  std::string checkpoint, dataset, split = "test", out, precision = "f64";
  std::vector<double> background;
  int threads = 1;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  LoadOptions lo;
  lo.random_points = 0;
  const Dataset ds = load_dataset(a.dataset, lo);
  std::vector<int> views;
  if (a.split == "test") views = ds.test_views();
  else if (a.split == "train") views = ds.train_views();
  else if (a.split == "all") views = [&] { std::vector<int> v(ds.size()); std::iota(v.begin(), v.end(), 0); return v; }();
  else throw UsageError("--split must be test, train or all");
  if (views.empty()) throw UsageError("dataset " + a.dataset + " has no views in the '" + a.split + "' split");
  RenderSettings settings;
  settings.threads = a.threads;
  if (!a.background.empty()) {
    if (a.background.size() != 3) throw UsageError("--background takes three values");
    settings.background = {a.background[0], a.background[1], a.background[2]};
  }
  return with_precision(parse_precision(a.precision), [&](auto tag) {
    using S = decltype(tag);
    const GaussianSet<S> set = load_checkpoint<S>(a.checkpoint);
    const std::vector<ViewMetrics> m = evaluate_views(set, ds, views, settings);
    ordered j;
    j["split"] = a.split;
    ordered per = ordered::array();
    double psnr_sum = 0.0, ssim_sum = 0.0;
    for (const ViewMetrics& v : m) {
      per.push_back({{"id", v.camera_id}, {"psnr", metric(v.psnr)}, {"ssim", v.ssim}});
      psnr_sum += v.psnr;
      ssim_sum += v.ssim;
    }
    j["views"] = per;
    j["psnr"] = metric(psnr_sum / double(m.size()));
    j["ssim"] = ssim_sum / double(m.size());
    const std::string text = j.dump(2) + "\n";
    out << text;
    if (!a.out.empty()) {
      std::ofstream f(a.out);
      f << text;
      if (!f) throw IoError(IoError::Kind::kWrite, "cannot write " + a.out);
    }
    return kExitOk;
  });
}

struct SynthArgs {
  std::string out;
  std::uint64_t seed = 7;
  int gaussians = 50, cameras = 8, width = 64, height = 64, test_every = 8;
  bool patch = false, force = false;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  SyntheticOptions o;
  o.seed = a.seed;
  o.n_gaussians = a.gaussians;
  o.n_cameras = a.cameras;
  o.width = a.width;
  o.height = a.height;
  o.test_every = a.test_every;
  o.with_patch = a.patch;
  const SyntheticScene scene = generate_synthetic(o);
  prepare_run_directory(a.out, a.force);
  save_dataset(scene.dataset, a.out);
  save_checkpoint(scene.truth, fs::path(a.out) / "truth.ply");
  out << "wrote " << scene.dataset.size() << " views and " << scene.truth.size() << " ground-truth Gaussians to "
      << a.out << "\n";
  return kExitOk;
}

int cmd_inspect(const std::string& checkpoint, const std::string& dataset, std::ostream& out) {
  const GaussianSet<double> set = load_checkpoint<double>(checkpoint);
  std::optional<Dataset> ds;
  if (!dataset.empty()) {
    LoadOptions lo;
    lo.random_points = 0;
    ds = load_dataset(dataset, lo);
  }
  out << inspect_set(set, ds ? &*ds : nullptr).to_json();
  return kExitOk;
}

}  // namespace

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw InputError("percentile of an empty list");
  if (!(p >= 0.0 && p <= 100.0)) throw InputError("percentile must be in [0, 100]");
  const std::size_t k = std::size_t(std::floor(p / 100.0 * double(values.size() - 1)));
  std::nth_element(values.begin(), values.begin() + std::ptrdiff_t(k), values.end());
  return values[k];
}

Histogram histogram(const std::vector<double>& values, double lo, double hi, int bins) {
  Histogram h;
  if (bins < 1 || !(hi > lo)) throw InputError("histogram needs at least one bin and hi > lo");
  for (int b = 0; b <= bins; ++b) h.edges.push_back(lo + (hi - lo) * b / bins);
  h.counts.assign(std::size_t(bins), 0);
  for (double v : values) {
    const int b = std::clamp(int(std::floor((v - lo) / (hi - lo) * bins)), 0, bins - 1);
    ++h.counts[std::size_t(b)];
  }
  return h;
}

std::string InspectSummary::to_json() const {
  auto hist = [](const Histogram& h) {
    ordered j;
    j["edges"] = h.edges;
    j["counts"] = h.counts;
    return j;
  };
  ordered j;
  j["count"] = count;
  j["sh_degree"] = sh_degree;
  j["opacities"] = opacities;
  j["opacity_histogram"] = hist(opacity_histogram);
  j["log10_scale_histogram"] = hist(log10_scale_histogram);
  if (importance_percentiles) {
    ordered p = ordered::array();
    for (const auto& [q, v] : *importance_percentiles) p.push_back({{"percentile", q}, {"value", v}});
    j["importance_percentiles"] = p;
  }
  return j.dump(2) + "\n";
}

InspectSummary inspect_set(const GaussianSet<double>& set, const Dataset* dataset) {
  InspectSummary s;
  s.count = std::size_t(set.size());
  s.sh_degree = set.sh_degree();
  std::vector<double> scales;
  for (Eigen::Index i = 0; i < set.size(); ++i) {
    s.opacities.push_back(set.opacity(i));
    scales.push_back(std::log10(set.max_scale(i)));
  }
  if (s.count > 0) {
    s.opacity_histogram = histogram(s.opacities, 0.0, 1.0, 10);
    s.log10_scale_histogram = histogram(scales, -4.0, 1.0, 10);
  }
  if (dataset) {
    std::vector<Camera<double>> cams;
    for (int v : dataset->train_views()) cams.push_back(dataset->cameras[std::size_t(v)]);
    const ScalarVector<double> r = importance_scores(set, std::span<const Camera<double>>(cams), RenderSettings{});
    std::vector<std::pair<double, double>> p;
    if (s.count > 0) {
      const std::vector<double> values(r.data(), r.data() + r.size());
      for (double q : {0.0, 10.0, 25.0, 50.0, 75.0, 90.0, 100.0}) p.emplace_back(q, percentile(values, q));
    }
    s.importance_percentiles = p;
  }
  return s;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Memory-bounded 3D Gaussian splatting trainer", "bsplat"};
  app.require_subcommand(1);

  TrainArgs ta;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a scene under a Gaussian budget");
  train_cmd->add_option("--config", ta.config, "JSON config file (see docs/config.schema.json)");
  train_cmd->add_option("--dataset", ta.dataset, "Dataset directory (overrides the config)");
  train_cmd->add_option("--budget", ta.budget, "Maximum number of Gaussians");
  train_cmd->add_option("--iters", ta.iters, "Training iterations");
  train_cmd->add_option("--seed", ta.seed, "Random seed");
  train_cmd->add_option("--threads", ta.threads, "Worker threads (1 is bitwise deterministic)");
  train_cmd->add_option("--precision", ta.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  train_cmd->add_option("--cache-capacity", ta.cache_capacity, "Images held by the prefetch cache");
  train_cmd->add_option("--out", ta.out, "Run directory");
  train_cmd->add_flag("--force", ta.force, "Allow writing into a non-empty run directory");

  RenderArgs ra;
  CLI::App* render_cmd = app.add_subcommand("render", "Render a checkpoint from a cameras.json");
  render_cmd->add_option("--checkpoint", ra.checkpoint, "Checkpoint PLY")->required();
  render_cmd->add_option("--cameras", ra.cameras, "cameras.json")->required();
  render_cmd->add_option("--out", ra.out, "Output directory")->required();
  render_cmd->add_option("--views", ra.views, "Camera ids to render (default: all)");
  render_cmd->add_flag("--depth", ra.depth, "Also write blended depth as PFM");
  render_cmd->add_option("--background", ra.background, "Background color r g b (linear)")->expected(3);
  render_cmd->add_option("--threads", ra.threads, "Worker threads");
  render_cmd->add_option("--precision", ra.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  render_cmd->add_flag("--force", ra.force, "Allow writing into a non-empty directory");

  EvalArgs ea;
  CLI::App* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM of a checkpoint against a dataset");
  eval_cmd->add_option("--checkpoint", ea.checkpoint, "Checkpoint PLY")->required();
  eval_cmd->add_option("--dataset", ea.dataset, "Dataset directory")->required();
  eval_cmd->add_option("--split", ea.split, "test, train or all");
  eval_cmd->add_option("--out", ea.out, "Also write the metrics JSON here");
  eval_cmd->add_option("--background", ea.background, "Background color r g b (linear)")->expected(3);
  eval_cmd->add_option("--threads", ea.threads, "Worker threads");
  eval_cmd->add_option("--precision", ea.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));

  SynthArgs sa;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset with its ground truth");
  synth_cmd->add_option("--out", sa.out, "Output directory")->required();
  synth_cmd->add_option("--seed", sa.seed, "Random seed");
  synth_cmd->add_option("--gaussians", sa.gaussians, "Ground-truth Gaussians");
  synth_cmd->add_option("--cameras", sa.cameras, "Cameras on the ring");
  synth_cmd->add_option("--width", sa.width, "Image width");
  synth_cmd->add_option("--height", sa.height, "Image height");
  synth_cmd->add_option("--test-every", sa.test_every, "Test split period (0: no test views)");
  synth_cmd->add_flag("--patch", sa.patch, "Add a bright patch left out of the initial points");
  synth_cmd->add_flag("--force", sa.force, "Allow writing into a non-empty directory");

  std::string inspect_checkpoint, inspect_dataset;
  CLI::App* inspect_cmd = app.add_subcommand("inspect", "Summarize a checkpoint");
  inspect_cmd->add_option("--checkpoint", inspect_checkpoint, "Checkpoint PLY")->required();
  inspect_cmd->add_option("--dataset", inspect_dataset, "Dataset for importance-score percentiles");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(ta, out);
    if (render_cmd->parsed()) return cmd_render(ra, out);
    if (eval_cmd->parsed()) return cmd_eval(ea, out);
    if (synth_cmd->parsed()) return cmd_synth(sa, out);
    if (inspect_cmd->parsed()) return cmd_inspect(inspect_checkpoint, inspect_dataset, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InputError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric error at iteration " << e.iteration() << ": " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 1;
  }
  return kExitUsage;
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace bsplat
