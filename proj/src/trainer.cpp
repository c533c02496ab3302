#include "bsplat/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "bsplat/backward.hpp"
#include "bsplat/checkpoint.hpp"
#include "bsplat/image_io.hpp"
#include "bsplat/loss.hpp"
#include "bsplat/metrics.hpp"
#include "bsplat/prefetch_cache.hpp"

namespace bsplat {

namespace fs = std::filesystem;
using ordered = nlohmann::ordered_json;

namespace {

ordered metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

class PhaseTimer {
 public:
  PhaseTimer(std::map<std::string, double>& sink, const char* phase)
      : sink_(sink), phase_(phase), start_(std::chrono::steady_clock::now()) {}
  ~PhaseTimer() {
    sink_[phase_] += std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::map<std::string, double>& sink_;
  const char* phase_;
  std::chrono::steady_clock::time_point start_;
};

template <typename S>
bool all_finite(const GaussianSet<S>& set) {
  for (int g = 0; g < kParamGroupCount; ++g)
    if (!set.param(ParamGroup(g)).allFinite()) return false;
  return true;
}

double mean(const std::vector<ViewMetrics>& v, double ViewMetrics::*field) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (const auto& m : v) s += m.*field;
  return s / double(v.size());
}

// Shuffled epochs over the training views.
std::vector<int> view_schedule(const std::vector<int>& train_views, long iterations, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<int> schedule;
  schedule.reserve(std::size_t(std::max(iterations, 0L)));
  std::vector<int> epoch = train_views;
  while (long(schedule.size()) < iterations) {
    std::shuffle(epoch.begin(), epoch.end(), rng);
    for (int v : epoch) {
      if (long(schedule.size()) == iterations) break;
      schedule.push_back(v);
    }
  }
  return schedule;
}

}  // namespace

std::string RunReport::to_json() const {
  ordered j;
  j["iterations"] = iterations;
  j["seed"] = seed;
  j["precision"] = precision;
  j["mode"] = mode;
  j["budget"] = budget;
  j["initial_gaussians"] = initial_gaussians;
  j["final_gaussians"] = final_gaussians;
  j["peak_gaussians"] = peak_gaussians;
  j["peak_gaussians_within_step"] = peak_gaussians_within_step;
  j["color_balance"] = color_balance;
  ordered m;
  m["bytes_per_gaussian"] = memory.bytes_per_gaussian;
  m["primitive_bytes"] = memory.primitive_bytes;
  m["peak_transient_bytes"] = memory.peak_transient_bytes;
  m["cache_bytes"] = memory.cache_bytes;
  m["peak_total_bytes"] = memory.peak_total_bytes;
  j["memory"] = m;
  ordered evs = ordered::array();
  for (const EvalRecord& e : evals) {
    ordered r;
    r["iteration"] = e.iteration;
    r["gaussians"] = e.gaussians;
    r["train_psnr"] = metric(e.train_psnr);
    r["train_ssim"] = e.train_ssim;
    r["test_psnr"] = metric(e.test_psnr);
    r["test_ssim"] = e.test_ssim;
    ordered views = ordered::array();
    for (const ViewMetrics& v : e.test_views) views.push_back({{"id", v.camera_id}, {"psnr", metric(v.psnr)}, {"ssim", v.ssim}});
    r["test_views"] = views;
    evs.push_back(r);
  }
  j["evals"] = evs;
  j["event_count"] = events.size();
  j["series"] = "series.csv";
  j["events"] = "events.jsonl";
  return j.dump(2) + "\n";
}

std::string RunReport::series_csv() const {
  std::ostringstream out;
  out << "iteration,gaussians\n";
  for (const SeriesPoint& p : series) out << p.iteration << ',' << p.gaussians << '\n';
  return out.str();
}

std::string RunReport::events_jsonl() const {
  std::string out;
  for (const StructuralEvent& e : events) out += e.to_json_line() + "\n";
  return out;
}

std::string RunReport::timings_json() const {
  ordered j;
  ordered phases;
  for (const auto& [k, v] : timings) phases[k] = v;
  j["seconds"] = phases;
  j["cache_peak_resident"] = cache_peak_resident;
  j["cache_evictions"] = cache_evictions;
  return j.dump(2) + "\n";
}

template <typename S>
GaussianSet<S> initial_gaussians(const Dataset& ds, int sh_degree, int neighbors, double fallback_scale) {
  const std::size_t n = ds.points.size();
  GaussianSet<S> set(sh_degree);
  set.resize(Eigen::Index(n));
  std::vector<double> d2;
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Index r = Eigen::Index(i);
    set.positions.row(r) = ds.points[i].cast<S>().transpose();
    set.sh_dc.row(r) = ((ds.point_colors[i].array() - 0.5) / kShC0).cast<S>().matrix().transpose();
    set.opacity_logits(r, 0) = logit(S(0.1));
    d2.clear();
    for (std::size_t k = 0; k < n; ++k)
      if (k != i) d2.push_back((ds.points[k] - ds.points[i]).squaredNorm());
    double scale = fallback_scale;
    if (!d2.empty()) {
      const std::size_t m = std::min(d2.size(), std::size_t(neighbors));
      std::partial_sort(d2.begin(), d2.begin() + std::ptrdiff_t(m), d2.end());
      const double mean_d2 = std::accumulate(d2.begin(), d2.begin() + std::ptrdiff_t(m), 0.0) / double(m);
      scale = std::sqrt(std::max(mean_d2, 1e-7));
    }
    set.log_scales.row(r).setConstant(S(std::log(scale)));
  }
  set.touch();
  return set;
}

template <typename S>
std::vector<ViewMetrics> evaluate_views(const GaussianSet<S>& set, const Dataset& ds, const std::vector<int>& views,
                                        const RenderSettings& settings, std::vector<Image<S>>* renders) {
  std::vector<ViewMetrics> out;
  for (int v : views) {
    const Camera<S> cam = ds.cameras[std::size_t(v)].template cast<S>();
    RenderOutput<S> r = render(set, cam, settings);
    Image<S> shown = quantize_srgb8(r.color);
    const Image<S> target = ds.load_image(v).template cast<S>();
    out.push_back({cam.id, psnr(shown, target), double(ssim(shown, target))});
    if (renders) renders->push_back(std::move(shown));
  }
  return out;
}

template <typename S>
TrainResult<S> train(const Dataset& ds, const TrainConfig& cfg, const TrainHooks<S>& hooks) {
  cfg.validate();
  const std::vector<int> train_views = ds.train_views();
  const std::vector<int> test_views = ds.test_views();
  if (train_views.empty()) throw ConfigError("dataset has no training views");
  const BudgetPolicy& policy = cfg.budget;
  if (ds.points.size() > policy.budget)
    throw ConfigError("budget (" + std::to_string(policy.budget) + ") is below the initial point count (" +
                      std::to_string(ds.points.size()) + ")");
  policy.validate(cfg.iterations, ds.points.size());

  TrainResult<S> result;
  RunReport& report = result.report;
  report.iterations = cfg.iterations;
  report.seed = cfg.seed;
  report.precision = to_string(cfg.precision);
  report.mode = to_string(policy.mode);
  report.budget = policy.budget;

  ModelState<S> model(initial_gaussians<S>(ds, cfg.sh_degree, cfg.init_scale_neighbors, 0.01 * ds.extent));
  report.initial_gaussians = std::size_t(model.size());

  RenderSettings rs = cfg.render;
  rs.background = cfg.background;
  rs.threads = cfg.threads;
  RenderSettings eval_settings = rs;
  eval_settings.keep_records = bool(hooks.on_eval_render);

  LearningRates rates = cfg.rates;
  if (rates.position_steps <= 0) rates.position_steps = std::max(cfg.iterations, 1L);
  if (cfg.position_lr_scale_by_extent) rates.position_scale *= ds.extent;

  std::vector<Camera<S>> train_cams;
  for (int v : train_views) train_cams.push_back(ds.cameras[std::size_t(v)].template cast<S>());
  DensityController<S> controller(policy, S(ds.extent), train_cams, rs, cfg.seed + 0x9e3779b97f4a7c15ULL);

  const std::vector<int> schedule = view_schedule(train_views, cfg.iterations, cfg.seed);
  const std::size_t capacity = std::size_t(cfg.cache_capacity);
  PrefetchCache cache(capacity, int(ds.size()), [&ds](int v) { return ds.load_image(v); }, ds.images.empty());

  MemoryAccountant memory(cfg.sh_degree, sizeof(S));
  std::size_t max_image_bytes = 0;
  for (const auto& c : ds.cameras) max_image_bytes = std::max(max_image_bytes, std::size_t(c.width) * c.height * 3 * sizeof(float));
  memory.observe_cache(std::min(capacity, ds.size()) * max_image_bytes);

  auto active_degree = [&](long t) {
    return cfg.sh_increase_interval > 0 ? int(std::min<long>(cfg.sh_degree, t / cfg.sh_increase_interval)) : cfg.sh_degree;
  };
  auto observe = [&](long t) {
    const std::size_t n = std::size_t(model.size());
    report.series.push_back({t, n});
    report.peak_gaussians = std::max(report.peak_gaussians, n);
    memory.observe_gaussians(n);
  };
  auto run_eval = [&](long t) {
    PhaseTimer timer(report.timings, "eval");
    eval_settings.active_sh_degree = active_degree(t);
    EvalRecord e;
    e.iteration = t;
    e.gaussians = std::size_t(model.size());
    const bool last = t == cfg.iterations;
    std::vector<Image<S>> renders;
    const std::vector<ViewMetrics> train_m = evaluate_views(model.set, ds, train_views, eval_settings);
    e.train_psnr = mean(train_m, &ViewMetrics::psnr);
    e.train_ssim = mean(train_m, &ViewMetrics::ssim);
    e.test_views = evaluate_views(model.set, ds, test_views, eval_settings, last ? &renders : nullptr);
    e.test_psnr = mean(e.test_views, &ViewMetrics::psnr);
    e.test_ssim = mean(e.test_views, &ViewMetrics::ssim);
    if (hooks.on_eval_render) {
      for (int v : train_views) hooks.on_eval_render(t, v, render(model.set, ds.cameras[std::size_t(v)].template cast<S>(), eval_settings));
      for (int v : test_views) hooks.on_eval_render(t, v, render(model.set, ds.cameras[std::size_t(v)].template cast<S>(), eval_settings));
    }
    if (last) {
      result.eval_images.clear();
      for (std::size_t i = 0; i < renders.size(); ++i) {
        char name[48];
        std::snprintf(name, sizeof(name), "test_%03d.png", ds.cameras[std::size_t(test_views[i])].id);
        result.eval_images.emplace_back(name, std::move(renders[i]));
      }
    }
    report.evals.push_back(std::move(e));
  };

  observe(0);
  for (long t = 1; t <= cfg.iterations; ++t) {
    const int view = schedule[std::size_t(t - 1)];
    const Camera<S> cam = ds.cameras[std::size_t(view)].template cast<S>();
    std::shared_ptr<const Image<float>> loaded;
    {
      PhaseTimer timer(report.timings, "load");
      const std::size_t ahead = std::min<std::size_t>(capacity, schedule.size() - std::size_t(t));
      cache.prefetch(std::vector<int>(schedule.begin() + t, schedule.begin() + t + std::ptrdiff_t(ahead)));
      loaded = cache.get(view);
    }
    const Image<S> target = loaded->template cast<S>();
    rs.active_sh_degree = active_degree(t);

    RenderOutput<S> fwd;
    {
      PhaseTimer timer(report.timings, "render");
      fwd = render(model.set, cam, rs);
    }
    memory.observe_transient(fwd.record_bytes());

    GradientBundle<S> grads;
    {
      PhaseTimer timer(report.timings, "backward");
      const LossResult<S> loss = loss_and_grad(fwd.color, target, S(cfg.loss_lambda));
      if (!std::isfinite(double(loss.loss)))
        throw NumericError("non-finite loss at iteration " + std::to_string(t), t);
      Image<S> residual;
      const Image<S>* error_source = nullptr;
      switch (cfg.error_map) {
        case ErrorMapMode::kResidual:
          residual = fwd.color;
          for (std::size_t i = 0; i < residual.data.size(); ++i) residual.data[i] -= target.data[i];
          error_source = &residual;
          break;
        case ErrorMapMode::kL1Gradient: error_source = &loss.grad_l1; break;
        case ErrorMapMode::kLossGradient: break;
      }
      grads = backward(model.set, fwd, loss.grad, error_source);
      if (controller.collects_stats(t)) accumulate_stats(model.set, grads);
    }
    {
      PhaseTimer timer(report.timings, "optimizer");
      adam_step(model, grads, rates, t, cfg.adam);
      if (!all_finite(model.set)) throw NumericError("non-finite parameters after iteration " + std::to_string(t), t);
    }
    {
      PhaseTimer timer(report.timings, "density");
      controller.end_iteration(model, t, fwd, grads, target, cam);
      if (t == cfg.opacity_reset_at) reset_opacity(model, S(cfg.opacity_reset_value), cfg.reset_position_moments);
    }
    observe(t);
    if (hooks.on_iteration) hooks.on_iteration(t, model);
    if (cfg.eval_interval > 0 && t % cfg.eval_interval == 0 && t != cfg.iterations) run_eval(t);
  }
  run_eval(cfg.iterations);

  report.final_gaussians = std::size_t(model.size());
  report.peak_gaussians_within_step = std::max(report.peak_gaussians, controller.peak_size());
  report.color_balance = double(controller.color_balance());
  report.events = controller.events();
  report.memory.bytes_per_gaussian = memory.per_gaussian();
  report.memory.primitive_bytes = memory.primitive_bytes();
  report.memory.peak_transient_bytes = memory.peak_transient();
  report.memory.cache_bytes = memory.peak_cache();
  report.memory.peak_total_bytes = memory.peak_total();
  report.cache_peak_resident = cache.peak_resident();
  report.cache_evictions = cache.evictions();
  result.set = std::move(model.set);
  return result;
}

void prepare_run_directory(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw IoError(IoError::Kind::kWrite, dir.string() + " is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir) && !force)
    throw IoError(IoError::Kind::kWrite, "run directory " + dir.string() + " already exists and is not empty (use --force)");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(IoError::Kind::kWrite, "cannot create " + dir.string() + ": " + ec.message());
}

namespace {
void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError(IoError::Kind::kWrite, "cannot write " + path.string());
}
}  // namespace

template <typename S>
void write_run(const fs::path& dir, const TrainResult<S>& result, const TrainConfig& config, bool force) {
  prepare_run_directory(dir, force);
  save_checkpoint(result.set, dir / "checkpoint.ply");
  write_text(dir / "report.json", result.report.to_json());
  write_text(dir / "series.csv", result.report.series_csv());
  write_text(dir / "events.jsonl", result.report.events_jsonl());
  write_text(dir / "config.json", config_to_json(config));
  write_text(dir / "timings.json", result.report.timings_json());
  if (config.save_eval_images && !result.eval_images.empty()) {
    fs::create_directories(dir / "eval");
    for (const auto& [name, image] : result.eval_images) write_png(dir / "eval" / name, image);
  }
}

#define BSPLAT_INSTANTIATE(S)                                                                                   \
  template GaussianSet<S> initial_gaussians(const Dataset&, int, int, double);                                 \
  template TrainResult<S> train(const Dataset&, const TrainConfig&, const TrainHooks<S>&);                     \
  template std::vector<ViewMetrics> evaluate_views(const GaussianSet<S>&, const Dataset&, const std::vector<int>&, \
                                                   const RenderSettings&, std::vector<Image<S>>*);             \
  template void write_run(const fs::path&, const TrainResult<S>&, const TrainConfig&, bool);
BSPLAT_INSTANTIATE(float)
BSPLAT_INSTANTIATE(double)
#undef BSPLAT_INSTANTIATE

}  // namespace bsplat
