// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.
// `--only 3,9` runs a subset.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bsplat/checkpoint.hpp"
#include "bsplat/dataset.hpp"
#include "bsplat/density.hpp"
#include "bsplat/image_io.hpp"
#include "bsplat/prefetch_cache.hpp"
#include "bsplat/synthetic.hpp"
#include "bsplat/trainer.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

using namespace bsplat;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Schedule shared by the synthetic training criteria: growth, then compensation.
TrainConfig synthetic_config(std::size_t budget, long iterations) {
  TrainConfig c;
  c.iterations = iterations;
  c.eval_interval = 0;
  c.save_eval_images = false;
  c.budget.budget = budget;
  c.budget.densify_begin = 100;
  c.budget.densify_end = 1200;
  c.budget.grow_interval = 100;
  c.budget.compensate_begin = 1300;
  c.budget.compensate_end = 1700;
  c.budget.compensate_interval = 100;
  c.budget.top_k = 10;
  return c;
}

// 1. Every analytic gradient against central differences.
Outcome gradient_correctness() {
  std::mt19937_64 rng(1001);
  std::uniform_int_distribution<int> count(2, 20), size(16, 32), degree(0, 3);
  std::size_t checked = 0, failed = 0;
  double worst = 0.0, worst_abs = 0.0, largest = 0.0;
  std::string first;
  for (int scene = 0; scene < 20; ++scene) {
    oracle::SceneOptions o;
    o.count = count(rng);
    o.width = size(rng);
    o.height = size(rng);
    o.sh_degree = degree(rng);
    Camera<double> cam;
    const auto set = oracle::random_scene(rng, o, &cam);
    const RenderSettings s = RenderSettings::exact();
    const auto target = oracle::offset_target(render(set, cam, s).color, rng);
    const auto r = oracle::check_gradients(set, cam, target, s, 0.2, 1e-5, 1e-4, 1e-8);
    checked += r.checked;
    failed += r.failed;
    worst = std::max(worst, r.worst_rel);
    worst_abs = std::max(worst_abs, r.worst_abs);
    largest = std::max(largest, r.largest);
    if (first.empty() && r.failed) first = fmt("scene %d: %s", scene, r.first_failure.c_str());
  }
  return {failed == 0 && checked > 0,
          fmt("%zu gradients on 20 scenes, %zu outside tolerance; worst relative error %.2e (|g| > 1e-6), worst "
              "absolute %.2e, largest |g| %.2e%s%s",
              checked, failed, worst, worst_abs, largest, first.empty() ? "" : "; first: ", first.c_str())};
}

// 2. Tiled renderer against the per-pixel global-sort oracle.
Outcome rasterizer_oracle() {
  std::mt19937_64 rng(1002);
  std::uniform_int_distribution<int> count(1, 200), size(8, 64), tile(4, 32);
  double worst = 0.0;
  auto compare = [&](const Image<double>& a, const Image<double>& b) {
    for (std::size_t i = 0; i < a.data.size(); ++i) {
      const double denom = std::max(std::abs(b.data[i]), 1e-300);
      worst = std::max(worst, std::abs(a.data[i] - b.data[i]) / denom * (a.data[i] != b.data[i]));
    }
  };
  for (int scene = 0; scene < 50; ++scene) {
    oracle::SceneOptions o;
    o.count = count(rng);
    o.width = size(rng);
    o.height = size(rng);
    o.max_opacity = 0.99;
    Camera<double> cam;
    const auto set = oracle::random_scene(rng, o, &cam);
    // Early stop disabled; once with every contributor, once with the skip threshold.
    RenderSettings s = RenderSettings::exact();
    s.tile_size = tile(rng);
    for (double skip : {0.0, 1.0 / 255.0}) {
      s.alpha_skip = skip;
      const auto tiled = render(set, cam, s);
      const auto naive = oracle::naive_render(set, cam, s);
      compare(tiled.color, naive.color);
      compare(tiled.depth, naive.depth);
      compare(tiled.final_transmittance, naive.transmittance);
    }
  }
  return {worst <= 1e-6, fmt("50 scenes, max relative pixel error %.2e (limit 1e-6)", worst)};
}

// 3. |G| <= F at every iteration boundary of a full run, read back from series.csv.
Outcome hard_budget() {
  SyntheticOptions so;
  so.seed = 3;
  so.n_gaussians = 400;
  so.n_cameras = 16;
  so.test_every = 0;
  const auto scene = generate_synthetic(so);
  const std::size_t budget = 5000;
  TrainConfig cfg = synthetic_config(budget, 5000);
  cfg.budget.densify_begin = 100;
  cfg.budget.densify_end = 2500;
  cfg.budget.compensate_begin = 2500;
  cfg.budget.compensate_end = 4000;
  cfg.budget.top_k = 50;
  cfg.budget.grow_threshold = 0.0;  // grow every event so the run presses against the budget
  const auto result = train<double>(scene.dataset, cfg);
  oracle::TempDir dir;
  write_run(dir / "run", result, cfg, false);
  std::istringstream csv(slurp(dir / "run" / "series.csv"));
  std::string line;
  std::getline(csv, line);
  std::size_t rows = 0, peak = 0, over = 0, at_budget = 0;
  while (std::getline(csv, line)) {
    const std::size_t n = std::stoul(line.substr(line.find(',') + 1));
    ++rows;
    peak = std::max(peak, n);
    over += n > budget;
    at_budget += n == budget;
  }
  std::size_t prunes = 0;
  for (const auto& e : result.report.events) prunes += e.kind == "budget_prune";
  const bool pass = rows == 5001 && over == 0;
  return {pass, fmt("%zu boundaries, peak %zu, %zu at the budget, %zu above F = %zu, %zu budget prunes", rows, peak,
                    at_budget, over, budget, prunes)};
}

// 4. 1 - T_final equals the sum of blend weights on every evaluation render.
template <typename S>
double conservation_error(const SyntheticScene& scene) {
  TrainConfig cfg = synthetic_config(200, 600);
  cfg.eval_interval = 200;
  cfg.precision = sizeof(S) == 4 ? Precision::kFloat32 : Precision::kFloat64;
  double worst = 0.0;
  TrainHooks<S> hooks;
  hooks.on_eval_render = [&](long, int, const RenderOutput<S>& r) {
    for (int y = 0; y < r.height; ++y)
      for (int x = 0; x < r.width; ++x) {
        S sum = S(0);
        for (const auto& rec : r.records_at(x, y)) sum += rec.alpha * rec.transmittance;
        worst = std::max(worst, double(std::abs((S(1) - r.final_transmittance.at(x, y)) - sum)));
      }
  };
  train<S>(scene.dataset, cfg, hooks);
  return worst;
}

Outcome blending_conservation() {
  const auto scene = generate_synthetic(SyntheticOptions{});
  const double f = conservation_error<float>(scene), d = conservation_error<double>(scene);
  return {f <= 1e-6 && d <= 1e-12, fmt("max |(1 - T) - sum w|: f32 %.2e (limit 1e-6), f64 %.2e (limit 1e-12)", f, d)};
}

// 5. Shifted clones get distinct gradients; unshifted clones get identical ones.
Outcome symmetry_breaking() {
  GaussianSet<double> set(0);
  auto add = [&](Vec3<double> pos, Vec3<double> color, double opacity) {
    Gaussian<double> g;
    g.position = pos;
    g.log_scale = Vec3<double>(std::log(0.25), std::log(0.15), std::log(0.2));
    g.rotation = Vec4<double>(0.9, 0.1, -0.2, 0.3).normalized();
    g.opacity_logit = logit(opacity);
    g.sh(0, 0) = (color.x() - 0.5) / kShC0;
    g.sh(0, 1) = (color.y() - 0.5) / kShC0;
    g.sh(0, 2) = (color.z() - 0.5) / kShC0;
    set.push_back(g);
  };
  add(Vec3<double>(-0.1, 0.05, 3.0), Vec3<double>(0.8, 0.3, 0.2), 0.6);
  add(Vec3<double>(0.15, -0.05, 3.3), Vec3<double>(0.2, 0.5, 0.9), 0.7);
  const Camera<double> cam = oracle::axis_camera(32, 32, 40.0);
  Image<double> target(32, 32, 3);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      target.at(x, y, 0) = 0.3 + 0.02 * x;
      target.at(x, y, 1) = 0.6 - 0.01 * y;
      target.at(x, y, 2) = 0.2;
    }
  const RenderSettings rs = RenderSettings::exact();

  auto clone_gradients = [&](double eta, double* moved) {
    ModelState<double> model(set);
    const auto fwd = render(model.set, cam, rs);
    const auto g = backward(model.set, fwd, loss_and_grad(fwd.color, target, 0.2).grad);
    accumulate_stats(model.set, g);
    BudgetPolicy p;
    p.budget = 10;
    p.growth_cap_fraction = 1.0;
    p.grow_threshold = 0.0;
    p.split_scale_fraction = 10.0;  // clone, never split
    p.shift_scale = eta;
    ScalarVector<double> scores(2);
    scores << 1.0, 0.0;  // clone the first Gaussian only
    std::mt19937_64 rng(5);
    const GrowResult gr = grow(model, scores, p, 1.0, rng);
    const int parent = gr.parent_ids.at(0), clone = gr.clone_ids.at(0);
    *moved = (model.set.position(clone) - model.set.position(parent)).norm();
    const auto fwd2 = render(model.set, cam, rs);
    const auto g2 = backward(model.set, fwd2, loss_and_grad(fwd2.color, target, 0.2).grad);
    return (g2.d_position.row(clone) - g2.d_position.row(parent)).norm();
  };
  double moved_shift = 0.0, moved_zero = 0.0;
  const double diff_shift = clone_gradients(-1.0, &moved_shift);
  const double diff_zero = clone_gradients(0.0, &moved_zero);
  return {diff_shift > 0.0 && diff_zero <= 1e-12 && moved_zero == 0.0,
          fmt("eta = -1: clone moved %.3e, |grad(clone) - grad(parent)| = %.3e; eta = 0: moved %.1e, difference %.3e "
              "(limit 1e-12)",
              moved_shift, diff_shift, moved_zero, diff_zero)};
}

// 6. Compensation recovers a patch that is absent from the initial points.
constexpr double kCompensationGap = 0.5;  // dB, from the pilot runs

Outcome compensation_efficacy() {
  SyntheticOptions so;
  so.with_patch = true;
  const auto scene = generate_synthetic(so);
  const Vec3<double> patch = *scene.patch_position;
  TrainConfig cfg = synthetic_config(200, 2000);
  const long window = cfg.budget.compensate_end - cfg.budget.compensate_begin;

  double nearest_new = std::numeric_limits<double>::infinity(), median_nn = 0.0;
  std::size_t new_count = 0;
  TrainHooks<double> hooks;
  hooks.on_iteration = [&](long t, const ModelState<double>& m) {
    if (t != cfg.budget.compensate_end) return;
    const GaussianSet<double>& s = m.set;
    std::vector<double> nn;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < s.size(); ++j)
        if (j != i) best = std::min(best, (s.position(i) - s.position(j)).norm());
      nn.push_back(best);
      // Age counts optimizer steps since creation: younger than the window means spawned inside it.
      if (s.stats.age[i] <= window) {
        ++new_count;
        nearest_new = std::min(nearest_new, (s.position(i) - patch).norm());
      }
    }
    std::nth_element(nn.begin(), nn.begin() + std::ptrdiff_t(nn.size() / 2), nn.end());
    median_nn = nn[nn.size() / 2];
  };
  const auto with = train<double>(scene.dataset, cfg, hooks);
  TrainConfig off = cfg;
  off.budget.enable_compensation = false;
  const auto without = train<double>(scene.dataset, off);
  const double p_with = with.report.final_eval().test_psnr, p_without = without.report.final_eval().test_psnr;
  const bool near = nearest_new <= 3.0 * median_nn;
  const bool better = p_with - p_without >= kCompensationGap;
  return {near && better,
          fmt("%zu Gaussians spawned in the window, nearest %.3f from the patch (limit 3 x median NN = %.3f); test PSNR "
              "%.2f dB with vs %.2f dB without (gap %.2f, required %.2f)",
              new_count, nearest_new, 3.0 * median_nn, p_with, p_without, p_with - p_without, kCompensationGap)};
}

// 7. Iterative budgeting against densify-then-one-shot-prune.
Outcome iterative_vs_one_shot() {
  int quality_wins = 0, memory_wins = 0;
  std::string rows;
  for (std::uint64_t seed : {11, 12, 13}) {
    SyntheticOptions so;
    so.seed = seed;
    const auto scene = generate_synthetic(so);
    TrainConfig cfg = synthetic_config(150, 2000);
    cfg.seed = seed;
    cfg.budget.grow_interval = 50;
    cfg.budget.densify_end = 1000;
    cfg.budget.compensate_begin = 1000;
    cfg.budget.compensate_end = 1500;
    const auto it = train<double>(scene.dataset, cfg);
    TrainConfig os = cfg;
    os.budget.mode = BudgetMode::kOneShot;
    const auto one = train<double>(scene.dataset, os);
    const double pi = it.report.final_eval().test_psnr, po = one.report.final_eval().test_psnr;
    const std::size_t mi = it.report.memory.peak_total_bytes, mo = one.report.memory.peak_total_bytes;
    quality_wins += pi >= po;
    memory_wins += mi < mo;
    rows += fmt("%sseed %llu: PSNR %.2f vs %.2f, peak %zu vs %zu Gaussians, %zu vs %zu bytes", rows.empty() ? "" : "; ",
                (unsigned long long)seed, pi, po, it.report.peak_gaussians, one.report.peak_gaussians, mi, mo);
  }
  return {quality_wins >= 2 && memory_wins == 3,
          fmt("iterative vs one-shot: PSNR not lower on %d/3 (need 2), lower memory on %d/3 (need 3); ", quality_wins,
              memory_wins) +
              rows};
}

// 8. Importance scores and removal order against per-ray enumeration.
Outcome importance_pruning() {
  std::mt19937_64 rng(1008);
  std::uniform_int_distribution<int> count(5, 50);
  int mismatched_order = 0, nonzero_dead = 0, survived_dead = 0;
  double worst = 0.0;
  for (int scene = 0; scene < 20; ++scene) {
    oracle::SceneOptions o;
    o.count = count(rng);
    o.max_opacity = 0.99;
    Camera<double> cam;
    auto set = oracle::random_scene(rng, o, &cam);
    std::vector<int> dead;
    for (Eigen::Index i = 0; i < set.size(); i += 4) {
      set.opacity_logits(i, 0) = -std::numeric_limits<double>::infinity();
      dead.push_back(int(i));
    }
    std::vector<Camera<double>> cams{cam};
    for (double dx : {-0.4, 0.4}) {
      Camera<double> c = cam;
      c.translation.x() = dx;
      c.id = int(cams.size());
      cams.push_back(c);
    }
    RenderSettings s;
    s.projection.cull_footprint = false;
    const auto scores = importance_scores(set, std::span<const Camera<double>>(cams), s);
    std::vector<double> brute(std::size_t(set.size()), 0.0);
    for (const auto& c : cams) {
      const auto n = oracle::naive_render(set, c, s);
      for (std::size_t i = 0; i < brute.size(); ++i) brute[i] = std::max(brute[i], n.max_contrib[i]);
    }
    std::vector<int> order(brute.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      if (brute[std::size_t(a)] != brute[std::size_t(b)]) return brute[std::size_t(a)] < brute[std::size_t(b)];
      return set.opacity(a) < set.opacity(b);
    });
    for (std::size_t i = 0; i < brute.size(); ++i) worst = std::max(worst, std::abs(scores[Eigen::Index(i)] - brute[i]));
    mismatched_order += least_important(set, scores, 0) != order;
    for (int d : dead) nonzero_dead += scores[d] != 0.0;
    ModelState<double> model(set);
    const auto removed = budget_prune(model, scores, set.size() - dead.size());
    std::vector<int> sorted_removed = removed;
    std::sort(sorted_removed.begin(), sorted_removed.end());
    survived_dead += sorted_removed != dead;
  }
  return {mismatched_order == 0 && nonzero_dead == 0 && survived_dead == 0 && worst <= 1e-12,
          fmt("20 scenes x 3 views: max score difference %.1e, order mismatches %d, zero-opacity with R > 0: %d, "
              "scenes where zero-opacity Gaussians were not the ones removed: %d",
              worst, mismatched_order, nonzero_dead, survived_dead)};
}

// 9. Reconstruction quality on the seed-7 scene.
constexpr double kReconstructionBar = 30.0;  // dB

Outcome synthetic_reconstruction() {
  const auto scene = generate_synthetic(SyntheticOptions{});
  TrainConfig cfg = synthetic_config(200, 2000);
  cfg.seed = 7;
  const auto r = train<double>(scene.dataset, cfg);
  const double p = r.report.final_eval().test_psnr;
  return {p >= kReconstructionBar, fmt("test PSNR %.2f dB (bar %.1f dB), %zu Gaussians, peak %zu", p, kReconstructionBar,
                                       r.report.final_gaussians, r.report.peak_gaussians)};
}

// 10. The image cache never holds more than its capacity and serves exact images.
Outcome dataloader_bound() {
  oracle::TempDir dir;
  SyntheticOptions so;
  so.n_cameras = 20;
  so.n_gaussians = 20;
  so.width = so.height = 32;
  so.test_every = 0;
  save_dataset(generate_synthetic(so).dataset, dir / "ds");
  const Dataset ds = load_dataset(dir / "ds");

  std::size_t max_resident = 0, served = 0, mismatched = 0;
  {
    PrefetchCache cache(4, int(ds.size()), [&](int v) { return ds.load_image(v); }, true);
    std::mt19937_64 rng(10);
    std::vector<int> schedule;
    for (int epoch = 0; epoch < 10; ++epoch) {
      std::vector<int> perm(20);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      schedule.insert(schedule.end(), perm.begin(), perm.end());
    }
    for (std::size_t i = 0; i < schedule.size(); ++i) {
      const std::size_t end = std::min(schedule.size(), i + 4);
      cache.prefetch(std::vector<int>(schedule.begin() + std::ptrdiff_t(i), schedule.begin() + std::ptrdiff_t(end)));
      const auto img = cache.get(schedule[i]);
      const Image<float> direct = read_png(ds.image_paths[std::size_t(schedule[i])]);
      ++served;
      mismatched += std::memcmp(img->data.data(), direct.data.data(), direct.data.size() * sizeof(float)) != 0 ||
                    img->data.size() != direct.data.size();
      max_resident = std::max(max_resident, cache.resident());
    }
    max_resident = std::max(max_resident, cache.peak_resident());
  }
  TrainConfig cfg = synthetic_config(100, 300);
  cfg.cache_capacity = 4;
  const auto r = train<double>(ds, cfg);
  const bool pass = max_resident <= 4 && mismatched == 0 && r.report.cache_peak_resident <= 4;
  return {pass, fmt("cache: %zu images served, peak resident %zu (limit 4), %zu differ from direct loads; training run "
                    "peak resident %zu, %zu evictions",
                    served, max_resident, mismatched, r.report.cache_peak_resident, r.report.cache_evictions)};
}

// 11. Two identical single-worker runs are byte-identical.
Outcome determinism() {
  oracle::TempDir dir;
  const auto scene = generate_synthetic(SyntheticOptions{});
  TrainConfig cfg = synthetic_config(200, 1500);
  cfg.seed = 21;
  cfg.threads = 1;
  for (const char* name : {"a", "b"}) write_run(dir / name, train<double>(scene.dataset, cfg), cfg, false);
  int differing = 0;
  std::string which;
  for (const char* f : {"report.json", "checkpoint.ply", "series.csv", "events.jsonl"}) {
    if (slurp(dir / "a" / f) != slurp(dir / "b" / f)) {
      ++differing;
      which += std::string(" ") + f;
    }
  }
  const std::size_t bytes = slurp(dir / "a" / "checkpoint.ply").size();
  return {differing == 0, fmt("report.json, checkpoint.ply (%zu bytes), series.csv, events.jsonl compared: %d differ%s",
                              bytes, differing, which.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  app.add_option("--only", only, "Criterion numbers to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"rasterizer oracle equivalence", rasterizer_oracle},
      {"hard budget invariant", hard_budget},
      {"blending conservation", blending_conservation},
      {"symmetry breaking", symmetry_breaking},
      {"compensation efficacy", compensation_efficacy},
      {"iterative vs one-shot", iterative_vs_one_shot},
      {"importance pruning sanity", importance_pruning},
      {"synthetic reconstruction", synthetic_reconstruction},
      {"dataloader bound", dataloader_bound},
      {"determinism", determinism},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = int(i) + 1;
    if (!selected.empty() && !selected.count(number)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << number << ". " << criteria[i].first << ": " << o.detail
              << fmt(" (%.1f s)", secs) << std::endl;
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
