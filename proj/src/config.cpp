#include "bsplat/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace bsplat {

using nlohmann::json;
using ordered = nlohmann::ordered_json;

namespace {

template <typename E>
struct EnumName {
  E value;
  const char* name;
};

constexpr EnumName<Precision> kPrecisions[] = {{Precision::kFloat32, "f32"}, {Precision::kFloat64, "f64"}};
constexpr EnumName<ErrorMapMode> kErrorMaps[] = {{ErrorMapMode::kResidual, "residual"},
                                                 {ErrorMapMode::kL1Gradient, "l1_gradient"},
                                                 {ErrorMapMode::kLossGradient, "loss_gradient"}};
constexpr EnumName<BudgetMode> kBudgetModes[] = {{BudgetMode::kIterative, "iterative"}, {BudgetMode::kOneShot, "one_shot"}};
constexpr EnumName<ContributionMode> kContributions[] = {{ContributionMode::kAlphaTau, "alpha_tau"},
                                                         {ContributionMode::kTau, "tau"}};

template <typename E, std::size_t N>
const char* name_of(const EnumName<E> (&table)[N], E v) {
  for (const auto& e : table)
    if (e.value == v) return e.name;
  return "?";
}

// Reads fields of one JSON object and remembers which keys were consumed so
// leftovers can be reported as unknown.
class Reader {
 public:
  Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <typename T>
  void read(const char* key, T& target) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    try {
      target = obj_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("bad value for '" + qualified(key) + "'");
    }
  }

  template <typename E, std::size_t N>
  void read_enum(const char* key, E& target, const EnumName<E> (&table)[N]) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    const json& v = obj_.at(key);
    if (v.is_string()) {
      for (const auto& e : table) {
        if (v.get<std::string>() == e.name) {
          target = e.value;
          return;
        }
      }
    }
    std::string allowed;
    for (const auto& e : table) allowed += std::string(allowed.empty() ? "" : ", ") + e.name;
    throw ConfigError("'" + qualified(key) + "' must be one of: " + allowed);
  }

  Reader child(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Reader(obj_.contains(key) ? obj_.at(key) : empty, qualified(key));
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items())
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + qualified(key) + "'");
  }

 private:
  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }

  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

const char* to_string(Precision p) { return name_of(kPrecisions, p); }
const char* to_string(ErrorMapMode m) { return name_of(kErrorMaps, m); }
const char* to_string(BudgetMode m) { return name_of(kBudgetModes, m); }
const char* to_string(ContributionMode m) { return name_of(kContributions, m); }

void TrainConfig::validate() const {
  if (iterations < 0) throw ConfigError("iterations must be non-negative");
  if (threads < 1) throw ConfigError("threads must be at least 1");
  if (cache_capacity < 1) throw ConfigError("cache_capacity must be at least 1");
  if (sh_degree < 0 || sh_degree > kMaxShDegree) throw ConfigError("sh_degree must be in [0, 3]");
  if (!(loss_lambda >= 0.0 && loss_lambda <= 1.0)) throw ConfigError("loss_lambda must be in [0, 1]");
  if (sh_increase_interval < 0) throw ConfigError("sh_increase_interval must be non-negative");
  if (eval_interval < 0) throw ConfigError("eval_interval must be non-negative (0: evaluate only at the end)");
  if (init_points < 0) throw ConfigError("init_points must be non-negative");
  if (init_scale_neighbors < 1) throw ConfigError("init_scale_neighbors must be at least 1");
  if (!(rates.position_init > 0.0 && rates.position_final > 0.0)) throw ConfigError("position learning rates must be positive");
  if (!(opacity_reset_value > 0.0 && opacity_reset_value < 1.0)) throw ConfigError("opacity_reset_value must be in (0, 1)");
  if (render.tile_size < 1) throw ConfigError("render.tile_size must be at least 1");
  if (!(render.alpha_max > 0.0 && render.alpha_max < 1.0)) throw ConfigError("render.alpha_max must be in (0, 1)");
  if (!(render.projection.near_plane > 0.0)) throw ConfigError("render.near_plane must be positive");
  budget.validate(iterations, 0);
}

TrainConfig config_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  TrainConfig c;
  Reader r(doc, "");
  r.read("dataset", c.dataset);
  r.read("output", c.output);
  r.read("seed", c.seed);
  r.read("iterations", c.iterations);
  r.read("threads", c.threads);
  r.read_enum("precision", c.precision, kPrecisions);
  r.read("cache_capacity", c.cache_capacity);
  r.read("sh_degree", c.sh_degree);
  r.read("sh_increase_interval", c.sh_increase_interval);
  r.read("background", c.background);
  r.read("loss_lambda", c.loss_lambda);
  r.read_enum("error_map", c.error_map, kErrorMaps);
  r.read("eval_interval", c.eval_interval);
  r.read("init_points", c.init_points);
  r.read("init_scale_neighbors", c.init_scale_neighbors);
  r.read("save_eval_images", c.save_eval_images);

  Reader b = r.child("budget");
  BudgetPolicy& p = c.budget;
  b.read("max_gaussians", p.budget);
  b.read("grow_interval", p.grow_interval);
  b.read("budget_prune_interval", p.budget_prune_interval);
  b.read("densify_begin", p.densify_begin);
  b.read("densify_end", p.densify_end);
  b.read("compensate_begin", p.compensate_begin);
  b.read("compensate_end", p.compensate_end);
  b.read("compensate_interval", p.compensate_interval);
  b.read("top_k", p.top_k);
  b.read("opacity_threshold", p.opacity_threshold);
  b.read("split_scale_fraction", p.split_scale_fraction);
  b.read("growth_cap_fraction", p.growth_cap_fraction);
  b.read("grow_threshold", p.grow_threshold);
  b.read("color_balance", p.color_balance);
  b.read("shift_scale", p.shift_scale);
  b.read("compensation_opacity", p.compensation_opacity);
  b.read("recycle_fraction", p.recycle_fraction);
  b.read_enum("importance", p.importance_mode, kContributions);
  b.read("growth", p.enable_growth);
  b.read("compensation", p.enable_compensation);
  b.read_enum("mode", p.mode, kBudgetModes);
  b.finish();

  Reader o = r.child("optimizer");
  o.read("position_lr_init", c.rates.position_init);
  o.read("position_lr_final", c.rates.position_final);
  o.read("position_lr_steps", c.rates.position_steps);
  o.read("position_lr_scale_by_extent", c.position_lr_scale_by_extent);
  o.read("sh_dc_lr", c.rates.sh_dc);
  o.read("sh_rest_lr", c.rates.sh_rest);
  o.read("opacity_lr", c.rates.opacity);
  o.read("scale_lr", c.rates.log_scale);
  o.read("rotation_lr", c.rates.rotation);
  o.read("beta1", c.adam.beta1);
  o.read("beta2", c.adam.beta2);
  o.read("epsilon", c.adam.epsilon);
  o.read("opacity_reset_at", c.opacity_reset_at);
  o.read("opacity_reset_value", c.opacity_reset_value);
  o.read("reset_position_moments", c.reset_position_moments);
  o.finish();

  Reader rd = r.child("render");
  rd.read("tile_size", c.render.tile_size);
  rd.read("alpha_max", c.render.alpha_max);
  rd.read("alpha_skip", c.render.alpha_skip);
  rd.read("transmittance_stop", c.render.t_stop);
  rd.read("near_plane", c.render.projection.near_plane);
  rd.read("dilation", c.render.projection.dilation);
  rd.read("cull_sigma", c.render.projection.cull_sigma);
  rd.read("normalized_depth", c.render.normalized_depth);
  rd.finish();

  r.finish();
  c.render.background = c.background;
  c.render.threads = c.threads;
  return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoError::Kind::kMissingFile, "config file not found: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

std::string config_to_json(const TrainConfig& c) {
  ordered j;
  j["dataset"] = c.dataset;
  j["output"] = c.output;
  j["seed"] = c.seed;
  j["iterations"] = c.iterations;
  j["threads"] = c.threads;
  j["precision"] = to_string(c.precision);
  j["cache_capacity"] = c.cache_capacity;
  j["sh_degree"] = c.sh_degree;
  j["sh_increase_interval"] = c.sh_increase_interval;
  j["background"] = c.background;
  j["loss_lambda"] = c.loss_lambda;
  j["error_map"] = to_string(c.error_map);
  j["eval_interval"] = c.eval_interval;
  j["init_points"] = c.init_points;
  j["init_scale_neighbors"] = c.init_scale_neighbors;
  j["save_eval_images"] = c.save_eval_images;

  const BudgetPolicy& p = c.budget;
  ordered b;
  b["max_gaussians"] = p.budget;
  b["grow_interval"] = p.grow_interval;
  b["budget_prune_interval"] = p.budget_prune_interval;
  b["densify_begin"] = p.densify_begin;
  b["densify_end"] = p.densify_end;
  b["compensate_begin"] = p.compensate_begin;
  b["compensate_end"] = p.compensate_end;
  b["compensate_interval"] = p.compensate_interval;
  b["top_k"] = p.top_k;
  b["opacity_threshold"] = p.opacity_threshold;
  b["split_scale_fraction"] = p.split_scale_fraction;
  b["growth_cap_fraction"] = p.growth_cap_fraction;
  b["grow_threshold"] = p.grow_threshold;
  b["color_balance"] = p.color_balance;
  b["shift_scale"] = p.shift_scale;
  b["compensation_opacity"] = p.compensation_opacity;
  b["recycle_fraction"] = p.recycle_fraction;
  b["importance"] = to_string(p.importance_mode);
  b["growth"] = p.enable_growth;
  b["compensation"] = p.enable_compensation;
  b["mode"] = to_string(p.mode);
  j["budget"] = b;

  ordered o;
  o["position_lr_init"] = c.rates.position_init;
  o["position_lr_final"] = c.rates.position_final;
  o["position_lr_steps"] = c.rates.position_steps;
  o["position_lr_scale_by_extent"] = c.position_lr_scale_by_extent;
  o["sh_dc_lr"] = c.rates.sh_dc;
  o["sh_rest_lr"] = c.rates.sh_rest;
  o["opacity_lr"] = c.rates.opacity;
  o["scale_lr"] = c.rates.log_scale;
  o["rotation_lr"] = c.rates.rotation;
  o["beta1"] = c.adam.beta1;
  o["beta2"] = c.adam.beta2;
  o["epsilon"] = c.adam.epsilon;
  o["opacity_reset_at"] = c.opacity_reset_at;
  o["opacity_reset_value"] = c.opacity_reset_value;
  o["reset_position_moments"] = c.reset_position_moments;
  j["optimizer"] = o;

  ordered rd;
  rd["tile_size"] = c.render.tile_size;
  rd["alpha_max"] = c.render.alpha_max;
  rd["alpha_skip"] = c.render.alpha_skip;
  rd["transmittance_stop"] = c.render.t_stop;
  rd["near_plane"] = c.render.projection.near_plane;
  rd["dilation"] = c.render.projection.dilation;
  rd["cull_sigma"] = c.render.projection.cull_sigma;
  rd["normalized_depth"] = c.render.normalized_depth;
  j["render"] = rd;
  return j.dump(2) + "\n";
}

}  // namespace bsplat
