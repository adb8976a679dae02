#include "distill/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "distill/error.hpp"

namespace distill {

using nlohmann::json;

namespace {

// Reads keys of one JSON object and remembers which ones were consumed.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string where(const std::string& key = "") const {
    const std::string p = key.empty() ? path_ : (path_.empty() ? key : path_ + "." + key);
    return p.empty() ? "config" : p;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key " + where(key));
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

const char* nonlinearity_name(Nonlinearity n) { return n == Nonlinearity::Relu ? "relu" : "leaky"; }

Nonlinearity nonlinearity_from(const std::string& s) {
  if (s == "relu") return Nonlinearity::Relu;
  if (s == "leaky") return Nonlinearity::LeakyRelu;
  throw ConfigError("train.architecture.nonlinearity must be relu or leaky, got " + s);
}

void check_sweep_value(const std::string& parameter, double v) {
  const bool ok = parameter == "center_t"            ? (v > 0.0 && v < 1.0)
                  : parameter == "max_strength_a0"   ? v >= 1.0
                  : parameter == "positive_fraction" ? (v >= 0.0 && v <= 1.0)
                                                     : false;
  if (!ok) throw ConfigError("sweep value " + std::to_string(v) + " is outside the range of " + parameter);
}

}  // namespace

json to_json(const DatasetSpec& s) {
  const GeneratorParams& g = s.generator;
  return {{"image_size", s.image_size},
          {"n_region", s.n_region},
          {"n_positive", s.n_positive},
          {"n_negative", s.n_negative},
          {"breaks_min", s.breaks_min},
          {"breaks_max", s.breaks_max},
          {"n_val_positive", s.n_val_positive},
          {"n_val_negative", s.n_val_negative},
          {"n_test_positive", s.n_test_positive},
          {"n_test_negative", s.n_test_negative},
          {"seed", s.seed},
          {"generator",
           {{"bones_min", g.bones_min},
            {"bones_max", g.bones_max},
            {"bone_sigma_min", g.bone_sigma_min},
            {"bone_sigma_max", g.bone_sigma_max},
            {"bone_intensity_min", g.bone_intensity_min},
            {"bone_intensity_max", g.bone_intensity_max},
            {"gap_length_min", g.gap_length_min},
            {"gap_length_max", g.gap_length_max},
            {"gap_depth_min", g.gap_depth_min},
            {"gap_depth_max", g.gap_depth_max},
            {"displacement_max", g.displacement_max},
            {"noise_min", g.noise_min},
            {"noise_max", g.noise_max},
            {"distractor_blobs_max", g.distractor_blobs_max}}}};
}

DatasetSpec dataset_spec_from_json(const json& j) {
  DatasetSpec s;
  Fields f(j, "dataset");
  f.get("image_size", s.image_size);
  f.get("n_region", s.n_region);
  f.get("n_positive", s.n_positive);
  f.get("n_negative", s.n_negative);
  f.get("breaks_min", s.breaks_min);
  f.get("breaks_max", s.breaks_max);
  f.get("n_val_positive", s.n_val_positive);
  f.get("n_val_negative", s.n_val_negative);
  f.get("n_test_positive", s.n_test_positive);
  f.get("n_test_negative", s.n_test_negative);
  f.get("seed", s.seed);
  if (const json* gj = f.sub("generator")) {
    GeneratorParams& g = s.generator;
    Fields gf(*gj, "dataset.generator");
    gf.get("bones_min", g.bones_min);
    gf.get("bones_max", g.bones_max);
    gf.get("bone_sigma_min", g.bone_sigma_min);
    gf.get("bone_sigma_max", g.bone_sigma_max);
    gf.get("bone_intensity_min", g.bone_intensity_min);
    gf.get("bone_intensity_max", g.bone_intensity_max);
    gf.get("gap_length_min", g.gap_length_min);
    gf.get("gap_length_max", g.gap_length_max);
    gf.get("gap_depth_min", g.gap_depth_min);
    gf.get("gap_depth_max", g.gap_depth_max);
    gf.get("displacement_max", g.displacement_max);
    gf.get("noise_min", g.noise_min);
    gf.get("noise_max", g.noise_max);
    gf.get("distractor_blobs_max", g.distractor_blobs_max);
    gf.finish();
  }
  f.finish();
  return s;
}

json to_json(const TrainConfig& c) {
  const ArchitectureSpec& a = c.architecture;
  const AugmentRanges& r = c.augmentation;
  return {{"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_epsilon", c.adam_epsilon},
          {"batch_size", c.batch_size},
          {"epochs_pretrain", c.epochs_pretrain},
          {"epochs_distill", c.epochs_distill},
          {"ema_alpha", c.ema_alpha},
          {"sharpening",
           {{"center_t", c.sharpening.center_t},
            {"max_strength_a0", c.sharpening.max_strength_a0},
            {"clamp_epsilon", c.sharpening.clamp_epsilon}}},
          {"batch_mix", c.batch_mix},
          {"min_region_per_batch", c.min_region_per_batch},
          {"positive_fraction", c.positive_fraction},
          {"steps_per_epoch", c.steps_per_epoch},
          {"architecture",
           {{"widths", a.widths},
            {"fpn_width", a.fpn_width},
            {"kernel", a.kernel},
            {"nonlinearity", nonlinearity_name(a.nonlinearity)}}},
          {"augment", c.augment},
          {"augmentation",
           {{"max_rotation_deg", r.max_rotation_deg},
            {"flip_probability", r.flip_probability},
            {"max_intensity_shift", r.max_intensity_shift},
            {"contrast_min", r.contrast_min},
            {"contrast_max", r.contrast_max}}},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  Fields f(j, "train");
  f.get("learning_rate", c.learning_rate);
  f.get("weight_decay", c.weight_decay);
  f.get("adam_beta1", c.adam_beta1);
  f.get("adam_beta2", c.adam_beta2);
  f.get("adam_epsilon", c.adam_epsilon);
  f.get("batch_size", c.batch_size);
  f.get("epochs_pretrain", c.epochs_pretrain);
  f.get("epochs_distill", c.epochs_distill);
  f.get("ema_alpha", c.ema_alpha);
  if (const json* sj = f.sub("sharpening")) {
    Fields sf(*sj, "train.sharpening");
    sf.get("center_t", c.sharpening.center_t);
    sf.get("max_strength_a0", c.sharpening.max_strength_a0);
    sf.get("clamp_epsilon", c.sharpening.clamp_epsilon);
    sf.finish();
  }
  f.get("batch_mix", c.batch_mix);
  f.get("min_region_per_batch", c.min_region_per_batch);
  f.get("positive_fraction", c.positive_fraction);
  f.get("steps_per_epoch", c.steps_per_epoch);
  if (const json* aj = f.sub("architecture")) {
    Fields af(*aj, "train.architecture");
    af.get("widths", c.architecture.widths);
    af.get("fpn_width", c.architecture.fpn_width);
    af.get("kernel", c.architecture.kernel);
    std::string nl = nonlinearity_name(c.architecture.nonlinearity);
    af.get("nonlinearity", nl);
    c.architecture.nonlinearity = nonlinearity_from(nl);
    af.finish();
  }
  f.get("augment", c.augment);
  if (const json* rj = f.sub("augmentation")) {
    Fields rf(*rj, "train.augmentation");
    rf.get("max_rotation_deg", c.augmentation.max_rotation_deg);
    rf.get("flip_probability", c.augmentation.flip_probability);
    rf.get("max_intensity_shift", c.augmentation.max_intensity_shift);
    rf.get("contrast_min", c.augmentation.contrast_min);
    rf.get("contrast_max", c.augmentation.contrast_max);
    rf.finish();
  }
  f.get("seed", c.seed);
  f.finish();
  return c;
}

json to_json(const ExperimentConfig& c) {
  json j = {{"dataset", to_json(c.dataset)},
            {"train", to_json(c.train)},
            {"seeds", c.seeds},
            {"output_dir", c.output_dir}};
  if (c.sweep) j["sweep"] = {{"parameter", c.sweep->parameter}, {"values", c.sweep->values}};
  return j;
}

ExperimentConfig experiment_from_json(const json& j) {
  ExperimentConfig c;
  Fields f(j, "");
  if (const json* d = f.sub("dataset")) c.dataset = dataset_spec_from_json(*d);
  if (const json* t = f.sub("train")) c.train = train_config_from_json(*t);
  if (const json* s = f.sub("sweep"); s && !s->is_null()) {
    SweepSpec sw;
    Fields sf(*s, "sweep");
    sf.get("parameter", sw.parameter);
    sf.get("values", sw.values);
    sf.finish();
    c.sweep = sw;
  }
  f.get("seeds", c.seeds);
  f.get("output_dir", c.output_dir);
  f.finish();
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  dataset.validate();
  train.validate();
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (sweep) {
    const auto* end = std::end(kSweepParameters);
    if (std::find_if(std::begin(kSweepParameters), end,
                     [&](const char* p) { return sweep->parameter == p; }) == end) {
      throw ConfigError("sweep.parameter must be one of center_t, max_strength_a0, positive_fraction; got '" +
                        sweep->parameter + "'");
    }
    if (sweep->values.empty()) throw ConfigError("sweep.values must not be empty");
    for (double v : sweep->values) check_sweep_value(sweep->parameter, v);
  }
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like key=value: '" + assignment + "'");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key has an empty component: '" + key + "'");
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError("override key '" + key + "' descends into a non-object");
      *node = json::object();
    }
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

ExperimentConfig load_experiment_config(const std::optional<std::filesystem::path>& path,
                                        const std::vector<std::string>& overrides) {
  json j = json::object();
  if (path) {
    std::ifstream is(*path);
    if (!is) throw ConfigError("cannot read config file " + path->string());
    j = json::parse(is, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file " + path->string() + " is not valid JSON");
  }
  for (const std::string& o : overrides) apply_override(j, o);
  return experiment_from_json(j);
}

std::string config_hash(const ExperimentConfig& config) {
  json j = {{"dataset", to_json(config.dataset)}, {"train", to_json(config.train)}};
  if (config.sweep) j["sweep"] = {{"parameter", config.sweep->parameter}, {"values", config.sweep->values}};
  return fnv1a_hex(j.dump());
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void apply_sweep_value(TrainConfig& config, const std::string& parameter, double value) {
  check_sweep_value(parameter, value);
  if (parameter == "center_t") {
    config.sharpening.center_t = value;
  } else if (parameter == "max_strength_a0") {
    config.sharpening.max_strength_a0 = value;
  } else {
    config.positive_fraction = value;
  }
}

}  // namespace distill
