#include "distill/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>

#include "distill/error.hpp"
#include "distill/kernels.hpp"
#include "distill/rng.hpp"

namespace distill {

namespace {

enum StreamKey : std::uint64_t {
  kShuffleStream = 0x73687566ULL,
  kAugmentStream = 0x61756720ULL,
  kInitStream = 0x696e6974ULL,
};

const char* stage_name(Stage s) { return s == Stage::Pretrain ? "pretrain" : "distill"; }

Detector<float>& cached_detector(const std::string& architecture_id, int slot) {
  thread_local std::map<std::pair<std::string, int>, std::unique_ptr<Detector<float>>> cache;
  auto& entry = cache[{architecture_id, slot}];
  if (!entry) entry = std::make_unique<Detector<float>>(ArchitectureSpec::from_id(architecture_id));
  return *entry;
}

kernels::AdamHyper adam_hyper(const TrainConfig& c) {
  kernels::AdamHyper h;
  h.learning_rate = static_cast<float>(c.learning_rate);
  h.beta1 = static_cast<float>(c.adam_beta1);
  h.beta2 = static_cast<float>(c.adam_beta2);
  h.epsilon = static_cast<float>(c.adam_epsilon);
  h.weight_decay = static_cast<float>(c.weight_decay);
  return h;
}

/// Fisher-Yates permutations of [0, n), reshuffled each time a pass ends.
class CyclicSampler {
 public:
  CyclicSampler(std::size_t n, std::uint64_t seed, std::uint64_t stage, std::uint64_t epoch,
                std::uint64_t subset)
      : n_(n), seed_(seed), stage_(stage), epoch_(epoch), subset_(subset) {}

  std::size_t next() {
    if (pos_ == order_.size()) reshuffle();
    return order_[pos_++];
  }

 private:
  void reshuffle() {
    order_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
    Rng rng = make_rng({seed_, kShuffleStream, stage_, epoch_, subset_, cycle_++});
    for (std::size_t i = n_; i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % i);
      std::swap(order_[i - 1], order_[j]);
    }
    pos_ = 0;
  }

  std::size_t n_;
  std::uint64_t seed_, stage_, epoch_, subset_;
  std::uint64_t cycle_ = 0;
  std::size_t pos_ = 0;
  std::vector<std::size_t> order_;
};

LossValue apply_step(TrainState& state, std::span<const Sample> batch, const TrainConfig& config,
                     bool distill) {
  if (batch.empty()) throw ConfigError("training step on an empty batch");
  const std::string& arch_id = state.student.architecture_id;
  if (state.teacher.architecture_id != arch_id) {
    throw ConfigError("teacher and student architectures differ");
  }
  Detector<float>& student = cached_detector(arch_id, 0);
  Detector<float>& teacher = cached_detector(arch_id, 1);

  int n_sup = 0;
  int n_semi = 0;
  for (const Sample& s : batch) {
    if (s.label_kind == LabelKind::ImagePositive) {
      if (!distill) throw ContractError("supervised pre-training batch contains a P sample");
      ++n_semi;
    } else {
      ++n_sup;
    }
  }

  std::vector<float> grads(state.student.parameters.size(), 0.0f);
  std::vector<float> grad_logits;
  std::vector<ProbabilityMap> predictions;
  std::vector<ProbabilityMap> pseudo_gts;
  std::vector<GtMask> masks;
  predictions.reserve(batch.size());
  pseudo_gts.reserve(batch.size());
  masks.reserve(batch.size());
  std::vector<BatchMember> members;

  for (const Sample& s : batch) {
    student.forward(state.student.parameters, s.image);
    const auto probs = student.probabilities();
    predictions.emplace_back(s.image.height(), s.image.width(),
                             std::vector<float>(probs.begin(), probs.end()));
    grad_logits.assign(probs.size(), 0.0f);
    BatchMember m;
    m.label_kind = s.label_kind;
    m.prediction = &predictions.back();
    double weight = 0.0;
    if (s.label_kind == LabelKind::ImagePositive) {
      // The pseudo-GT is a constant target: the teacher only runs forward.
      teacher.forward(state.teacher.parameters, s.image);
      const auto tp = teacher.probabilities();
      ProbabilityMap raw(s.image.height(), s.image.width(), std::vector<float>(tp.begin(), tp.end()));
      pseudo_gts.push_back(aals(raw, config.sharpening));
      m.pseudo_gt = &pseudo_gts.back();
      KlHead<float>(pseudo_gts.back(), config.sharpening.clamp_epsilon).evaluate(probs, grad_logits);
      weight = 1.0 / n_semi;
    } else {
      masks.push_back(gt_mask_of(s));
      m.target = &masks.back();
      BceHead<float>(masks.back()).evaluate(probs, grad_logits);
      weight = 1.0 / n_sup;
    }
    for (float& g : grad_logits) g = static_cast<float>(g * weight);
    student.backward(state.student.parameters, grad_logits, grads);
    members.push_back(m);
  }

  const LossValue loss = total_loss(members);
  if (!std::isfinite(loss.total)) {
    throw NumericalError("non-finite training loss at step " + std::to_string(state.step_index) +
                         " (supervised " + std::to_string(loss.supervised_term) + ", semi " +
                         std::to_string(loss.semi_term) + ")");
  }
  for (float g : grads) {
    if (!std::isfinite(g)) {
      throw NumericalError("non-finite gradient at step " + std::to_string(state.step_index));
    }
  }

  state.step_index += 1;
  kernels::adamw_step(state.student.parameters, grads, state.adam_m, state.adam_v,
                      adam_hyper(config), static_cast<long>(state.step_index));
  state.student.step_index += 1;
  if (distill) {
    state.teacher = ema_update(state.teacher, state.student, config.ema_alpha);
  }
  return loss;
}

std::vector<Sample> positive_subset(const Dataset& dataset, double fraction) {
  const auto n = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(dataset.positive.size()) - 1e-9));
  std::vector<Sample> out(dataset.positive.begin(),
                          dataset.positive.begin() + static_cast<std::ptrdiff_t>(std::min(n, dataset.positive.size())));
  for (Sample& s : out) s.boxes.clear();  // hidden from training
  return out;
}

void run_epochs(const Dataset& dataset, const TrainConfig& config, TrainState& state,
                int total_epochs, const StageOptions& options) {
  const bool distill = state.stage == Stage::Distill;
  const std::vector<Sample> no_positives;
  const std::vector<Sample> positives =
      distill ? positive_subset(dataset, config.positive_fraction) : no_positives;
  const std::array<const std::vector<Sample>*, kSubsetCount> subsets{&dataset.region, &dataset.negative,
                                                                     &positives};
  const std::array<std::size_t, kSubsetCount> sizes{dataset.region.size(), dataset.negative.size(),
                                                    positives.size()};
  const auto fractions = effective_fractions(config, sizes);
  const std::size_t total = sizes[0] + sizes[1] + sizes[2];
  const int steps = config.steps_per_epoch > 0
                        ? config.steps_per_epoch
                        : static_cast<int>((total + static_cast<std::size_t>(config.batch_size) - 1) /
                                           static_cast<std::size_t>(config.batch_size));
  const auto stage_key = static_cast<std::uint64_t>(state.stage);

  while (state.epochs_done_in_stage < total_epochs) {
    const auto epoch = static_cast<std::uint64_t>(state.epochs_done_in_stage);
    const auto plan = plan_batches(fractions, config.batch_size, steps);
    std::vector<CyclicSampler> samplers;
    for (std::size_t k = 0; k < kSubsetCount; ++k) {
      samplers.emplace_back(sizes[k], config.seed, stage_key, epoch, k);
    }

    double sum_total = 0.0, sum_sup = 0.0, sum_semi = 0.0;
    std::vector<Sample> batch;
    for (int step = 0; step < steps; ++step) {
      batch.clear();
      std::uint64_t slot = 0;
      for (std::size_t k = 0; k < kSubsetCount; ++k) {
        for (int j = 0; j < plan[static_cast<std::size_t>(step)][k]; ++j) {
          const Sample& src = (*subsets[k])[samplers[k].next()];
          if (config.augment) {
            Rng rng = make_rng({config.seed, kAugmentStream, stage_key, epoch,
                                static_cast<std::uint64_t>(step), slot});
            batch.push_back(augment(src, rng, config.augmentation));
          } else {
            batch.push_back(src);
          }
          ++slot;
        }
      }
      const LossValue loss = distill ? distill_step(state, batch, config)
                                     : pretrain_step(state, batch, config);
      sum_total += loss.total;
      sum_sup += loss.supervised_term;
      sum_semi += loss.semi_term;
    }

    const MetricsReport val = evaluate_checkpoint(state.student, dataset.validation);
    EpochRecord rec;
    rec.epoch = static_cast<int>(state.history.size()) + 1;
    rec.stage = stage_name(state.stage);
    rec.loss_total = sum_total / steps;
    rec.loss_supervised = sum_sup / steps;
    rec.loss_semi = sum_semi / steps;
    rec.val_auroc = val.auroc;
    rec.val_froc = val.froc.score;
    state.history.push_back(rec);
    if (val.auroc >= state.best_validation_auroc) {
      state.best_validation_auroc = val.auroc;
      state.best_checkpoint = state.student;
    }
    state.epochs_done_in_stage += 1;
    if (options.on_epoch) options.on_epoch(state);
  }
}

// Little-endian binary helpers for the state file.
void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}
std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("truncated training state");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}
void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }
double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }
void put_str(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::string get_str(std::istream& is) {
  const auto n = get_u64(is);
  if (n > (1u << 20)) throw std::runtime_error("corrupt training state string");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}
void put_floats(std::ostream& os, const std::vector<float>& v) {
  put_u64(os, v.size());
  write_f32_le(os, v);
}
std::vector<float> get_floats(std::istream& is) {
  const auto n = get_u64(is);
  if (n > (1u << 28)) throw std::runtime_error("corrupt training state vector");
  std::vector<float> v(n);
  read_f32_le(is, v);
  return v;
}
void put_ckpt(std::ostream& os, const ModelCheckpoint& c) {
  put_str(os, c.architecture_id);
  put_u64(os, c.step_index);
  put_floats(os, c.parameters);
}
ModelCheckpoint get_ckpt(std::istream& is) {
  ModelCheckpoint c;
  c.architecture_id = get_str(is);
  c.step_index = get_u64(is);
  c.parameters = get_floats(is);
  return c;
}

constexpr const char* kStateMagic = "DISTILL-STATE-1\n";

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !(weight_decay >= 0.0)) {
    throw ConfigError("learning_rate must be > 0 and weight_decay >= 0");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (epochs_pretrain < 1 || epochs_distill < 0) {
    throw ConfigError("epochs_pretrain must be >= 1 and epochs_distill >= 0");
  }
  if (!(ema_alpha > 0.0 && ema_alpha < 1.0)) throw ConfigError("ema_alpha must lie in (0,1)");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 &&
        adam_epsilon > 0.0)) {
    throw ConfigError("invalid Adam parameters");
  }
  sharpening.validate();
  if (!batch_mix.empty()) {
    if (batch_mix.size() != kSubsetCount) {
      throw ConfigError("batch_mix needs three fractions over {R, N, P}");
    }
    double sum = 0.0;
    for (double f : batch_mix) {
      if (!(f >= 0.0)) throw ConfigError("batch_mix fractions must be non-negative");
      sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw ConfigError("batch_mix fractions must sum to 1");
  }
  if (min_region_per_batch < 0 || min_region_per_batch > batch_size) {
    throw ConfigError("min_region_per_batch must lie in [0, batch_size]");
  }
  if (!(positive_fraction >= 0.0 && positive_fraction <= 1.0)) {
    throw ConfigError("positive_fraction must lie in [0,1]");
  }
  if (steps_per_epoch < 0) throw ConfigError("steps_per_epoch must be >= 0");
  architecture.validate();
}

TrainState make_state(const ModelCheckpoint& init, Stage stage) {
  init.validate();
  TrainState s;
  s.student = init;
  s.teacher = init;
  s.adam_m.assign(init.parameters.size(), 0.0f);
  s.adam_v.assign(init.parameters.size(), 0.0f);
  s.stage = stage;
  s.best_checkpoint = init;
  return s;
}

ModelCheckpoint ema_update(const ModelCheckpoint& teacher, const ModelCheckpoint& student,
                           double alpha) {
  if (teacher.architecture_id != student.architecture_id ||
      teacher.parameters.size() != student.parameters.size()) {
    throw ConfigError("ema_update: teacher " + teacher.architecture_id + " and student " +
                      student.architecture_id + " differ");
  }
  ModelCheckpoint out = teacher;
  kernels::ema_update(out.parameters, student.parameters, alpha);
  out.step_index += 1;
  return out;
}

std::array<double, kSubsetCount> effective_fractions(const TrainConfig& config,
                                                     const std::array<std::size_t, kSubsetCount>& sizes) {
  std::array<double, kSubsetCount> f{};
  const double total = static_cast<double>(sizes[0] + sizes[1] + sizes[2]);
  if (total == 0.0) throw ConfigError("no training samples");
  for (std::size_t k = 0; k < kSubsetCount; ++k) {
    if (sizes[k] == 0) continue;
    f[k] = config.batch_mix.empty() ? static_cast<double>(sizes[k]) / total : config.batch_mix[k];
  }
  double sum = f[0] + f[1] + f[2];
  if (sum <= 0.0) throw ConfigError("batch_mix selects no non-empty subset");
  for (double& v : f) v /= sum;

  const auto region = static_cast<std::size_t>(Subset::Region);
  if (sizes[region] > 0) {
    const double floor = std::min(1.0, static_cast<double>(config.min_region_per_batch) / config.batch_size);
    if (f[region] < floor) {
      const double others = 1.0 - f[region];
      for (std::size_t k = 0; k < kSubsetCount; ++k) {
        if (k == region) continue;
        f[k] = others > 0.0 ? f[k] * (1.0 - floor) / others : 0.0;
      }
      f[region] = others > 0.0 ? floor : 1.0;
    }
  }
  return f;
}

std::vector<std::array<int, kSubsetCount>> plan_batches(const std::array<double, kSubsetCount>& fractions,
                                                        int batch_size, int steps) {
  std::vector<std::array<int, kSubsetCount>> plan;
  plan.reserve(static_cast<std::size_t>(steps));
  std::array<double, kSubsetCount> carry{};
  for (int s = 0; s < steps; ++s) {
    std::array<double, kSubsetCount> target{};
    std::array<int, kSubsetCount> count{};
    int assigned = 0;
    for (std::size_t k = 0; k < kSubsetCount; ++k) {
      target[k] = batch_size * fractions[k] + carry[k];
      count[k] = fractions[k] > 0.0 ? std::max(0, static_cast<int>(std::floor(target[k]))) : 0;
      assigned += count[k];
    }
    // Largest remainders take the leftover slots; overshoot is removed from
    // the smallest remainders.
    while (assigned != batch_size) {
      std::size_t pick = kSubsetCount;
      for (std::size_t k = 0; k < kSubsetCount; ++k) {
        if (fractions[k] <= 0.0) continue;
        if (assigned > batch_size && count[k] == 0) continue;
        const double rem = target[k] - count[k];
        if (pick == kSubsetCount) {
          pick = k;
          continue;
        }
        const double best = target[pick] - count[pick];
        if (assigned < batch_size ? rem > best : rem < best) pick = k;
      }
      if (assigned < batch_size) {
        ++count[pick];
        ++assigned;
      } else {
        --count[pick];
        --assigned;
      }
    }
    for (std::size_t k = 0; k < kSubsetCount; ++k) carry[k] = target[k] - count[k];
    plan.push_back(count);
  }
  return plan;
}

LossValue pretrain_step(TrainState& state, std::span<const Sample> batch, const TrainConfig& config) {
  return apply_step(state, batch, config, false);
}

LossValue distill_step(TrainState& state, std::span<const Sample> batch, const TrainConfig& config) {
  return apply_step(state, batch, config, true);
}

std::vector<EvalRecord> predict_records(const ModelCheckpoint& checkpoint,
                                        std::span<const Sample> samples) {
  Predictor predict(checkpoint);
  std::vector<EvalRecord> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) {
    EvalRecord r;
    r.sample_id = s.sample_id;
    r.probability_map = predict(s.image);
    r.boxes = s.boxes;
    r.image_level_label = s.has_fracture() ? 1 : 0;
    out.push_back(std::move(r));
  }
  return out;
}

MetricsReport evaluate_checkpoint(const ModelCheckpoint& checkpoint, std::span<const Sample> samples) {
  const auto records = predict_records(checkpoint, samples);
  return evaluate_records(records);
}

TrainState run_pretrain(const Dataset& dataset, const TrainConfig& config, const StageOptions& options,
                        std::optional<TrainState> resume) {
  config.validate();
  if (dataset.region.empty()) throw ConfigError("pre-training needs at least one region-labeled sample");
  if (dataset.validation.empty()) throw ConfigError("training needs a validation split");
  TrainState state = resume ? std::move(*resume)
                            : make_state(init_parameters(config.architecture, derive_seed({config.seed, kInitStream})),
                                         Stage::Pretrain);
  if (state.stage != Stage::Pretrain) throw ConfigError("resume state is not a pre-training state");
  run_epochs(dataset, config, state, config.epochs_pretrain, options);
  return state;
}

ModelCheckpoint pretrain(const Dataset& dataset, const TrainConfig& config) {
  return run_pretrain(dataset, config).best_checkpoint;
}

TrainState run_distill(const Dataset& dataset, const TrainConfig& config, const TrainState& from,
                       const StageOptions& options) {
  config.validate();
  TrainState state;
  if (from.stage == Stage::Pretrain) {
    // Teacher and student both start from the selected pre-trained weights.
    state = make_state(from.best_checkpoint, Stage::Distill);
    state.history = from.history;
    state.best_validation_auroc = from.best_validation_auroc;
    state.best_checkpoint = from.best_checkpoint;
  } else {
    state = from;
  }
  run_epochs(dataset, config, state, config.epochs_distill, options);
  return state;
}

TrainedResult train(const Dataset& dataset, const TrainConfig& config, const StageOptions& options,
                    const TrainState* pretrained) {
  config.validate();
  TrainedResult result;
  result.pretrained = pretrained ? *pretrained : run_pretrain(dataset, config, options);
  const bool skip_distill = config.epochs_distill == 0 ||
                            positive_subset(dataset, config.positive_fraction).empty();
  const TrainState final_state =
      skip_distill ? result.pretrained : run_distill(dataset, config, result.pretrained, options);
  result.best_checkpoint = final_state.best_checkpoint;
  result.best_validation_auroc = final_state.best_validation_auroc;
  result.history = final_state.history;
  return result;
}

void save_train_state(const TrainState& s, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write training state " + path.string());
  os << kStateMagic;
  put_u64(os, static_cast<std::uint64_t>(s.stage));
  put_u64(os, static_cast<std::uint64_t>(s.epochs_done_in_stage));
  put_u64(os, s.step_index);
  put_f64(os, s.best_validation_auroc);
  put_ckpt(os, s.student);
  put_ckpt(os, s.teacher);
  put_ckpt(os, s.best_checkpoint);
  put_floats(os, s.adam_m);
  put_floats(os, s.adam_v);
  put_u64(os, s.history.size());
  for (const EpochRecord& r : s.history) {
    put_u64(os, static_cast<std::uint64_t>(r.epoch));
    put_str(os, r.stage);
    put_f64(os, r.loss_total);
    put_f64(os, r.loss_supervised);
    put_f64(os, r.loss_semi);
    put_f64(os, r.val_auroc);
    put_f64(os, r.val_froc);
  }
}

TrainState load_train_state(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read training state " + path.string());
  std::string magic(std::char_traits<char>::length(kStateMagic), '\0');
  is.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (magic != kStateMagic) throw std::runtime_error("not a training state file: " + path.string());
  TrainState s;
  s.stage = static_cast<Stage>(get_u64(is));
  s.epochs_done_in_stage = static_cast<int>(get_u64(is));
  s.step_index = get_u64(is);
  s.best_validation_auroc = get_f64(is);
  s.student = get_ckpt(is);
  s.teacher = get_ckpt(is);
  s.best_checkpoint = get_ckpt(is);
  s.adam_m = get_floats(is);
  s.adam_v = get_floats(is);
  const auto n = get_u64(is);
  for (std::uint64_t i = 0; i < n; ++i) {
    EpochRecord r;
    r.epoch = static_cast<int>(get_u64(is));
    r.stage = get_str(is);
    r.loss_total = get_f64(is);
    r.loss_supervised = get_f64(is);
    r.loss_semi = get_f64(is);
    r.val_auroc = get_f64(is);
    r.val_froc = get_f64(is);
    s.history.push_back(std::move(r));
  }
  return s;
}

std::string history_csv(std::span<const EpochRecord> history) {
  std::ostringstream os;
  os << "epoch,stage,loss_total,loss_supervised,loss_semi,val_auroc,val_froc\n";
  os << std::setprecision(10);
  for (const EpochRecord& r : history) {
    os << r.epoch << ',' << r.stage << ',' << r.loss_total << ',' << r.loss_supervised << ','
       << r.loss_semi << ',' << r.val_auroc << ',' << r.val_froc << '\n';
  }
  return os.str();
}

}  // namespace distill
