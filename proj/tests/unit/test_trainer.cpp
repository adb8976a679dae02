#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "distill/error.hpp"
#include "distill/kernels.hpp"
#include "distill/trainer.hpp"

using namespace distill;

namespace {

DatasetSpec tiny_spec() {
  DatasetSpec s;
  s.image_size = 16;
  s.n_region = 6;
  s.n_positive = 12;
  s.n_negative = 20;
  s.n_val_positive = 4;
  s.n_val_negative = 6;
  s.n_test_positive = 4;
  s.n_test_negative = 6;
  s.breaks_max = 1;
  s.generator.bones_max = 3;
  return s;
}

const Dataset& tiny_data() {
  static const Dataset d = generate_dataset(tiny_spec());
  return d;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.architecture.widths = {8, 8};
  c.architecture.fpn_width = 8;
  c.learning_rate = 1e-3;
  c.batch_size = 8;
  c.epochs_pretrain = 2;
  c.epochs_distill = 2;
  c.steps_per_epoch = 3;
  c.seed = 5;
  return c;
}

ModelCheckpoint ckpt(std::vector<float> v) {
  ArchitectureSpec a;
  ModelCheckpoint c = init_parameters(a, 0);
  c.parameters = std::move(v);
  return c;
}

}  // namespace

TEST_CASE("ema update examples") {
  const std::size_t n = ArchitectureSpec{}.parameter_count();
  const ModelCheckpoint zero = ckpt(std::vector<float>(n, 0.0f));
  const ModelCheckpoint one = ckpt(std::vector<float>(n, 1.0f));
  const ModelCheckpoint out = ema_update(zero, one, 0.999);
  for (float v : out.parameters) CHECK(v == doctest::Approx(0.001).epsilon(1e-6));
  CHECK(out.step_index == zero.step_index + 1);
  CHECK(ema_update(one, one, 0.999).parameters == one.parameters);

  ModelCheckpoint other = init_parameters(tiny_config().architecture, 0);
  CHECK_THROWS_AS(ema_update(zero, other, 0.999), ConfigError);
}

TEST_CASE("ema geometric decay for a constant student") {
  Rng rng = make_rng({21});
  std::vector<double> teacher(64), student(64), start(64);
  for (std::size_t i = 0; i < 64; ++i) {
    teacher[i] = start[i] = uniform(rng, -1, 1);
    student[i] = uniform(rng, -1, 1);
  }
  const double alpha = 0.999;
  for (int k = 1; k <= 1000; ++k) {
    kernels::scalar::ema_update(std::span<double>(teacher), std::span<const double>(student), alpha);
    if (k % 100 != 0) continue;
    for (std::size_t i = 0; i < 64; ++i) {
      const double expect = std::pow(alpha, k) * std::abs(start[i] - student[i]);
      CHECK(std::abs(std::abs(teacher[i] - student[i]) - expect) <= 1e-6 * expect);
    }
  }
}

TEST_CASE("batch fractions and plans") {
  TrainConfig c = tiny_config();
  c.batch_size = 16;
  CHECK(effective_fractions(c, {40, 4000, 400})[0] == doctest::Approx(0.25));
  c.min_region_per_batch = 2;
  const auto f = effective_fractions(c, {40, 4000, 400});
  CHECK(f[0] == doctest::Approx(0.125));
  CHECK(f[1] + f[2] == doctest::Approx(0.875));
  CHECK(f[1] / f[2] == doctest::Approx(10.0));

  const auto no_p = effective_fractions(c, {40, 4000, 0});
  CHECK(no_p[2] == 0.0);

  const int steps = 500;
  const auto plan = plan_batches(f, 16, steps);
  std::array<double, 3> totals{};
  for (const auto& step : plan) {
    CHECK(step[0] + step[1] + step[2] == 16);
    CHECK(step[0] >= 2);
    for (int k = 0; k < 3; ++k) totals[k] += step[k];
  }
  double chi2 = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double expect = f[k] * 16 * steps;
    chi2 += (totals[k] - expect) * (totals[k] - expect) / expect;
  }
  CHECK(chi2 < 5.99);  // 95% bound, two degrees of freedom

  c.batch_mix = {0.5, 0.3, 0.1};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.batch_mix = {0.25, 0.5, 0.25};
  const auto mixed = effective_fractions(c, {10, 10, 10});
  CHECK(mixed[0] == doctest::Approx(0.25));
}

TEST_CASE("step contracts") {
  const Dataset& d = tiny_data();
  const TrainConfig c = tiny_config();
  TrainState s = make_state(init_parameters(c.architecture, 1), Stage::Distill);
  CHECK_THROWS_AS(distill_step(s, std::span<const Sample>{}, c), ConfigError);
  std::vector<Sample> with_p{d.region[0], d.positive[0]};
  CHECK_THROWS_AS(pretrain_step(s, with_p, c), ContractError);
}

TEST_CASE("distill step teacher update and identity sharpening") {
  const Dataset& d = tiny_data();
  TrainConfig c = tiny_config();
  c.sharpening.max_strength_a0 = 1.0;
  TrainState s = make_state(init_parameters(c.architecture, 2), Stage::Distill);
  std::vector<Sample> batch{d.region[0], d.negative[0], d.positive[0], d.positive[1]};
  for (Sample& b : batch) {
    if (b.label_kind == LabelKind::ImagePositive) b.boxes.clear();
  }

  const ModelCheckpoint teacher_before = s.teacher;
  const LossValue first = distill_step(s, batch, c);
  CHECK(first.semi_term == 0.0);  // teacher == student, S = identity

  std::vector<float> expect = teacher_before.parameters;
  kernels::scalar::ema_update(std::span<float>(expect), std::span<const float>(s.student.parameters), c.ema_alpha);
  CHECK(s.teacher.parameters == expect);
  CHECK(s.teacher.parameters != s.student.parameters);
  for (std::size_t i = 0; i < expect.size(); ++i) {
    const double delta = static_cast<double>(s.teacher.parameters[i]) - teacher_before.parameters[i];
    const double algebra = (1.0 - c.ema_alpha) *
                           (static_cast<double>(s.student.parameters[i]) - teacher_before.parameters[i]);
    CHECK(std::abs(delta - algebra) <= 1e-7 * (1.0 + std::abs(teacher_before.parameters[i])));
  }

  // Teacher trajectory equals the offline EMA of the logged student trajectory.
  std::vector<std::vector<float>> students;
  TrainState t = make_state(init_parameters(c.architecture, 3), Stage::Distill);
  const auto t0 = t.teacher.parameters;
  for (int k = 0; k < 5; ++k) {
    distill_step(t, batch, c);
    students.push_back(t.student.parameters);
  }
  std::vector<float> offline = t0;
  for (const auto& st : students) kernels::scalar::ema_update(std::span<float>(offline), std::span<const float>(st), c.ema_alpha);
  CHECK(offline == t.teacher.parameters);
}

TEST_CASE("loss decreases over the first epoch") {
  const Dataset& d = tiny_data();
  TrainConfig c = tiny_config();
  c.augment = false;
  TrainState s = make_state(init_parameters(c.architecture, 4), Stage::Pretrain);
  std::vector<Sample> batch{d.region[0], d.region[1], d.negative[0], d.negative[1]};
  const double first = pretrain_step(s, batch, c).total;
  double last = first;
  for (int i = 0; i < 30; ++i) last = pretrain_step(s, batch, c).total;
  CHECK(last < first);
}

TEST_CASE("train history, selection, determinism and resume") {
  const Dataset& d = tiny_data();
  const TrainConfig c = tiny_config();
  const TrainedResult a = train(d, c);
  CHECK(a.history.size() == static_cast<std::size_t>(c.epochs_pretrain + c.epochs_distill));
  double best = -1.0;
  for (const EpochRecord& r : a.history) best = std::max(best, r.val_auroc);
  CHECK(a.best_validation_auroc == best);
  CHECK(evaluate_checkpoint(a.best_checkpoint, d.validation).auroc == best);
  CHECK(a.history.front().stage == "pretrain");
  CHECK(a.history.back().stage == "distill");

  const TrainedResult b = train(d, c);
  CHECK(history_csv(a.history) == history_csv(b.history));
  CHECK(a.best_checkpoint == b.best_checkpoint);

  // Interrupt after the first pre-training epoch and resume from disk.
  const auto path = std::filesystem::temp_directory_path() / "distill_resume.state";
  StageOptions save_first;
  save_first.on_epoch = [&](const TrainState& s) {
    if (s.epochs_done_in_stage == 1) save_train_state(s, path);
  };
  const TrainState full = run_pretrain(d, c, save_first);
  const TrainState loaded = load_train_state(path);
  const TrainState resumed = run_pretrain(d, c, {}, loaded);
  CHECK(resumed == full);
  std::filesystem::remove(path);
}

TEST_CASE("no positives reproduces the pre-training result") {
  const Dataset& d = tiny_data();
  TrainConfig c = tiny_config();
  const TrainState pre = run_pretrain(d, c);
  c.positive_fraction = 0.0;
  const TrainedResult r = train(d, c, {}, &pre);
  CHECK(r.best_checkpoint == pre.best_checkpoint);
  CHECK(r.best_validation_auroc == pre.best_validation_auroc);
  CHECK(train(d, c).best_checkpoint == pre.best_checkpoint);
}

TEST_CASE("config validation") {
  TrainConfig c;
  c.ema_alpha = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.positive_fraction = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  DatasetSpec s = tiny_spec();
  s.n_region = 0;
  CHECK_THROWS_AS(run_pretrain(generate_dataset(s), tiny_config()), ConfigError);
}
