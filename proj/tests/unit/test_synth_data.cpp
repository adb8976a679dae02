#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "distill/error.hpp"
#include "distill/synth_data.hpp"

using namespace distill;

namespace {

DatasetSpec small_spec() {
  DatasetSpec s;
  s.n_region = 6;
  s.n_positive = 10;
  s.n_negative = 12;
  s.n_val_positive = 3;
  s.n_val_negative = 4;
  s.n_test_positive = 3;
  s.n_test_negative = 4;
  return s;
}

}  // namespace

TEST_CASE("generation is deterministic and counts match") {
  const DatasetSpec s = small_spec();
  const Dataset a = generate_dataset(s);
  const Dataset b = generate_dataset(s);
  CHECK(a == b);
  CHECK(a.region.size() == 6);
  CHECK(a.positive.size() == 10);
  CHECK(a.negative.size() == 12);
  CHECK(a.validation.size() == 7);
  CHECK(a.test.size() == 7);
  DatasetSpec other = s;
  other.seed = 8;
  CHECK_FALSE(generate_dataset(other) == a);
}

TEST_CASE("default counts") {
  DatasetSpec s;
  s.image_size = 16;  // keeps the check quick; counts do not depend on size
  s.generator.bones_max = 3;
  const Dataset d = generate_dataset(s);
  CHECK(d.region.size() == 40);
  CHECK(d.positive.size() == 400);
  CHECK(d.negative.size() == 4000);
}

TEST_CASE("labels and boxes") {
  const Dataset d = generate_dataset(small_spec());
  for (const Sample& r : d.region) {
    CHECK(r.label_kind == LabelKind::RegionLabeled);
    CHECK_FALSE(r.boxes.empty());
    const GtMask m = gt_mask_of(r);
    for (int y = 0; y < m.height(); ++y) {
      for (int x = 0; x < m.width(); ++x) {
        bool inside = false;
        for (const BoundingBox& b : r.boxes) inside = inside || b.contains(x, y);
        CHECK(static_cast<bool>(m(y, x)) == inside);
      }
    }
  }
  for (const Sample& p : d.positive) {
    CHECK(p.label_kind == LabelKind::ImagePositive);
    CHECK_FALSE(p.boxes.empty());
    CHECK_THROWS_AS(gt_mask_of(p), ContractError);
  }
  for (const Sample& n : d.negative) {
    CHECK(n.boxes.empty());
    const GtMask nm = gt_mask_of(n);
    for (auto v : nm.values()) CHECK(v == 0);
  }
  for (const Sample& s : d.region) {
    for (float v : s.image.values()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
}

TEST_CASE("break pixels lie inside the recorded boxes") {
  const DatasetSpec spec = small_spec();
  for (std::uint64_t i = 0; i < 20; ++i) {
    const SampleRecipe r = draw_recipe(spec, 1000 + i, 1 + static_cast<int>(i % 3));
    const Image with = render(r, true);
    const Image without = render(r, false);
    const auto boxes = break_boxes(r);
    CHECK(boxes.size() == r.breaks.size());
    int changed = 0;
    for (int y = 0; y < with.height(); ++y) {
      for (int x = 0; x < with.width(); ++x) {
        if (with(y, x) == without(y, x)) continue;
        ++changed;
        bool inside = false;
        for (const BoundingBox& b : boxes) inside = inside || b.contains(x, y);
        CHECK(inside);
      }
    }
    CHECK(changed > 0);
  }
  // Negatives: an oracle that knows the recipe finds nothing to remove.
  const SampleRecipe neg = draw_recipe(spec, 77, 0);
  CHECK(neg.breaks.empty());
  CHECK(render(neg, true) == render(neg, false));
}

TEST_CASE("gt mask examples") {
  Sample s;
  s.label_kind = LabelKind::RegionLabeled;
  s.image = Image(8, 8, 0.0f);
  s.boxes = {{2, 2, 4, 4}};
  int ones = 0;
  const GtMask one_box = gt_mask_of(s);
  for (auto v : one_box.values()) ones += v;
  CHECK(ones == 4);
  s.boxes = {{0, 0, 3, 3}, {2, 2, 4, 4}};
  ones = 0;
  const GtMask two_boxes = gt_mask_of(s);
  for (auto v : two_boxes.values()) ones += v;
  CHECK(ones == 9 + 4 - 1);
}

TEST_CASE("image size below 16 is rejected") {
  DatasetSpec s = small_spec();
  s.image_size = 12;
  CHECK_THROWS_AS(generate_dataset(s), ConfigError);
}

TEST_CASE("augmentation") {
  const Dataset d = generate_dataset(small_spec());
  const Sample& s = d.region.front();
  CHECK(apply_augment(s, AugmentParams{}) == s);

  CHECK(flip_box({1, 0, 3, 2}, 8) == BoundingBox{5, 0, 7, 2});
  AugmentParams flip;
  flip.flip = true;
  const Sample f = apply_augment(s, flip);
  // transformed mask equals mask of transformed boxes
  const GtMask m = gt_mask_of(s);
  const GtMask fm = gt_mask_of(f);
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) CHECK(fm(y, m.width() - 1 - x) == m(y, x));

  // rotation round trip within interpolation tolerance, away from the border
  const Image back = rotate_image(rotate_image(s.image, 7.0), -7.0);
  double err = 0.0;
  int n = 0;
  for (int y = 12; y < 52; ++y) {
    for (int x = 12; x < 52; ++x) {
      err += std::abs(back(y, x) - s.image(y, x));
      ++n;
    }
  }
  CHECK(err / n < 0.03);

  // rotated mask stays within one pixel of the rotated box
  for (const BoundingBox& b : s.boxes) {
    const BoundingBox rb = rotate_box(b, 64, 64, 8.0);
    Image mask(64, 64, 0.0f);
    for (int y = b.y0; y < b.y1; ++y)
      for (int x = b.x0; x < b.x1; ++x) mask(y, x) = 1.0f;
    const Image rm = rotate_image(mask, 8.0);
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x < 64; ++x) {
        if (rm(y, x) < 0.5f) continue;
        CHECK(x >= rb.x0 - 1);
        CHECK(x < rb.x1 + 1);
        CHECK(y >= rb.y0 - 1);
        CHECK(y < rb.y1 + 1);
      }
    }
  }

  Rng rng = make_rng({5});
  const Sample a = augment(s, rng);
  for (float v : a.image.values()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK(a.boxes.size() == s.boxes.size());
}

TEST_CASE("dataset save and load round trip") {
  const Dataset d = generate_dataset(small_spec());
  const auto dir = std::filesystem::temp_directory_path() / "distill_dataset_roundtrip";
  std::filesystem::remove_all(dir);
  save_dataset(d, dir);
  CHECK(std::filesystem::exists(dir / "train" / "annotations.jsonl"));
  CHECK(load_dataset(dir) == d);
  std::filesystem::remove_all(dir);
}
