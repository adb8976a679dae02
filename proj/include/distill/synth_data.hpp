#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "distill/grid.hpp"
#include "distill/rng.hpp"

namespace distill {

/// Pixel-index box [x0,x1) x [y0,y1).
struct BoundingBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  int area() const { return width() * height(); }
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  bool valid_in(int image_width, int image_height) const {
    return 0 <= x0 && x0 < x1 && x1 <= image_width && 0 <= y0 && y0 < y1 && y1 <= image_height;
  }
  bool operator==(const BoundingBox&) const = default;
};

enum class LabelKind : std::uint8_t { RegionLabeled, ImagePositive, ImageNegative };

const char* to_string(LabelKind kind);
LabelKind label_kind_from_string(const std::string& name);

/// One image with its label kind. ImagePositive samples carry their boxes for
/// evaluation only; training code must not read them.
struct Sample {
  std::uint64_t sample_id = 0;
  LabelKind label_kind = LabelKind::ImageNegative;
  Image image;
  std::vector<BoundingBox> boxes;

  bool has_fracture() const { return !boxes.empty(); }
  bool operator==(const Sample&) const = default;
};

/// Appearance ranges of the generator. Each sample draws its own values.
struct GeneratorParams {
  int bones_min = 3;
  int bones_max = 5;
  double bone_sigma_min = 0.9;
  double bone_sigma_max = 1.5;
  double bone_intensity_min = 0.35;
  double bone_intensity_max = 0.8;
  double gap_length_min = 1.5;
  double gap_length_max = 4.0;
  double gap_depth_min = 0.45;
  double gap_depth_max = 1.0;
  double displacement_max = 1.5;
  double noise_min = 0.02;
  double noise_max = 0.05;
  int distractor_blobs_max = 2;
};

struct DatasetSpec {
  int image_size = 64;
  int n_region = 40;
  int n_positive = 400;
  int n_negative = 4000;
  int breaks_min = 1;
  int breaks_max = 3;
  int n_val_positive = 50;
  int n_val_negative = 200;
  int n_test_positive = 100;
  int n_test_negative = 400;
  std::uint64_t seed = 7;
  GeneratorParams generator;

  void validate() const;
};

/// Generated corpus. Training sets R/P/N; validation and test splits hold
/// ImagePositive (with boxes) and ImageNegative samples.
struct Dataset {
  DatasetSpec spec;
  std::vector<Sample> region;
  std::vector<Sample> positive;
  std::vector<Sample> negative;
  std::vector<Sample> validation;
  std::vector<Sample> test;

  bool operator==(const Dataset& other) const;
};

/// A single break drawn on a bone: arc position of the gap start, gap
/// length, depth (1 = fully removed) and lateral displacement of the
/// segment that follows the gap.
struct BreakRecipe {
  int bone = 0;
  double arc_start = 0.0;
  double gap_length = 0.0;
  double depth = 1.0;
  double displacement = 0.0;
};

/// Quadratic arc y = a + b*u + c*u^2 in a frame rotated by `angle`, sampled
/// over u in [u_begin, u_end].
struct BoneRecipe {
  double cx = 0.0;
  double cy = 0.0;
  double angle = 0.0;
  double curvature = 0.0;
  double u_begin = 0.0;
  double u_end = 0.0;
  double sigma = 1.0;
  double intensity = 0.5;
};

struct BlobRecipe {
  double cx = 0.0;
  double cy = 0.0;
  double sigma = 1.0;
  double intensity = 0.0;
};

/// Everything needed to render one sample deterministically.
struct SampleRecipe {
  int size = 64;
  double background_level = 0.1;
  double background_gx = 0.0;
  double background_gy = 0.0;
  double noise_std = 0.03;
  std::uint64_t noise_seed = 0;
  std::vector<BoneRecipe> bones;
  std::vector<BreakRecipe> breaks;
  std::vector<BlobRecipe> blobs;
};

/// Draws a recipe with `n_breaks` breaks.
SampleRecipe draw_recipe(const DatasetSpec& spec, std::uint64_t sample_id, int n_breaks);

/// Renders the recipe, 8-bit quantized. With include_breaks = false the
/// same image is produced as if no break had been drawn.
Image render(const SampleRecipe& recipe, bool include_breaks = true);

/// Tight boxes of the pixels changed by each break, dilated by 2 and clipped.
std::vector<BoundingBox> break_boxes(const SampleRecipe& recipe);

/// Builds one sample of the requested kind; randomness keyed on (seed, id).
Sample make_sample(const DatasetSpec& spec, std::uint64_t sample_id, LabelKind kind,
                   bool positive);

/// Deterministic given spec.seed. Throws ConfigError for invalid specs.
Dataset generate_dataset(const DatasetSpec& spec);

/// Ones inside the boxes of a RegionLabeled sample, zeros for ImageNegative.
/// Throws ContractError for ImagePositive.
GtMask gt_mask_of(const Sample& sample);

/// Union of box interiors on a height x width grid.
GtMask mask_from_boxes(int height, int width, const std::vector<BoundingBox>& boxes);

struct AugmentRanges {
  double max_rotation_deg = 10.0;
  double flip_probability = 0.5;
  double max_intensity_shift = 0.1;
  double contrast_min = 0.9;
  double contrast_max = 1.1;
};

struct AugmentParams {
  double rotation_deg = 0.0;
  bool flip = false;
  double intensity_shift = 0.0;
  double contrast = 1.0;

  bool is_identity() const {
    return rotation_deg == 0.0 && !flip && intensity_shift == 0.0 && contrast == 1.0;
  }
};

AugmentParams draw_augment(Rng& rng, const AugmentRanges& ranges = {});

/// Applies flip then rotation about the image center (bilinear, edge
/// replicate), then contrast about 0.5 and an intensity shift, clamped to
/// [0,1]. Boxes follow the geometric part.
Sample apply_augment(const Sample& sample, const AugmentParams& params);

Sample augment(const Sample& sample, Rng& rng, const AugmentRanges& ranges = {});

Image rotate_image(const Image& image, double degrees);
Image flip_image(const Image& image);
BoundingBox flip_box(const BoundingBox& box, int width);
/// Axis-aligned bounds of the rotated box corners, clipped to the image.
BoundingBox rotate_box(const BoundingBox& box, int width, int height, double degrees);

/// On-disk layout: <dir>/dataset.json, and one directory per split
/// (train, val, test) holding <id>.pgm images and annotations.jsonl.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

void write_pgm(const Image& image, const std::filesystem::path& path);
Image read_pgm(const std::filesystem::path& path);

}  // namespace distill
