#include "distill/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "distill/config.hpp"
#include "json.hpp"

namespace distill {

namespace {

constexpr double kArcStep = 0.35;
constexpr double kKernelRadiusSigmas = 2.5;
constexpr double kDisplacementTaper = 3.0;
constexpr int kBoxDilation = 2;
constexpr int kBreakMargin = 8;

enum StreamKey : std::uint64_t {
  kRecipeStream = 0x7265636970ULL,
  kNoiseStream = 0x6e6f697365ULL,
  kBreakCountStream = 0x62726b73ULL,
};

enum SplitCode : std::uint64_t {
  kSplitRegion = 1,
  kSplitPositive = 2,
  kSplitNegative = 3,
  kSplitValPositive = 4,
  kSplitValNegative = 5,
  kSplitTestPositive = 6,
  kSplitTestNegative = 7,
};

std::uint64_t make_id(SplitCode split, int index) {
  return (static_cast<std::uint64_t>(split) << 32) | static_cast<std::uint32_t>(index);
}

float quantize(double v) {
  const long k = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<float>(k) / 255.0f;
}

struct Point {
  double x;
  double y;
};

Point bone_point(const BoneRecipe& bone, double u) {
  const double v = bone.curvature * u * u;
  const double c = std::cos(bone.angle);
  const double s = std::sin(bone.angle);
  return {bone.cx + c * u - s * v, bone.cy + s * u + c * v};
}

Point bone_normal(const BoneRecipe& bone, double u) {
  // Tangent in the local frame is (1, 2cu); the normal is (-2cu, 1).
  const double nx = -2.0 * bone.curvature * u;
  const double ny = 1.0;
  const double len = std::hypot(nx, ny);
  const double c = std::cos(bone.angle);
  const double s = std::sin(bone.angle);
  return {(c * nx - s * ny) / len, (s * nx + c * ny) / len};
}

/// Clean rendering (no noise, no quantization). `break_filter` selects the
/// breaks to draw: -1 draws all, -2 none, otherwise the single index.
Grid<double> render_clean(const SampleRecipe& recipe, int break_filter) {
  const int n = recipe.size;
  Grid<double> out(n, n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      out(y, x) = recipe.background_level + recipe.background_gx * (x - n / 2) +
                  recipe.background_gy * (y - n / 2);
    }
  }

  Grid<double> layer(n, n);
  for (std::size_t b = 0; b < recipe.bones.size(); ++b) {
    const BoneRecipe& bone = recipe.bones[b];
    std::fill(layer.storage().begin(), layer.storage().end(), 0.0);
    const double radius = kKernelRadiusSigmas * bone.sigma;
    const double inv_two_var = 1.0 / (2.0 * bone.sigma * bone.sigma);

    for (double u = bone.u_begin; u <= bone.u_end; u += kArcStep) {
      double factor = 1.0;
      double shift = 0.0;
      for (std::size_t k = 0; k < recipe.breaks.size(); ++k) {
        const BreakRecipe& br = recipe.breaks[k];
        if (br.bone != static_cast<int>(b)) continue;
        if (break_filter == -2) continue;
        if (break_filter >= 0 && break_filter != static_cast<int>(k)) continue;
        const double gap_end = br.arc_start + br.gap_length;
        if (u >= br.arc_start && u <= gap_end) {
          factor = std::min(factor, 1.0 - br.depth);
        } else if (u > gap_end && u < gap_end + kDisplacementTaper) {
          shift += br.displacement * (1.0 - (u - gap_end) / kDisplacementTaper);
        }
      }
      if (factor <= 0.0) continue;

      Point p = bone_point(bone, u);
      if (shift != 0.0) {
        const Point nrm = bone_normal(bone, u);
        p.x += shift * nrm.x;
        p.y += shift * nrm.y;
      }
      const int x_lo = std::max(0, static_cast<int>(std::floor(p.x - radius)));
      const int x_hi = std::min(n - 1, static_cast<int>(std::ceil(p.x + radius)));
      const int y_lo = std::max(0, static_cast<int>(std::floor(p.y - radius)));
      const int y_hi = std::min(n - 1, static_cast<int>(std::ceil(p.y + radius)));
      const double value_scale = bone.intensity * factor;
      for (int y = y_lo; y <= y_hi; ++y) {
        for (int x = x_lo; x <= x_hi; ++x) {
          const double dx = x - p.x;
          const double dy = y - p.y;
          const double d2 = dx * dx + dy * dy;
          if (d2 > radius * radius) continue;
          const double v = value_scale * std::exp(-d2 * inv_two_var);
          layer(y, x) = std::max(layer(y, x), v);
        }
      }
    }
    for (std::size_t i = 0; i < layer.size(); ++i) {
      out.storage()[i] += layer.storage()[i];
    }
  }

  for (const BlobRecipe& blob : recipe.blobs) {
    const double radius = 3.0 * blob.sigma;
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        const double dx = x - blob.cx;
        const double dy = y - blob.cy;
        const double d2 = dx * dx + dy * dy;
        if (d2 > radius * radius) continue;
        out(y, x) += blob.intensity * std::exp(-d2 / (2.0 * blob.sigma * blob.sigma));
      }
    }
  }
  return out;
}

BoundingBox changed_region_box(const Grid<double>& a, const Grid<double>& b, bool& any) {
  const int n = a.height();
  int x0 = n, y0 = n, x1 = -1, y1 = -1;
  any = false;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      if (a(y, x) != b(y, x)) {
        any = true;
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
    }
  }
  if (!any) return {};
  return {std::max(0, x0 - kBoxDilation), std::max(0, y0 - kBoxDilation),
          std::min(n, x1 + 1 + kBoxDilation), std::min(n, y1 + 1 + kBoxDilation)};
}

bool inside_margin(const Point& p, int size) {
  return p.x >= kBreakMargin && p.x <= size - 1 - kBreakMargin && p.y >= kBreakMargin &&
         p.y <= size - 1 - kBreakMargin;
}

}  // namespace

const char* to_string(LabelKind kind) {
  switch (kind) {
    case LabelKind::RegionLabeled:
      return "R";
    case LabelKind::ImagePositive:
      return "P";
    case LabelKind::ImageNegative:
      return "N";
  }
  return "?";
}

LabelKind label_kind_from_string(const std::string& name) {
  if (name == "R") return LabelKind::RegionLabeled;
  if (name == "P") return LabelKind::ImagePositive;
  if (name == "N") return LabelKind::ImageNegative;
  throw ConfigError("unknown label kind '" + name + "'");
}

void DatasetSpec::validate() const {
  if (image_size < 16) {
    throw ConfigError("image_size must be at least 16 to place a bone, got " +
                      std::to_string(image_size));
  }
  if (n_region < 0 || n_positive < 0 || n_negative < 0 || n_val_positive < 0 ||
      n_val_negative < 0 || n_test_positive < 0 || n_test_negative < 0) {
    throw ConfigError("dataset counts must be non-negative");
  }
  if (breaks_min < 1 || breaks_max < breaks_min) {
    throw ConfigError("breaks_per_positive range must satisfy 1 <= min <= max");
  }
  const auto& g = generator;
  if (g.bones_min < 1 || g.bones_max < g.bones_min) {
    throw ConfigError("generator bone count range invalid");
  }
  if (!(g.bone_sigma_min > 0 && g.bone_sigma_max >= g.bone_sigma_min) ||
      !(g.gap_length_min > 0 && g.gap_length_max >= g.gap_length_min) ||
      !(g.gap_depth_min > 0 && g.gap_depth_max <= 1.0 && g.gap_depth_max >= g.gap_depth_min) ||
      !(g.noise_min >= 0 && g.noise_max >= g.noise_min) || g.displacement_max < 0 ||
      g.distractor_blobs_max < 0) {
    throw ConfigError("generator appearance ranges invalid");
  }
}

bool Dataset::operator==(const Dataset& other) const {
  auto same = [](const std::vector<Sample>& a, const std::vector<Sample>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].sample_id != b[i].sample_id || a[i].label_kind != b[i].label_kind ||
          !(a[i].image == b[i].image) || a[i].boxes != b[i].boxes) {
        return false;
      }
    }
    return true;
  };
  return same(region, other.region) && same(positive, other.positive) &&
         same(negative, other.negative) && same(validation, other.validation) &&
         same(test, other.test);
}

SampleRecipe draw_recipe(const DatasetSpec& spec, std::uint64_t sample_id, int n_breaks) {
  const GeneratorParams& g = spec.generator;
  Rng rng = make_rng({spec.seed, sample_id, kRecipeStream});
  const int n = spec.image_size;

  SampleRecipe r;
  r.size = n;
  r.background_level = uniform(rng, 0.05, 0.2);
  r.background_gx = uniform(rng, -0.08, 0.08) / n;
  r.background_gy = uniform(rng, -0.08, 0.08) / n;
  r.noise_std = uniform(rng, g.noise_min, g.noise_max);
  r.noise_seed = derive_seed({spec.seed, sample_id, kNoiseStream});

  const int n_bones = uniform_int(rng, g.bones_min, g.bones_max);
  for (int k = 0; k < n_bones; ++k) {
    BoneRecipe bone;
    const bool steep = uniform01(rng) < 0.25;
    bone.angle = steep ? (uniform01(rng) < 0.5 ? -1.0 : 1.0) * uniform(rng, 0.5, 1.0)
                       : uniform(rng, -0.35, 0.35);
    bone.cy = (k + 0.5) / n_bones * n + uniform(rng, -3.0, 3.0);
    bone.cx = n / 2.0 + uniform(rng, -0.15, 0.15) * n;
    bone.curvature = uniform(rng, -0.75, 0.75) / n;
    bone.u_begin = -uniform(rng, 0.2, 0.8) * n;
    bone.u_end = uniform(rng, 0.2, 0.8) * n;
    bone.sigma = uniform(rng, g.bone_sigma_min, g.bone_sigma_max);
    bone.intensity = uniform(rng, g.bone_intensity_min, g.bone_intensity_max);
    r.bones.push_back(bone);
  }

  const int n_blobs = uniform_int(rng, 0, g.distractor_blobs_max);
  for (int k = 0; k < n_blobs; ++k) {
    r.blobs.push_back({uniform(rng, 4.0, n - 5.0), uniform(rng, 4.0, n - 5.0),
                       uniform(rng, 1.0, 2.5), uniform(rng, 0.08, 0.25)});
  }

  std::vector<Point> centers;
  for (int attempt = 0; attempt < 400 && static_cast<int>(r.breaks.size()) < n_breaks;
       ++attempt) {
    BreakRecipe br;
    br.bone = uniform_int(rng, 0, n_bones - 1);
    const BoneRecipe& bone = r.bones[static_cast<std::size_t>(br.bone)];
    br.gap_length = uniform(rng, g.gap_length_min, g.gap_length_max);
    br.depth = uniform(rng, g.gap_depth_min, g.gap_depth_max);
    br.displacement = uniform(rng, -g.displacement_max, g.displacement_max);
    const double lo = bone.u_begin + 4.0;
    const double hi = bone.u_end - 4.0 - br.gap_length - kDisplacementTaper;
    if (hi <= lo) continue;
    br.arc_start = uniform(rng, lo, hi);
    const Point c = bone_point(bone, br.arc_start + 0.5 * br.gap_length);
    if (!inside_margin(c, n)) continue;
    const bool crowded = std::any_of(centers.begin(), centers.end(), [&](const Point& o) {
      return std::hypot(o.x - c.x, o.y - c.y) < 12.0;
    });
    if (crowded) continue;
    centers.push_back(c);
    r.breaks.push_back(br);
  }
  if (static_cast<int>(r.breaks.size()) < n_breaks) {
    // Fall back to a break on the middle of the first bone; its center lies
    // near the image center for every admissible recipe.
    BreakRecipe br;
    BoneRecipe& bone = r.bones.front();
    bone.u_begin = std::min(bone.u_begin, -12.0);
    bone.u_end = std::max(bone.u_end, 12.0);
    bone.cx = n / 2.0;
    bone.cy = n / 2.0;
    br.bone = 0;
    br.gap_length = g.gap_length_max;
    br.depth = 1.0;
    br.arc_start = -0.5 * br.gap_length;
    r.breaks.assign(1, br);
  }
  return r;
}

Image render(const SampleRecipe& recipe, bool include_breaks) {
  const Grid<double> clean = render_clean(recipe, include_breaks ? -1 : -2);
  Rng noise_rng(recipe.noise_seed);
  std::normal_distribution<double> noise(0.0, recipe.noise_std);
  Image out(recipe.size, recipe.size);
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const double e = recipe.noise_std > 0.0 ? noise(noise_rng) : 0.0;
    out.storage()[i] = quantize(clean.storage()[i] + e);
  }
  return out;
}

std::vector<BoundingBox> break_boxes(const SampleRecipe& recipe) {
  const Grid<double> base = render_clean(recipe, -2);
  std::vector<BoundingBox> boxes;
  for (std::size_t k = 0; k < recipe.breaks.size(); ++k) {
    bool any = false;
    const BoundingBox box = changed_region_box(render_clean(recipe, static_cast<int>(k)), base, any);
    if (any) boxes.push_back(box);
  }
  return boxes;
}

Sample make_sample(const DatasetSpec& spec, std::uint64_t sample_id, LabelKind kind,
                   bool positive) {
  int n_breaks = 0;
  if (positive) {
    Rng rng = make_rng({spec.seed, sample_id, kBreakCountStream});
    n_breaks = uniform_int(rng, spec.breaks_min, spec.breaks_max);
  }
  const SampleRecipe recipe = draw_recipe(spec, sample_id, n_breaks);
  Sample s;
  s.sample_id = sample_id;
  s.label_kind = kind;
  s.image = render(recipe, true);
  if (positive) s.boxes = break_boxes(recipe);
  return s;
}

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset d;
  d.spec = spec;
  auto fill = [&](std::vector<Sample>& dst, SplitCode split, int count, LabelKind kind,
                  bool positive) {
    for (int i = 0; i < count; ++i) {
      dst.push_back(make_sample(spec, make_id(split, i), kind, positive));
    }
  };
  fill(d.region, kSplitRegion, spec.n_region, LabelKind::RegionLabeled, true);
  fill(d.positive, kSplitPositive, spec.n_positive, LabelKind::ImagePositive, true);
  fill(d.negative, kSplitNegative, spec.n_negative, LabelKind::ImageNegative, false);
  fill(d.validation, kSplitValPositive, spec.n_val_positive, LabelKind::ImagePositive, true);
  fill(d.validation, kSplitValNegative, spec.n_val_negative, LabelKind::ImageNegative, false);
  fill(d.test, kSplitTestPositive, spec.n_test_positive, LabelKind::ImagePositive, true);
  fill(d.test, kSplitTestNegative, spec.n_test_negative, LabelKind::ImageNegative, false);
  return d;
}

GtMask mask_from_boxes(int height, int width, const std::vector<BoundingBox>& boxes) {
  GtMask mask(height, width, 0);
  for (const BoundingBox& b : boxes) {
    for (int y = std::max(0, b.y0); y < std::min(height, b.y1); ++y) {
      for (int x = std::max(0, b.x0); x < std::min(width, b.x1); ++x) {
        mask(y, x) = 1;
      }
    }
  }
  return mask;
}

GtMask gt_mask_of(const Sample& sample) {
  switch (sample.label_kind) {
    case LabelKind::RegionLabeled:
      return mask_from_boxes(sample.image.height(), sample.image.width(), sample.boxes);
    case LabelKind::ImageNegative:
      return GtMask(sample.image.height(), sample.image.width(), 0);
    case LabelKind::ImagePositive:
      break;
  }
  throw ContractError("gt_mask_of called on an image-level positive sample (id " +
                      std::to_string(sample.sample_id) + "); use the pseudo-GT path");
}

AugmentParams draw_augment(Rng& rng, const AugmentRanges& ranges) {
  AugmentParams p;
  p.rotation_deg = uniform(rng, -ranges.max_rotation_deg, ranges.max_rotation_deg);
  p.flip = uniform01(rng) < ranges.flip_probability;
  p.intensity_shift = uniform(rng, -ranges.max_intensity_shift, ranges.max_intensity_shift);
  p.contrast = uniform(rng, ranges.contrast_min, ranges.contrast_max);
  return p;
}

Image flip_image(const Image& image) {
  Image out(image.height(), image.width());
  const int w = image.width();
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < w; ++x) {
      out(y, x) = image(y, w - 1 - x);
    }
  }
  return out;
}

BoundingBox flip_box(const BoundingBox& box, int width) {
  return {width - box.x1, box.y0, width - box.x0, box.y1};
}

Image rotate_image(const Image& image, double degrees) {
  if (degrees == 0.0) return image;
  const int h = image.height();
  const int w = image.width();
  const double th = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(th);
  const double s = std::sin(th);
  const double cx = (w - 1) / 2.0;
  const double cy = (h - 1) / 2.0;
  Image out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Inverse rotation maps the output pixel back into the source.
      const double dx = x - cx;
      const double dy = y - cy;
      const double sx = std::clamp(c * dx + s * dy + cx, 0.0, w - 1.0);
      const double sy = std::clamp(-s * dx + c * dy + cy, 0.0, h - 1.0);
      const int x0 = std::min(static_cast<int>(sx), w - 2 < 0 ? 0 : w - 2);
      const int y0 = std::min(static_cast<int>(sy), h - 2 < 0 ? 0 : h - 2);
      const double fx = sx - x0;
      const double fy = sy - y0;
      const int x1 = std::min(x0 + 1, w - 1);
      const int y1 = std::min(y0 + 1, h - 1);
      const double v = (1 - fy) * ((1 - fx) * image(y0, x0) + fx * image(y0, x1)) +
                       fy * ((1 - fx) * image(y1, x0) + fx * image(y1, x1));
      out(y, x) = static_cast<float>(v);
    }
  }
  return out;
}

BoundingBox rotate_box(const BoundingBox& box, int width, int height, double degrees) {
  if (degrees == 0.0) return box;
  const double th = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(th);
  const double s = std::sin(th);
  const double cx = (width - 1) / 2.0;
  const double cy = (height - 1) / 2.0;
  double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
  const double xs[2] = {box.x0 - 0.5, box.x1 - 0.5};
  const double ys[2] = {box.y0 - 0.5, box.y1 - 0.5};
  for (double px : xs) {
    for (double py : ys) {
      const double dx = px - cx;
      const double dy = py - cy;
      const double rx = c * dx - s * dy + cx;
      const double ry = s * dx + c * dy + cy;
      min_x = std::min(min_x, rx);
      max_x = std::max(max_x, rx);
      min_y = std::min(min_y, ry);
      max_y = std::max(max_y, ry);
    }
  }
  // Pixel centers inside the rotated extent.
  BoundingBox out{static_cast<int>(std::ceil(min_x)), static_cast<int>(std::ceil(min_y)),
                  static_cast<int>(std::floor(max_x)) + 1, static_cast<int>(std::floor(max_y)) + 1};
  out.x0 = std::clamp(out.x0, 0, width);
  out.x1 = std::clamp(out.x1, 0, width);
  out.y0 = std::clamp(out.y0, 0, height);
  out.y1 = std::clamp(out.y1, 0, height);
  return out;
}

Sample apply_augment(const Sample& sample, const AugmentParams& params) {
  if (params.is_identity()) return sample;
  Sample out;
  out.sample_id = sample.sample_id;
  out.label_kind = sample.label_kind;
  const int w = sample.image.width();
  const int h = sample.image.height();

  Image img = params.flip ? flip_image(sample.image) : sample.image;
  img = rotate_image(img, params.rotation_deg);
  for (float& v : img.values()) {
    const double t = (v - 0.5) * params.contrast + 0.5 + params.intensity_shift;
    v = static_cast<float>(std::clamp(t, 0.0, 1.0));
  }
  out.image = std::move(img);

  for (BoundingBox b : sample.boxes) {
    if (params.flip) b = flip_box(b, w);
    b = rotate_box(b, w, h, params.rotation_deg);
    if (b.valid_in(w, h)) out.boxes.push_back(b);
  }
  return out;
}

Sample augment(const Sample& sample, Rng& rng, const AugmentRanges& ranges) {
  return apply_augment(sample, draw_augment(rng, ranges));
}

void write_pgm(const Image& image, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P5\n" << image.width() << " " << image.height() << "\n255\n";
  std::vector<char> bytes(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    bytes[i] = static_cast<char>(
        static_cast<unsigned char>(std::lround(std::clamp(image.storage()[i], 0.0f, 1.0f) * 255.0f)));
  }
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 255) {
    throw std::runtime_error("unsupported PGM file " + path.string());
  }
  is.get();
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!is) throw std::runtime_error("truncated PGM file " + path.string());
  Image out(h, w);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    out.storage()[i] = static_cast<float>(bytes[i]) / 255.0f;
  }
  return out;
}

namespace {

void write_split(const std::vector<const std::vector<Sample>*>& parts,
                 const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream ann(dir / "annotations.jsonl");
  for (const auto* part : parts) {
    for (const Sample& s : *part) {
      nlohmann::json boxes = nlohmann::json::array();
      for (const BoundingBox& b : s.boxes) boxes.push_back({b.x0, b.y0, b.x1, b.y1});
      nlohmann::json line = {
          {"sample_id", s.sample_id}, {"label_kind", to_string(s.label_kind)}, {"boxes", boxes}};
      ann << line.dump() << "\n";
      write_pgm(s.image, dir / (std::to_string(s.sample_id) + ".pgm"));
    }
  }
}

std::vector<Sample> read_split(const std::filesystem::path& dir) {
  std::ifstream ann(dir / "annotations.jsonl");
  if (!ann) throw std::runtime_error("missing annotations in " + dir.string());
  std::vector<Sample> out;
  std::string line;
  while (std::getline(ann, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    Sample s;
    s.sample_id = j.at("sample_id").get<std::uint64_t>();
    s.label_kind = label_kind_from_string(j.at("label_kind").get<std::string>());
    for (const auto& b : j.at("boxes")) {
      s.boxes.push_back({b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(),
                         b.at(3).get<int>()});
    }
    s.image = read_pgm(dir / (std::to_string(s.sample_id) + ".pgm"));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "dataset.json");
    os << to_json(dataset.spec).dump(2) << "\n";
  }
  write_split({&dataset.region, &dataset.positive, &dataset.negative}, dir / "train");
  write_split({&dataset.validation}, dir / "val");
  write_split({&dataset.test}, dir / "test");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "dataset.json");
  if (!is) throw std::runtime_error("missing dataset.json in " + dir.string());
  const auto j = nlohmann::json::parse(is);
  Dataset d;
  d.spec = dataset_spec_from_json(j);

  for (Sample& smp : read_split(dir / "train")) {
    switch (smp.label_kind) {
      case LabelKind::RegionLabeled:
        d.region.push_back(std::move(smp));
        break;
      case LabelKind::ImagePositive:
        d.positive.push_back(std::move(smp));
        break;
      case LabelKind::ImageNegative:
        d.negative.push_back(std::move(smp));
        break;
    }
  }
  d.validation = read_split(dir / "val");
  d.test = read_split(dir / "test");
  return d;
}

}  // namespace distill
