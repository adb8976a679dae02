#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "distill/grid.hpp"
#include "distill/synth_data.hpp"

namespace distill {

struct FrocPoint {
  double fp_ratio = 0.0;
  double recall = 0.0;
  double threshold = 0.0;
};

/// Recall of box centers against the false-positive pixel ratio, sorted by
/// fp_ratio, and the mean recall at fp ratios 1%..10%.
struct FrocCurve {
  std::vector<FrocPoint> points;
  double score = 0.0;
};

/// False-positive ratios at which the FROC score samples the curve.
inline constexpr double kFrocTargets[10] = {0.01, 0.02, 0.03, 0.04, 0.05,
                                            0.06, 0.07, 0.08, 0.09, 0.10};

struct EvalRecord {
  std::uint64_t sample_id = 0;
  ProbabilityMap probability_map;
  std::vector<BoundingBox> boxes;
  int image_level_label = 0;
};

/// Image-level score: the maximum of the map.
double classification_score(const ProbabilityMap& map);

/// Mann-Whitney AUROC with ties counted one half. Throws MetricError when
/// either class is missing.
double auroc(std::span<const double> scores, std::span<const int> labels);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};
/// ROC curve from (0,0) to (1,1), one point per distinct score.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);

/// Lower-median interior pixel (x, y) of a box.
std::pair<int, int> box_center(const BoundingBox& box);

/// Per threshold t (descending): a box is recalled iff its center pixel is
/// >= t; fp_ratio is the per-record fraction of pixels >= t outside all of
/// that record's boxes, averaged over records. Throws MetricError when no
/// record has a box, ConfigError for empty input or unsorted thresholds.
FrocCurve froc_curve(std::span<const EvalRecord> records, std::span<const double> thresholds);

/// All distinct map values when there are at most `max_exact` of them,
/// otherwise `quantiles` evenly spaced quantiles of the pooled values.
/// Sorted descending.
std::vector<double> default_thresholds(std::span<const EvalRecord> records,
                                       std::size_t max_exact = 10000,
                                       std::size_t quantiles = 1024);

/// Mean of the recall at each target, using the point with the largest
/// fp_ratio not exceeding the target (0 when none).
double froc_score(std::span<const FrocPoint> points);

struct MetricsReport {
  double auroc = 0.0;
  FrocCurve froc;
  std::vector<RocPoint> roc;
};

/// Classification and localization metrics for a set of records.
MetricsReport evaluate_records(std::span<const EvalRecord> records);

/// {"auroc", "froc_score", "curve": [[fp_ratio, recall], ...]}.
std::string metrics_report_json(const MetricsReport& report);
/// fp_ratio,recall,threshold rows.
std::string froc_curve_csv(const FrocCurve& curve);

}  // namespace distill
