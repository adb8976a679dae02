#include "distill/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace distill {

double classification_score(const ProbabilityMap& map) {
  const auto v = map.values();
  return *std::max_element(v.begin(), v.end());
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("auroc: scores and labels differ in length");
  std::int64_t n_pos = 0;
  std::int64_t n_neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i])) throw MetricError("auroc: NaN score");
    (labels[i] ? n_pos : n_neg) += 1;
  }
  if (n_pos == 0 || n_neg == 0) {
    throw MetricError("auroc is undefined unless both classes are present");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the Mann-Whitney U: a win counts 2, a tie 1.
  std::int64_t doubled_wins = 0;
  std::int64_t neg_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::int64_t pos_here = 0;
    std::int64_t neg_here = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? pos_here : neg_here) += 1;
      ++j;
    }
    doubled_wins += 2 * pos_here * neg_below + pos_here * neg_here;
    neg_below += neg_here;
    i = j;
  }
  return static_cast<double>(doubled_wins) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("roc_curve: scores and labels differ in length");
  const auto n_pos = std::count_if(labels.begin(), labels.end(), [](int l) { return l != 0; });
  const auto n_neg = static_cast<std::ptrdiff_t>(labels.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw MetricError("roc curve is undefined unless both classes are present");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> out{{0.0, 0.0}};
  std::ptrdiff_t tp = 0;
  std::ptrdiff_t fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? tp : fp) += 1;
      ++j;
    }
    out.push_back({static_cast<double>(fp) / n_neg, static_cast<double>(tp) / n_pos});
    i = j;
  }
  return out;
}

std::pair<int, int> box_center(const BoundingBox& box) {
  // Floor division of non-negative sums.
  return {(box.x0 + box.x1 - 1) / 2, (box.y0 + box.y1 - 1) / 2};
}

FrocCurve froc_curve(std::span<const EvalRecord> records, std::span<const double> thresholds) {
  if (records.empty()) throw ConfigError("froc_curve: no records");
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    if (thresholds[i] > thresholds[i - 1]) {
      throw ConfigError("froc_curve: thresholds must be sorted descending");
    }
  }

  // Per record, ascending outside-box values; pooled ascending center values.
  std::vector<std::vector<float>> outside(records.size());
  std::vector<double> pixel_counts(records.size());
  std::vector<float> centers;
  for (std::size_t r = 0; r < records.size(); ++r) {
    const EvalRecord& rec = records[r];
    const ProbabilityMap& m = rec.probability_map;
    const GtMask inside = mask_from_boxes(m.height(), m.width(), rec.boxes);
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (!inside.storage()[i]) outside[r].push_back(m.storage()[i]);
    }
    std::sort(outside[r].begin(), outside[r].end());
    pixel_counts[r] = static_cast<double>(m.size());
    for (const BoundingBox& b : rec.boxes) {
      const auto [cx, cy] = box_center(b);
      centers.push_back(m(cy, cx));
    }
  }
  if (centers.empty()) throw MetricError("froc is undefined when no record has a box");
  std::sort(centers.begin(), centers.end());

  auto count_at_least = [](const std::vector<float>& sorted, double t) {
    const auto it = std::lower_bound(sorted.begin(), sorted.end(), t,
                                     [](float v, double thr) { return static_cast<double>(v) < thr; });
    return static_cast<std::size_t>(sorted.end() - it);
  };

  FrocCurve curve;
  curve.points.reserve(thresholds.size());
  const double total_boxes = static_cast<double>(centers.size());
  const double n_records = static_cast<double>(records.size());
  for (double t : thresholds) {
    double fp_sum = 0.0;
    for (std::size_t r = 0; r < records.size(); ++r) {
      fp_sum += static_cast<double>(count_at_least(outside[r], t)) / pixel_counts[r];
    }
    const double recall = static_cast<double>(count_at_least(centers, t)) / total_boxes;
    curve.points.push_back({fp_sum / n_records, recall, t});
  }
  std::stable_sort(curve.points.begin(), curve.points.end(), [](const FrocPoint& a, const FrocPoint& b) {
    return a.fp_ratio < b.fp_ratio || (a.fp_ratio == b.fp_ratio && a.recall < b.recall);
  });
  curve.score = froc_score(curve.points);
  return curve;
}

double froc_score(std::span<const FrocPoint> points) {
  double sum = 0.0;
  for (double target : kFrocTargets) {
    double best = 0.0;
    for (const FrocPoint& p : points) {
      if (p.fp_ratio <= target) best = std::max(best, p.recall);
    }
    sum += best;
  }
  return sum / static_cast<double>(std::size(kFrocTargets));
}

std::vector<double> default_thresholds(std::span<const EvalRecord> records, std::size_t max_exact,
                                       std::size_t quantiles) {
  std::vector<double> pooled;
  for (const EvalRecord& r : records) {
    for (float v : r.probability_map.values()) pooled.push_back(v);
  }
  std::sort(pooled.begin(), pooled.end());
  std::vector<double> distinct = pooled;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<double> out;
  if (distinct.size() <= max_exact || quantiles < 2) {
    out = std::move(distinct);
  } else {
    const double last = static_cast<double>(pooled.size() - 1);
    for (std::size_t q = 0; q < quantiles; ++q) {
      const auto idx = static_cast<std::size_t>(std::llround(last * static_cast<double>(q) /
                                                             static_cast<double>(quantiles - 1)));
      out.push_back(pooled[idx]);
    }
    out.erase(std::unique(out.begin(), out.end()), out.end());
  }
  std::reverse(out.begin(), out.end());
  return out;
}

MetricsReport evaluate_records(std::span<const EvalRecord> records) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (const EvalRecord& r : records) {
    scores.push_back(classification_score(r.probability_map));
    labels.push_back(r.image_level_label);
  }
  MetricsReport report;
  report.auroc = auroc(scores, labels);
  report.roc = roc_curve(scores, labels);
  report.froc = froc_curve(records, default_thresholds(records));
  return report;
}

std::string metrics_report_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["auroc"] = report.auroc;
  j["froc_score"] = report.froc.score;
  auto curve = nlohmann::ordered_json::array();
  for (const FrocPoint& p : report.froc.points) curve.push_back({p.fp_ratio, p.recall});
  j["curve"] = std::move(curve);
  auto roc = nlohmann::ordered_json::array();
  for (const RocPoint& p : report.roc) roc.push_back({p.fpr, p.tpr});
  j["roc"] = std::move(roc);
  return j.dump(2);
}

std::string froc_curve_csv(const FrocCurve& curve) {
  std::ostringstream os;
  os << "fp_ratio,recall,threshold\n" << std::setprecision(9);
  for (const FrocPoint& p : curve.points) {
    os << p.fp_ratio << ',' << p.recall << ',' << p.threshold << '\n';
  }
  return os.str();
}

}  // namespace distill
