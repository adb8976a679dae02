#include <algorithm>
#include <set>

#include "doctest.h"
#include "distill/error.hpp"
#include "distill/metrics.hpp"
#include "distill/rng.hpp"

using namespace distill;

namespace {

double brute_auroc(const std::vector<double>& s, const std::vector<int>& l) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!l[i] || l[j]) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

// Direct enumeration over every distinct map value.
std::vector<FrocPoint> brute_froc(const std::vector<EvalRecord>& recs) {
  std::set<float> values;
  for (const auto& r : recs)
    for (float v : r.probability_map.values()) values.insert(v);
  std::vector<FrocPoint> pts;
  for (auto it = values.rbegin(); it != values.rend(); ++it) {
    const double t = *it;
    int hit = 0, total = 0;
    double fp = 0.0;
    for (const auto& r : recs) {
      const auto& m = r.probability_map;
      int outside = 0;
      for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) {
          bool in = false;
          for (const auto& b : r.boxes) in = in || b.contains(x, y);
          if (!in && m(y, x) >= t) ++outside;
        }
      }
      fp += static_cast<double>(outside) / static_cast<double>(m.size());
      for (const auto& b : r.boxes) {
        ++total;
        const int cx = (b.x0 + b.x1 - 1) / 2, cy = (b.y0 + b.y1 - 1) / 2;
        if (m(cy, cx) >= t) ++hit;
      }
    }
    pts.push_back({fp / recs.size(), static_cast<double>(hit) / total, t});
  }
  std::stable_sort(pts.begin(), pts.end(), [](const FrocPoint& a, const FrocPoint& b) {
    return a.fp_ratio < b.fp_ratio || (a.fp_ratio == b.fp_ratio && a.recall < b.recall);
  });
  return pts;
}

std::vector<EvalRecord> toy_records(Rng& rng, int n) {
  std::vector<EvalRecord> recs;
  for (int i = 0; i < n; ++i) {
    const int h = uniform_int(rng, 4, 12), w = uniform_int(rng, 4, 12);
    EvalRecord r;
    r.sample_id = static_cast<std::uint64_t>(i);
    r.probability_map = ProbabilityMap(h, w, 0.0f);
    for (float& v : r.probability_map.storage()) v = static_cast<float>(uniform_int(rng, 0, 40) / 40.0);
    const int nb = uniform_int(rng, i == 0 ? 1 : 0, 2);
    for (int b = 0; b < nb; ++b) {
      const int x0 = uniform_int(rng, 0, w - 2), y0 = uniform_int(rng, 0, h - 2);
      r.boxes.push_back({x0, y0, uniform_int(rng, x0 + 1, w), uniform_int(rng, y0 + 1, h)});
    }
    r.image_level_label = r.boxes.empty() ? 0 : 1;
    recs.push_back(std::move(r));
  }
  return recs;
}

}  // namespace

TEST_CASE("classification score is the map maximum") {
  CHECK(classification_score(ProbabilityMap(3, 3, 0.0f)) == 0.0);
  ProbabilityMap m(3, 3, 0.0f);
  m(1, 2) = 0.93f;
  CHECK(classification_score(m) == doctest::Approx(0.93));
}

TEST_CASE("auroc examples and oracle") {
  CHECK(auroc(std::vector<double>{0.9, 0.4}, std::vector<int>{1, 0}) == 1.0);
  CHECK(auroc(std::vector<double>{0.4, 0.9}, std::vector<int>{1, 0}) == 0.0);
  CHECK_THROWS_AS(auroc(std::vector<double>{0.4, 0.9}, std::vector<int>{1, 1}), MetricError);
  Rng rng = make_rng({10});
  for (int inst = 0; inst < 50; ++inst) {
    const int n = uniform_int(rng, 2, 200);
    std::vector<double> s(n);
    std::vector<int> l(n);
    for (int i = 0; i < n; ++i) {
      s[i] = uniform_int(rng, 0, 20) / 20.0;  // frequent ties
      l[i] = uniform_int(rng, 0, 1);
    }
    l[0] = 1;
    l[1] = 0;
    CHECK(auroc(s, l) == brute_auroc(s, l));
  }
}

TEST_CASE("auroc of map scores is invariant to monotone transforms") {
  Rng rng = make_rng({11});
  std::vector<double> s, t;
  std::vector<int> l;
  for (int i = 0; i < 60; ++i) {
    ProbabilityMap m(4, 4, 0.0f);
    for (float& v : m.storage()) v = static_cast<float>(uniform01(rng));
    ProbabilityMap m2 = m;
    for (float& v : m2.storage()) v = v * v * v;
    s.push_back(classification_score(m));
    t.push_back(classification_score(m2));
    l.push_back(i % 3 == 0);
  }
  CHECK(auroc(s, l) == auroc(t, l));
}

TEST_CASE("box center") {
  CHECK(box_center({2, 2, 4, 4}) == std::pair{2, 2});
  CHECK(box_center({0, 0, 3, 3}) == std::pair{1, 1});
  Rng rng = make_rng({12});
  for (int i = 0; i < 200; ++i) {
    const int x0 = uniform_int(rng, 0, 20), y0 = uniform_int(rng, 0, 20);
    const BoundingBox b{x0, y0, x0 + uniform_int(rng, 1, 9), y0 + uniform_int(rng, 1, 9)};
    const auto [cx, cy] = box_center(b);
    CHECK(b.contains(cx, cy));
  }
}

TEST_CASE("froc matches exhaustive thresholds") {
  Rng rng = make_rng({13});
  for (int inst = 0; inst < 20; ++inst) {
    const auto recs = toy_records(rng, 5);
    const FrocCurve c = froc_curve(recs, default_thresholds(recs));
    const auto expect = brute_froc(recs);
    REQUIRE(c.points.size() == expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) {
      CHECK(c.points[i].fp_ratio == expect[i].fp_ratio);
      CHECK(c.points[i].recall == expect[i].recall);
    }
    CHECK(c.score == froc_score(expect));
    for (std::size_t i = 1; i < c.points.size(); ++i) CHECK(c.points[i].recall >= c.points[i - 1].recall);
    CHECK(c.score >= 0.0);
    CHECK(c.score <= 1.0);
  }
}

TEST_CASE("froc edge cases") {
  EvalRecord r;
  r.probability_map = ProbabilityMap(8, 8, 0.0f);
  r.boxes = {{2, 2, 5, 4}};
  r.image_level_label = 1;
  for (int y = 2; y < 4; ++y)
    for (int x = 2; x < 5; ++x) r.probability_map(y, x) = 1.0f;
  const std::vector<EvalRecord> perfect{r};
  const std::vector<double> taus{0.999, 0.5, 0.001};
  for (const FrocPoint& p : froc_curve(perfect, taus).points) {
    CHECK(p.recall == 1.0);
    CHECK(p.fp_ratio == 0.0);
  }
  CHECK(froc_curve(perfect, taus).score == 1.0);

  EvalRecord z = r;
  z.probability_map = ProbabilityMap(8, 8, 0.0f);
  const std::vector<EvalRecord> zeros{z};
  for (const FrocPoint& p : froc_curve(zeros, taus).points) CHECK(p.recall == 0.0);
  CHECK(froc_curve(zeros, default_thresholds(zeros)).score == 0.0);

  EvalRecord none = r;
  none.boxes.clear();
  CHECK_THROWS_AS(froc_curve(std::vector<EvalRecord>{none}, taus), MetricError);
  CHECK_THROWS_AS(froc_curve(std::vector<EvalRecord>{}, taus), ConfigError);
  CHECK_THROWS_AS(froc_curve(perfect, std::vector<double>{0.1, 0.5}), ConfigError);
}

TEST_CASE("threshold grid falls back to quantiles") {
  std::vector<EvalRecord> recs(1);
  recs[0].probability_map = ProbabilityMap(128, 128, 0.0f);
  Rng rng = make_rng({14});
  for (float& v : recs[0].probability_map.storage()) v = static_cast<float>(uniform01(rng));
  const auto t = default_thresholds(recs);
  CHECK(t.size() <= 1024);
  CHECK(t.size() > 1000);
  CHECK(std::is_sorted(t.rbegin(), t.rend()));
}

TEST_CASE("report json layout") {
  MetricsReport rep;
  rep.auroc = 0.75;
  rep.froc.score = 0.5;
  rep.froc.points = {{0.0, 0.2, 0.9}};
  const std::string j = metrics_report_json(rep);
  CHECK(j.find("\"auroc\"") < j.find("\"froc_score\""));
  CHECK(j.find("\"curve\"") != std::string::npos);
  CHECK(froc_curve_csv(rep.froc).rfind("fp_ratio,recall,threshold\n", 0) == 0);
}
