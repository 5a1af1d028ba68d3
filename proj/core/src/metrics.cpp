#include "propensity/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace propensity::eval {
namespace {

void check_lengths(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error("scores and labels differ in length");
}

struct RankedCounts {
  std::vector<double> thresholds;  // distinct scores, descending
  std::vector<double> tp;          // cumulative positives with score >= threshold
  std::vector<double> fp;
  double n_pos = 0;
  double n_neg = 0;
};

RankedCounts rank(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores, labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RankedCounts r;
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (labels[order[i]] != 0) {
      tp += 1;
    } else {
      fp += 1;
    }
    // Emit once per group of tied scores.
    if (i + 1 == order.size() || scores[order[i + 1]] != scores[order[i]]) {
      r.thresholds.push_back(scores[order[i]]);
      r.tp.push_back(tp);
      r.fp.push_back(fp);
    }
  }
  r.n_pos = tp;
  r.n_neg = fp;
  if (r.n_pos == 0 || r.n_neg == 0) throw Error("curves need both classes present");
  return r;
}

std::string pct_text(double v) {
  std::ostringstream os;
  os << std::round(v * 100);
  return os.str();
}

}  // namespace

ConfusionCounts confusion(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_lengths(scores, labels);
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] > threshold;
    const bool actual = labels[i] != 0;
    if (predicted && actual) ++c.tp;
    else if (predicted) ++c.fp;
    else if (actual) ++c.fn;
    else ++c.tn;
  }
  return c;
}

ClassificationMetrics classification_metrics(const ConfusionCounts& c) {
  ClassificationMetrics m;
  const auto ratio = [](double num, double den, bool& undefined) {
    if (den == 0) {
      undefined = true;
      return 0.0;
    }
    return num / den;
  };
  const double tp = static_cast<double>(c.tp), tn = static_cast<double>(c.tn);
  const double fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
  m.accuracy = ratio(tp + tn, tp + tn + fp + fn, m.accuracy_undefined);
  m.precision = ratio(tp, tp + fp, m.precision_undefined);
  m.recall = ratio(tp, tp + fn, m.recall_undefined);
  m.f1 = ratio(2 * tp, 2 * tp + fp + fn, m.f1_undefined);
  return m;
}

std::vector<CurvePoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  const auto r = rank(scores, labels);
  std::vector<CurvePoint> pts;
  pts.reserve(r.thresholds.size() + 1);
  pts.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  for (std::size_t i = 0; i < r.thresholds.size(); ++i)
    pts.push_back({r.thresholds[i], r.fp[i] / r.n_neg, r.tp[i] / r.n_pos});
  return pts;
}

std::vector<CurvePoint> pr_curve(std::span<const double> scores, std::span<const int> labels) {
  const auto r = rank(scores, labels);
  std::vector<CurvePoint> pts;
  pts.reserve(r.thresholds.size() + 1);
  pts.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});
  for (std::size_t i = 0; i < r.thresholds.size(); ++i)
    pts.push_back({r.thresholds[i], r.tp[i] / r.n_pos, r.tp[i] / (r.tp[i] + r.fp[i])});
  return pts;
}

double trapezoid_area(std::span<const CurvePoint> points) {
  double area = 0;
  for (std::size_t i = 1; i < points.size(); ++i)
    area += (points[i].x - points[i - 1].x) * (points[i].y + points[i - 1].y) / 2;
  return area;
}

double step_area(std::span<const CurvePoint> points) {
  double area = 0;
  for (std::size_t i = 1; i < points.size(); ++i) area += (points[i].x - points[i - 1].x) * points[i].y;
  return area;
}

double auc_roc(std::span<const double> scores, std::span<const int> labels) {
  return trapezoid_area(roc_curve(scores, labels));
}

double auc_pr(std::span<const double> scores, std::span<const int> labels) {
  return step_area(pr_curve(scores, labels));
}

std::vector<ProbabilityRange> default_bucket_ranges() { return {{0.9, 1.0}, {0.8, 0.9}, {0.7, 0.8}}; }

std::string BucketRow::label() const { return pct_text(range.lo) + "-" + pct_text(range.hi); }

namespace {

bool in_range(double s, const ProbabilityRange& r) { return s >= r.lo && (s < r.hi || (r.hi >= 1.0 && s <= r.hi)); }

void check_ranges(std::span<const ProbabilityRange> ranges) {
  for (const auto& r : ranges)
    if (!(r.lo < r.hi)) throw Error("bucket range must have lo < hi");
  for (std::size_t i = 0; i < ranges.size(); ++i)
    for (std::size_t j = i + 1; j < ranges.size(); ++j)
      if (ranges[i].lo < ranges[j].hi && ranges[j].lo < ranges[i].hi) throw Error("bucket ranges overlap");
}

}  // namespace

BucketReport bucket_report(std::span<const double> scores, std::span<const int> outcomes,
                           std::span<const ProbabilityRange> ranges) {
  check_lengths(scores, outcomes);
  check_ranges(ranges);
  BucketReport rep;
  for (const auto& r : ranges) rep.rows.push_back({r, 0, 0, 0});
  rep.total.range = {ranges.empty() ? 0.0 : std::min_element(ranges.begin(), ranges.end(), [](auto& a, auto& b) {
                       return a.lo < b.lo;
                     })->lo,
                     1.0};
  for (std::size_t i = 0; i < scores.size(); ++i) {
    for (auto& row : rep.rows) {
      if (!in_range(scores[i], row.range)) continue;
      ++row.n_called;
      if (outcomes[i] != 0) ++row.n_ordered;
      ++rep.total.n_called;
      if (outcomes[i] != 0) ++rep.total.n_ordered;
      break;
    }
  }
  auto pct = [](BucketRow& row) {
    row.pct_orders = row.n_called > 0 ? 100.0 * static_cast<double>(row.n_ordered) / static_cast<double>(row.n_called) : 0.0;
  };
  for (auto& row : rep.rows) pct(row);
  pct(rep.total);
  return rep;
}

std::string bucket_label(double score, std::span<const ProbabilityRange> ranges) {
  for (const auto& r : ranges)
    if (in_range(score, r)) return BucketRow{r}.label();
  return "";
}

nlohmann::json metrics_report(std::span<const double> scores, std::span<const int> labels,
                              std::span<const ProbabilityRange> ranges, double threshold) {
  const auto c = confusion(scores, labels, threshold);
  const auto m = classification_metrics(c);
  nlohmann::json j;
  j["accuracy"] = m.accuracy;
  j["precision"] = m.precision;
  j["recall"] = m.recall;
  j["f1"] = m.f1;
  j["auc_roc"] = auc_roc(scores, labels);
  j["auc_pr"] = auc_pr(scores, labels);
  j["confusion"] = {{"tp", c.tp}, {"tn", c.tn}, {"fp", c.fp}, {"fn", c.fn}};
  j["threshold"] = threshold;
  const auto rep = bucket_report(scores, labels, ranges);
  auto rows = nlohmann::json::array();
  for (const auto& r : rep.rows)
    rows.push_back({{"range", r.label()}, {"n_called", r.n_called}, {"n_ordered", r.n_ordered}, {"pct_orders", r.pct_orders}});
  rows.push_back({{"range", "total"},
                  {"n_called", rep.total.n_called},
                  {"n_ordered", rep.total.n_ordered},
                  {"pct_orders", rep.total.pct_orders}});
  j["buckets"] = std::move(rows);
  return j;
}

void write_curve_csv(std::span<const CurvePoint> points, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "threshold,x,y\n";
  for (const auto& p : points) out << p.threshold << ',' << p.x << ',' << p.y << '\n';
}

}  // namespace propensity::eval
