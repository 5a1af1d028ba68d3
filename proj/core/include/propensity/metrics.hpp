#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "propensity/types.hpp"

namespace propensity::eval {

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t tn = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  std::size_t total() const noexcept { return tp + tn + fp + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// A score strictly above the threshold predicts 1.
ConfusionCounts confusion(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

struct ClassificationMetrics {
  double accuracy = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  // Set when the ratio had a zero denominator and was reported as 0.
  bool accuracy_undefined = false;
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
};

ClassificationMetrics classification_metrics(const ConfusionCounts& c);

struct CurvePoint {
  double threshold = 0;
  double x = 0;
  double y = 0;
};

/// ROC points (x = FPR, y = TPR) from (0,0) at threshold +inf through one
/// point per distinct score, predicting positive when score >= threshold.
/// Throws Error unless both classes are present.
std::vector<CurvePoint> roc_curve(std::span<const double> scores, std::span<const int> labels);

/// PR points (x = recall, y = precision), one per distinct score, preceded by
/// (0, 1) at threshold +inf.
std::vector<CurvePoint> pr_curve(std::span<const double> scores, std::span<const int> labels);

/// Trapezoidal area under a curve given in ascending x order.
double trapezoid_area(std::span<const CurvePoint> points);

/// Step-interpolated PR area: sum over points of (recall_i - recall_{i-1}) * precision_i.
double step_area(std::span<const CurvePoint> points);

double auc_roc(std::span<const double> scores, std::span<const int> labels);
double auc_pr(std::span<const double> scores, std::span<const int> labels);

struct ProbabilityRange {
  double lo = 0;
  double hi = 1;
};

/// Default ranges 90-100, 80-90, 70-80 percent.
std::vector<ProbabilityRange> default_bucket_ranges();

struct BucketRow {
  ProbabilityRange range;
  std::size_t n_called = 0;
  std::size_t n_ordered = 0;
  double pct_orders = 0;

  std::string label() const;
};

struct BucketReport {
  std::vector<BucketRow> rows;
  BucketRow total;
};

/// Ranges are [lo, hi), except that hi = 1 also includes 1. Scores outside
/// every range are not called. Throws Error on overlapping ranges.
BucketReport bucket_report(std::span<const double> scores, std::span<const int> outcomes,
                           std::span<const ProbabilityRange> ranges);

/// Label of the range containing the score, or "" when none does.
std::string bucket_label(double score, std::span<const ProbabilityRange> ranges);

nlohmann::json metrics_report(std::span<const double> scores, std::span<const int> labels,
                              std::span<const ProbabilityRange> ranges, double threshold = 0.5);

void write_curve_csv(std::span<const CurvePoint> points, const std::filesystem::path& path);

}  // namespace propensity::eval
