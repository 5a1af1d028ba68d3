#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "propensity/types.hpp"

namespace propensity::lr {

struct Penalty {
  double l1 = 0.0;
  double l2 = 1e-4;

  bool operator==(const Penalty&) const = default;
};

/// Logistic regression on standardized inputs: p = sigmoid(w . z + b) with
/// z_j = (x_j - means_j) / scales_j.
struct LrModel {
  std::vector<double> w;
  double b = 0.0;
  std::vector<double> means;
  std::vector<double> scales;
  Penalty penalty;
  std::vector<std::string> feature_names;

  std::vector<double> standardize(std::span<const double> x) const;
  double predict_margin(std::span<const double> x) const;
  double predict_proba(std::span<const double> x) const;

  bool operator==(const LrModel&) const = default;
};

struct FitOptions {
  Penalty penalty;
  /// Stop once the norm of the (pseudo-)gradient falls below this.
  double tolerance = 1e-8;
  int max_iterations = 200;
};

struct FitTrace {
  int iterations = 0;
  bool converged = false;
  double gradient_norm = 0.0;
  /// Penalized objective after every accepted step, starting at the initial point.
  std::vector<double> objective;
};

/// Minimizes mean log-loss + l2/2 |w|^2 + l1 |w|_1 over standardized inputs,
/// bias unpenalized. Newton steps on the smooth part solved by Cholesky,
/// restricted to the orthant of the current sign pattern with coordinates
/// that cross zero clipped to zero. Throws Error for a single-class y or a
/// perfectly separable problem with both penalties zero.
LrModel fit(const DenseMatrix& x, std::span<const int> y, const FitOptions& options = {},
            std::vector<std::string> feature_names = {}, FitTrace* trace = nullptr);

/// Smooth part (mean log-loss + l2/2 |w|^2) at (w, b) on already standardized z.
double smooth_objective(const DenseMatrix& z, std::span<const int> y, std::span<const double> w, double b, double l2);

/// Gradient of smooth_objective; entries for w followed by the bias.
std::vector<double> smooth_gradient(const DenseMatrix& z, std::span<const int> y, std::span<const double> w, double b,
                                    double l2);

/// Minimum-norm subgradient of the full objective; zero exactly at the optimum.
std::vector<double> pseudo_gradient(const DenseMatrix& z, std::span<const int> y, std::span<const double> w, double b,
                                    const Penalty& penalty);

nlohmann::json to_json(const LrModel& m);
LrModel model_from_json(const nlohmann::json& j);

}  // namespace propensity::lr
