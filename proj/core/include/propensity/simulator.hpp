#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "propensity/event_log.hpp"
#include "propensity/mpg.hpp"

namespace propensity::sim {

/// Shape of a pair's purchase hazard as a function of days since its last purchase.
enum class Hazard {
  /// h = lambda; gaps are exponential with mean 1/lambda.
  constant,
  /// h = lambda * r(delta), r = K / (K + 2|m - delta|) up to delta = 2m and
  /// K / (K + 2m) afterwards, with K = softness * m.
  mpg,
};

struct ProductTruth {
  double alpha = 2.0;
  double beta = 4.0;
  /// Peak of the mpg hazard, in days. Unused by the constant hazard.
  double t_mean = 10.0;

  bool operator==(const ProductTruth&) const = default;
};

struct SimConfig {
  std::size_t n_customers = 200;
  std::vector<ProductTruth> products = default_products(10);
  double horizon_days = 120.0;
  Hazard hazard = Hazard::mpg;
  double softness = 0.25;
  /// Chance that a customer buys a given product at all.
  double pair_probability = 0.15;
  /// Engagement events and engagement-driven orders; off gives pure renewal logs.
  bool engagement = true;
  /// Strength of the engagement covariates in the logit of the per-window
  /// engagement-driven order probability.
  double theta = 1.0;
  double base_logit = -3.0;
  std::size_t n_spot_products = 5;
  std::size_t n_brands = 8;
  /// Record per-window conversion probabilities.
  bool record_truth = true;
  std::uint64_t seed = 1;
  TimestampMs origin = 1'699'920'000'000;  // 2023-11-14T00:00:00Z

  /// n products with peaks spread over [5, 25] days and mean rate 3 / peak.
  static std::vector<ProductTruth> default_products(std::size_t n);

  /// Throws Error naming the first invalid field.
  void validate() const;
};

nlohmann::json to_json(const SimConfig& c);
/// Keys missing from j keep their defaults; "n_products" builds default_products.
SimConfig sim_config_from_json(const nlohmann::json& j);

std::string product_id(std::size_t index);
std::string customer_id(std::size_t index);

/// Length of the grid step used for ground truth and engagement-driven orders.
inline constexpr double kWindowDays = 2.0;

struct PairRate {
  std::string customer_id;
  std::string product_id;
  double lambda = 0;
};

struct GroundTruth {
  std::vector<PairRate> rates;
  /// Window starts origin + i * kWindowDays.
  std::vector<TimestampMs> grid;
  std::vector<std::string> customer_ids;
  /// probability[c][i]: chance that customer c orders in [grid[i], grid[i] + 2 days)
  /// given everything before grid[i].
  std::vector<std::vector<double>> probability;

  /// NaN when the customer or window start is not on the grid.
  double probability_at(const std::string& customer_id, TimestampMs window_start) const;
};

nlohmann::json to_json(const GroundTruth& t);

/// Synthetic log and its generating truth. Every customer-product pair draws
/// its rate from the product's gamma distribution and runs a renewal process
/// sampled by thinning. With engagement on, each customer gets app opens,
/// listing views, add-to-cart, FAM visits and calls, and every 2-day window
/// may hold one extra order whose logit rises with recent app opens and
/// add-to-cart and falls with days since the last order. Deterministic per
/// seed, independent of thread count.
std::pair<events::EventLog, GroundTruth> simulate(const SimConfig& config);

/// Integral of the hazard over delta in [from, to].
double hazard_integral(Hazard hazard, double lambda, double peak, double softness, double from, double to);

struct McEstimate {
  double estimate = 0;
  double std_error = 0;
};

/// Fraction of Poisson(lambda * window) draws that are at least one. Throws
/// Error when n_draws < 10,000.
McEstimate mc_prob_oracle(double lambda, double window, std::size_t n_draws, std::uint64_t seed);

struct RecoveryRow {
  std::string product_id;
  ProductTruth truth;
  /// Mean gap the estimator targets: beta / alpha for the constant hazard,
  /// the configured peak otherwise.
  double truth_t_mean = 0;
  mpg::ProductPrior fitted;
  bool present = false;
  double alpha_error = 0;
  double beta_error = 0;
  double t_mean_error = 0;
  bool pass = false;
};

struct RecoveryReport {
  std::vector<RecoveryRow> rows;
  double tolerance_rate = 0.10;
  double tolerance_t_mean = 0.05;
  /// True when every non-fallback product passes and none is missing.
  bool pass = false;
};

/// Relative errors of fitted priors against the configured truth. Missing
/// products fail; fallback products are listed but excluded from the verdict.
RecoveryReport recovery_report(const SimConfig& truth, const mpg::PriorSet& fitted, double tolerance_rate = 0.10,
                               double tolerance_t_mean = 0.05);

nlohmann::json to_json(const RecoveryReport& r);

}  // namespace propensity::sim
