#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "propensity/event_log.hpp"
#include "propensity/types.hpp"

namespace propensity::mpg {

/// Gamma prior on a product's purchase rate. Times are in days, so alpha/beta
/// is a rate per day.
struct ProductPrior {
  std::string product_id;
  double alpha = 1.0;
  double beta = 1.0;
  double t_mean = 1.0;
  std::size_t n_support = 0;
  /// Set when the product lacked the repeat buyers needed for a fit.
  bool fallback = false;

  bool operator==(const ProductPrior&) const = default;
};

/// Per-product priors plus the cold-start prior used for products without one.
struct PriorSet {
  std::map<std::string, ProductPrior> products;
  ProductPrior fallback;
  TimestampMs fitted_as_of = 0;

  const ProductPrior& for_product(const std::string& product_id) const;
  bool operator==(const PriorSet&) const = default;
};

struct PurchaseHistory {
  std::string customer_id;
  std::string product_id;
  std::size_t k = 0;
  TimestampMs t_first = 0;
  TimestampMs t_last = 0;
};

struct MpgFeatures {
  double n_gt_50 = 0;
  double n_gt_75 = 0;
  double n_gt_90 = 0;
  double p_mean = 0;
  double p_std = 0;
  double p_sum = 0;

  bool operator==(const MpgFeatures&) const = default;
};

/// Purchase histories of one customer before as_of, keyed by product.
std::map<std::string, PurchaseHistory> purchase_histories(const events::EventLog& log,
                                                          const std::string& customer_id, TimestampMs as_of);

/// Rate estimates (k - 1) / (as_of - t_first), in 1/day, for every customer
/// with at least two purchases of the product before as_of. Customer order.
std::vector<double> customer_rates(const events::EventLog& log, const std::string& product_id, TimestampMs as_of);

struct GammaFit {
  double alpha = 0;
  double beta = 0;
  /// Method-of-moments starting point.
  double alpha_mom = 0;
  double beta_mom = 0;
  bool converged = false;
  int iterations = 0;
};

/// Maximum-likelihood gamma fit. Starts from the method of moments (sample
/// variance) and refines the shape by damped Newton on
/// log(a) - digamma(a) = log(mean) - mean(log x); beta = alpha / mean.
/// Returns nullopt when fewer than two rates are given or they have zero
/// variance. Throws Error on a non-positive rate. On non-convergence within
/// 100 iterations the moment estimate is returned with converged = false.
std::optional<GammaFit> fit_gamma_prior(std::span<const double> rates);

/// Pooled mean of successive inter-purchase gaps, in days, over every
/// customer of the product before as_of. Throws Error without repeat purchases.
double estimate_t_mean(const events::EventLog& log, const std::string& product_id, TimestampMs as_of);

/// Posterior-mean rate (k + alpha) / (t + beta); t in days, t > 0.
double pg_lambda(double k, double t, const ProductPrior& prior);

/// Rate that peaks at delta = t_mean and is low right after a purchase.
/// delta is the time since the last purchase and t_purch the span from first
/// to last purchase (both days). For delta < 2 t_mean the denominator is
/// t_purch + 2|t_mean - delta| + beta; afterwards it is (t_purch + delta) + beta.
double mpg_lambda(double k, double delta, double t_purch, const ProductPrior& prior);

/// Poisson probability of m events at mean lambda (log space above m = 20).
double poisson_pmf(double lambda, unsigned m);

/// 1 - exp(-lambda).
double prob_at_least_one(double lambda);

/// Fits every product seen before as_of. Products with fewer than two repeat
/// rates or zero variance get the fallback prior alpha = 1, beta = t_mean =
/// global pooled mean gap. Products are fitted in parallel.
PriorSet fit_priors(const events::EventLog& log, TimestampMs as_of);

/// P(at least one purchase within the window) per product the customer bought
/// before as_of, using mpg_lambda scaled by the window.
std::map<std::string, double> score_customer_products(const events::EventLog& log, const std::string& customer_id,
                                                      TimestampMs as_of, const PriorSet& priors,
                                                      double window_days = 2.0);

/// Threshold counts (strictly greater than 0.5 / 0.75 / 0.9), mean, population
/// standard deviation and sum of the probabilities; zeros when empty.
MpgFeatures mpg_customer_features(const std::map<std::string, double>& scores);

nlohmann::json to_json(const ProductPrior& p);
ProductPrior prior_from_json(const nlohmann::json& j);

}  // namespace propensity::mpg
