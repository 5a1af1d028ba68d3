#include "propensity/mpg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <nlohmann/json.hpp>

#include "propensity/parallel.hpp"

namespace propensity::mpg {
namespace {

constexpr double kColdStartDays = 30.0;
constexpr int kMaxNewtonIterations = 100;
constexpr double kNewtonRelTol = 1e-10;

struct PairStats {
  std::size_t k = 0;
  TimestampMs t_first = 0;
  TimestampMs t_last = 0;
};

/// product -> customer -> stats, over orders before as_of.
using PairTable = std::map<std::string, std::map<std::string, PairStats>>;

PairTable collect_pairs(const events::EventLog& log, TimestampMs as_of, const std::string* only_product = nullptr) {
  PairTable table;
  for (const auto& o : log.orders) {
    if (o.timestamp >= as_of) break;
    if (only_product && o.product_id != *only_product) continue;
    auto& s = table[o.product_id][o.customer_id];
    if (s.k == 0) s.t_first = o.timestamp;
    s.t_last = o.timestamp;
    ++s.k;
  }
  return table;
}

std::vector<double> rates_of(const std::map<std::string, PairStats>& customers, TimestampMs as_of) {
  std::vector<double> rates;
  for (const auto& [cid, s] : customers)
    if (s.k >= 2) rates.push_back(static_cast<double>(s.k - 1) / ms_to_days(as_of - s.t_first));
  return rates;
}

/// Pooled gap mean as (sum of spans, number of gaps).
std::pair<double, std::size_t> pooled_gaps(const std::map<std::string, PairStats>& customers) {
  double span = 0;
  std::size_t gaps = 0;
  for (const auto& [cid, s] : customers) {
    if (s.k < 2) continue;
    span += ms_to_days(s.t_last - s.t_first);
    gaps += s.k - 1;
  }
  return {span, gaps};
}

}  // namespace

const ProductPrior& PriorSet::for_product(const std::string& product_id) const {
  auto it = products.find(product_id);
  return it == products.end() ? fallback : it->second;
}

std::map<std::string, PurchaseHistory> purchase_histories(const events::EventLog& log, const std::string& customer_id,
                                                          TimestampMs as_of) {
  std::map<std::string, PurchaseHistory> out;
  for (auto i : log.orders_before(customer_id, as_of)) {
    const auto& o = log.orders[i];
    auto [it, fresh] = out.try_emplace(o.product_id);
    auto& h = it->second;
    if (fresh) {
      h.customer_id = customer_id;
      h.product_id = o.product_id;
      h.t_first = o.timestamp;
    }
    h.t_last = o.timestamp;
    ++h.k;
  }
  return out;
}

std::vector<double> customer_rates(const events::EventLog& log, const std::string& product_id, TimestampMs as_of) {
  auto table = collect_pairs(log, as_of, &product_id);
  auto it = table.find(product_id);
  if (it == table.end()) return {};
  return rates_of(it->second, as_of);
}

std::optional<GammaFit> fit_gamma_prior(std::span<const double> rates) {
  for (double r : rates)
    if (!(r > 0) || !std::isfinite(r)) throw Error("fit_gamma_prior: rates must be positive and finite");
  if (rates.size() < 2) return std::nullopt;

  const double n = static_cast<double>(rates.size());
  const double mean = std::accumulate(rates.begin(), rates.end(), 0.0) / n;
  double ss = 0, mean_log = 0;
  for (double r : rates) {
    ss += (r - mean) * (r - mean);
    mean_log += std::log(r);
  }
  const double var = ss / (n - 1);
  mean_log /= n;
  if (!(var > 0)) return std::nullopt;

  GammaFit fit;
  fit.alpha_mom = mean * mean / var;
  fit.beta_mom = mean / var;

  // Shape equation: log(a) - digamma(a) = s, with s > 0 by Jensen.
  const double s = std::log(mean) - mean_log;
  double a = fit.alpha_mom;
  if (s > 0) {
    for (int it = 1; it <= kMaxNewtonIterations; ++it) {
      const double f = std::log(a) - boost::math::digamma(a) - s;
      const double df = 1.0 / a - boost::math::trigamma(a);
      double next = a - f / df;
      if (!(next > 0) || !std::isfinite(next)) next = a / 2;
      const bool done = std::abs(next - a) < kNewtonRelTol * a;
      a = next;
      fit.iterations = it;
      if (done) {
        fit.converged = true;
        break;
      }
    }
  }
  if (fit.converged) {
    fit.alpha = a;
    fit.beta = a / mean;
  } else {
    fit.alpha = fit.alpha_mom;
    fit.beta = fit.beta_mom;
  }
  return fit;
}

double estimate_t_mean(const events::EventLog& log, const std::string& product_id, TimestampMs as_of) {
  auto table = collect_pairs(log, as_of, &product_id);
  auto it = table.find(product_id);
  if (it == table.end()) throw Error("estimate_t_mean: product '" + product_id + "' has no purchases");
  const auto [span, gaps] = pooled_gaps(it->second);
  if (gaps == 0) throw Error("estimate_t_mean: product '" + product_id + "' has no repeat purchases");
  return span / static_cast<double>(gaps);
}

double pg_lambda(double k, double t, const ProductPrior& prior) {
  if (!(t > 0)) throw Error("pg_lambda: elapsed time must be positive");
  if (k < 0) throw Error("pg_lambda: purchase count must be non-negative");
  return (k + prior.alpha) / (t + prior.beta);
}

double mpg_lambda(double k, double delta, double t_purch, const ProductPrior& prior) {
  if (k < 0 || delta < 0 || t_purch < 0) throw Error("mpg_lambda: inputs must be non-negative");
  if (delta < 2 * prior.t_mean) return (k + prior.alpha) / (t_purch + 2 * std::abs(prior.t_mean - delta) + prior.beta);
  return (k + prior.alpha) / ((t_purch + delta) + prior.beta);
}

double poisson_pmf(double lambda, unsigned m) {
  if (!(lambda >= 0)) throw Error("poisson_pmf: lambda must be non-negative");
  if (lambda == 0) return m == 0 ? 1.0 : 0.0;
  if (m > 20) return std::exp(m * std::log(lambda) - lambda - std::lgamma(m + 1.0));
  double p = std::exp(-lambda);
  for (unsigned i = 1; i <= m; ++i) p *= lambda / i;
  return p;
}

double prob_at_least_one(double lambda) {
  if (!(lambda >= 0)) throw Error("prob_at_least_one: lambda must be non-negative");
  return -std::expm1(-lambda);
}

PriorSet fit_priors(const events::EventLog& log, TimestampMs as_of) {
  const auto table = collect_pairs(log, as_of);

  double span = 0;
  std::size_t gaps = 0;
  for (const auto& [pid, customers] : table) {
    const auto [s, g] = pooled_gaps(customers);
    span += s;
    gaps += g;
  }
  const double global_gap = gaps > 0 && span > 0 ? span / static_cast<double>(gaps) : kColdStartDays;

  PriorSet set;
  set.fitted_as_of = as_of;
  set.fallback = ProductPrior{"", 1.0, global_gap, global_gap, 0, true};

  std::vector<const std::pair<const std::string, std::map<std::string, PairStats>>*> entries;
  for (const auto& e : table) entries.push_back(&e);
  std::vector<ProductPrior> fitted(entries.size());

  parallel_for(entries.size(), [&](std::size_t i) {
    const auto& [pid, customers] = *entries[i];
    const auto rates = rates_of(customers, as_of);
    ProductPrior p = set.fallback;
    p.product_id = pid;
    p.n_support = rates.size();
    if (auto fit = fit_gamma_prior(rates)) {
      const auto [s, g] = pooled_gaps(customers);
      if (g > 0 && s > 0) {
        p.alpha = fit->alpha;
        p.beta = fit->beta;
        p.t_mean = s / static_cast<double>(g);
        p.fallback = false;
      }
    }
    fitted[i] = std::move(p);
  });
  for (auto& p : fitted) {
    auto id = p.product_id;
    set.products.emplace(std::move(id), std::move(p));
  }
  return set;
}

std::map<std::string, double> score_customer_products(const events::EventLog& log, const std::string& customer_id,
                                                      TimestampMs as_of, const PriorSet& priors, double window_days) {
  if (!(window_days > 0)) throw Error("score_customer_products: window must be positive");
  std::map<std::string, double> out;
  for (const auto& [pid, h] : purchase_histories(log, customer_id, as_of)) {
    const double delta = ms_to_days(as_of - h.t_last);
    const double t_purch = ms_to_days(h.t_last - h.t_first);
    const double rate = mpg_lambda(static_cast<double>(h.k), delta, t_purch, priors.for_product(pid));
    out.emplace(pid, prob_at_least_one(rate * window_days));
  }
  return out;
}

MpgFeatures mpg_customer_features(const std::map<std::string, double>& scores) {
  MpgFeatures f;
  if (scores.empty()) return f;
  for (const auto& [pid, p] : scores) {
    if (p > 0.5) f.n_gt_50 += 1;
    if (p > 0.75) f.n_gt_75 += 1;
    if (p > 0.9) f.n_gt_90 += 1;
    f.p_sum += p;
  }
  const double n = static_cast<double>(scores.size());
  f.p_mean = f.p_sum / n;
  double ss = 0;
  for (const auto& [pid, p] : scores) ss += (p - f.p_mean) * (p - f.p_mean);
  f.p_std = std::sqrt(ss / n);
  return f;
}

nlohmann::json to_json(const ProductPrior& p) {
  return {{"product_id", p.product_id}, {"alpha", p.alpha},         {"beta", p.beta},
          {"t_mean_days", p.t_mean},    {"n_support", p.n_support}, {"fallback", p.fallback}};
}

ProductPrior prior_from_json(const nlohmann::json& j) {
  ProductPrior p;
  p.product_id = j.at("product_id").get<std::string>();
  p.alpha = j.at("alpha").get<double>();
  p.beta = j.at("beta").get<double>();
  p.t_mean = j.at("t_mean_days").get<double>();
  p.n_support = j.at("n_support").get<std::size_t>();
  p.fallback = j.value("fallback", false);
  if (!(p.alpha > 0 && p.beta > 0 && p.t_mean > 0)) throw Error("prior '" + p.product_id + "': parameters must be positive");
  return p;
}

}  // namespace propensity::mpg
