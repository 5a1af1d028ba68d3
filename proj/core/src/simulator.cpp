#include "propensity/simulator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <random>

#include <nlohmann/json.hpp>

#include "propensity/parallel.hpp"
#include "propensity/rng.hpp"

namespace propensity::sim {
namespace {

using nlohmann::json;

constexpr std::array<double, 7> kWeekdayLift{1.0, 1.0, 1.0, 1.05, 1.15, 1.3, 0.6};
constexpr std::array<const char*, 3> kActivationTypes{"app", "fam", "telecall"};

enum Stream : std::uint64_t { profile_stream = 0, pair_stream = 1, engagement_stream = 2, spot_stream = 3, order_stream = 4 };

struct PairSim {
  std::size_t product = 0;
  double lambda = 0;
  /// Days of the last purchase before the origin (negative) for the mpg hazard.
  double initial_last = 0;
  std::vector<double> times;
};

struct CustomerSim {
  std::vector<events::OrderEvent> orders;
  std::vector<events::EngagementEvent> engagements;
  events::CustomerProfile profile;
  std::vector<PairRate> rates;
  std::vector<double> probability;
};

TimestampMs at(const SimConfig& c, double days) {
  const auto ms = static_cast<TimestampMs>(std::llround(days * static_cast<double>(kMsPerDay)));
  const auto end = static_cast<TimestampMs>(std::llround(c.horizon_days * static_cast<double>(kMsPerDay)));
  return c.origin + std::min(ms, end - 1);
}

std::string padded(char prefix, std::size_t index, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%0*zu", prefix, width, index);
  return buf;
}

double hazard_shape(Hazard hazard, double peak, double softness, double delta) {
  if (hazard == Hazard::constant) return 1.0;
  const double k = softness * peak;
  if (delta < 2 * peak) return k / (k + 2 * std::abs(peak - delta));
  return k / (k + 2 * peak);
}

PairSim simulate_pair(const SimConfig& c, std::size_t customer, std::size_t product) {
  auto rng = make_rng(c.seed, {customer, pair_stream, product});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PairSim p;
  p.product = product;
  if (unit(rng) >= c.pair_probability) return p;
  const auto& truth = c.products[product];
  p.lambda = std::gamma_distribution<double>(truth.alpha, 1.0 / truth.beta)(rng);
  if (!(p.lambda > 0)) return p;
  std::exponential_distribution<double> gap(p.lambda);
  if (c.hazard == Hazard::constant) {
    for (double t = gap(rng); t < c.horizon_days; t += gap(rng)) p.times.push_back(t);
    return p;
  }
  // Thinning against the dominating rate lambda, since the shape is at most 1.
  p.initial_last = -unit(rng) * 2 * truth.t_mean;
  double last = p.initial_last;
  for (double t = gap(rng); t < c.horizon_days; t += gap(rng)) {
    if (unit(rng) < hazard_shape(c.hazard, truth.t_mean, c.softness, t - last)) {
      p.times.push_back(t);
      last = t;
    }
  }
  return p;
}

/// Per-day counts of app opens and add-to-cart events, plus the events.
struct Engagement {
  std::vector<int> app_opens;
  std::vector<int> add_to_cart;
};

Engagement simulate_engagement(const SimConfig& c, std::size_t customer, const std::string& cid,
                               std::vector<events::EngagementEvent>& out) {
  const auto days = static_cast<std::size_t>(std::ceil(c.horizon_days));
  Engagement e{std::vector<int>(days, 0), std::vector<int>(days, 0)};
  auto rng = make_rng(c.seed, {customer, engagement_stream});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double mu = std::gamma_distribution<double>(2.0, 0.5)(rng);
  std::lognormal_distribution<double> cart_value(std::log(500.0), 0.8);
  std::exponential_distribution<double> human_seconds(1.0 / 180.0);
  std::exponential_distribution<double> bot_seconds(1.0 / 60.0);

  auto emit = [&](std::size_t day, events::EngagementKind kind, double value) {
    const double t = static_cast<double>(day) + unit(rng);
    if (t >= c.horizon_days) return false;
    out.push_back({cid, at(c, t), kind, value});
    return true;
  };
  auto draw = [&](double mean) { return mean > 0 ? std::poisson_distribution<int>(mean)(rng) : 0; };

  for (std::size_t d = 0; d < days; ++d) {
    const double lift = kWeekdayLift[static_cast<std::size_t>(utc_weekday(at(c, static_cast<double>(d))))];
    for (int n = draw(mu * lift); n > 0; --n)
      if (emit(d, events::EngagementKind::app_open, 1.0)) ++e.app_opens[d];
    for (int n = draw(2.0 * mu * lift); n > 0; --n) emit(d, events::EngagementKind::listing_view, 1.0);
    for (int n = draw(0.3 * mu * lift); n > 0; --n)
      if (emit(d, events::EngagementKind::add_to_cart, std::round(cart_value(rng) * 100) / 100)) ++e.add_to_cart[d];
    for (int n = draw(0.03); n > 0; --n) emit(d, events::EngagementKind::fam_visit, 1.0);
    for (int n = draw(0.05); n > 0; --n)
      emit(d, events::EngagementKind::call_human_seconds, std::ceil(human_seconds(rng)));
    for (int n = draw(0.08); n > 0; --n) emit(d, events::EngagementKind::call_bot_seconds, std::ceil(bot_seconds(rng)));
  }
  return e;
}

int window_sum(const std::vector<int>& per_day, std::size_t end_day, std::size_t span) {
  int s = 0;
  for (std::size_t d = end_day > span ? end_day - span : 0; d < end_day && d < per_day.size(); ++d) s += per_day[d];
  return s;
}

std::size_t grid_size(const SimConfig& c) {
  return static_cast<std::size_t>(std::floor(c.horizon_days / kWindowDays + 1e-9));
}

CustomerSim simulate_customer(const SimConfig& c, std::size_t index) {
  CustomerSim out;
  const auto cid = customer_id(index);

  {
    auto rng = make_rng(c.seed, {index, profile_stream});
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    out.profile.customer_id = cid;
    out.profile.activation_type = kActivationTypes[std::uniform_int_distribution<std::size_t>(0, 2)(rng)];
    if (unit(rng) >= 0.2) {
      out.profile.credit_limit_total = std::round(std::lognormal_distribution<double>(std::log(20000.0), 0.7)(rng));
      out.profile.credit_limit_left = std::round(out.profile.credit_limit_total * unit(rng));
    }
  }

  std::vector<PairSim> pairs;
  for (std::size_t j = 0; j < c.products.size(); ++j) {
    auto p = simulate_pair(c, index, j);
    if (p.lambda > 0) {
      out.rates.push_back({cid, product_id(j), p.lambda});
      pairs.push_back(std::move(p));
    }
  }

  // Order timestamps in days with their product, renewal orders first.
  struct Placed {
    double t;
    std::string product;
    std::size_t brand;
  };
  std::vector<Placed> placed;
  for (const auto& p : pairs)
    for (double t : p.times) placed.push_back({t, product_id(p.product), p.product % c.n_brands});

  const std::size_t n_grid = grid_size(c);
  if (c.record_truth) out.probability.assign(n_grid, 0.0);

  if (c.engagement) {
    const auto e = simulate_engagement(c, index, cid, out.engagements);
    auto rng = make_rng(c.seed, {index, spot_stream});
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> renewal;
    for (const auto& p : placed) renewal.push_back(p.t);
    std::sort(renewal.begin(), renewal.end());
    double last_spot = -1e300;

    for (std::size_t i = 0; i < n_grid; ++i) {
      const double g = static_cast<double>(i) * kWindowDays;
      const auto day = static_cast<std::size_t>(g);
      auto it = std::lower_bound(renewal.begin(), renewal.end(), g);
      double last = it == renewal.begin() ? -1e300 : *std::prev(it);
      last = std::max(last, last_spot);
      const double dslo = last < -1e299 ? 30.0 : std::min(30.0, g - last);
      const double x_app = std::log1p(window_sum(e.app_opens, day, 7)) - std::log1p(7.0);
      const double x_a2c = std::log1p(window_sum(e.add_to_cart, day, 7)) - std::log1p(2.1);
      const double x_dslo = dslo / 30.0 - 0.5;
      const double q = sigmoid(c.base_logit + c.theta * (x_app + 0.5 * x_a2c - 0.5 * x_dslo));
      if (c.record_truth) out.probability[i] = q;
      if (unit(rng) < q) {
        const double t = g + unit(rng) * kWindowDays;
        const auto s = std::uniform_int_distribution<std::size_t>(0, c.n_spot_products - 1)(rng);
        if (t < c.horizon_days) {
          placed.push_back({t, padded('s', s, 2), std::uniform_int_distribution<std::size_t>(0, c.n_brands - 1)(rng)});
          last_spot = t;
        }
      }
    }
  }

  if (c.record_truth) {
    for (std::size_t i = 0; i < n_grid; ++i) {
      const double g = static_cast<double>(i) * kWindowDays;
      double log_none = std::log1p(-out.probability[i]);
      for (const auto& p : pairs) {
        auto it = std::lower_bound(p.times.begin(), p.times.end(), g);
        const double last = it == p.times.begin() ? p.initial_last : *std::prev(it);
        const double delta = g - last;
        const auto& truth = c.products[p.product];
        log_none -= hazard_integral(c.hazard, p.lambda, truth.t_mean, c.softness, delta, delta + kWindowDays);
      }
      out.probability[i] = -std::expm1(log_none);
    }
  }

  auto rng = make_rng(c.seed, {index, order_stream});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::lognormal_distribution<double> amount(std::log(800.0), 0.6);
  std::uniform_int_distribution<int> promise_lead(1, 3);
  std::discrete_distribution<int> slip{{0.15, 0.55, 0.2, 0.1}};
  for (const auto& p : placed) {
    const auto ts = at(c, p.t);
    out.orders.push_back({cid, p.product, padded('b', p.brand, 2), ts, std::round(amount(rng) * 100) / 100});
    if (unit(rng) < 0.5) {
      const auto promised = utc_day(ts) + promise_lead(rng);
      out.profile.deliveries.push_back({promised, promised + slip(rng) - 1});
    }
  }
  return out;
}

double segment(double k, double peak, double a, double b, int region) {
  if (b <= a) return 0.0;
  switch (region) {
    case 0:  // rising towards the peak
      return k / 2 * std::log((k + 2 * (peak - a)) / (k + 2 * (peak - b)));
    case 1:  // falling after the peak
      return k / 2 * std::log((k + 2 * (b - peak)) / (k + 2 * (a - peak)));
    default:
      return (b - a) * k / (k + 2 * peak);
  }
}

}  // namespace

std::vector<ProductTruth> SimConfig::default_products(std::size_t n) {
  std::vector<ProductTruth> out;
  for (std::size_t j = 0; j < n; ++j) {
    const double peak = n > 1 ? 5.0 + 20.0 * static_cast<double>(j) / static_cast<double>(n - 1) : 10.0;
    out.push_back({2.0, 2.0 * peak / 3.0, peak});
  }
  return out;
}

void SimConfig::validate() const {
  auto require = [](bool ok, const char* field) {
    if (!ok) throw Error(std::string("simulator config: invalid ") + field);
  };
  require(!products.empty(), "products (need at least one)");
  for (const auto& p : products) {
    require(p.alpha > 0 && std::isfinite(p.alpha), "alpha");
    require(p.beta > 0 && std::isfinite(p.beta), "beta");
    require(p.t_mean > 0 && std::isfinite(p.t_mean), "t_mean");
  }
  require(horizon_days >= 30 && std::isfinite(horizon_days), "horizon_days (must be >= 30)");
  require(softness > 0, "softness");
  require(pair_probability > 0 && pair_probability <= 1, "pair_probability");
  require(theta >= 0 && std::isfinite(theta), "theta");
  require(std::isfinite(base_logit), "base_logit");
  require(n_spot_products > 0, "n_spot_products");
  require(n_brands > 0, "n_brands");
  require(origin % kMsPerDay == 0, "origin_ms (must be midnight UTC)");
}

json to_json(const SimConfig& c) {
  json products = json::array();
  for (const auto& p : c.products) products.push_back({{"alpha", p.alpha}, {"beta", p.beta}, {"t_mean", p.t_mean}});
  return {{"n_customers", c.n_customers},
          {"products", std::move(products)},
          {"horizon_days", c.horizon_days},
          {"hazard", c.hazard == Hazard::constant ? "constant" : "mpg"},
          {"softness", c.softness},
          {"pair_probability", c.pair_probability},
          {"engagement", c.engagement},
          {"theta", c.theta},
          {"base_logit", c.base_logit},
          {"n_spot_products", c.n_spot_products},
          {"n_brands", c.n_brands},
          {"record_truth", c.record_truth},
          {"seed", c.seed},
          {"origin_ms", c.origin}};
}

SimConfig sim_config_from_json(const json& j) {
  SimConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "n_customers") c.n_customers = v.get<std::size_t>();
    else if (key == "n_products") {
      if (!j.contains("products")) c.products = SimConfig::default_products(v.get<std::size_t>());
    } else if (key == "products") {
      c.products.clear();
      for (const auto& p : v) c.products.push_back({p.at("alpha").get<double>(), p.at("beta").get<double>(), p.value("t_mean", 10.0)});
    } else if (key == "horizon_days") c.horizon_days = v.get<double>();
    else if (key == "hazard") {
      const auto h = v.get<std::string>();
      if (h == "constant") c.hazard = Hazard::constant;
      else if (h == "mpg") c.hazard = Hazard::mpg;
      else throw Error("simulator config: hazard must be 'constant' or 'mpg'");
    } else if (key == "softness") c.softness = v.get<double>();
    else if (key == "pair_probability") c.pair_probability = v.get<double>();
    else if (key == "engagement") c.engagement = v.get<bool>();
    else if (key == "theta") c.theta = v.get<double>();
    else if (key == "base_logit") c.base_logit = v.get<double>();
    else if (key == "n_spot_products") c.n_spot_products = v.get<std::size_t>();
    else if (key == "n_brands") c.n_brands = v.get<std::size_t>();
    else if (key == "record_truth") c.record_truth = v.get<bool>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "origin_ms") c.origin = v.get<TimestampMs>();
    else throw Error("simulator config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

std::string product_id(std::size_t index) { return padded('p', index, 3); }
std::string customer_id(std::size_t index) { return padded('c', index, 6); }

double GroundTruth::probability_at(const std::string& cid, TimestampMs window_start) const {
  auto c = std::lower_bound(customer_ids.begin(), customer_ids.end(), cid);
  auto g = std::lower_bound(grid.begin(), grid.end(), window_start);
  if (c == customer_ids.end() || *c != cid || g == grid.end() || *g != window_start || probability.empty()) return kMissing;
  return probability[static_cast<std::size_t>(c - customer_ids.begin())][static_cast<std::size_t>(g - grid.begin())];
}

json to_json(const GroundTruth& t) {
  json rates = json::array();
  for (const auto& r : t.rates) rates.push_back({{"customer_id", r.customer_id}, {"product_id", r.product_id}, {"lambda", r.lambda}});
  json probs = json::object();
  for (std::size_t c = 0; c < t.customer_ids.size() && c < t.probability.size(); ++c) probs[t.customer_ids[c]] = t.probability[c];
  return {{"window_days", kWindowDays}, {"grid_ms", t.grid}, {"pair_rates", std::move(rates)}, {"probability", std::move(probs)}};
}

double hazard_integral(Hazard hazard, double lambda, double peak, double softness, double from, double to) {
  if (!(from <= to)) throw Error("hazard_integral: from must not exceed to");
  if (hazard == Hazard::constant) return lambda * (to - from);
  const double k = softness * peak;
  const double cut1 = peak, cut2 = 2 * peak;
  double total = 0;
  total += segment(k, peak, from, std::min(to, cut1), 0);
  total += segment(k, peak, std::max(from, cut1), std::min(to, cut2), 1);
  total += segment(k, peak, std::max(from, cut2), to, 2);
  return lambda * total;
}

std::pair<events::EventLog, GroundTruth> simulate(const SimConfig& config) {
  config.validate();
  std::vector<CustomerSim> customers(config.n_customers);
  parallel_for(config.n_customers, [&](std::size_t i) { customers[i] = simulate_customer(config, i); });

  events::EventLog log;
  GroundTruth truth;
  const std::size_t n_grid = grid_size(config);
  if (config.record_truth)
    for (std::size_t i = 0; i < n_grid; ++i) truth.grid.push_back(at(config, static_cast<double>(i) * kWindowDays));

  std::size_t n_orders = 0, n_engagements = 0;
  for (const auto& c : customers) {
    n_orders += c.orders.size();
    n_engagements += c.engagements.size();
  }
  log.orders.reserve(n_orders);
  log.engagements.reserve(n_engagements);
  for (std::size_t i = 0; i < customers.size(); ++i) {
    auto& c = customers[i];
    std::move(c.orders.begin(), c.orders.end(), std::back_inserter(log.orders));
    std::move(c.engagements.begin(), c.engagements.end(), std::back_inserter(log.engagements));
    std::move(c.rates.begin(), c.rates.end(), std::back_inserter(truth.rates));
    truth.customer_ids.push_back(c.profile.customer_id);
    if (config.record_truth) truth.probability.push_back(std::move(c.probability));
    log.profiles.emplace(c.profile.customer_id, std::move(c.profile));
    c = CustomerSim{};
  }
  log.coverage_start = config.origin;
  log.coverage_end = config.origin + static_cast<TimestampMs>(std::llround(config.horizon_days * static_cast<double>(kMsPerDay)));
  log.normalize();
  return {std::move(log), std::move(truth)};
}

McEstimate mc_prob_oracle(double lambda, double window, std::size_t n_draws, std::uint64_t seed) {
  if (n_draws < 10'000) throw Error("mc_prob_oracle: n_draws must be at least 10,000");
  const double mean = lambda * window;
  if (!(mean >= 0) || !std::isfinite(mean)) throw Error("mc_prob_oracle: lambda * window must be finite and non-negative");
  if (mean == 0) return {0.0, 0.0};
  auto rng = make_rng(seed, {});
  std::poisson_distribution<long> draw(mean);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n_draws; ++i)
    if (draw(rng) >= 1) ++hits;
  const double n = static_cast<double>(n_draws);
  const double p = static_cast<double>(hits) / n;
  return {p, std::sqrt(p * (1 - p) / n)};
}

RecoveryReport recovery_report(const SimConfig& truth, const mpg::PriorSet& fitted, double tolerance_rate,
                               double tolerance_t_mean) {
  RecoveryReport rep;
  rep.tolerance_rate = tolerance_rate;
  rep.tolerance_t_mean = tolerance_t_mean;
  rep.pass = true;
  for (std::size_t j = 0; j < truth.products.size(); ++j) {
    RecoveryRow row;
    row.product_id = product_id(j);
    row.truth = truth.products[j];
    row.truth_t_mean = truth.hazard == Hazard::constant ? row.truth.beta / row.truth.alpha : row.truth.t_mean;
    auto it = fitted.products.find(row.product_id);
    row.present = it != fitted.products.end();
    if (row.present) {
      row.fitted = it->second;
      row.alpha_error = std::abs(row.fitted.alpha - row.truth.alpha) / row.truth.alpha;
      row.beta_error = std::abs(row.fitted.beta - row.truth.beta) / row.truth.beta;
      row.t_mean_error = std::abs(row.fitted.t_mean - row.truth_t_mean) / row.truth_t_mean;
      row.pass = !row.fitted.fallback && row.alpha_error <= tolerance_rate && row.beta_error <= tolerance_rate &&
                 row.t_mean_error <= tolerance_t_mean;
    }
    if (!row.present || (!row.fitted.fallback && !row.pass)) rep.pass = false;
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

json to_json(const RecoveryReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"product_id", row.product_id},
                    {"present", row.present},
                    {"fallback", row.fitted.fallback},
                    {"true", {{"alpha", row.truth.alpha}, {"beta", row.truth.beta}, {"t_mean", row.truth_t_mean}}},
                    {"fitted", {{"alpha", row.fitted.alpha}, {"beta", row.fitted.beta}, {"t_mean", row.fitted.t_mean}}},
                    {"relative_error", {{"alpha", row.alpha_error}, {"beta", row.beta_error}, {"t_mean", row.t_mean_error}}},
                    {"pass", row.pass}});
  return {{"tolerance_rate", r.tolerance_rate}, {"tolerance_t_mean", r.tolerance_t_mean}, {"pass", r.pass}, {"products", std::move(rows)}};
}

}  // namespace propensity::sim
