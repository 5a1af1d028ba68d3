#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include <nlohmann/json.hpp>

#include "propensity/parallel.hpp"
#include "propensity/simulator.hpp"

using namespace propensity;
using namespace propensity::sim;

namespace {

SimConfig small(std::uint64_t seed = 3) {
  SimConfig c;
  c.n_customers = 120;
  c.products = SimConfig::default_products(6);
  c.horizon_days = 60;
  c.seed = seed;
  return c;
}

double simpson(const std::function<double(double)>& f, double a, double b, int n = 20000) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4 : 2);
  return s * h / 3;
}

double shape(Hazard hz, double peak, double softness, double delta) {
  if (hz == Hazard::constant) return 1.0;
  const double k = softness * peak;
  return delta < 2 * peak ? k / (k + 2 * std::abs(peak - delta)) : k / (k + 2 * peak);
}

}  // namespace

TEST(Simulator, DeterministicPerSeedAndThreadCount) {
  set_thread_count(1);
  const auto [a, ta] = simulate(small());
  set_thread_count(4);
  const auto [b, tb] = simulate(small());
  set_thread_count(0);
  EXPECT_TRUE(a == b);
  EXPECT_EQ(to_json(ta).dump(), to_json(tb).dump());
  const auto [c, tc] = simulate(small(4));
  EXPECT_FALSE(a == c);
}

TEST(Simulator, EmptyPopulation) {
  auto c = small();
  c.n_customers = 0;
  const auto [log, truth] = simulate(c);
  EXPECT_TRUE(log.orders.empty());
  EXPECT_TRUE(log.engagements.empty());
  EXPECT_TRUE(truth.rates.empty());
}

TEST(Simulator, LogsAreValidAndInsideCoverage) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (Hazard hz : {Hazard::constant, Hazard::mpg}) {
      auto c = small(seed);
      c.hazard = hz;
      const auto [log, truth] = simulate(c);
      const auto rep = events::validate_log(log);
      EXPECT_TRUE(rep.ok()) << (rep.violations.empty() ? "" : rep.violations[0]);
      EXPECT_FALSE(log.orders.empty());
      for (const auto& o : log.orders) {
        ASSERT_GE(o.timestamp, log.coverage_start);
        ASSERT_LT(o.timestamp, log.coverage_end);
      }
      EXPECT_EQ(truth.customer_ids.size(), c.n_customers);
    }
  }
}

TEST(Simulator, ConfigValidationAndJson) {
  auto c = small();
  c.horizon_days = 10;
  EXPECT_THROW(c.validate(), Error);
  c = small();
  c.origin += 1;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_THROW(sim_config_from_json({{"wat", 1}}), Error);
  EXPECT_THROW(sim_config_from_json({{"hazard", "linear"}}), Error);
  const auto back = sim_config_from_json(to_json(small()));
  EXPECT_EQ(to_json(back).dump(), to_json(small()).dump());
  EXPECT_EQ(sim_config_from_json({{"n_products", 3}}).products.size(), 3u);
}

TEST(Simulator, ConstantHazardCountsMatchRates) {
  SimConfig c;
  c.n_customers = 400;
  c.products = {{2.0, 20.0, 10.0}, {4.0, 20.0, 5.0}};
  c.horizon_days = 400;
  c.hazard = Hazard::constant;
  c.engagement = false;
  c.pair_probability = 1.0;
  c.record_truth = false;
  const auto [log, truth] = simulate(c);
  double expected = 0;
  for (const auto& r : truth.rates) expected += r.lambda * c.horizon_days;
  const double n = static_cast<double>(log.orders.size());
  // Poisson total: sd = sqrt(expected).
  EXPECT_NEAR(n, expected, 4 * std::sqrt(expected));

  std::map<std::pair<std::string, std::string>, std::vector<TimestampMs>> times;
  for (const auto& o : log.orders) times[{o.customer_id, o.product_id}].push_back(o.timestamp);
  double weighted_gap = 0, n_gaps = 0;
  for (const auto& r : truth.rates) {
    const auto& ts = times[{r.customer_id, r.product_id}];
    for (std::size_t i = 1; i < ts.size(); ++i) {
      weighted_gap += r.lambda * ms_to_days(ts[i] - ts[i - 1]);
      n_gaps += 1;
    }
  }
  // lambda * gap is Exp(1) per gap.
  EXPECT_NEAR(weighted_gap / n_gaps, 1.0, 4 / std::sqrt(n_gaps));
}

TEST(Simulator, LongerHorizonExtendsTheSameHistory) {
  auto c = small(9);
  c.engagement = false;
  c.hazard = Hazard::constant;
  c.n_customers = 300;
  const auto [short_log, t1] = simulate(c);
  c.horizon_days *= 2;
  const auto [long_log, t2] = simulate(c);
  std::vector<events::OrderEvent> prefix;
  for (const auto& o : long_log.orders)
    if (o.timestamp < short_log.coverage_end) prefix.push_back(o);
  EXPECT_EQ(prefix.size(), short_log.orders.size());
  const double ratio = static_cast<double>(long_log.orders.size()) / static_cast<double>(short_log.orders.size());
  EXPECT_NEAR(ratio, 2.0, 0.2);
}

TEST(HazardIntegral, MatchesQuadrature) {
  for (Hazard hz : {Hazard::constant, Hazard::mpg}) {
    for (double peak : {3.0, 10.0}) {
      for (auto [a, b] : std::vector<std::pair<double, double>>{{0, 1}, {0, 50}, {2, 9}, {9, 25}, {25, 26}, {-4, 2}}) {
        const double exact = hazard_integral(hz, 0.7, peak, 0.25, a, b);
        const double numeric = simpson([&](double d) { return 0.7 * shape(hz, peak, 0.25, d); }, a, b);
        EXPECT_NEAR(exact, numeric, 1e-6) << "peak " << peak << " [" << a << "," << b << "]";
      }
    }
  }
  EXPECT_DOUBLE_EQ(hazard_integral(Hazard::mpg, 1, 10, 0.25, 4, 4), 0.0);
  EXPECT_THROW(hazard_integral(Hazard::mpg, 1, 10, 0.25, 5, 4), Error);
}

TEST(McOracle, AgreesWithClosedForm) {
  const auto zero = mc_prob_oracle(0.0, 2.0, 10'000, 1);
  EXPECT_EQ(zero.estimate, 0.0);
  const auto e = mc_prob_oracle(0.5, 2.0, 200'000, 2);
  EXPECT_NEAR(e.estimate, 1 - std::exp(-1.0), 3 * e.std_error);
  EXPECT_GT(e.std_error, 0);
  EXPECT_THROW(mc_prob_oracle(0.5, 2.0, 9'999, 1), Error);
  EXPECT_THROW(mc_prob_oracle(-1, 2.0, 10'000, 1), Error);
  double prev = -1;
  for (double lam : {0.05, 0.2, 0.5, 1.0, 3.0}) {
    const double p = mc_prob_oracle(lam, 2.0, 50'000, 7).estimate;
    EXPECT_GT(p, prev);
    prev = p;
  }
}

TEST(GroundTruth, CalibratedAgainstRealisedWindows) {
  for (Hazard hz : {Hazard::constant, Hazard::mpg}) {
    SimConfig c;
    c.n_customers = 400;
    c.horizon_days = 90;
    c.hazard = hz;
    c.seed = 21;
    const auto [log, truth] = simulate(c);
    std::map<std::string, std::vector<TimestampMs>> by_customer;
    for (const auto& o : log.orders) by_customer[o.customer_id].push_back(o.timestamp);
    double sum_p = 0, sum_var = 0, hits = 0;
    for (std::size_t ci = 0; ci < truth.customer_ids.size(); ++ci) {
      const auto& ts = by_customer[truth.customer_ids[ci]];
      for (std::size_t i = 0; i < truth.grid.size(); ++i) {
        const TimestampMs lo = truth.grid[i], hi = lo + 2 * kMsPerDay;
        const double p = truth.probability[ci][i];
        ASSERT_GE(p, 0);
        ASSERT_LE(p, 1);
        sum_p += p;
        sum_var += p * (1 - p);
        auto it = std::lower_bound(ts.begin(), ts.end(), lo);
        if (it != ts.end() && *it < hi) hits += 1;
      }
    }
    EXPECT_NEAR(hits, sum_p, 4 * std::sqrt(sum_var)) << (hz == Hazard::mpg ? "mpg" : "constant");
  }
}

TEST(GroundTruth, LookupByCustomerAndWindow) {
  const auto [log, truth] = simulate(small());
  const auto& cid = truth.customer_ids[5];
  EXPECT_DOUBLE_EQ(truth.probability_at(cid, truth.grid[3]), truth.probability[5][3]);
  EXPECT_TRUE(std::isnan(truth.probability_at(cid, truth.grid[3] + 1)));
  EXPECT_TRUE(std::isnan(truth.probability_at("nobody", truth.grid[0])));
}

TEST(GroundTruth, EngagementStrengthSpreadsProbabilities) {
  auto spread = [](double theta) {
    SimConfig c;
    c.n_customers = 150;
    c.horizon_days = 60;
    c.theta = theta;
    c.pair_probability = 0.01;
    const auto [log, truth] = simulate(c);
    double lo = 1, hi = 0;
    for (const auto& row : truth.probability)
      for (double p : row) {
        lo = std::min(lo, p);
        hi = std::max(hi, p);
      }
    return hi - lo;
  };
  EXPECT_GT(spread(2.0), spread(0.0) + 0.05);
}

TEST(Recovery, ReportVerdicts) {
  SimConfig c = small();
  c.hazard = Hazard::constant;
  mpg::PriorSet exact;
  for (std::size_t j = 0; j < c.products.size(); ++j) {
    const auto& p = c.products[j];
    exact.products[product_id(j)] = {product_id(j), p.alpha, p.beta, p.beta / p.alpha, 100, false};
  }
  auto r = recovery_report(c, exact);
  EXPECT_TRUE(r.pass);
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.alpha_error, 0.0);
    EXPECT_EQ(row.t_mean_error, 0.0);
  }

  auto fallback = exact;
  fallback.products[product_id(1)] = {product_id(1), 1.0, 30.0, 30.0, 1, true};
  EXPECT_TRUE(recovery_report(c, fallback).pass);

  auto off = exact;
  off.products[product_id(2)].alpha *= 1.2;
  EXPECT_FALSE(recovery_report(c, off).pass);
  EXPECT_TRUE(recovery_report(c, off, 0.25).pass);

  auto missing = exact;
  missing.products.erase(product_id(0));
  const auto rm = recovery_report(c, missing);
  EXPECT_FALSE(rm.pass);
  EXPECT_FALSE(rm.rows[0].present);
  const auto j = to_json(rm);
  EXPECT_EQ(j["products"].size(), c.products.size());
}
