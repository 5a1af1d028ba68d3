#include <cmath>
#include <random>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "propensity/mpg.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

using namespace propensity;
using namespace propensity::mpg;
using events::EventLog;
using testgen::kOrigin;

namespace {

ProductPrior prior(double alpha, double beta, double t_mean) { return {"p", alpha, beta, t_mean, 0, false}; }

/// Orders of (customer, product) at the given day offsets from kOrigin.
EventLog log_of(const std::vector<std::tuple<std::string, std::string, std::vector<double>>>& series) {
  EventLog log;
  for (const auto& [c, p, days] : series) {
    log.profiles.try_emplace(c, events::CustomerProfile{c, "app", 1, 1, {}});
    for (double d : days) log.orders.push_back({c, p, "b", kOrigin + static_cast<TimestampMs>(d * kMsPerDay), 1});
  }
  log.normalize();
  return log;
}

TimestampMs day(double d) { return kOrigin + static_cast<TimestampMs>(d * kMsPerDay); }

constexpr double kRel = 1e-9;

}  // namespace

// ---- rates, gamma fit, t_mean -----------------------------------------------------

TEST(CustomerRates, HandEvaluatedEstimator) {
  const auto log = log_of({{"a", "p", {0, 5, 10}}, {"b", "p", {3}}});
  const auto rates = customer_rates(log, "p", day(20));
  ASSERT_EQ(rates.size(), 1u);
  EXPECT_NEAR(rates[0], 0.1, 0.1 * kRel);
  EXPECT_TRUE(customer_rates(log, "other", day(20)).empty());
}

TEST(CustomerRates, IdenticalCustomersGiveEqualRatesAndIgnoreFuture) {
  const auto log = log_of({{"a", "p", {0, 4, 30}}, {"b", "p", {0, 4, 30}}});
  const auto rates = customer_rates(log, "p", day(10));
  ASSERT_EQ(rates.size(), 2u);
  EXPECT_EQ(rates[0], rates[1]);
  EXPECT_NEAR(rates[0], 0.1, 1e-12);
}

TEST(FitGammaPrior, MomentStart) {
  // mean 0.5, sample variance 0.125
  const std::vector<double> rates{0.25, 0.75};
  const auto fit = fit_gamma_prior(rates);
  ASSERT_TRUE(fit);
  EXPECT_NEAR(fit->alpha_mom, 2.0, 2.0 * kRel);
  EXPECT_NEAR(fit->beta_mom, 4.0, 4.0 * kRel);
}

TEST(FitGammaPrior, DegenerateInputs) {
  EXPECT_FALSE(fit_gamma_prior(std::vector<double>{0.3, 0.3, 0.3}));
  EXPECT_FALSE(fit_gamma_prior(std::vector<double>{0.3}));
  EXPECT_THROW(fit_gamma_prior(std::vector<double>{0.3, -1.0}), Error);
  EXPECT_THROW(fit_gamma_prior(std::vector<double>{0.3, 0.0}), Error);
}

TEST(FitGammaPrior, RecoversSimulatedGammaAndMatchesOracle) {
  std::mt19937_64 rng(2);
  for (auto [a, b] : {std::pair{2.0, 4.0}, std::pair{0.5, 1.0}, std::pair{5.0, 10.0}}) {
    std::gamma_distribution<double> dist(a, 1.0 / b);
    std::vector<double> rates(10'000);
    for (auto& r : rates) r = dist(rng);
    const auto fit = fit_gamma_prior(rates);
    ASSERT_TRUE(fit);
    EXPECT_TRUE(fit->converged);
    EXPECT_NEAR(fit->alpha, a, 0.1 * a);
    EXPECT_NEAR(fit->beta, b, 0.1 * b);
    const auto [oa, ob] = oracle::gamma_mle(rates);
    EXPECT_NEAR(fit->alpha, oa, 1e-8 * oa);
    EXPECT_NEAR(fit->beta, ob, 1e-8 * ob);
  }
}

TEST(FitGammaPrior, ConvergesToTruthAsSampleGrows) {
  std::mt19937_64 rng(11);
  std::gamma_distribution<double> dist(3.0, 1.0 / 6.0);
  double err_small = 0, err_large = 0;
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> small(200), large(20'000);
    for (auto& r : small) r = dist(rng);
    for (auto& r : large) r = dist(rng);
    err_small += std::abs(fit_gamma_prior(small)->alpha - 3.0);
    err_large += std::abs(fit_gamma_prior(large)->alpha - 3.0);
  }
  EXPECT_LT(err_large, err_small);
}

TEST(EstimateTMean, PooledGaps) {
  EXPECT_NEAR(estimate_t_mean(log_of({{"a", "p", {0, 5, 10}}}), "p", day(20)), 5.0, 5 * kRel);
  EXPECT_NEAR(estimate_t_mean(log_of({{"a", "p", {0, 4}}, {"b", "p", {1, 7}}}), "p", day(20)), 5.0, 5 * kRel);
  EXPECT_THROW(estimate_t_mean(log_of({{"a", "p", {0}}, {"b", "p", {1}}}), "p", day(20)), Error);
  EXPECT_THROW(estimate_t_mean(log_of({{"a", "p", {0}}}), "q", day(20)), Error);
}

TEST(FitPriors, FallbackForColdProducts) {
  // p: two repeat customers with different rates; q: single buyers only.
  const auto log = log_of({{"a", "p", {0, 4, 8}}, {"b", "p", {0, 10}}, {"c", "q", {2}}});
  const auto set = fit_priors(log, day(20));
  ASSERT_EQ(set.products.size(), 2u);
  const auto& p = set.products.at("p");
  EXPECT_FALSE(p.fallback);
  EXPECT_EQ(p.n_support, 2u);
  EXPECT_NEAR(p.t_mean, 18.0 / 3.0, 1e-12);
  const auto& q = set.products.at("q");
  EXPECT_TRUE(q.fallback);
  EXPECT_EQ(q.alpha, 1.0);
  EXPECT_NEAR(q.beta, 6.0, 1e-12);  // global pooled gap
  EXPECT_NEAR(q.t_mean, 6.0, 1e-12);
  EXPECT_EQ(&set.for_product("never"), &set.fallback);
  EXPECT_EQ(set.fitted_as_of, day(20));
}

TEST(FitPriors, NoRepeatsAnywhereUsesColdStartGap) {
  const auto set = fit_priors(log_of({{"a", "p", {1}}}), day(5));
  EXPECT_TRUE(set.fallback.fallback);
  EXPECT_EQ(set.fallback.beta, 30.0);
}

// ---- rate formulas ------------------------------------------------------------------

TEST(PgLambda, Examples) {
  EXPECT_NEAR(pg_lambda(3, 10, prior(1, 2, 1)), 4.0 / 12.0, kRel);
  EXPECT_NEAR(pg_lambda(0, 1e-12, prior(2, 4, 1)), 0.5, 1e-9);
  EXPECT_LT(pg_lambda(0, 20, prior(2, 4, 1)), pg_lambda(0, 10, prior(2, 4, 1)));
  EXPECT_THROW(pg_lambda(1, 0, prior(1, 1, 1)), Error);
  EXPECT_THROW(pg_lambda(1, -2, prior(1, 1, 1)), Error);
}

TEST(MpgLambda, Examples) {
  const auto pr = prior(1, 1, 5);
  EXPECT_NEAR(mpg_lambda(2, 5, 10, pr), 3.0 / 11.0, kRel);
  EXPECT_NEAR(mpg_lambda(2, 10, 10, pr), 3.0 / 21.0, kRel);
  EXPECT_NEAR(mpg_lambda(2, std::nextafter(10.0, 0.0), 10, pr), 3.0 / 21.0, kRel);
  EXPECT_NEAR(mpg_lambda(2, 1e-15, 10, pr), 3.0 / 21.0, kRel);
  EXPECT_LT(mpg_lambda(2, 0, 10, pr), mpg_lambda(2, 5, 10, pr));
  EXPECT_NEAR(mpg_lambda(2, 20, 10, pr), 3.0 / 31.0, kRel);  // branch 2: (t_purch + delta) + beta
  EXPECT_THROW(mpg_lambda(2, -1, 10, pr), Error);
  EXPECT_THROW(mpg_lambda(2, 1, -10, pr), Error);
  EXPECT_THROW(mpg_lambda(-1, 1, 10, pr), Error);
}

TEST(MpgLambda, BranchContinuityProperty) {
  testgen::Gen g(1000);
  for (int i = 0; i < 1000; ++i) {
    const auto pr = prior(g.log_uniform(0.05, 20), g.log_uniform(0.05, 50), g.log_uniform(0.1, 60));
    const double k = g.integer(0, 30), t_purch = g.uniform(0, 200);
    const double edge = 2 * pr.t_mean;
    const double below = mpg_lambda(k, std::nextafter(edge, 0.0), t_purch, pr);
    const double at = mpg_lambda(k, edge, t_purch, pr);
    ASSERT_LT(std::abs(below - at), 1e-12) << "draw " << i;
  }
}

TEST(MpgLambda, PeakAndSymmetryProperty) {
  testgen::Gen g(31);
  for (int i = 0; i < 300; ++i) {
    const auto pr = prior(g.log_uniform(0.1, 10), g.log_uniform(0.1, 20), g.log_uniform(0.5, 40));
    const double k = g.integer(0, 10), t_purch = g.uniform(0, 100);
    const double peak = mpg_lambda(k, pr.t_mean, t_purch, pr);
    for (int j = 0; j < 20; ++j) {
      const double delta = g.uniform(0, 4 * pr.t_mean);
      ASSERT_LE(mpg_lambda(k, delta, t_purch, pr), peak);
    }
    const double off = g.uniform(0, pr.t_mean);
    ASSERT_NEAR(mpg_lambda(k, pr.t_mean - off, t_purch, pr), mpg_lambda(k, pr.t_mean + off, t_purch, pr),
                1e-12 * peak);
  }
}

TEST(PgLambda, MonotonicityProperty) {
  testgen::Gen g(4);
  for (int i = 0; i < 500; ++i) {
    const auto pr = prior(g.log_uniform(0.1, 10), g.log_uniform(0.1, 20), 1);
    const double k = g.integer(0, 20), t = g.uniform(0.1, 100);
    ASSERT_LT(pg_lambda(k, t, pr), pg_lambda(k + 1, t, pr));
    ASSERT_GT(pg_lambda(k, t, pr), pg_lambda(k, t + g.uniform(0.01, 10), pr));
  }
}

TEST(PgVersusMpg, BehaviourAroundAPurchase) {
  testgen::Gen g(5);
  for (int i = 0; i < 200; ++i) {
    const auto pr = prior(g.log_uniform(0.1, 10), g.log_uniform(0.1, 20), g.log_uniform(1, 30));
    const double k = g.integer(1, 10), t = g.uniform(1, 100), eps = 1e-6;
    // PG jumps up at the purchase instant.
    ASSERT_GT(pg_lambda(k, t + eps, pr), pg_lambda(k - 1, t - eps, pr));
    // MPG right after a purchase sits below its value at delta = t_mean.
    const double t_purch = g.uniform(0, 50);
    ASSERT_LT(mpg_lambda(k, 0, t_purch, pr), mpg_lambda(k, pr.t_mean, t_purch, pr));
  }
}

// ---- Poisson ----------------------------------------------------------------------

TEST(PoissonPmf, Examples) {
  EXPECT_EQ(poisson_pmf(0, 0), 1.0);
  EXPECT_EQ(poisson_pmf(0, 3), 0.0);
  EXPECT_NEAR(poisson_pmf(1, 0), std::exp(-1.0), kRel);
  EXPECT_NEAR(poisson_pmf(2, 3), 8.0 / 6.0 * std::exp(-2.0), kRel * 0.2);
  EXPECT_NEAR(poisson_pmf(25, 25), std::exp(25 * std::log(25.0) - 25 - std::lgamma(26.0)), 1e-12);
  EXPECT_THROW(poisson_pmf(-1, 0), Error);
}

TEST(PoissonPmf, NormalizesAcrossLogSpaceSwitch) {
  for (double lambda : {0.1, 1.0, 5.0, 20.0}) {
    double sum = 0;
    for (unsigned m = 0; m < 400; ++m) sum += poisson_pmf(lambda, m);
    EXPECT_NEAR(sum, 1.0, 1e-12) << lambda;
  }
}

TEST(ProbAtLeastOne, Examples) {
  EXPECT_EQ(prob_at_least_one(0), 0.0);
  EXPECT_NEAR(prob_at_least_one(std::log(2.0)), 0.5, kRel);
  EXPECT_NEAR(prob_at_least_one(1), 1 - std::exp(-1.0), kRel);
  EXPECT_NEAR(prob_at_least_one(1e-20), 1e-20, 1e-32);
  for (double l : {0.1, 1.0, 3.0}) EXPECT_NEAR(prob_at_least_one(l), 1 - poisson_pmf(l, 0), 1e-15);
}

TEST(ProbAtLeastOne, MonteCarloAgreement) {
  std::mt19937_64 rng(8);
  for (double lambda : {0.1, 0.5, 1.0, 2.0}) {
    std::poisson_distribution<int> pois(lambda);
    const int n = 100'000;
    int hits = 0;
    for (int i = 0; i < n; ++i) hits += pois(rng) >= 1;
    const double p = prob_at_least_one(lambda);
    const double se = std::sqrt(p * (1 - p) / n);
    EXPECT_LT(std::abs(hits / double(n) - p), 3 * se) << lambda;
  }
}

// ---- scoring and customer features --------------------------------------------------

TEST(ScoreCustomerProducts, CompositionExample) {
  // k = 2, t_purch = 10, delta = 5 against alpha = beta = 1, t_mean = 5.
  const auto log = log_of({{"c", "p", {0, 10}}});
  PriorSet set;
  set.products["p"] = prior(1, 1, 5);
  const auto scores = score_customer_products(log, "c", day(15), set, 2.0);
  ASSERT_EQ(scores.size(), 1u);
  EXPECT_NEAR(scores.at("p"), 1 - std::exp(-6.0 / 11.0), kRel);
}

TEST(ScoreCustomerProducts, EmptyHistoryAndRange) {
  testgen::Gen g(6);
  const auto log = testgen::random_log(g, 6, 60);
  const auto set = fit_priors(log, kOrigin + 30 * kMsPerDay);
  EventLog empty;
  empty.profiles["x"] = {"x", "app", 1, 1, {}};
  empty.normalize();
  EXPECT_TRUE(score_customer_products(empty, "x", kOrigin, set).empty());
  for (const auto& c : log.customers())
    for (const auto& [pid, p] : score_customer_products(log, c, kOrigin + 45 * kMsPerDay, set)) {
      EXPECT_GE(p, 0.0);
      EXPECT_LE(p, 1.0);
    }
}

TEST(MpgCustomerFeatures, Examples) {
  EXPECT_EQ(mpg_customer_features({}), MpgFeatures{});
  const auto f = mpg_customer_features({{"A", 0.6}, {"B", 0.8}, {"C", 0.95}});
  EXPECT_EQ(f.n_gt_50, 3);
  EXPECT_EQ(f.n_gt_75, 2);
  EXPECT_EQ(f.n_gt_90, 1);
  EXPECT_NEAR(f.p_sum, 2.35, kRel);
  EXPECT_NEAR(f.p_mean, 2.35 / 3, kRel);
  const auto one = mpg_customer_features({{"A", 0.42}});
  EXPECT_EQ(one.p_std, 0.0);
  EXPECT_EQ(one.p_mean, 0.42);
  EXPECT_EQ(one.p_sum, 0.42);
  const auto edge = mpg_customer_features({{"A", 0.5}, {"B", 0.75}, {"C", 0.9}});
  EXPECT_EQ(edge.n_gt_50, 2);
  EXPECT_EQ(edge.n_gt_75, 1);
  EXPECT_EQ(edge.n_gt_90, 0);
}

TEST(MpgCustomerFeatures, InvariantsProperty) {
  testgen::Gen g(9);
  for (int i = 0; i < 500; ++i) {
    std::map<std::string, double> scores;
    const int n = g.integer(0, 12);
    for (int j = 0; j < n; ++j) scores["p" + std::to_string(j)] = g.uniform();
    const auto f = mpg_customer_features(scores);
    ASSERT_LE(f.n_gt_90, f.n_gt_75);
    ASSERT_LE(f.n_gt_75, f.n_gt_50);
    ASSERT_GE(f.p_mean, 0);
    ASSERT_LE(f.p_mean, 1);
    ASSERT_GE(f.p_std, 0);
    if (n > 0) ASSERT_GE(f.p_sum, f.p_mean);
  }
}

TEST(ProductPriorJson, RoundTripAndValidation) {
  const ProductPrior p{"sku", 1.5, 2.5, 7.25, 12, false};
  EXPECT_EQ(prior_from_json(to_json(p)), p);
  EXPECT_TRUE(to_json(p).contains("t_mean_days"));
  auto bad = to_json(p);
  bad["alpha"] = 0;
  EXPECT_THROW(prior_from_json(bad), Error);
}
