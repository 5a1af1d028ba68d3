#include <cmath>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "propensity/logistic.hpp"
#include "propensity/metrics.hpp"
#include "propensity/stack.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"
#include "support/pipeline.hpp"

using namespace propensity;

namespace {

struct LrProblem {
  DenseMatrix x;
  std::vector<int> y;
};

LrProblem noisy_linear(testgen::Gen& g, std::size_t n, std::size_t d) {
  LrProblem p{DenseMatrix(n, d), std::vector<int>(n)};
  std::vector<double> beta(d);
  for (auto& b : beta) b = g.uniform(-2, 2);
  for (std::size_t i = 0; i < n; ++i) {
    double m = 0.2;
    for (std::size_t j = 0; j < d; ++j) {
      p.x(i, j) = g.uniform(-3, 3) * (1 + static_cast<double>(j));
      m += beta[j] * p.x(i, j) / (1 + static_cast<double>(j));
    }
    p.y[i] = g.uniform() < sigmoid(m) ? 1 : 0;
  }
  p.y[0] = 0;
  p.y[1] = 1;
  return p;
}

lr::LrModel identity_model(std::vector<double> w, double b) {
  lr::LrModel m;
  m.means.assign(w.size(), 0.0);
  m.scales.assign(w.size(), 1.0);
  m.w = std::move(w);
  m.b = b;
  return m;
}

}  // namespace

// ---- logistic regression ---------------------------------------------------------

TEST(Logistic, BalancedZeroInputsGiveZeroModel) {
  DenseMatrix x(10, 3, 0.0);
  std::vector<int> y{0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
  const auto m = lr::fit(x, y);
  for (double w : m.w) EXPECT_EQ(w, 0.0);
  EXPECT_NEAR(m.b, 0.0, 1e-12);
  const double row[] = {0.0, 0.0, 0.0};
  EXPECT_NEAR(m.predict_proba(row), 0.5, 1e-12);
}

TEST(Logistic, OneDimensionalConvergesBelowTolerance) {
  testgen::Gen g(1);
  const auto p = noisy_linear(g, 500, 1);
  lr::FitTrace trace;
  lr::fit(p.x, p.y, {}, {}, &trace);
  EXPECT_TRUE(trace.converged);
  EXPECT_LT(trace.gradient_norm, 1e-8);
}

TEST(Logistic, ConvergedGradientNormProperty) {
  testgen::Gen g(2);
  for (int rep = 0; rep < 10; ++rep) {
    const auto p = noisy_linear(g, 300, static_cast<std::size_t>(g.integer(1, 7)));
    lr::FitOptions opt;
    opt.penalty = {g.coin() ? 0.0 : g.uniform(0, 0.05), g.uniform(1e-4, 0.1)};
    lr::FitTrace trace;
    lr::fit(p.x, p.y, opt, {}, &trace);
    EXPECT_TRUE(trace.converged) << rep;
    EXPECT_LT(trace.gradient_norm, 1e-8) << rep;
  }
}

TEST(Logistic, ObjectiveNonIncreasingAcrossSteps) {
  testgen::Gen g(3);
  for (int rep = 0; rep < 10; ++rep) {
    const auto p = noisy_linear(g, 200, 5);
    lr::FitOptions opt;
    opt.penalty = {g.uniform(0, 0.1), g.uniform(0, 0.1)};
    lr::FitTrace trace;
    lr::fit(p.x, p.y, opt, {}, &trace);
    for (std::size_t i = 1; i < trace.objective.size(); ++i) ASSERT_LE(trace.objective[i], trace.objective[i - 1]);
  }
}

TEST(Logistic, StrongL1ZeroesEveryWeight) {
  testgen::Gen g(4);
  const auto p = noisy_linear(g, 300, 7);
  lr::FitOptions opt;
  opt.penalty = {10.0, 1e-4};
  const auto m = lr::fit(p.x, p.y, opt);
  for (double w : m.w) EXPECT_EQ(w, 0.0);
  // bias alone fits the base rate
  const double rate = std::count(p.y.begin(), p.y.end(), 1) / 300.0;
  EXPECT_NEAR(sigmoid(m.b), rate, 1e-8);
}

TEST(Logistic, ModerateL1GivesSparseSolution) {
  testgen::Gen g(5);
  LrProblem p{DenseMatrix(400, 4), std::vector<int>(400)};
  for (std::size_t i = 0; i < 400; ++i) {
    for (std::size_t j = 0; j < 4; ++j) p.x(i, j) = g.uniform(-1, 1);
    p.y[i] = g.uniform() < sigmoid(3 * p.x(i, 0)) ? 1 : 0;
  }
  lr::FitOptions opt;
  opt.penalty = {0.03, 0.0};
  lr::FitTrace trace;
  const auto m = lr::fit(p.x, p.y, opt, {}, &trace);
  EXPECT_TRUE(trace.converged);
  EXPECT_GT(m.w[0], 0.5);
  EXPECT_EQ(std::count(m.w.begin(), m.w.end(), 0.0), 3);
}

TEST(Logistic, SmoothGradientMatchesFiniteDifferences) {
  testgen::Gen g(6);
  for (int point = 0; point < 20; ++point) {
    const auto p = noisy_linear(g, 60, 4);
    const double l2 = g.uniform(0, 0.5);
    std::vector<double> wb(5);
    for (auto& v : wb) v = g.uniform(-1.5, 1.5);
    auto f = [&](const std::vector<double>& v) {
      return lr::smooth_objective(p.x, p.y, std::span(v).first(4), v[4], l2);
    };
    const auto grad = lr::smooth_gradient(p.x, p.y, std::span(wb).first(4), wb[4], l2);
    ASSERT_EQ(grad.size(), 5u);
    for (std::size_t j = 0; j < 5; ++j) {
      const double fd = oracle::central_difference(f, wb, j, 1e-5);
      ASSERT_NEAR(grad[j], fd, 1e-6 * std::max(1.0, std::abs(fd))) << "point " << point << " coord " << j;
    }
  }
}

TEST(Logistic, PseudoGradientAtZeroWithinL1Band) {
  DenseMatrix z(4, 1);
  z(0, 0) = 1;
  z(1, 0) = -1;
  z(2, 0) = 1;
  z(3, 0) = -1;
  const std::vector<int> y{1, 0, 0, 1};
  const std::vector<double> w{0.0};
  const auto pg = lr::pseudo_gradient(z, y, w, 0.0, {0.1, 0.0});
  EXPECT_EQ(pg[0], 0.0);
  EXPECT_EQ(pg[1], 0.0);
}

TEST(Logistic, ErrorsOnSingleClassAndSeparation) {
  DenseMatrix x(4, 1);
  for (std::size_t i = 0; i < 4; ++i) x(i, 0) = static_cast<double>(i);
  EXPECT_THROW(lr::fit(x, std::vector<int>{1, 1, 1, 1}), Error);
  lr::FitOptions none;
  none.penalty = {0, 0};
  try {
    lr::fit(x, std::vector<int>{0, 0, 1, 1}, none);
    FAIL() << "expected separation error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("l2"), std::string::npos);
  }
  EXPECT_NO_THROW(lr::fit(x, std::vector<int>{0, 0, 1, 1}));
  x(1, 0) = kMissing;
  EXPECT_THROW(lr::fit(x, std::vector<int>{0, 1, 0, 1}), Error);
}

TEST(Logistic, JsonRoundTrip) {
  testgen::Gen g(7);
  const auto p = noisy_linear(g, 100, 3);
  const auto m = lr::fit(p.x, p.y, {}, {"a", "b", "c"});
  EXPECT_EQ(lr::model_from_json(lr::to_json(m)), m);
  auto bad = lr::to_json(m);
  bad["scales"][0] = 0;
  EXPECT_THROW(lr::model_from_json(bad), Error);
}

// ---- meta-features and the meta-learner's output ------------------------------------

TEST(StackFeatures, OrderAndLength) {
  const auto v = stack::stack_features(0.5, {});
  EXPECT_EQ(v, (stack::MetaFeatures{0.5, 0, 0, 0, 0, 0, 0}));
  const auto w = stack::stack_features(0.2, {3, 2, 1, 0.7, 0.1, 2.1});
  EXPECT_EQ(w, (stack::MetaFeatures{0.2, 3, 2, 1, 0.7, 0.1, 2.1}));
  EXPECT_EQ(stack::kMetaFeatureNames[0], "gbdt_proba");
  EXPECT_EQ(stack::kMetaFeatureNames[6], "p_sum");
  EXPECT_THROW(stack::stack_features(1.5, {}), Error);
}

TEST(MetaLearner, ZeroWeightsGiveHalf) {
  const auto m = identity_model(std::vector<double>(7, 0.0), 0.0);
  testgen::Gen g(1);
  for (int i = 0; i < 20; ++i) {
    stack::MetaFeatures f;
    for (auto& v : f) v = g.uniform(0, 5);
    EXPECT_EQ(m.predict_proba(f), 0.5);
  }
}

TEST(MetaLearner, UnitGbdtWeightAtHalf) {
  std::vector<double> w(7, 0.0);
  w[0] = 1.0;
  const auto m = identity_model(w, 0.0);
  const auto f = stack::stack_features(0.5, {});
  EXPECT_NEAR(m.predict_proba(f), 1 / (1 + std::exp(-0.5)), 1e-12);
  EXPECT_NEAR(m.predict_proba(f), 0.6225, 5e-5);
}

TEST(MetaLearner, MonotoneInPositivelyWeightedInputs) {
  testgen::Gen g(2);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> w(7);
    for (auto& v : w) v = g.uniform(-2, 2);
    auto m = identity_model(w, g.uniform(-1, 1));
    for (std::size_t j = 0; j < 7; ++j) m.scales[j] = g.uniform(0.5, 2);
    stack::MetaFeatures f;
    for (auto& v : f) v = g.uniform(0, 1);
    const std::size_t j = static_cast<std::size_t>(g.integer(0, 6));
    if (w[j] <= 0) continue;
    auto up = f;
    up[j] += g.uniform(0.01, 1);
    ASSERT_GT(m.predict_proba(up), m.predict_proba(f));
  }
}

TEST(ComponentImportance, Examples) {
  const auto uniform = stack::component_importance(identity_model(std::vector<double>(7, -0.3), 0));
  EXPECT_NEAR(uniform.gbdt_share, 100.0 / 7, 1e-12);
  EXPECT_NEAR(uniform.mpg_share, 600.0 / 7, 1e-12);
  std::vector<double> w{50, 0.1, -0.2, 0.3, 0, 0, 0.1};
  const auto dominant = stack::component_importance(identity_model(w, 0));
  EXPECT_GT(dominant.gbdt_share, 99.999);
  EXPECT_THROW(stack::component_importance(identity_model({1, 2}, 0)), Error);
}

TEST(ComponentImportance, SharesSumToHundredProperty) {
  testgen::Gen g(3);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> w(7);
    for (auto& v : w) v = g.uniform(-30, 30);
    const auto s = stack::component_importance(identity_model(w, 0));
    ASSERT_NEAR(s.gbdt_share + s.mpg_share, 100.0, 1e-12);
  }
}

// ---- fit_stack on simulated data -----------------------------------------------------

class FitStack : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    sim::SimConfig c;
    c.n_customers = 300;
    c.products = sim::SimConfig::default_products(8);
    c.horizon_days = 90;
    c.seed = 17;
    data_ = new testgen::PipelineData(testgen::simulated_pipeline(c));
  }
  static void TearDownTestSuite() {
    delete data_;
    data_ = nullptr;
  }
  static stack::StackConfig config() {
    stack::StackConfig cfg;
    cfg.gbdt.n_trees = 40;
    cfg.gbdt.max_depth = 4;
    cfg.seed = 9;
    return cfg;
  }
  static testgen::PipelineData* data_;
};

testgen::PipelineData* FitStack::data_ = nullptr;

TEST_F(FitStack, PriorsFrozenAndModelDeterministic) {
  const auto before = nlohmann::json(mpg::to_json(data_->priors.fallback)).dump();
  const auto priors_copy = data_->priors;
  const auto a = stack::fit_stack(data_->data, data_->log, data_->encoding, data_->priors, config());
  EXPECT_EQ(data_->priors, priors_copy);
  EXPECT_EQ(a.priors, priors_copy);
  EXPECT_EQ(before, nlohmann::json(mpg::to_json(data_->priors.fallback)).dump());
  const auto b = stack::fit_stack(data_->data, data_->log, data_->encoding, data_->priors, config());
  EXPECT_EQ(a, b);
  EXPECT_EQ(lr::to_json(a.lr).dump(), lr::to_json(b.lr).dump());
  EXPECT_EQ(gbdt::to_json(a.gbdt).dump(), gbdt::to_json(b.gbdt).dump());
  EXPECT_EQ(a.lr.feature_names, std::vector<std::string>(stack::kMetaFeatureNames.begin(), stack::kMetaFeatureNames.end()));
}

TEST_F(FitStack, PredictionsInOpenIntervalAndRowsMatchSingleScoring) {
  const auto model = stack::fit_stack(data_->data, data_->log, data_->encoding, data_->priors, config());
  const auto probs = stack::predict_rows(model, data_->data, data_->log);
  ASSERT_EQ(probs.size(), data_->data.size());
  for (double p : probs) {
    ASSERT_GT(p, 0.0);
    ASSERT_LT(p, 1.0);
  }
  for (std::size_t i = 0; i < data_->data.size(); i += 97)
    EXPECT_NEAR(stack::predict_stack(model, data_->log, data_->data.customer_ids[i], data_->data.as_of[i]), probs[i],
                1e-12);
  EXPECT_THROW(stack::predict_stack(model, data_->log, "nobody", data_->data.as_of[0]), Error);
  const auto shares = stack::component_importance(model.lr);
  EXPECT_NEAR(shares.gbdt_share + shares.mpg_share, 100.0, 1e-12);
}

TEST_F(FitStack, ZeroMpgFeaturesGiveMonotoneTransformOfGbdt) {
  auto model = stack::fit_stack(data_->data, data_->log, data_->encoding, data_->priors, config());
  // With every MPG input pinned at zero the output depends on gbdt_proba alone.
  std::vector<std::pair<double, double>> pairs;
  for (double p = 0.01; p < 1.0; p += 0.01)
    pairs.emplace_back(p, model.lr.predict_proba(stack::stack_features(p, {})));
  const bool rising = model.lr.w[0] > 0;
  for (std::size_t i = 1; i < pairs.size(); ++i) {
    if (model.lr.w[0] == 0) {
      ASSERT_EQ(pairs[i].second, pairs[i - 1].second);
    } else {
      ASSERT_EQ(pairs[i].second > pairs[i - 1].second, rising);
    }
  }
}
