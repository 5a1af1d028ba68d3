#include <benchmark/benchmark.h>

#include "propensity/features.hpp"
#include "propensity/gbdt.hpp"
#include "propensity/metrics.hpp"
#include "propensity/mpg.hpp"
#include "propensity/simulator.hpp"
#include "support/generators.hpp"

using namespace propensity;

namespace {

const events::EventLog& shared_log() {
  static const events::EventLog log = [] {
    sim::SimConfig c;
    c.n_customers = 500;
    c.products = sim::SimConfig::default_products(10);
    c.horizon_days = 90;
    c.record_truth = false;
    return sim::simulate(c).first;
  }();
  return log;
}

void BM_FindBestSplit(benchmark::State& state) {
  testgen::Gen g(1);
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto t = testgen::random_table(g, n, 8, 0.1, 64);
  std::vector<double> grad(n), hess(n);
  for (std::size_t i = 0; i < n; ++i) gbdt::logistic_grad_hess(0.0, t.y[i], grad[i], hess[i]);
  std::vector<std::size_t> rows(n), cols(8);
  std::iota(rows.begin(), rows.end(), 0);
  std::iota(cols.begin(), cols.end(), 0);
  for (auto _ : state) benchmark::DoNotOptimize(gbdt::find_best_split(t.x, rows, grad, hess, cols, {}));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0));
}
BENCHMARK(BM_FindBestSplit)->Arg(1 << 10)->Arg(1 << 14);

void BM_GbdtFit(benchmark::State& state) {
  testgen::Gen g(2);
  const auto t = testgen::random_table(g, static_cast<std::size_t>(state.range(0)), 20, 0.1, 32);
  gbdt::HyperParams hp;
  hp.n_trees = 20;
  hp.max_depth = 6;
  hp.early_stopping_rounds = 0;
  for (auto _ : state) benchmark::DoNotOptimize(gbdt::fit(t.x, t.y, {}, {}, hp));
}
BENCHMARK(BM_GbdtFit)->Arg(2000)->Arg(20000)->Unit(benchmark::kMillisecond);

void BM_AucPr(benchmark::State& state) {
  testgen::Gen g(3);
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> s(n);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = g.coin(0.1) ? 1 : 0;
    s[i] = g.uniform() + 0.3 * y[i];
  }
  for (auto _ : state) benchmark::DoNotOptimize(eval::auc_pr(s, y));
}
BENCHMARK(BM_AucPr)->Arg(10'000)->Arg(1'000'000)->Unit(benchmark::kMicrosecond);

void BM_BuildDataset(benchmark::State& state) {
  const auto& log = shared_log();
  const features::SnapshotSchedule sched{log.start() + 30 * kMsPerDay, log.end(), kDefaultHorizonMs};
  for (auto _ : state) benchmark::DoNotOptimize(features::build_dataset(log, sched));
}
BENCHMARK(BM_BuildDataset)->Unit(benchmark::kMillisecond);

void BM_FitPriors(benchmark::State& state) {
  const auto& log = shared_log();
  for (auto _ : state) benchmark::DoNotOptimize(mpg::fit_priors(log, log.end()));
}
BENCHMARK(BM_FitPriors)->Unit(benchmark::kMillisecond);

void BM_ScoreCustomerProducts(benchmark::State& state) {
  const auto& log = shared_log();
  const auto priors = mpg::fit_priors(log, log.end());
  const auto customers = log.customers();
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(mpg::score_customer_products(log, customers[i % customers.size()], log.end(), priors));
    ++i;
  }
}
BENCHMARK(BM_ScoreCustomerProducts);

}  // namespace

BENCHMARK_MAIN();
