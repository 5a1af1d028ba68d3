#include "propensity/stack.hpp"

#include <algorithm>
#include <cmath>

#include "propensity/cross_validation.hpp"
#include "propensity/parallel.hpp"

namespace propensity::stack {
namespace {

std::vector<std::string> meta_names() { return {kMetaFeatureNames.begin(), kMetaFeatureNames.end()}; }

DenseMatrix to_matrix(const std::vector<MetaFeatures>& rows) {
  DenseMatrix m(rows.size(), kNumMeta);
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  return m;
}

std::vector<mpg::MpgFeatures> mpg_rows(const features::EncodedDataset& data, std::span<const std::size_t> rows,
                                       const events::EventLog& log, const mpg::PriorSet& priors, double window) {
  std::vector<mpg::MpgFeatures> out(rows.size());
  parallel_for(rows.size(), [&](std::size_t i) {
    out[i] = mpg_features_at(log, data.customer_ids[rows[i]], data.as_of[rows[i]], priors, window);
  });
  return out;
}

}  // namespace

MetaFeatures stack_features(double gbdt_proba, const mpg::MpgFeatures& m) {
  if (!(gbdt_proba >= 0 && gbdt_proba <= 1)) throw Error("stack_features: gbdt probability outside [0, 1]");
  return {gbdt_proba, m.n_gt_50, m.n_gt_75, m.n_gt_90, m.p_mean, m.p_std, m.p_sum};
}

mpg::MpgFeatures mpg_features_at(const events::EventLog& log, const std::string& customer_id, TimestampMs as_of,
                                 const mpg::PriorSet& priors, double window_days) {
  return mpg::mpg_customer_features(mpg::score_customer_products(log, customer_id, as_of, priors, window_days));
}

StackModel fit_stack(const features::EncodedDataset& data, const events::EventLog& log,
                     const features::EncodingSpec& encoding, const mpg::PriorSet& priors, const StackConfig& config) {
  const auto train = data.rows_of(features::Split::train);
  const auto valid = data.rows_of(features::Split::valid);
  if (train.empty() || valid.empty()) throw Error("fit_stack: needs tagged train and valid rows");

  const auto x_train = data.x.select_rows(train);
  const auto x_valid = data.x.select_rows(valid);
  const auto y_train = select<int>(data.y, train);
  const auto y_valid = select<int>(data.y, valid);

  StackModel model;
  model.encoding = encoding;
  model.priors = priors;
  model.window_days = config.window_days;
  model.gbdt = gbdt::fit(x_train, y_train, x_valid, y_valid, config.gbdt, data.feature_names);

  // Out-of-fold probabilities on train, at the complexity the final model settled on.
  gbdt::HyperParams fold_hp = config.gbdt;
  fold_hp.n_trees = static_cast<int>(model.gbdt.n_used);
  fold_hp.early_stopping_rounds = 0;
  const auto folds = cv::stratified_kfold(y_train, config.oof_folds, config.seed);
  std::vector<double> oof(train.size());
  std::vector<std::vector<std::size_t>> fit_rows(config.oof_folds), held_rows(config.oof_folds);
  for (std::size_t i = 0; i < train.size(); ++i)
    for (std::size_t f = 0; f < config.oof_folds; ++f) (folds[i] == f ? held_rows : fit_rows)[f].push_back(i);
  parallel_for(config.oof_folds, [&](std::size_t f) {
    const auto m = gbdt::fit(x_train.select_rows(fit_rows[f]), select<int>(y_train, fit_rows[f]), DenseMatrix(0, 0),
                             {}, fold_hp, data.feature_names);
    for (auto i : held_rows[f]) oof[i] = m.predict_proba(x_train.row(i));
  });

  const auto mpg_train = mpg_rows(data, train, log, priors, config.window_days);
  const auto mpg_valid = mpg_rows(data, valid, log, priors, config.window_days);
  std::vector<MetaFeatures> meta;
  std::vector<int> y;
  for (std::size_t i = 0; i < train.size(); ++i) {
    meta.push_back(stack_features(oof[i], mpg_train[i]));
    y.push_back(y_train[i]);
  }
  for (std::size_t i = 0; i < valid.size(); ++i) {
    meta.push_back(stack_features(model.gbdt.predict_proba(x_valid.row(i)), mpg_valid[i]));
    y.push_back(y_valid[i]);
  }
  model.lr = lr::fit(to_matrix(meta), y, config.lr, meta_names());
  return model;
}

std::vector<MetaFeatures> meta_features(const StackModel& model, const features::EncodedDataset& data,
                                        const events::EventLog& log) {
  std::vector<MetaFeatures> out(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    const double p = model.gbdt.predict_proba(data.x.row(i));
    out[i] = stack_features(p, mpg_features_at(log, data.customer_ids[i], data.as_of[i], model.priors, model.window_days));
  });
  return out;
}

std::vector<double> predict_rows(const StackModel& model, const features::EncodedDataset& data,
                                 const events::EventLog& log) {
  const auto meta = meta_features(model, data, log);
  std::vector<double> out(meta.size());
  for (std::size_t i = 0; i < meta.size(); ++i) out[i] = model.lr.predict_proba(meta[i]);
  return out;
}

double predict_stack(const StackModel& model, const events::EventLog& log, const std::string& customer_id,
                     TimestampMs as_of) {
  const auto fv = features::extract_features(log, customer_id, as_of);
  const auto row = model.encoding.encode(fv);
  const double p = model.gbdt.predict_proba(row);
  const auto meta = stack_features(p, mpg_features_at(log, customer_id, as_of, model.priors, model.window_days));
  return model.lr.predict_proba(meta);
}

ComponentShares component_importance(const lr::LrModel& lr) {
  if (lr.w.size() != kNumMeta) throw Error("component_importance: expected 7 meta-learner weights");
  double top = 0;
  for (double w : lr.w) top = std::max(top, std::abs(w));
  std::array<double, kNumMeta> e{};
  double total = 0;
  for (std::size_t i = 0; i < kNumMeta; ++i) total += e[i] = std::exp(std::abs(lr.w[i]) - top);
  ComponentShares s;
  s.gbdt_share = 100.0 * e[0] / total;
  s.mpg_share = 0;
  for (std::size_t i = 1; i < kNumMeta; ++i) s.mpg_share += 100.0 * e[i] / total;
  return s;
}

}  // namespace propensity::stack
