#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "propensity/event_log.hpp"
#include "propensity/features.hpp"
#include "propensity/gbdt.hpp"
#include "propensity/logistic.hpp"
#include "propensity/mpg.hpp"

namespace propensity::stack {

inline constexpr std::size_t kNumMeta = 7;

inline constexpr std::array<std::string_view, kNumMeta> kMetaFeatureNames{
    "gbdt_proba", "n_gt_50", "n_gt_75", "n_gt_90", "p_mean", "p_std", "p_sum"};

using MetaFeatures = std::array<double, kNumMeta>;

/// gbdt probability followed by the six MPG features. Throws Error when the
/// probability lies outside [0, 1].
MetaFeatures stack_features(double gbdt_proba, const mpg::MpgFeatures& mpg);

/// MPG features of one customer at as_of under frozen priors.
mpg::MpgFeatures mpg_features_at(const events::EventLog& log, const std::string& customer_id, TimestampMs as_of,
                                 const mpg::PriorSet& priors, double window_days);

struct StackConfig {
  gbdt::HyperParams gbdt;
  lr::FitOptions lr;
  double window_days = 2.0;
  /// Folds for the out-of-fold gbdt probabilities fed to the meta-learner.
  std::size_t oof_folds = 5;
  std::uint64_t seed = 0;
};

struct StackModel {
  features::EncodingSpec encoding;
  mpg::PriorSet priors;
  gbdt::Model gbdt;
  lr::LrModel lr;
  double window_days = 2.0;

  bool operator==(const StackModel&) const = default;
};

/// Trains a fresh gbdt on the train rows (early stopping on valid), then the
/// meta-learner on out-of-fold gbdt probabilities for train rows and final
/// gbdt probabilities for valid rows, each joined with MPG features at the
/// row's as_of. The priors are copied, never refitted.
StackModel fit_stack(const features::EncodedDataset& data, const events::EventLog& log,
                     const features::EncodingSpec& encoding, const mpg::PriorSet& priors, const StackConfig& config);

/// Meta-features for every row of an encoded dataset.
std::vector<MetaFeatures> meta_features(const StackModel& model, const features::EncodedDataset& data,
                                        const events::EventLog& log);

/// Stacked probabilities for every row of an encoded dataset.
std::vector<double> predict_rows(const StackModel& model, const features::EncodedDataset& data,
                                 const events::EventLog& log);

/// Stacked probability of one customer at as_of. Throws Error for an unknown customer.
double predict_stack(const StackModel& model, const events::EventLog& log, const std::string& customer_id,
                     TimestampMs as_of);

struct ComponentShares {
  double gbdt_share = 0;  // percent
  double mpg_share = 0;   // percent
};

/// Softmax over |W| (bias excluded): the gbdt entry against the six MPG entries.
ComponentShares component_importance(const lr::LrModel& lr);

}  // namespace propensity::stack
