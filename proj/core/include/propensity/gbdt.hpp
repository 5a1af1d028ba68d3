#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "propensity/types.hpp"

namespace propensity::gbdt {

struct HyperParams {
  int n_trees = 100;
  double learning_rate = 0.1;
  int max_depth = 6;
  /// 0 means no leaf limit beyond max_depth.
  int max_leaves = 31;
  double min_child_weight = 1.0;
  double reg_lambda = 1.0;
  double gamma = 0.0;
  double colsample_bytree = 1.0;
  double colsample_bylevel = 1.0;
  double colsample_bynode = 1.0;
  /// 0 disables early stopping.
  int early_stopping_rounds = 10;
  std::uint64_t seed = 0;

  /// Throws Error naming the first out-of-range field.
  void validate() const;
  bool operator==(const HyperParams&) const = default;
};

nlohmann::json to_json(const HyperParams& hp);
/// Keys missing from j keep the values of `base`.
HyperParams hyper_params_from_json(const nlohmann::json& j, const HyperParams& base = {});

/// Flat tree node. Internal when feature >= 0: rows with x < threshold go
/// left, missing values follow default_left.
struct TreeNode {
  int feature = -1;
  double threshold = 0;
  bool default_left = false;
  int left = -1;
  int right = -1;
  double weight = 0;
  double gain = 0;

  bool is_leaf() const noexcept { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double leaf_value(std::span<const double> row) const;
  bool operator==(const Tree&) const = default;
};

class Model {
 public:
  double base_score = 0;
  double learning_rate = 0.1;
  std::vector<Tree> trees;
  std::vector<std::string> feature_names;
  /// Number of leading trees used for prediction.
  std::size_t n_used = 0;

  /// base_score + learning_rate * sum of leaf weights over the used trees.
  /// Throws Error if the row width differs from the feature layout.
  double predict_margin(std::span<const double> row) const;
  double predict_proba(std::span<const double> row) const;
  std::vector<double> predict_proba(const DenseMatrix& x) const;

  bool operator==(const Model&) const = default;
};

/// Per-round diagnostics of a fit.
struct FitTrace {
  std::vector<double> train_loss;
  std::vector<double> valid_auc_pr;
  std::size_t best_round = 0;
};

/// Second-order boosting with logistic loss. Trees grow leaf-wise (largest gain
/// first) bounded by max_depth and max_leaves; split search is exact greedy.
/// Early stopping watches the validation AUC-PR and is skipped when the
/// validation labels hold a single class. Throws Error for a single-class
/// training set or an empty feature set.
Model fit(const DenseMatrix& x_train, std::span<const int> y_train, const DenseMatrix& x_valid,
          std::span<const int> y_valid, const HyperParams& hp, std::vector<std::string> feature_names = {},
          FitTrace* trace = nullptr);

struct SplitCandidate {
  std::size_t feature = 0;
  double threshold = 0;
  bool default_left = false;
  double gain = 0;
  double left_grad = 0, left_hess = 0;
  double right_grad = 0, right_hess = 0;
};

/// One column of a node: non-missing (value, grad, hess) sorted by value.
struct ColumnEntry {
  double value;
  double grad;
  double hess;
};

/// Best split of one sorted column, or nullopt. Thresholds sit between
/// consecutive distinct values; the node's missing rows (totals minus column
/// sums) are tried on the right first, then on the left, keeping a direction
/// only on a strictly larger gain. Gain is
/// 0.5 * (GL^2/(HL+lambda) + GR^2/(HR+lambda) - G^2/(H+lambda)) - gamma
/// and must be positive; both children need min_child_weight hessian.
std::optional<SplitCandidate> scan_column(std::size_t feature, std::span<const ColumnEntry> sorted, double grad_total,
                                          double hess_total, std::size_t n_missing, const HyperParams& hp);

/// Exact greedy split search over the candidate columns for the given rows.
/// Ties are broken by lowest feature index, then lowest threshold.
std::optional<SplitCandidate> find_best_split(const DenseMatrix& x, std::span<const std::size_t> rows,
                                              std::span<const double> grad, std::span<const double> hess,
                                              std::span<const std::size_t> columns, const HyperParams& hp);

/// Total split gain per feature over the used trees, normalized to sum to 1.
std::map<std::string, double> feature_importance(const Model& model);

/// Mean logistic loss of margins against labels.
double logistic_loss(std::span<const double> margins, std::span<const int> labels);

/// Gradient p - y and hessian p (1 - p) of the logistic loss at a margin.
inline void logistic_grad_hess(double margin, int label, double& grad, double& hess) noexcept {
  const double p = sigmoid(margin);
  grad = p - (label != 0 ? 1.0 : 0.0);
  hess = p * (1.0 - p);
}

nlohmann::json to_json(const Model& model);
Model model_from_json(const nlohmann::json& j);

}  // namespace propensity::gbdt
