#include "propensity/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "propensity/metrics.hpp"
#include "propensity/parallel.hpp"
#include "propensity/rng.hpp"

namespace propensity::gbdt {
namespace {

using nlohmann::json;

// Below this many (rows x columns) per node the split search stays serial.
constexpr std::size_t kParallelWork = 1 << 16;

double leaf_weight(double g, double h, double lambda) {
  const double den = h + lambda;
  return den > 0 ? -g / den : 0.0;
}

double structure_score(double g, double h, double lambda) {
  const double den = h + lambda;
  return den > 0 ? g * g / den : 0.0;
}

/// Split threshold strictly above lo and at most hi.
double split_threshold(double lo, double hi) {
  const double mid = lo + (hi - lo) / 2;
  return mid > lo ? mid : hi;
}

std::vector<std::size_t> sample_columns(const std::vector<std::size_t>& from, double fraction, Rng rng) {
  if (fraction >= 1.0 || from.size() <= 1) return from;
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(from.size()))));
  if (k >= from.size()) return from;
  std::vector<std::size_t> pool = from;
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

/// Keeps `candidate` only when it beats `best` strictly; callers feed
/// candidates in ascending feature order so ties keep the lowest index.
void keep_better(std::optional<SplitCandidate>& best, const std::optional<SplitCandidate>& candidate) {
  if (candidate && (!best || candidate->gain > best->gain)) best = candidate;
}

class TreeBuilder {
 public:
  TreeBuilder(const DenseMatrix& x, const std::vector<std::vector<std::uint32_t>>& presorted,
              std::span<const double> grad, std::span<const double> hess, const HyperParams& hp,
              std::uint64_t tree_index)
      : x_(x), presorted_(presorted), grad_(grad), hess_(hess), hp_(hp), tree_index_(tree_index) {}

  /// Grows one tree; leaf_rows receives the training rows of every leaf.
  Tree build(std::vector<std::pair<int, std::vector<std::uint32_t>>>& leaf_rows) {
    std::vector<std::size_t> all(x_.cols());
    std::iota(all.begin(), all.end(), 0);
    tree_columns_ = sample_columns(all, hp_.colsample_bytree, make_rng(hp_.seed, {tree_index_, 0}));

    Open root;
    root.node = 0;
    root.depth = 0;
    root.rows.resize(x_.rows());
    std::iota(root.rows.begin(), root.rows.end(), 0u);
    root.columns.resize(x_.cols());
    for (auto f : tree_columns_) root.columns[f] = presorted_[f];
    for (auto r : root.rows) {
      root.grad += grad_[r];
      root.hess += hess_[r];
    }
    tree_.nodes.emplace_back();
    evaluate(root);

    std::vector<Open> open;
    open.push_back(std::move(root));
    std::size_t n_leaves = 1;
    const std::size_t leaf_cap = hp_.max_leaves > 0 ? static_cast<std::size_t>(hp_.max_leaves) : SIZE_MAX;

    while (n_leaves < leaf_cap) {
      // Largest gain first; ties go to the earlier node.
      std::optional<std::size_t> pick;
      for (std::size_t i = 0; i < open.size(); ++i) {
        if (!open[i].best) continue;
        if (!pick || open[i].best->gain > open[*pick].best->gain) pick = i;
      }
      if (!pick) break;
      Open parent = std::move(open[*pick]);
      open.erase(open.begin() + static_cast<std::ptrdiff_t>(*pick));
      auto [left, right] = split(parent);
      evaluate(left);
      evaluate(right);
      open.push_back(std::move(left));
      open.push_back(std::move(right));
      ++n_leaves;
    }

    for (auto& leaf : open) {
      tree_.nodes[static_cast<std::size_t>(leaf.node)].weight = leaf_weight(leaf.grad, leaf.hess, hp_.reg_lambda);
      leaf_rows.emplace_back(leaf.node, std::move(leaf.rows));
    }
    const auto ids = preorder_ids();
    for (auto& [node, rows] : leaf_rows) node = ids[static_cast<std::size_t>(node)];
    Tree out;
    out.nodes.resize(tree_.nodes.size());
    for (std::size_t i = 0; i < tree_.nodes.size(); ++i) {
      auto n = tree_.nodes[i];
      if (!n.is_leaf()) {
        n.left = ids[static_cast<std::size_t>(n.left)];
        n.right = ids[static_cast<std::size_t>(n.right)];
      }
      out.nodes[static_cast<std::size_t>(ids[i])] = n;
    }
    return out;
  }

 private:
  struct Open {
    int node = 0;
    int depth = 0;
    std::vector<std::uint32_t> rows;
    /// Sorted non-missing rows per feature; populated for tree columns only.
    std::vector<std::vector<std::uint32_t>> columns;
    double grad = 0;
    double hess = 0;
    std::optional<SplitCandidate> best;
  };

  const std::vector<std::size_t>& level_columns(int depth) {
    while (level_columns_.size() <= static_cast<std::size_t>(depth)) {
      const auto d = level_columns_.size();
      level_columns_.push_back(
          sample_columns(tree_columns_, hp_.colsample_bylevel, make_rng(hp_.seed, {tree_index_, 1, d})));
    }
    return level_columns_[static_cast<std::size_t>(depth)];
  }

  void evaluate(Open& leaf) {
    leaf.best.reset();
    if (leaf.depth >= hp_.max_depth) return;
    if (leaf.rows.size() < 2 || leaf.hess < 2 * hp_.min_child_weight) return;

    const auto columns = sample_columns(level_columns(leaf.depth), hp_.colsample_bynode,
                                        make_rng(hp_.seed, {tree_index_, 2, static_cast<std::uint64_t>(leaf.node)}));
    std::vector<std::optional<SplitCandidate>> per_column(columns.size());
    auto scan = [&](std::size_t c) {
      const auto f = columns[c];
      const auto& sorted_rows = leaf.columns[f];
      std::vector<ColumnEntry> entries;
      entries.reserve(sorted_rows.size());
      for (auto r : sorted_rows) entries.push_back({x_(r, f), grad_[r], hess_[r]});
      per_column[c] = scan_column(f, entries, leaf.grad, leaf.hess, leaf.rows.size() - sorted_rows.size(), hp_);
    };
    if (leaf.rows.size() * columns.size() >= kParallelWork) {
      parallel_for(columns.size(), scan);
    } else {
      for (std::size_t c = 0; c < columns.size(); ++c) scan(c);
    }
    for (const auto& cand : per_column) keep_better(leaf.best, cand);
  }

  /// Depth-first (node, left, right) numbering, the order the JSON form uses.
  std::vector<int> preorder_ids() const {
    std::vector<int> ids(tree_.nodes.size(), -1);
    std::vector<int> stack{0};
    int next = 0;
    while (!stack.empty()) {
      const int id = stack.back();
      stack.pop_back();
      ids[static_cast<std::size_t>(id)] = next++;
      const auto& n = tree_.nodes[static_cast<std::size_t>(id)];
      if (!n.is_leaf()) {
        stack.push_back(n.right);
        stack.push_back(n.left);
      }
    }
    return ids;
  }

  std::pair<Open, Open> split(Open& parent) {
    const auto& s = *parent.best;
    auto& node = tree_.nodes[static_cast<std::size_t>(parent.node)];
    node.feature = static_cast<int>(s.feature);
    node.threshold = s.threshold;
    node.default_left = s.default_left;
    node.gain = s.gain;

    Open left, right;
    left.node = static_cast<int>(tree_.nodes.size());
    right.node = left.node + 1;
    tree_.nodes[static_cast<std::size_t>(parent.node)].left = left.node;
    tree_.nodes[static_cast<std::size_t>(parent.node)].right = right.node;
    tree_.nodes.emplace_back();
    tree_.nodes.emplace_back();
    left.depth = right.depth = parent.depth + 1;

    if (goes_left_.size() < x_.rows()) goes_left_.resize(x_.rows());
    for (auto r : parent.rows) {
      const double v = x_(r, s.feature);
      const bool l = is_missing(v) ? s.default_left : v < s.threshold;
      goes_left_[r] = l;
      (l ? left : right).rows.push_back(r);
    }
    for (auto r : left.rows) {
      left.grad += grad_[r];
      left.hess += hess_[r];
    }
    for (auto r : right.rows) {
      right.grad += grad_[r];
      right.hess += hess_[r];
    }
    left.columns.resize(x_.cols());
    right.columns.resize(x_.cols());
    for (auto f : tree_columns_) {
      for (auto r : parent.columns[f]) (goes_left_[r] ? left : right).columns[f].push_back(r);
      std::vector<std::uint32_t>().swap(parent.columns[f]);
    }
    return {std::move(left), std::move(right)};
  }

  const DenseMatrix& x_;
  const std::vector<std::vector<std::uint32_t>>& presorted_;
  std::span<const double> grad_;
  std::span<const double> hess_;
  const HyperParams& hp_;
  std::uint64_t tree_index_;
  std::vector<std::size_t> tree_columns_;
  std::vector<std::vector<std::size_t>> level_columns_;
  std::vector<char> goes_left_;
  Tree tree_;
};

void check_labels(std::span<const int> y, std::size_t rows, const char* what) {
  if (y.size() != rows) throw Error(std::string("gbdt: ") + what + " labels do not match rows");
}

json node_to_json(const Tree& tree, int id) {
  const auto& n = tree.nodes[static_cast<std::size_t>(id)];
  if (n.is_leaf()) return {{"w", n.weight}};
  return {{"f", n.feature},
          {"t", n.threshold},
          {"d", n.default_left ? "L" : "R"},
          {"g", n.gain},
          {"l", node_to_json(tree, n.left)},
          {"r", node_to_json(tree, n.right)}};
}

int node_from_json(const json& j, Tree& tree) {
  const int id = static_cast<int>(tree.nodes.size());
  tree.nodes.emplace_back();
  if (j.contains("w")) {
    tree.nodes[static_cast<std::size_t>(id)].weight = j.at("w").get<double>();
    return id;
  }
  TreeNode n;
  n.feature = j.at("f").get<int>();
  n.threshold = j.at("t").get<double>();
  const auto dir = j.at("d").get<std::string>();
  if (dir != "L" && dir != "R") throw Error("tree node: default direction must be L or R");
  n.default_left = dir == "L";
  n.gain = j.value("g", 0.0);
  n.left = node_from_json(j.at("l"), tree);
  n.right = node_from_json(j.at("r"), tree);
  tree.nodes[static_cast<std::size_t>(id)] = n;
  return id;
}

}  // namespace

void HyperParams::validate() const {
  auto require = [](bool ok, const char* field) {
    if (!ok) throw Error(std::string("gbdt hyperparameter out of range: ") + field);
  };
  require(n_trees >= 0, "n_trees");
  require(learning_rate > 0 && learning_rate <= 1, "learning_rate");
  require(max_depth >= 0, "max_depth");
  require(max_leaves >= 0 && max_leaves != 1, "max_leaves");
  require(min_child_weight >= 0, "min_child_weight");
  require(reg_lambda >= 0, "reg_lambda");
  require(gamma >= 0, "gamma");
  require(colsample_bytree > 0 && colsample_bytree <= 1, "colsample_bytree");
  require(colsample_bylevel > 0 && colsample_bylevel <= 1, "colsample_bylevel");
  require(colsample_bynode > 0 && colsample_bynode <= 1, "colsample_bynode");
  require(early_stopping_rounds >= 0, "early_stopping_rounds");
}

json to_json(const HyperParams& hp) {
  return {{"n_trees", hp.n_trees},
          {"learning_rate", hp.learning_rate},
          {"max_depth", hp.max_depth},
          {"max_leaves", hp.max_leaves},
          {"min_child_weight", hp.min_child_weight},
          {"reg_lambda", hp.reg_lambda},
          {"gamma", hp.gamma},
          {"colsample_bytree", hp.colsample_bytree},
          {"colsample_bylevel", hp.colsample_bylevel},
          {"colsample_bynode", hp.colsample_bynode},
          {"early_stopping_rounds", hp.early_stopping_rounds},
          {"seed", hp.seed}};
}

HyperParams hyper_params_from_json(const json& j, const HyperParams& base) {
  HyperParams hp = base;
  for (const auto& [key, value] : j.items()) {
    if (key == "n_trees") hp.n_trees = value.get<int>();
    else if (key == "learning_rate") hp.learning_rate = value.get<double>();
    else if (key == "max_depth") hp.max_depth = value.get<int>();
    else if (key == "max_leaves") hp.max_leaves = value.get<int>();
    else if (key == "min_child_weight") hp.min_child_weight = value.get<double>();
    else if (key == "reg_lambda") hp.reg_lambda = value.get<double>();
    else if (key == "gamma") hp.gamma = value.get<double>();
    else if (key == "colsample_bytree") hp.colsample_bytree = value.get<double>();
    else if (key == "colsample_bylevel") hp.colsample_bylevel = value.get<double>();
    else if (key == "colsample_bynode") hp.colsample_bynode = value.get<double>();
    else if (key == "early_stopping_rounds") hp.early_stopping_rounds = value.get<int>();
    else if (key == "seed") hp.seed = value.get<std::uint64_t>();
    else throw Error("unknown gbdt hyperparameter '" + key + "'");
  }
  hp.validate();
  return hp;
}

double Tree::leaf_value(std::span<const double> row) const {
  std::size_t i = 0;
  while (!nodes[i].is_leaf()) {
    const auto& n = nodes[i];
    const double v = row[static_cast<std::size_t>(n.feature)];
    const bool left = is_missing(v) ? n.default_left : v < n.threshold;
    i = static_cast<std::size_t>(left ? n.left : n.right);
  }
  return nodes[i].weight;
}

double Model::predict_margin(std::span<const double> row) const {
  if (!feature_names.empty() && row.size() != feature_names.size())
    throw Error("gbdt: row has " + std::to_string(row.size()) + " features, model expects " +
                std::to_string(feature_names.size()));
  double sum = 0;
  for (std::size_t t = 0; t < n_used && t < trees.size(); ++t) sum += trees[t].leaf_value(row);
  return base_score + learning_rate * sum;
}

double Model::predict_proba(std::span<const double> row) const { return sigmoid(predict_margin(row)); }

std::vector<double> Model::predict_proba(const DenseMatrix& x) const {
  std::vector<double> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = predict_proba(x.row(i));
  return out;
}

double logistic_loss(std::span<const double> margins, std::span<const int> labels) {
  double loss = 0;
  for (std::size_t i = 0; i < margins.size(); ++i) {
    const double m = margins[i];
    // log(1 + e^m) - y m, evaluated stably.
    const double softplus = m > 0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m));
    loss += softplus - (labels[i] != 0 ? m : 0.0);
  }
  return margins.empty() ? 0.0 : loss / static_cast<double>(margins.size());
}

std::optional<SplitCandidate> scan_column(std::size_t feature, std::span<const ColumnEntry> sorted, double grad_total,
                                          double hess_total, std::size_t n_missing, const HyperParams& hp) {
  if (sorted.size() < 2) return std::nullopt;
  double g_present = 0, h_present = 0;
  for (const auto& e : sorted) {
    g_present += e.grad;
    h_present += e.hess;
  }
  const double g_miss = n_missing > 0 ? grad_total - g_present : 0.0;
  const double h_miss = n_missing > 0 ? hess_total - h_present : 0.0;
  const double parent = structure_score(grad_total, hess_total, hp.reg_lambda);

  std::optional<SplitCandidate> best;
  double gl = 0, hl = 0;
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
    gl += sorted[i].grad;
    hl += sorted[i].hess;
    if (sorted[i].value == sorted[i + 1].value) continue;
    for (int dir = 0; dir < (n_missing > 0 ? 2 : 1); ++dir) {
      const bool missing_left = dir == 1;
      const double g_left = gl + (missing_left ? g_miss : 0.0);
      const double h_left = hl + (missing_left ? h_miss : 0.0);
      const double g_right = grad_total - g_left;
      const double h_right = hess_total - h_left;
      if (h_left < hp.min_child_weight || h_right < hp.min_child_weight) continue;
      const double gain = 0.5 * (structure_score(g_left, h_left, hp.reg_lambda) +
                                 structure_score(g_right, h_right, hp.reg_lambda) - parent) -
                          hp.gamma;
      if (!(gain > 0) || (best && !(gain > best->gain))) continue;
      best = SplitCandidate{feature, split_threshold(sorted[i].value, sorted[i + 1].value), missing_left, gain,
                            g_left, h_left, g_right, h_right};
    }
  }
  return best;
}

std::optional<SplitCandidate> find_best_split(const DenseMatrix& x, std::span<const std::size_t> rows,
                                              std::span<const double> grad, std::span<const double> hess,
                                              std::span<const std::size_t> columns, const HyperParams& hp) {
  double g_total = 0, h_total = 0;
  for (auto r : rows) {
    g_total += grad[r];
    h_total += hess[r];
  }
  std::vector<std::size_t> ordered(columns.begin(), columns.end());
  std::sort(ordered.begin(), ordered.end());

  std::optional<SplitCandidate> best;
  for (auto f : ordered) {
    std::vector<std::size_t> present;
    for (auto r : rows)
      if (!is_missing(x(r, f))) present.push_back(r);
    std::stable_sort(present.begin(), present.end(), [&](std::size_t a, std::size_t b) { return x(a, f) < x(b, f); });
    std::vector<ColumnEntry> entries;
    entries.reserve(present.size());
    for (auto r : present) entries.push_back({x(r, f), grad[r], hess[r]});
    keep_better(best, scan_column(f, entries, g_total, h_total, rows.size() - present.size(), hp));
  }
  return best;
}

Model fit(const DenseMatrix& x_train, std::span<const int> y_train, const DenseMatrix& x_valid,
          std::span<const int> y_valid, const HyperParams& hp, std::vector<std::string> feature_names,
          FitTrace* trace) {
  hp.validate();
  check_labels(y_train, x_train.rows(), "training");
  check_labels(y_valid, x_valid.rows(), "validation");
  if (x_train.cols() == 0) throw Error("gbdt: empty feature set");
  if (x_valid.rows() > 0 && x_valid.cols() != x_train.cols()) throw Error("gbdt: validation width differs from training");
  if (!feature_names.empty() && feature_names.size() != x_train.cols())
    throw Error("gbdt: feature names do not match columns");

  const std::size_t n = x_train.rows();
  const auto positives = static_cast<std::size_t>(std::count_if(y_train.begin(), y_train.end(), [](int v) { return v != 0; }));
  if (positives == 0 || positives == n) throw Error("gbdt: training set needs both classes");

  Model model;
  model.learning_rate = hp.learning_rate;
  model.base_score = logit(static_cast<double>(positives) / static_cast<double>(n));
  model.feature_names = std::move(feature_names);

  std::vector<std::vector<std::uint32_t>> presorted(x_train.cols());
  parallel_for(x_train.cols(), [&](std::size_t f) {
    auto& col = presorted[f];
    for (std::size_t r = 0; r < n; ++r)
      if (!is_missing(x_train(r, f))) col.push_back(static_cast<std::uint32_t>(r));
    std::stable_sort(col.begin(), col.end(), [&](std::uint32_t a, std::uint32_t b) { return x_train(a, f) < x_train(b, f); });
  });

  std::vector<double> margin(n, model.base_score);
  std::vector<double> valid_margin(x_valid.rows(), model.base_score);
  std::vector<double> grad(n), hess(n);

  const auto valid_pos = std::count_if(y_valid.begin(), y_valid.end(), [](int v) { return v != 0; });
  const bool early_stop = hp.early_stopping_rounds > 0 && valid_pos > 0 &&
                          static_cast<std::size_t>(valid_pos) < y_valid.size();
  double best_metric = -1;
  std::size_t best_round = 0;

  if (trace) {
    *trace = {};
    trace->train_loss.push_back(logistic_loss(margin, y_train));
  }

  for (int t = 0; t < hp.n_trees; ++t) {
    for (std::size_t i = 0; i < n; ++i) logistic_grad_hess(margin[i], y_train[i], grad[i], hess[i]);

    std::vector<std::pair<int, std::vector<std::uint32_t>>> leaf_rows;
    TreeBuilder builder(x_train, presorted, grad, hess, hp, static_cast<std::uint64_t>(t));
    model.trees.push_back(builder.build(leaf_rows));
    const auto& tree = model.trees.back();
    for (const auto& [node, rows] : leaf_rows) {
      const double step = hp.learning_rate * tree.nodes[static_cast<std::size_t>(node)].weight;
      for (auto r : rows) margin[r] += step;
    }
    for (std::size_t i = 0; i < x_valid.rows(); ++i) valid_margin[i] += hp.learning_rate * tree.leaf_value(x_valid.row(i));

    if (trace) trace->train_loss.push_back(logistic_loss(margin, y_train));
    if (early_stop) {
      const double metric = eval::auc_pr(valid_margin, y_valid);
      if (trace) trace->valid_auc_pr.push_back(metric);
      if (metric > best_metric) {
        best_metric = metric;
        best_round = static_cast<std::size_t>(t);
      } else if (static_cast<std::size_t>(t) - best_round >= static_cast<std::size_t>(hp.early_stopping_rounds)) {
        break;
      }
    }
  }
  model.n_used = early_stop ? std::min(model.trees.size(), best_round + 1) : model.trees.size();
  if (trace) trace->best_round = model.n_used;
  return model;
}

std::map<std::string, double> feature_importance(const Model& model) {
  std::size_t width = model.feature_names.size();
  for (std::size_t t = 0; t < model.n_used && t < model.trees.size(); ++t)
    for (const auto& n : model.trees[t].nodes)
      if (!n.is_leaf()) width = std::max(width, static_cast<std::size_t>(n.feature) + 1);

  std::vector<double> gain(width, 0.0);
  for (std::size_t t = 0; t < model.n_used && t < model.trees.size(); ++t)
    for (const auto& n : model.trees[t].nodes)
      if (!n.is_leaf()) gain[static_cast<std::size_t>(n.feature)] += n.gain;
  const double total = std::accumulate(gain.begin(), gain.end(), 0.0);

  std::map<std::string, double> out;
  for (std::size_t f = 0; f < width; ++f) {
    const auto name = f < model.feature_names.size() ? model.feature_names[f] : "f" + std::to_string(f);
    out[name] = total > 0 ? gain[f] / total : 0.0;
  }
  return out;
}

json to_json(const Model& model) {
  json trees = json::array();
  for (const auto& t : model.trees) trees.push_back(node_to_json(t, 0));
  return {{"base_score", model.base_score},
          {"learning_rate", model.learning_rate},
          {"best_iteration", model.n_used},
          {"feature_names", model.feature_names},
          {"trees", std::move(trees)}};
}

Model model_from_json(const json& j) {
  Model m;
  m.base_score = j.at("base_score").get<double>();
  m.learning_rate = j.at("learning_rate").get<double>();
  m.n_used = j.at("best_iteration").get<std::size_t>();
  m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  for (const auto& t : j.at("trees")) {
    Tree tree;
    node_from_json(t, tree);
    m.trees.push_back(std::move(tree));
  }
  if (m.n_used > m.trees.size()) throw Error("gbdt model: best_iteration exceeds tree count");
  return m;
}

}  // namespace propensity::gbdt
