#include "propensity/cross_validation.hpp"

#include <algorithm>
#include <numeric>

#include "propensity/metrics.hpp"
#include "propensity/parallel.hpp"
#include "propensity/rng.hpp"

namespace propensity::cv {

std::vector<std::size_t> stratified_kfold(std::span<const int> labels, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw Error("stratified_kfold: k must be at least 2");
  std::vector<std::size_t> fold(labels.size());
  for (int cls = 0; cls < 2; ++cls) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if ((labels[i] != 0) == (cls == 1)) members.push_back(i);
    if (members.size() < k)
      throw Error("stratified_kfold: class " + std::to_string(cls) + " has " + std::to_string(members.size()) +
                  " samples, fewer than " + std::to_string(k) + " folds");
    auto rng = make_rng(seed, {static_cast<std::uint64_t>(cls)});
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t r = 0; r < members.size(); ++r) fold[members[r]] = r % k;
  }
  return fold;
}

Grid default_grid() {
  return {{"n_trees", {100, 300}},
          {"learning_rate", {0.05, 0.1, 0.3}},
          {"max_depth", {3, 6}},
          {"max_leaves", {15, 63}},
          {"colsample_bytree", {0.6, 1.0}}};
}

Grid grid_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.empty()) throw Error("cv grid must be a non-empty object");
  Grid g;
  for (const auto& [name, values] : j.items()) {
    if (!values.is_array() || values.empty()) throw Error("cv grid '" + name + "' must be a non-empty array");
    g.emplace_back(name, values.get<std::vector<nlohmann::json>>());
  }
  return g;
}

nlohmann::json to_json(const Grid& grid) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, values] : grid) j[name] = values;
  return j;
}

SearchResult grid_search_cv(const DenseMatrix& x, std::span<const int> y, const Grid& grid,
                            const gbdt::HyperParams& base, std::size_t k, std::uint64_t seed, Metric metric) {
  if (grid.empty()) throw Error("grid_search_cv: empty grid");
  for (const auto& [name, values] : grid)
    if (values.empty()) throw Error("grid_search_cv: no values for '" + name + "'");
  if (y.size() != x.rows()) throw Error("grid_search_cv: labels do not match rows");

  SearchResult result;
  std::vector<std::size_t> pos(grid.size(), 0);
  for (bool done = false; !done;) {
    CellResult cell;
    cell.params = nlohmann::json::object();
    for (std::size_t a = 0; a < grid.size(); ++a) cell.params[grid[a].first] = grid[a].second[pos[a]];
    cell.hp = gbdt::hyper_params_from_json(cell.params, base);
    cell.hp.early_stopping_rounds = 0;
    result.cells.push_back(std::move(cell));

    done = true;
    for (std::size_t a = grid.size(); a-- > 0;) {
      if (++pos[a] < grid[a].second.size()) {
        done = false;
        break;
      }
      pos[a] = 0;
    }
  }

  const auto folds = stratified_kfold(y, k, seed);
  std::vector<std::vector<std::size_t>> train_rows(k), valid_rows(k);
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t f = 0; f < k; ++f) (folds[i] == f ? valid_rows : train_rows)[f].push_back(i);

  std::vector<DenseMatrix> x_train(k), x_valid(k);
  std::vector<std::vector<int>> y_train(k), y_valid(k);
  for (std::size_t f = 0; f < k; ++f) {
    x_train[f] = x.select_rows(train_rows[f]);
    x_valid[f] = x.select_rows(valid_rows[f]);
    y_train[f] = select<int>(y, train_rows[f]);
    y_valid[f] = select<int>(y, valid_rows[f]);
  }

  const std::size_t n_cells = result.cells.size();
  std::vector<double> scores(n_cells * k);
  parallel_for(n_cells * k, [&](std::size_t job) {
    const std::size_t c = job / k, f = job % k;
    const auto model = gbdt::fit(x_train[f], y_train[f], x_valid[f], y_valid[f], result.cells[c].hp);
    const auto p = model.predict_proba(x_valid[f]);
    scores[job] = metric == Metric::auc_pr ? eval::auc_pr(p, y_valid[f]) : eval::auc_roc(p, y_valid[f]);
  });

  for (std::size_t c = 0; c < n_cells; ++c) {
    auto& cell = result.cells[c];
    cell.fold_scores.assign(scores.begin() + static_cast<std::ptrdiff_t>(c * k),
                            scores.begin() + static_cast<std::ptrdiff_t>((c + 1) * k));
    cell.mean = std::accumulate(cell.fold_scores.begin(), cell.fold_scores.end(), 0.0) / static_cast<double>(k);
  }
  auto better = [](const CellResult& a, const CellResult& b) {
    if (a.mean != b.mean) return a.mean > b.mean;
    if (a.hp.n_trees != b.hp.n_trees) return a.hp.n_trees < b.hp.n_trees;
    return a.hp.learning_rate < b.hp.learning_rate;
  };
  for (std::size_t c = 1; c < n_cells; ++c)
    if (better(result.cells[c], result.cells[result.best])) result.best = c;
  return result;
}

nlohmann::json to_json(const SearchResult& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) cells.push_back({{"params", c.params}, {"fold_scores", c.fold_scores}, {"mean", c.mean}});
  return {{"best_params", r.best_cell().params},
          {"best_hyperparameters", gbdt::to_json(r.best_cell().hp)},
          {"best_score", r.best_cell().mean},
          {"cells", std::move(cells)}};
}

}  // namespace propensity::cv
