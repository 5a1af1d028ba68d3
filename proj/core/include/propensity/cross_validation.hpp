#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "propensity/gbdt.hpp"
#include "propensity/types.hpp"

namespace propensity::cv {

/// Fold id in [0, k) per sample. Each class is shuffled and dealt round-robin,
/// so fold sizes per class differ by at most one. Throws Error when a class
/// has fewer than k samples.
std::vector<std::size_t> stratified_kfold(std::span<const int> labels, std::size_t k, std::uint64_t seed);

/// Hyperparameter name (as in the gbdt JSON) and the values to try.
using Grid = std::vector<std::pair<std::string, std::vector<nlohmann::json>>>;

Grid default_grid();
Grid grid_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Grid& grid);

enum class Metric { auc_pr, auc_roc };

struct CellResult {
  nlohmann::json params;
  gbdt::HyperParams hp;
  std::vector<double> fold_scores;
  double mean = 0.0;
};

struct SearchResult {
  std::vector<CellResult> cells;  // Cartesian order, last axis fastest
  std::size_t best = 0;

  const CellResult& best_cell() const { return cells.at(best); }
};

/// Exhaustive grid search. Every cell is trained on k-1 folds with early
/// stopping turned off and scored on the held-out fold. The best cell has the
/// highest mean score; ties go to fewer trees, then a lower learning rate,
/// then the earlier cell. Cells and folds run in parallel with a deterministic
/// reduction.
SearchResult grid_search_cv(const DenseMatrix& x, std::span<const int> y, const Grid& grid,
                            const gbdt::HyperParams& base, std::size_t k = 5, std::uint64_t seed = 0,
                            Metric metric = Metric::auc_pr);

nlohmann::json to_json(const SearchResult& r);

}  // namespace propensity::cv
