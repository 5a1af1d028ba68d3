#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "propensity/features.hpp"
#include "propensity/gbdt.hpp"
#include "propensity/logistic.hpp"
#include "propensity/mpg.hpp"
#include "propensity/stack.hpp"

namespace propensity::bundle {

inline constexpr int kSchemaVersion = 1;

enum class Mode { gbdt, mpg, stack };

std::string_view to_string(Mode m) noexcept;
Mode parse_mode(std::string_view name);

/// Everything needed to score: the encoding, frozen priors and whichever
/// models the mode uses.
struct Bundle {
  Mode mode = Mode::stack;
  std::string config_hash;
  features::EncodingSpec encoding;
  mpg::PriorSet priors;
  double mpg_window_days = 2.0;
  std::optional<gbdt::Model> gbdt;
  std::optional<lr::LrModel> lr;

  bool operator==(const Bundle&) const = default;
};

Bundle from_stack(const stack::StackModel& model, std::string config_hash);

/// Throws Error unless the bundle holds a stack.
stack::StackModel to_stack(const Bundle& b);

/// Probabilities for every row. gbdt mode scores the gbdt alone, mpg mode
/// the chance of at least one product purchase, 1 - prod(1 - p_j), and stack
/// mode the meta-learner.
std::vector<double> score_rows(const Bundle& b, const features::EncodedDataset& data, const events::EventLog& log);

double score_customer(const Bundle& b, const events::EventLog& log, const std::string& customer_id, TimestampMs as_of);

nlohmann::json to_json(const features::EncodingSpec& spec);
features::EncodingSpec encoding_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Bundle& b);
/// Throws Error naming both versions when the schema differs.
Bundle bundle_from_json(const nlohmann::json& j);

void save(const Bundle& b, const std::filesystem::path& path);
Bundle load(const std::filesystem::path& path);

}  // namespace propensity::bundle
