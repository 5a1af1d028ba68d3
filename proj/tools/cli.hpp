#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "propensity/cross_validation.hpp"
#include "propensity/event_log.hpp"
#include "propensity/features.hpp"
#include "propensity/logistic.hpp"
#include "propensity/metrics.hpp"
#include "propensity/model_bundle.hpp"
#include "propensity/simulator.hpp"

namespace propensity::cli {

namespace fs = std::filesystem;

/// Error carrying a stable machine-readable code, printed as
/// `error[CODE]: message`.
class CliError : public Error {
 public:
  CliError(std::string code, const std::string& message) : Error(message), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

struct FeaturizeSettings {
  std::optional<TimestampMs> start_ms;
  std::optional<TimestampMs> end_ms;
  /// Used when start_ms is absent: days after the start of the log.
  double start_offset_days = 30.0;
  double period_hours = 48.0;
  double horizon_hours = 48.0;
  /// 0 keeps every row.
  double undersample_ratio = 2.0;
  std::uint64_t undersample_seed = 11;
  std::array<double, 3> split_percent{80, 5, 15};
  std::uint64_t split_seed = 7;
};

struct TrainSettings {
  bundle::Mode mode = bundle::Mode::stack;
  gbdt::HyperParams gbdt;
  lr::FitOptions lr;
  double mpg_window_days = 2.0;
  std::size_t oof_folds = 5;
  std::uint64_t seed = 3;
  /// Best-parameter file from `cv` whose parameters override `gbdt`.
  std::optional<fs::path> cv_params;
};

struct CvSettings {
  cv::Grid grid = cv::default_grid();
  std::size_t folds = 5;
  std::uint64_t seed = 5;
  cv::Metric metric = cv::Metric::auc_pr;
};

struct ScoreSettings {
  std::optional<TimestampMs> as_of_ms;
};

struct EvaluateSettings {
  std::vector<eval::ProbabilityRange> ranges = eval::default_bucket_ranges();
  double threshold = 0.5;
};

struct RunConfig {
  fs::path run_dir = "run";
  fs::path events;
  events::LogFormat events_format = events::LogFormat::jsonl;
  fs::path bundle;
  sim::SimConfig simulate;
  FeaturizeSettings featurize;
  TrainSettings train;
  CvSettings cv;
  ScoreSettings score;
  EvaluateSettings evaluate;
  /// Sections as given, for hashing.
  nlohmann::json raw = nlohmann::json::object();

  /// Fills derived paths and checks the referenced paths are distinct.
  void finalize();
};

/// Parses a config document; unknown top-level sections are rejected.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const fs::path& path);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const fs::path& path);

/// Hash of the settings that shape a trained model plus the event data.
std::string training_hash(const RunConfig& config);

struct Prepared {
  events::EventLog log;
  features::SnapshotSchedule schedule;
  features::EncodedDataset data;
  features::EncodingSpec encoding;
};

/// Load, snapshot, undersample, split and encode as configured. A given
/// encoding is applied instead of fitting one on the train rows.
Prepared prepare(const RunConfig& config, const features::EncodingSpec* encoding = nullptr);

/// Each command writes under run_dir, records its outputs in
/// run_dir/manifest.json and returns the paths it wrote.
std::vector<fs::path> cmd_simulate(const RunConfig& config);
std::vector<fs::path> cmd_featurize(const RunConfig& config);
std::vector<fs::path> cmd_train(const RunConfig& config);
std::vector<fs::path> cmd_cv(const RunConfig& config);
std::vector<fs::path> cmd_score(const RunConfig& config);
std::vector<fs::path> cmd_evaluate(const RunConfig& config);

/// Entry point used by main(); returns the process exit code.
int run(int argc, char** argv);

}  // namespace propensity::cli
