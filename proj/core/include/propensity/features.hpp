#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "propensity/event_log.hpp"
#include "propensity/types.hpp"

namespace propensity::features {

inline constexpr std::size_t kNumNumeric = 25;
inline constexpr std::size_t kNumCategorical = 5;

/// Numeric feature names, in vector order.
inline constexpr std::array<std::string_view, kNumNumeric> kNumericNames{
    "l1wo",          "l2wo",           "l3wo",           "l4wo",
    "l5wo",          "l6wo",           "l7wo",           "l8wo",
    "DSLO",          "l1w_fam",        "l2w_fam",        "l3w_fam",
    "l4w_fam",       "call_engage_frac", "bot_engage_frac", "credit_ratio",
    "promise_diff",  "max_promise_diff", "min_promise_diff", "a2c_amount",
    "l7d_a2c",       "l7d_a2c_2",      "num_app_opens_l7d", "num_listing_views_l7d",
    "num_a2c_l7d",
};

namespace idx {
inline constexpr std::size_t l1wo = 0;
inline constexpr std::size_t dslo = 8;
inline constexpr std::size_t l1w_fam = 9;
inline constexpr std::size_t call_engage_frac = 13;
inline constexpr std::size_t bot_engage_frac = 14;
inline constexpr std::size_t credit_ratio = 15;
inline constexpr std::size_t promise_diff = 16;
inline constexpr std::size_t max_promise_diff = 17;
inline constexpr std::size_t min_promise_diff = 18;
inline constexpr std::size_t a2c_amount = 19;
inline constexpr std::size_t l7d_a2c = 20;
inline constexpr std::size_t l7d_a2c_2 = 21;
inline constexpr std::size_t num_app_opens_l7d = 22;
inline constexpr std::size_t num_listing_views_l7d = 23;
inline constexpr std::size_t num_a2c_l7d = 24;
}  // namespace idx

inline constexpr std::array<std::string_view, kNumCategorical> kCategoricalNames{
    "activation_type", "day_of_week", "brand_1", "brand_2", "brand_3"};

inline constexpr double kDsloCapDays = 182.0;

struct SnapshotSchedule {
  TimestampMs start = 0;
  TimestampMs end = 0;
  DurationMs period = kDefaultHorizonMs;

  /// Throws Error unless start < end and period > 0.
  void validate() const;
};

struct Snapshot {
  std::string customer_id;
  TimestampMs as_of = 0;

  bool operator==(const Snapshot&) const = default;
};

struct FeatureVector {
  std::string customer_id;
  TimestampMs as_of = 0;
  /// NaN where the feature is undefined for this customer; see missing().
  std::array<double, kNumNumeric> numeric{};
  std::array<std::optional<std::string>, kNumCategorical> categorical{};

  bool missing(std::size_t i) const noexcept { return is_missing(numeric[i]); }
  std::array<bool, kNumNumeric> missing_mask() const noexcept;
};

struct LabeledSample {
  FeatureVector features;
  int label = 0;
};

enum class Split { train, valid, test };

std::string_view to_string(Split s) noexcept;
Split parse_split(std::string_view name);

struct Dataset {
  std::vector<LabeledSample> samples;
  /// Empty until split_dataset has run; otherwise one tag per sample.
  std::vector<Split> splits;

  std::size_t size() const noexcept { return samples.size(); }
  std::vector<int> labels() const;
};

/// One entry per (active customer, period boundary), ordered by as_of then
/// customer id. Boundaries are start + i*period with as_of + period <= end; a
/// customer is active once it has any order or engagement before as_of.
std::vector<Snapshot> build_snapshots(const events::EventLog& log, const SnapshotSchedule& schedule);

/// Features visible strictly before as_of. Throws Error for an unknown customer.
FeatureVector extract_features(const events::EventLog& log, const std::string& customer_id, TimestampMs as_of);

/// 1 iff the customer has an order in [as_of, as_of + horizon). Throws Error
/// when the window runs past the end of the log.
int assign_label(const events::EventLog& log, const std::string& customer_id, TimestampMs as_of,
                 DurationMs horizon = kDefaultHorizonMs);

/// Features and labels for every snapshot of the schedule, computed in
/// parallel; order follows build_snapshots.
Dataset build_dataset(const events::EventLog& log, const SnapshotSchedule& schedule,
                      DurationMs horizon = kDefaultHorizonMs);

/// Categorical encoding fit on training rows: activation_type and day_of_week
/// one-hot, brand slots replaced by the level's training-set frequency.
struct EncodingSpec {
  std::vector<std::string> activation_levels;
  /// Per brand slot (brand_1..brand_3): level -> relative frequency.
  std::array<std::map<std::string, double>, 3> brand_frequency;

  std::vector<std::string> feature_names() const;
  std::size_t width() const noexcept { return kNumNumeric + activation_levels.size() + 7 + 3; }

  /// Encoded row; unseen levels and missing categoricals become NaN.
  std::vector<double> encode(const FeatureVector& fv) const;

  bool operator==(const EncodingSpec&) const = default;
};

struct EncodedDataset {
  std::vector<std::string> feature_names;
  DenseMatrix x;
  std::vector<int> y;
  std::vector<std::string> customer_ids;
  std::vector<TimestampMs> as_of;
  std::vector<Split> splits;

  std::size_t size() const noexcept { return y.size(); }
  /// Row indices carrying the given tag.
  std::vector<std::size_t> rows_of(Split s) const;
};

/// Fits the encoding on train-tagged rows (all rows when untagged) unless a
/// spec is supplied, then encodes every row with it.
std::pair<EncodedDataset, EncodingSpec> encode_categoricals(const Dataset& dataset,
                                                            const EncodingSpec* spec = nullptr);

/// Indices kept by random undersampling: every minority sample plus
/// floor(ratio * minority) majority samples drawn without replacement, in
/// ascending index order. Throws Error if ratio < 1 or the minority is empty.
std::vector<std::size_t> undersample_indices(std::span<const int> labels, double ratio, std::uint64_t seed);

Dataset undersample(const Dataset& dataset, double ratio, std::uint64_t seed);

/// Stratified split by percentages (train, valid, test) summing to 100. Per
/// class, counts are apportioned by largest remainder. Throws Error when any
/// split would be empty.
std::vector<Split> stratified_split(std::span<const int> labels, std::array<double, 3> percent, std::uint64_t seed);

Dataset split_dataset(const Dataset& dataset, std::array<double, 3> percent, std::uint64_t seed);

/// CSV export: customer_id,as_of_ms,<feature names>,label,split; missing cells empty.
void write_dataset_csv(const EncodedDataset& data, const std::filesystem::path& path);

}  // namespace propensity::features
