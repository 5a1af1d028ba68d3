#include "propensity/features.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <set>

#include "propensity/parallel.hpp"
#include "propensity/rng.hpp"

namespace propensity::features {
namespace {

using events::EngagementKind;
using events::EventLog;

std::string format_number(double v) {
  std::array<char, 64> buf{};
  auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), p);
}

/// Indices of the top-n keys by count, ties broken by key order.
std::vector<std::string> top_by_count(const std::map<std::string, std::size_t>& counts, std::size_t n) {
  std::vector<std::pair<std::string, std::size_t>> v(counts.begin(), counts.end());
  std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(n, v.size()); ++i) out.push_back(v[i].first);
  return out;
}

}  // namespace

void SnapshotSchedule::validate() const {
  if (!(start < end)) throw Error("snapshot schedule: start must be before end");
  if (period <= 0) throw Error("snapshot schedule: period must be positive");
}

std::array<bool, kNumNumeric> FeatureVector::missing_mask() const noexcept {
  std::array<bool, kNumNumeric> m{};
  for (std::size_t i = 0; i < kNumNumeric; ++i) m[i] = missing(i);
  return m;
}

std::string_view to_string(Split s) noexcept {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "valid") return Split::valid;
  if (name == "test") return Split::test;
  throw Error("unknown split '" + std::string(name) + "'");
}

std::vector<int> Dataset::labels() const {
  std::vector<int> y;
  y.reserve(samples.size());
  for (const auto& s : samples) y.push_back(s.label);
  return y;
}

std::vector<Snapshot> build_snapshots(const EventLog& log, const SnapshotSchedule& schedule) {
  schedule.validate();
  std::vector<Snapshot> out;
  if (log.empty()) return out;

  // First event time per customer.
  std::vector<std::pair<std::string, TimestampMs>> first;
  for (const auto& id : log.customers()) {
    const auto* ev = log.events_of(id);
    if (!ev) continue;
    TimestampMs t = std::numeric_limits<TimestampMs>::max();
    if (!ev->orders.empty()) t = std::min(t, log.orders[ev->orders.front()].timestamp);
    if (!ev->engagements.empty()) t = std::min(t, log.engagements[ev->engagements.front()].timestamp);
    first.emplace_back(id, t);
  }
  for (TimestampMs as_of = schedule.start; as_of + schedule.period <= schedule.end; as_of += schedule.period) {
    for (const auto& [id, t] : first)
      if (t < as_of) out.push_back({id, as_of});
  }
  return out;
}

FeatureVector extract_features(const EventLog& log, const std::string& customer_id, TimestampMs as_of) {
  const auto* profile = log.profile_of(customer_id);
  if (!profile && !log.events_of(customer_id)) throw Error("unknown customer '" + customer_id + "'");

  FeatureVector fv;
  fv.customer_id = customer_id;
  fv.as_of = as_of;
  auto& x = fv.numeric;
  x.fill(0.0);

  // Orders: distinct timestamps form one order; lines carry the brands.
  const auto orders = log.orders_before(customer_id, as_of);
  std::map<std::string, std::size_t> brand_counts;
  std::array<std::size_t, 7> weekday_counts{};
  TimestampMs last_order = 0;
  TimestampMs prev_ts = std::numeric_limits<TimestampMs>::min();
  for (auto i : orders) {
    const auto& o = log.orders[i];
    ++brand_counts[o.brand_id];
    if (o.timestamp == prev_ts) continue;
    prev_ts = o.timestamp;
    last_order = o.timestamp;
    ++weekday_counts[static_cast<std::size_t>(utc_weekday(o.timestamp))];
    const DurationMs age = as_of - o.timestamp;
    for (std::size_t n = 1; n <= 8; ++n)
      if (age <= static_cast<DurationMs>(7 * n) * kMsPerDay) x[idx::l1wo + n - 1] += 1;
  }
  if (orders.empty()) {
    x[idx::dslo] = kMissing;
  } else {
    const double days = std::floor(ms_to_days(as_of - last_order));
    x[idx::dslo] = std::min(days, kDsloCapDays);
  }

  double human_seconds = 0, bot_seconds = 0;
  std::vector<double> recent_a2c;
  for (auto i : log.engagements_before(customer_id, as_of)) {
    const auto& e = log.engagements[i];
    const DurationMs age = as_of - e.timestamp;
    const bool last_week = age <= 7 * kMsPerDay;
    switch (e.kind) {
      case EngagementKind::fam_visit:
        for (std::size_t n = 1; n <= 4; ++n)
          if (age <= static_cast<DurationMs>(7 * n) * kMsPerDay) x[idx::l1w_fam + n - 1] += 1;
        break;
      case EngagementKind::call_human_seconds: human_seconds += e.value; break;
      case EngagementKind::call_bot_seconds: bot_seconds += e.value; break;
      case EngagementKind::app_open:
        if (last_week) x[idx::num_app_opens_l7d] += 1;
        break;
      case EngagementKind::listing_view:
        if (last_week) x[idx::num_listing_views_l7d] += 1;
        break;
      case EngagementKind::add_to_cart:
        x[idx::a2c_amount] += e.value;
        if (last_week) {
          x[idx::num_a2c_l7d] += 1;
          recent_a2c.push_back(e.value);
        }
        break;
    }
  }
  const double call_total = human_seconds + bot_seconds;
  x[idx::call_engage_frac] = call_total > 0 ? human_seconds / call_total : kMissing;
  x[idx::bot_engage_frac] = call_total > 0 ? bot_seconds / call_total : kMissing;
  std::sort(recent_a2c.begin(), recent_a2c.end(), std::greater<>());
  x[idx::l7d_a2c] = recent_a2c.empty() ? kMissing : recent_a2c[0];
  x[idx::l7d_a2c_2] = recent_a2c.size() > 1 ? recent_a2c[1] : kMissing;

  x[idx::credit_ratio] = kMissing;
  x[idx::promise_diff] = x[idx::max_promise_diff] = x[idx::min_promise_diff] = kMissing;
  if (profile) {
    if (profile->credit_limit_total > 0)
      x[idx::credit_ratio] = profile->credit_limit_left / profile->credit_limit_total;
    double sum = 0, hi = -std::numeric_limits<double>::infinity(), lo = std::numeric_limits<double>::infinity();
    std::size_t n = 0;
    for (const auto& d : profile->deliveries) {
      if (!events::delivery_visible(d, as_of)) continue;
      const auto diff = static_cast<double>(d.delivered_day - d.promised_day);
      sum += diff;
      hi = std::max(hi, diff);
      lo = std::min(lo, diff);
      ++n;
    }
    if (n > 0) {
      x[idx::promise_diff] = sum / static_cast<double>(n);
      x[idx::max_promise_diff] = hi;
      x[idx::min_promise_diff] = lo;
    }
    fv.categorical[0] = profile->activation_type;
  }

  if (!orders.empty()) {
    const auto best = std::max_element(weekday_counts.begin(), weekday_counts.end());
    fv.categorical[1] = std::to_string(best - weekday_counts.begin());
  }
  const auto brands = top_by_count(brand_counts, 3);
  for (std::size_t i = 0; i < brands.size(); ++i) fv.categorical[2 + i] = brands[i];
  return fv;
}

int assign_label(const EventLog& log, const std::string& customer_id, TimestampMs as_of, DurationMs horizon) {
  if (horizon <= 0) throw Error("label horizon must be positive");
  if (as_of + horizon > log.end()) throw Error("label window ends after the log coverage");
  if (!log.profile_of(customer_id) && !log.events_of(customer_id))
    throw Error("unknown customer '" + customer_id + "'");
  const auto* ev = log.events_of(customer_id);
  if (!ev) return 0;
  auto it = std::partition_point(ev->orders.begin(), ev->orders.end(),
                                 [&](std::size_t i) { return log.orders[i].timestamp < as_of; });
  return (it != ev->orders.end() && log.orders[*it].timestamp < as_of + horizon) ? 1 : 0;
}

Dataset build_dataset(const EventLog& log, const SnapshotSchedule& schedule, DurationMs horizon) {
  const auto snaps = build_snapshots(log, schedule);
  Dataset ds;
  ds.samples.resize(snaps.size());
  parallel_for(snaps.size(), [&](std::size_t i) {
    ds.samples[i].features = extract_features(log, snaps[i].customer_id, snaps[i].as_of);
    ds.samples[i].label = assign_label(log, snaps[i].customer_id, snaps[i].as_of, horizon);
  });
  return ds;
}

// ---- encoding ------------------------------------------------------------------

std::vector<std::string> EncodingSpec::feature_names() const {
  std::vector<std::string> names(kNumericNames.begin(), kNumericNames.end());
  for (const auto& lvl : activation_levels) names.push_back("activation_type=" + lvl);
  for (int d = 0; d < 7; ++d) names.push_back("day_of_week=" + std::to_string(d));
  for (int b = 1; b <= 3; ++b) names.push_back("brand_" + std::to_string(b));
  return names;
}

std::vector<double> EncodingSpec::encode(const FeatureVector& fv) const {
  std::vector<double> row(fv.numeric.begin(), fv.numeric.end());
  row.reserve(width());

  const auto& act = fv.categorical[0];
  const auto lvl = act ? std::find(activation_levels.begin(), activation_levels.end(), *act) : activation_levels.end();
  for (auto it = activation_levels.begin(); it != activation_levels.end(); ++it)
    row.push_back(lvl == activation_levels.end() ? kMissing : (it == lvl ? 1.0 : 0.0));

  int dow = -1;
  if (const auto& d = fv.categorical[1]) dow = std::stoi(*d);
  for (int d = 0; d < 7; ++d) row.push_back(dow < 0 ? kMissing : (d == dow ? 1.0 : 0.0));

  for (std::size_t b = 0; b < 3; ++b) {
    const auto& level = fv.categorical[2 + b];
    double v = kMissing;
    if (level) {
      if (auto it = brand_frequency[b].find(*level); it != brand_frequency[b].end()) v = it->second;
    }
    row.push_back(v);
  }
  return row;
}

std::vector<std::size_t> EncodedDataset::rows_of(Split s) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == s) rows.push_back(i);
  return rows;
}

std::pair<EncodedDataset, EncodingSpec> encode_categoricals(const Dataset& dataset, const EncodingSpec* given) {
  if (!dataset.splits.empty() && dataset.splits.size() != dataset.samples.size())
    throw Error("encode_categoricals: split tags do not match samples");

  EncodingSpec spec;
  if (given) {
    spec = *given;
  } else {
    std::set<std::string> levels;
    std::array<std::map<std::string, std::size_t>, 3> counts;
    std::size_t n_fit = 0;
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
      if (!dataset.splits.empty() && dataset.splits[i] != Split::train) continue;
      const auto& fv = dataset.samples[i].features;
      ++n_fit;
      if (fv.categorical[0]) levels.insert(*fv.categorical[0]);
      for (std::size_t b = 0; b < 3; ++b)
        if (fv.categorical[2 + b]) ++counts[b][*fv.categorical[2 + b]];
    }
    spec.activation_levels.assign(levels.begin(), levels.end());
    for (std::size_t b = 0; b < 3; ++b)
      for (const auto& [lvl, c] : counts[b])
        spec.brand_frequency[b][lvl] = static_cast<double>(c) / static_cast<double>(n_fit);
  }

  EncodedDataset out;
  out.feature_names = spec.feature_names();
  out.x = DenseMatrix(dataset.samples.size(), spec.width());
  out.y.reserve(dataset.samples.size());
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    const auto row = spec.encode(s.features);
    std::copy(row.begin(), row.end(), out.x.row(i).begin());
    out.y.push_back(s.label);
    out.customer_ids.push_back(s.features.customer_id);
    out.as_of.push_back(s.features.as_of);
  }
  out.splits = dataset.splits;
  return {std::move(out), std::move(spec)};
}

// ---- sampling and splitting ------------------------------------------------------

std::vector<std::size_t> undersample_indices(std::span<const int> labels, double ratio, std::uint64_t seed) {
  if (!(ratio >= 1.0)) throw Error("undersample: ratio must be >= 1");
  std::array<std::vector<std::size_t>, 2> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i] != 0 ? 1 : 0].push_back(i);
  const int minority = by_class[1].size() <= by_class[0].size() ? 1 : 0;
  auto& minor = by_class[minority];
  auto& major = by_class[1 - minority];
  if (minor.empty()) throw Error("undersample: minority class is empty");

  const auto target = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(minor.size())));
  std::vector<std::size_t> keep = minor;
  if (major.size() <= target) {
    keep.insert(keep.end(), major.begin(), major.end());
  } else {
    // Partial Fisher-Yates: the first `target` slots become a uniform sample.
    Rng rng(derive_seed(seed, {0x5EED}));
    for (std::size_t i = 0; i < target; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, major.size() - 1);
      std::swap(major[i], major[pick(rng)]);
    }
    keep.insert(keep.end(), major.begin(), major.begin() + static_cast<std::ptrdiff_t>(target));
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

Dataset undersample(const Dataset& dataset, double ratio, std::uint64_t seed) {
  const auto labels = dataset.labels();
  const auto keep = undersample_indices(labels, ratio, seed);
  Dataset out;
  out.samples.reserve(keep.size());
  for (auto i : keep) out.samples.push_back(dataset.samples[i]);
  if (!dataset.splits.empty())
    for (auto i : keep) out.splits.push_back(dataset.splits[i]);
  return out;
}

std::vector<Split> stratified_split(std::span<const int> labels, std::array<double, 3> percent, std::uint64_t seed) {
  const double total = percent[0] + percent[1] + percent[2];
  if (std::abs(total - 100.0) > 1e-9) throw Error("split fractions must sum to 100");
  for (double p : percent)
    if (p < 0) throw Error("split fractions must be non-negative");

  std::vector<Split> tags(labels.size(), Split::train);
  std::array<std::size_t, 3> split_sizes{};
  for (int cls = 0; cls < 2; ++cls) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if ((labels[i] != 0 ? 1 : 0) == cls) members.push_back(i);
    Rng rng(derive_seed(seed, {0x5917, static_cast<std::uint64_t>(cls)}));
    std::shuffle(members.begin(), members.end(), rng);

    // Largest remainder apportionment of members.size() across the splits.
    const double n = static_cast<double>(members.size());
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      const double exact = n * percent[s] / 100.0;
      counts[s] = static_cast<std::size_t>(std::floor(exact + 1e-9));
      rem[s] = exact - static_cast<double>(counts[s]);
      assigned += counts[s];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
    for (std::size_t k = 0; assigned < members.size(); ++k, ++assigned) ++counts[order[k % 3]];

    std::size_t pos = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t j = 0; j < counts[s]; ++j) tags[members[pos++]] = static_cast<Split>(s);
      split_sizes[s] += counts[s];
    }
  }
  for (std::size_t s = 0; s < 3; ++s)
    if (split_sizes[s] == 0)
      throw Error("split '" + std::string(to_string(static_cast<Split>(s))) + "' would be empty");
  return tags;
}

Dataset split_dataset(const Dataset& dataset, std::array<double, 3> percent, std::uint64_t seed) {
  Dataset out = dataset;
  out.splits = stratified_split(dataset.labels(), percent, seed);
  return out;
}

void write_dataset_csv(const EncodedDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "customer_id,as_of_ms";
  for (const auto& n : data.feature_names) out << ',' << n;
  out << ",label,split\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << data.customer_ids[i] << ',' << data.as_of[i];
    for (double v : data.x.row(i)) {
      out << ',';
      if (!is_missing(v)) out << format_number(v);
    }
    out << ',' << data.y[i] << ',' << (data.splits.empty() ? "" : to_string(data.splits[i])) << '\n';
  }
}

}  // namespace propensity::features
