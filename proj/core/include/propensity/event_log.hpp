#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "propensity/types.hpp"

namespace propensity::events {

struct OrderEvent {
  std::string customer_id;
  std::string product_id;
  std::string brand_id;
  TimestampMs timestamp = 0;
  double amount = 0.0;

  bool operator==(const OrderEvent&) const = default;
};

enum class EngagementKind {
  fam_visit,
  call_human_seconds,
  call_bot_seconds,
  app_open,
  listing_view,
  add_to_cart,
};

std::string_view to_string(EngagementKind kind) noexcept;
/// Throws Error for names outside the enum.
EngagementKind parse_engagement_kind(std::string_view name);

struct EngagementEvent {
  std::string customer_id;
  TimestampMs timestamp = 0;
  EngagementKind kind = EngagementKind::app_open;
  /// Seconds for calls, currency for add_to_cart, 1 otherwise.
  double value = 1.0;

  bool operator==(const EngagementEvent&) const = default;
};

/// Promise/delivery pair for one order, in UTC epoch days.
struct Delivery {
  std::int64_t promised_day = 0;
  std::int64_t delivered_day = 0;

  bool operator==(const Delivery&) const = default;
};

struct CustomerProfile {
  std::string customer_id;
  std::string activation_type;
  double credit_limit_total = 0.0;
  double credit_limit_left = 0.0;
  std::vector<Delivery> deliveries;

  bool operator==(const CustomerProfile&) const = default;
};

/// A delivery is visible at as_of once its whole delivery day has passed.
inline bool delivery_visible(const Delivery& d, TimestampMs as_of) noexcept {
  return (d.delivered_day + 1) * kMsPerDay <= as_of;
}

/// Indices into EventLog::orders / EventLog::engagements for one customer,
/// each list in timestamp order.
struct CustomerEvents {
  std::vector<std::size_t> orders;
  std::vector<std::size_t> engagements;
};

/// Time-ordered order and engagement streams plus static customer profiles.
///
/// Construct by filling the public vectors and calling normalize(), which
/// stable-sorts both streams by timestamp and builds the per-customer index.
/// Treat the log as immutable afterwards; every const member is safe for
/// concurrent readers.
class EventLog {
 public:
  std::vector<OrderEvent> orders;
  std::vector<EngagementEvent> engagements;
  std::map<std::string, CustomerProfile> profiles;

  /// Observation window of the export. When unset, the window is taken to be
  /// [first event, last event].
  std::optional<TimestampMs> coverage_start;
  std::optional<TimestampMs> coverage_end;

  void normalize();

  /// True when normalize() had to reorder an input stream.
  bool resorted() const noexcept { return resorted_; }

  TimestampMs start() const noexcept;
  TimestampMs end() const noexcept;
  bool empty() const noexcept { return orders.empty() && engagements.empty(); }

  /// Every customer with at least one order, engagement or profile, sorted.
  std::vector<std::string> customers() const;

  /// Null for customers with no orders or engagements.
  const CustomerEvents* events_of(const std::string& customer_id) const;

  /// Order indices of the customer with timestamp < as_of.
  std::span<const std::size_t> orders_before(const std::string& customer_id, TimestampMs as_of) const;
  std::span<const std::size_t> engagements_before(const std::string& customer_id, TimestampMs as_of) const;

  const CustomerProfile* profile_of(const std::string& customer_id) const;

  /// Equality on content (streams, profiles, coverage); the index and the
  /// resort flag are derived state.
  bool operator==(const EventLog& other) const;

 private:
  std::map<std::string, CustomerEvents> index_;
  bool resorted_ = false;
};

enum class LogFormat { jsonl, csv };

LogFormat parse_log_format(std::string_view name);

/// Raised for malformed input; the message names the line and the field.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// Loads a log. For jsonl, `path` is a single file of tagged records. For
/// csv, `path` is a directory with orders.csv, engagements.csv, profiles.csv
/// and deliveries.csv (any of which may be absent) and optional meta.csv.
EventLog load_event_log(const std::filesystem::path& path, LogFormat format);

/// Writes a log in the same layout load_event_log reads.
void write_event_log(const EventLog& log, const std::filesystem::path& path, LogFormat format);

struct ValidationReport {
  std::size_t n_orders = 0;
  std::size_t n_engagements = 0;
  std::size_t n_profiles = 0;
  std::size_t n_violations = 0;
  bool resorted = false;
  /// First violation of each kind, human readable.
  std::vector<std::string> violations;
  std::vector<std::string> notes;

  bool ok() const noexcept { return n_violations == 0; }
};

ValidationReport validate_log(const EventLog& log);

/// Copy of the log restricted to what is observable strictly before as_of:
/// events with timestamp < as_of and deliveries completed before as_of.
EventLog truncate_before(const EventLog& log, TimestampMs as_of);

}  // namespace propensity::events
