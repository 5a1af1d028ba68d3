#include "propensity/event_log.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

#include <boost/tokenizer.hpp>
#include <nlohmann/json.hpp>

namespace propensity::events {
namespace {

using nlohmann::json;

constexpr std::array<std::pair<EngagementKind, std::string_view>, 6> kKindNames{{
    {EngagementKind::fam_visit, "fam_visit"},
    {EngagementKind::call_human_seconds, "call_human_seconds"},
    {EngagementKind::call_bot_seconds, "call_bot_seconds"},
    {EngagementKind::app_open, "app_open"},
    {EngagementKind::listing_view, "listing_view"},
    {EngagementKind::add_to_cart, "add_to_cart"},
}};

constexpr std::string_view kOrdersHeader = "customer_id,product_id,brand_id,timestamp_ms,amount";
constexpr std::string_view kEngagementsHeader = "customer_id,timestamp_ms,kind,value";
constexpr std::string_view kProfilesHeader = "customer_id,activation_type,credit_total,credit_left";
constexpr std::string_view kDeliveriesHeader = "customer_id,promised_day,delivered_day";
constexpr std::string_view kMetaHeader = "coverage_start_ms,coverage_end_ms";

[[noreturn]] void fail(std::size_t line, std::string_view field, std::string_view what) {
  std::ostringstream os;
  os << "line " << line << ": field '" << field << "': " << what;
  throw LoadError(os.str());
}

std::int64_t parse_int(std::string_view text, std::size_t line, std::string_view field) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || p != text.data() + text.size()) fail(line, field, "not an integer: '" + std::string(text) + "'");
  return v;
}

double parse_double(std::string_view text, std::size_t line, std::string_view field) {
  double v = 0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || p != text.data() + text.size() || !std::isfinite(v))
    fail(line, field, "not a finite number: '" + std::string(text) + "'");
  return v;
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), p);
}

void check_id(const std::string& id, std::size_t line, std::string_view field) {
  if (id.empty()) fail(line, field, "must be non-empty");
}

void check_timestamp(TimestampMs ts, std::size_t line) {
  if (ts <= 0) fail(line, "timestamp_ms", "must be > 0");
}

void check_nonnegative(double v, std::size_t line, std::string_view field) {
  if (v < 0) fail(line, field, "must be >= 0");
}

// ---- JSONL -----------------------------------------------------------------

const json& require(const json& rec, std::string_view key, std::size_t line) {
  auto it = rec.find(key);
  if (it == rec.end()) fail(line, key, "missing");
  return *it;
}

std::string get_string(const json& rec, std::string_view key, std::size_t line) {
  const auto& v = require(rec, key, line);
  if (!v.is_string()) fail(line, key, "expected a string");
  return v.get<std::string>();
}

double get_number(const json& rec, std::string_view key, std::size_t line) {
  const auto& v = require(rec, key, line);
  if (!v.is_number()) fail(line, key, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) fail(line, key, "must be finite");
  return d;
}

std::int64_t get_integer(const json& rec, std::string_view key, std::size_t line) {
  const auto& v = require(rec, key, line);
  if (v.is_number_integer()) return v.get<std::int64_t>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::isfinite(d) && d == std::floor(d)) return static_cast<std::int64_t>(d);
  }
  fail(line, key, "expected an integer");
}

EventLog load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());

  EventLog log;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(text);
    } catch (const json::parse_error& e) {
      fail(line, "<record>", std::string("invalid JSON: ") + e.what());
    }
    if (!rec.is_object()) fail(line, "<record>", "expected a JSON object");
    const std::string type = get_string(rec, "type", line);

    if (type == "order") {
      OrderEvent o;
      o.customer_id = get_string(rec, "customer_id", line);
      o.product_id = get_string(rec, "product_id", line);
      o.brand_id = get_string(rec, "brand_id", line);
      o.timestamp = get_integer(rec, "timestamp_ms", line);
      o.amount = get_number(rec, "amount", line);
      check_id(o.customer_id, line, "customer_id");
      check_id(o.product_id, line, "product_id");
      check_id(o.brand_id, line, "brand_id");
      check_timestamp(o.timestamp, line);
      check_nonnegative(o.amount, line, "amount");
      log.orders.push_back(std::move(o));
    } else if (type == "engagement") {
      EngagementEvent e;
      e.customer_id = get_string(rec, "customer_id", line);
      e.timestamp = get_integer(rec, "timestamp_ms", line);
      const std::string kind = get_string(rec, "kind", line);
      try {
        e.kind = parse_engagement_kind(kind);
      } catch (const Error&) {
        fail(line, "kind", "unknown engagement kind '" + kind + "'");
      }
      e.value = get_number(rec, "value", line);
      check_id(e.customer_id, line, "customer_id");
      check_timestamp(e.timestamp, line);
      check_nonnegative(e.value, line, "value");
      log.engagements.push_back(std::move(e));
    } else if (type == "profile") {
      CustomerProfile p;
      p.customer_id = get_string(rec, "customer_id", line);
      p.activation_type = get_string(rec, "activation_type", line);
      p.credit_limit_total = get_number(rec, "credit_total", line);
      p.credit_limit_left = get_number(rec, "credit_left", line);
      check_id(p.customer_id, line, "customer_id");
      check_nonnegative(p.credit_limit_total, line, "credit_total");
      if (auto it = rec.find("deliveries"); it != rec.end()) {
        if (!it->is_array()) fail(line, "deliveries", "expected an array");
        for (const auto& d : *it) {
          if (!d.is_object()) fail(line, "deliveries", "expected objects");
          p.deliveries.push_back({get_integer(d, "promised_day", line), get_integer(d, "delivered_day", line)});
        }
      }
      if (log.profiles.contains(p.customer_id)) fail(line, "customer_id", "duplicate profile '" + p.customer_id + "'");
      auto id = p.customer_id;
      log.profiles.emplace(std::move(id), std::move(p));
    } else if (type == "meta") {
      if (rec.contains("coverage_start_ms")) log.coverage_start = get_integer(rec, "coverage_start_ms", line);
      if (rec.contains("coverage_end_ms")) log.coverage_end = get_integer(rec, "coverage_end_ms", line);
    } else {
      fail(line, "type", "unknown record type '" + type + "'");
    }
  }
  return log;
}

void write_jsonl(const EventLog& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  if (log.coverage_start || log.coverage_end) {
    json meta{{"type", "meta"}};
    if (log.coverage_start) meta["coverage_start_ms"] = *log.coverage_start;
    if (log.coverage_end) meta["coverage_end_ms"] = *log.coverage_end;
    out << meta.dump() << '\n';
  }
  for (const auto& [id, p] : log.profiles) {
    json rec{{"type", "profile"},
             {"customer_id", p.customer_id},
             {"activation_type", p.activation_type},
             {"credit_total", p.credit_limit_total},
             {"credit_left", p.credit_limit_left}};
    json dl = json::array();
    for (const auto& d : p.deliveries) dl.push_back({{"promised_day", d.promised_day}, {"delivered_day", d.delivered_day}});
    rec["deliveries"] = std::move(dl);
    out << rec.dump() << '\n';
  }
  for (const auto& o : log.orders) {
    out << json{{"type", "order"},
                {"customer_id", o.customer_id},
                {"product_id", o.product_id},
                {"brand_id", o.brand_id},
                {"timestamp_ms", o.timestamp},
                {"amount", o.amount}}
               .dump()
        << '\n';
  }
  for (const auto& e : log.engagements) {
    out << json{{"type", "engagement"},
                {"customer_id", e.customer_id},
                {"timestamp_ms", e.timestamp},
                {"kind", to_string(e.kind)},
                {"value", e.value}}
               .dump()
        << '\n';
  }
}

// ---- CSV ---------------------------------------------------------------------

using Tokenizer = boost::tokenizer<boost::escaped_list_separator<char>>;

std::vector<std::string> split_csv(const std::string& line, std::size_t line_no) {
  try {
    Tokenizer tok(line);
    return {tok.begin(), tok.end()};
  } catch (const boost::escaped_list_error& e) {
    fail(line_no, "<row>", std::string("malformed CSV: ") + e.what());
  }
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\\") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  out += '"';
  return out;
}

/// Calls row(fields, line_no) for each data row; returns false when the file
/// does not exist.
template <typename RowFn>
bool read_csv(const std::filesystem::path& file, std::string_view header, RowFn&& row) {
  if (!std::filesystem::exists(file)) return false;
  std::ifstream in(file);
  if (!in) throw LoadError("cannot open " + file.string());
  std::string text;
  std::size_t line = 0;
  const auto expected_cols = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',') + 1);
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (line == 1) {
      if (text != header) fail(line, "<header>", "expected '" + std::string(header) + "' in " + file.filename().string());
      continue;
    }
    if (text.empty()) continue;
    auto fields = split_csv(text, line);
    if (fields.size() != expected_cols)
      fail(line, "<row>", "expected " + std::to_string(expected_cols) + " fields in " + file.filename().string());
    row(fields, line);
  }
  return true;
}

EventLog load_csv(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw LoadError("not a directory: " + dir.string());
  EventLog log;

  read_csv(dir / "profiles.csv", kProfilesHeader, [&](const std::vector<std::string>& f, std::size_t line) {
    CustomerProfile p;
    p.customer_id = f[0];
    p.activation_type = f[1];
    p.credit_limit_total = parse_double(f[2], line, "credit_total");
    p.credit_limit_left = parse_double(f[3], line, "credit_left");
    check_id(p.customer_id, line, "customer_id");
    check_nonnegative(p.credit_limit_total, line, "credit_total");
    if (log.profiles.contains(p.customer_id)) fail(line, "customer_id", "duplicate profile '" + p.customer_id + "'");
    auto id = p.customer_id;
    log.profiles.emplace(std::move(id), std::move(p));
  });
  read_csv(dir / "deliveries.csv", kDeliveriesHeader, [&](const std::vector<std::string>& f, std::size_t line) {
    auto it = log.profiles.find(f[0]);
    if (it == log.profiles.end()) fail(line, "customer_id", "no profile for '" + f[0] + "'");
    it->second.deliveries.push_back(
        {parse_int(f[1], line, "promised_day"), parse_int(f[2], line, "delivered_day")});
  });
  read_csv(dir / "orders.csv", kOrdersHeader, [&](const std::vector<std::string>& f, std::size_t line) {
    OrderEvent o{f[0], f[1], f[2], parse_int(f[3], line, "timestamp_ms"), parse_double(f[4], line, "amount")};
    check_id(o.customer_id, line, "customer_id");
    check_id(o.product_id, line, "product_id");
    check_id(o.brand_id, line, "brand_id");
    check_timestamp(o.timestamp, line);
    check_nonnegative(o.amount, line, "amount");
    log.orders.push_back(std::move(o));
  });
  read_csv(dir / "engagements.csv", kEngagementsHeader, [&](const std::vector<std::string>& f, std::size_t line) {
    EngagementEvent e;
    e.customer_id = f[0];
    e.timestamp = parse_int(f[1], line, "timestamp_ms");
    try {
      e.kind = parse_engagement_kind(f[2]);
    } catch (const Error&) {
      fail(line, "kind", "unknown engagement kind '" + f[2] + "'");
    }
    e.value = parse_double(f[3], line, "value");
    check_id(e.customer_id, line, "customer_id");
    check_timestamp(e.timestamp, line);
    check_nonnegative(e.value, line, "value");
    log.engagements.push_back(std::move(e));
  });
  read_csv(dir / "meta.csv", kMetaHeader, [&](const std::vector<std::string>& f, std::size_t line) {
    if (!f[0].empty()) log.coverage_start = parse_int(f[0], line, "coverage_start_ms");
    if (!f[1].empty()) log.coverage_end = parse_int(f[1], line, "coverage_end_ms");
  });
  return log;
}

void write_csv(const EventLog& log, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name, std::string_view header) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw Error("cannot write " + (dir / name).string());
    out << header << '\n';
    return out;
  };
  {
    auto out = open("profiles.csv", kProfilesHeader);
    for (const auto& [id, p] : log.profiles)
      out << csv_field(p.customer_id) << ',' << csv_field(p.activation_type) << ',' << format_double(p.credit_limit_total)
          << ',' << format_double(p.credit_limit_left) << '\n';
  }
  {
    auto out = open("deliveries.csv", kDeliveriesHeader);
    for (const auto& [id, p] : log.profiles)
      for (const auto& d : p.deliveries)
        out << csv_field(p.customer_id) << ',' << d.promised_day << ',' << d.delivered_day << '\n';
  }
  {
    auto out = open("orders.csv", kOrdersHeader);
    for (const auto& o : log.orders)
      out << csv_field(o.customer_id) << ',' << csv_field(o.product_id) << ',' << csv_field(o.brand_id) << ','
          << o.timestamp << ',' << format_double(o.amount) << '\n';
  }
  {
    auto out = open("engagements.csv", kEngagementsHeader);
    for (const auto& e : log.engagements)
      out << csv_field(e.customer_id) << ',' << e.timestamp << ',' << to_string(e.kind) << ','
          << format_double(e.value) << '\n';
  }
  if (log.coverage_start || log.coverage_end) {
    auto out = open("meta.csv", kMetaHeader);
    if (log.coverage_start) out << *log.coverage_start;
    out << ',';
    if (log.coverage_end) out << *log.coverage_end;
    out << '\n';
  }
}

template <typename Event>
bool stable_sort_by_time(std::vector<Event>& events) {
  const bool sorted = std::is_sorted(events.begin(), events.end(),
                                     [](const Event& a, const Event& b) { return a.timestamp < b.timestamp; });
  if (!sorted) {
    std::stable_sort(events.begin(), events.end(),
                     [](const Event& a, const Event& b) { return a.timestamp < b.timestamp; });
  }
  return !sorted;
}

template <typename Event>
std::span<const std::size_t> prefix_before(const std::vector<std::size_t>& idx, const std::vector<Event>& events,
                                           TimestampMs as_of) {
  auto it = std::partition_point(idx.begin(), idx.end(), [&](std::size_t i) { return events[i].timestamp < as_of; });
  return {idx.data(), static_cast<std::size_t>(it - idx.begin())};
}

}  // namespace

std::string_view to_string(EngagementKind kind) noexcept {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  return "unknown";
}

EngagementKind parse_engagement_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames)
    if (n == name) return k;
  throw Error("unknown engagement kind '" + std::string(name) + "'");
}

void EventLog::normalize() {
  const bool a = stable_sort_by_time(orders);
  const bool b = stable_sort_by_time(engagements);
  resorted_ = resorted_ || a || b;
  index_.clear();
  for (std::size_t i = 0; i < orders.size(); ++i) index_[orders[i].customer_id].orders.push_back(i);
  for (std::size_t i = 0; i < engagements.size(); ++i) index_[engagements[i].customer_id].engagements.push_back(i);
}

TimestampMs EventLog::start() const noexcept {
  if (coverage_start) return *coverage_start;
  TimestampMs t = std::numeric_limits<TimestampMs>::max();
  if (!orders.empty()) t = std::min(t, orders.front().timestamp);
  if (!engagements.empty()) t = std::min(t, engagements.front().timestamp);
  return t == std::numeric_limits<TimestampMs>::max() ? 0 : t;
}

TimestampMs EventLog::end() const noexcept {
  if (coverage_end) return *coverage_end;
  TimestampMs t = 0;
  if (!orders.empty()) t = std::max(t, orders.back().timestamp);
  if (!engagements.empty()) t = std::max(t, engagements.back().timestamp);
  return t;
}

std::vector<std::string> EventLog::customers() const {
  std::vector<std::string> ids;
  ids.reserve(index_.size() + profiles.size());
  for (const auto& [id, ev] : index_) ids.push_back(id);
  for (const auto& [id, p] : profiles) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

const CustomerEvents* EventLog::events_of(const std::string& customer_id) const {
  auto it = index_.find(customer_id);
  return it == index_.end() ? nullptr : &it->second;
}

std::span<const std::size_t> EventLog::orders_before(const std::string& customer_id, TimestampMs as_of) const {
  const auto* ev = events_of(customer_id);
  if (!ev) return {};
  return prefix_before(ev->orders, orders, as_of);
}

std::span<const std::size_t> EventLog::engagements_before(const std::string& customer_id, TimestampMs as_of) const {
  const auto* ev = events_of(customer_id);
  if (!ev) return {};
  return prefix_before(ev->engagements, engagements, as_of);
}

const CustomerProfile* EventLog::profile_of(const std::string& customer_id) const {
  auto it = profiles.find(customer_id);
  return it == profiles.end() ? nullptr : &it->second;
}

bool EventLog::operator==(const EventLog& other) const {
  return orders == other.orders && engagements == other.engagements && profiles == other.profiles &&
         coverage_start == other.coverage_start && coverage_end == other.coverage_end;
}

LogFormat parse_log_format(std::string_view name) {
  if (name == "jsonl") return LogFormat::jsonl;
  if (name == "csv") return LogFormat::csv;
  throw Error("unknown log format '" + std::string(name) + "' (expected jsonl or csv)");
}

EventLog load_event_log(const std::filesystem::path& path, LogFormat format) {
  EventLog log = format == LogFormat::jsonl ? load_jsonl(path) : load_csv(path);
  log.normalize();
  return log;
}

void write_event_log(const EventLog& log, const std::filesystem::path& path, LogFormat format) {
  if (format == LogFormat::jsonl) {
    write_jsonl(log, path);
  } else {
    write_csv(log, path);
  }
}

ValidationReport validate_log(const EventLog& log) {
  ValidationReport r;
  r.n_orders = log.orders.size();
  r.n_engagements = log.engagements.size();
  r.n_profiles = log.profiles.size();
  r.resorted = log.resorted();
  if (r.resorted) r.notes.emplace_back("input streams were not in timestamp order and were re-sorted (stable)");

  std::map<std::string, std::size_t> first_seen;
  auto violation = [&](const std::string& kind, const std::string& detail) {
    ++r.n_violations;
    if (first_seen.emplace(kind, r.violations.size()).second) r.violations.push_back(kind + ": " + detail);
  };

  for (std::size_t i = 0; i < log.orders.size(); ++i) {
    const auto& o = log.orders[i];
    const std::string where = "order #" + std::to_string(i);
    if (o.timestamp <= 0) violation("non-positive timestamp", where);
    if (o.customer_id.empty() || o.product_id.empty() || o.brand_id.empty()) violation("empty id", where);
    if (!(o.amount >= 0)) violation("negative amount", where);
    if (i > 0 && log.orders[i - 1].timestamp > o.timestamp) violation("unsorted orders", where);
    if (!log.profiles.contains(o.customer_id)) violation("unknown customer", where + " references '" + o.customer_id + "'");
  }
  for (std::size_t i = 0; i < log.engagements.size(); ++i) {
    const auto& e = log.engagements[i];
    const std::string where = "engagement #" + std::to_string(i);
    if (e.timestamp <= 0) violation("non-positive timestamp", where);
    if (e.customer_id.empty()) violation("empty id", where);
    if (!(e.value >= 0)) violation("negative engagement value", where);
    if (i > 0 && log.engagements[i - 1].timestamp > e.timestamp) violation("unsorted engagements", where);
  }
  for (const auto& [id, p] : log.profiles) {
    if (id.empty() || id != p.customer_id) violation("profile key mismatch", "'" + id + "'");
    if (!(p.credit_limit_total >= 0)) violation("negative credit_total", "'" + id + "'");
  }
  return r;
}

EventLog truncate_before(const EventLog& log, TimestampMs as_of) {
  EventLog out;
  for (const auto& o : log.orders)
    if (o.timestamp < as_of) out.orders.push_back(o);
  for (const auto& e : log.engagements)
    if (e.timestamp < as_of) out.engagements.push_back(e);
  for (const auto& [id, p] : log.profiles) {
    CustomerProfile q = p;
    q.deliveries.clear();
    for (const auto& d : p.deliveries)
      if (delivery_visible(d, as_of)) q.deliveries.push_back(d);
    out.profiles.emplace(id, std::move(q));
  }
  out.coverage_start = log.coverage_start;
  out.coverage_end = as_of;
  out.normalize();
  return out;
}

}  // namespace propensity::events
