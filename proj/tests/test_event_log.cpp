#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "propensity/event_log.hpp"
#include "support/generators.hpp"
#include "support/temp_dir.hpp"

namespace fs = std::filesystem;
using namespace propensity;
using namespace propensity::events;

namespace {

using testgen::TempDir;

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

}  // namespace

TEST(LoadEventLog, EmptyFileGivesEmptyLog) {
  TempDir dir;
  write_text(dir.path() / "e.jsonl", "");
  const auto log = load_event_log(dir.path() / "e.jsonl", LogFormat::jsonl);
  EXPECT_TRUE(log.empty());
  EXPECT_TRUE(log.profiles.empty());
}

TEST(LoadEventLog, ThreeRecordFixtureFieldByField) {
  TempDir dir;
  write_text(dir.path() / "e.jsonl",
             R"({"type":"order","customer_id":"c1","product_id":"p9","brand_id":"b2","timestamp_ms":1700000000000,"amount":12.5})"
             "\n"
             R"({"type":"engagement","customer_id":"c1","timestamp_ms":1700000100000,"kind":"app_open","value":1})"
             "\n"
             R"({"type":"profile","customer_id":"c1","activation_type":"fam","credit_total":10,"credit_left":0.5})"
             "\n");
  const auto log = load_event_log(dir.path() / "e.jsonl", LogFormat::jsonl);
  ASSERT_EQ(log.orders.size(), 1u);
  ASSERT_EQ(log.engagements.size(), 1u);
  ASSERT_EQ(log.profiles.size(), 1u);
  EXPECT_EQ(log.orders[0], (OrderEvent{"c1", "p9", "b2", 1700000000000, 12.5}));
  EXPECT_EQ(log.engagements[0], (EngagementEvent{"c1", 1700000100000, EngagementKind::app_open, 1.0}));
  const auto& p = log.profiles.at("c1");
  EXPECT_EQ(p.activation_type, "fam");
  EXPECT_DOUBLE_EQ(p.credit_limit_total, 10.0);
  EXPECT_DOUBLE_EQ(p.credit_limit_left, 0.5);
  EXPECT_TRUE(validate_log(log).ok());
}

TEST(LoadEventLog, NegativeAmountNamesFieldAndLine) {
  TempDir dir;
  write_text(dir.path() / "e.jsonl",
             R"({"type":"profile","customer_id":"c1","activation_type":"app","credit_total":1,"credit_left":1})"
             "\n"
             R"({"type":"order","customer_id":"c1","product_id":"p","brand_id":"b","timestamp_ms":5,"amount":-1})"
             "\n");
  try {
    load_event_log(dir.path() / "e.jsonl", LogFormat::jsonl);
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("amount"), std::string::npos) << msg;
    EXPECT_NE(msg.find("2"), std::string::npos) << msg;
  }
}

TEST(LoadEventLog, UnknownKindIsAnError) {
  TempDir dir;
  write_text(dir.path() / "e.jsonl",
             R"({"type":"engagement","customer_id":"c1","timestamp_ms":10,"kind":"telepathy","value":1})"
             "\n");
  try {
    load_event_log(dir.path() / "e.jsonl", LogFormat::jsonl);
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("kind"), std::string::npos);
  }
}

TEST(LoadEventLog, MalformedJsonAndMissingFields) {
  TempDir dir;
  write_text(dir.path() / "a.jsonl", "{not json}\n");
  EXPECT_THROW(load_event_log(dir.path() / "a.jsonl", LogFormat::jsonl), LoadError);
  write_text(dir.path() / "b.jsonl", R"({"type":"order","customer_id":"c1"})" "\n");
  EXPECT_THROW(load_event_log(dir.path() / "b.jsonl", LogFormat::jsonl), LoadError);
  EXPECT_THROW(load_event_log(dir.path() / "missing.jsonl", LogFormat::jsonl), LoadError);
}

TEST(LoadEventLog, CsvHeaderMismatchIsAnError) {
  TempDir dir;
  write_text(dir.path() / "profiles.csv", "customer_id,activation,credit_total,credit_left\n");
  EXPECT_THROW(load_event_log(dir.path(), LogFormat::csv), LoadError);
}

TEST(LoadEventLog, UnsortedInputIsResortedAndNoted) {
  TempDir dir;
  write_text(dir.path() / "e.jsonl",
             R"({"type":"profile","customer_id":"c1","activation_type":"app","credit_total":1,"credit_left":1})"
             "\n"
             R"({"type":"order","customer_id":"c1","product_id":"p","brand_id":"b","timestamp_ms":200,"amount":1})"
             "\n"
             R"({"type":"order","customer_id":"c1","product_id":"q","brand_id":"b","timestamp_ms":100,"amount":1})"
             "\n");
  auto log = load_event_log(dir.path() / "e.jsonl", LogFormat::jsonl);
  EXPECT_TRUE(log.resorted());
  EXPECT_EQ(log.orders[0].timestamp, 100);
  EXPECT_EQ(log.orders[1].timestamp, 200);
  const auto report = validate_log(log);
  EXPECT_TRUE(report.ok());
  EXPECT_TRUE(report.resorted);
  ASSERT_FALSE(report.notes.empty());
  EXPECT_NE(report.notes[0].find("re-sorted"), std::string::npos);
}

TEST(ValidateLog, OrderWithoutProfileIsOneViolation) {
  EventLog log;
  log.orders.push_back({"ghost", "p", "b", 1000, 3.0});
  log.normalize();
  const auto report = validate_log(log);
  EXPECT_EQ(report.n_violations, 1u);
  ASSERT_EQ(report.violations.size(), 1u);
  EXPECT_NE(report.violations[0].find("unknown customer"), std::string::npos);
}

TEST(ValidateLog, RandomLogsAreValid) {
  testgen::Gen g(41);
  for (int rep = 0; rep < 10; ++rep) {
    const auto log = testgen::random_log(g, 6, 40);
    EXPECT_TRUE(validate_log(log).ok());
  }
}

TEST(EventLog, SortIsStableForEqualTimestamps) {
  EventLog log;
  log.profiles["c"] = {"c", "app", 1, 1, {}};
  log.orders = {{"c", "p3", "b", 300, 1}, {"c", "p1", "b", 100, 1}, {"c", "p2a", "b", 200, 1},
                {"c", "p2b", "b", 200, 1}, {"c", "p2c", "b", 200, 1}};
  log.normalize();
  std::vector<std::string> ids;
  for (const auto& o : log.orders) ids.push_back(o.product_id);
  EXPECT_EQ(ids, (std::vector<std::string>{"p1", "p2a", "p2b", "p2c", "p3"}));
}

TEST(EventLog, StableSortProperty) {
  testgen::Gen g(7);
  for (int rep = 0; rep < 20; ++rep) {
    EventLog log;
    std::vector<OrderEvent> input;
    for (int i = 0; i < 60; ++i)
      input.push_back({"c", "p" + std::to_string(i), "b", static_cast<TimestampMs>(g.integer(1, 6)), 1.0});
    log.orders = input;
    log.normalize();
    for (std::size_t i = 1; i < log.orders.size(); ++i) {
      const auto& a = log.orders[i - 1];
      const auto& b = log.orders[i];
      ASSERT_LE(a.timestamp, b.timestamp);
      if (a.timestamp == b.timestamp) ASSERT_LT(std::stoi(a.product_id.substr(1)), std::stoi(b.product_id.substr(1)));
    }
  }
}

TEST(EventLog, OrdersBeforeIsStrict) {
  EventLog log;
  log.profiles["c"] = {"c", "app", 1, 1, {}};
  log.orders = {{"c", "p", "b", 100, 1}, {"c", "p", "b", 200, 1}};
  log.normalize();
  EXPECT_EQ(log.orders_before("c", 100).size(), 0u);
  EXPECT_EQ(log.orders_before("c", 101).size(), 1u);
  EXPECT_EQ(log.orders_before("c", 201).size(), 2u);
  EXPECT_EQ(log.orders_before("nobody", 201).size(), 0u);
}

class RoundTrip : public ::testing::TestWithParam<LogFormat> {};

TEST_P(RoundTrip, LoadSerializeLoadIsIdentity) {
  testgen::Gen g(1234);
  for (int rep = 0; rep < 5; ++rep) {
    TempDir dir;
    const auto original = testgen::random_log(g, 5, 30);
    const fs::path target = GetParam() == LogFormat::jsonl ? dir.path() / "log.jsonl" : dir.path() / "csv";
    write_event_log(original, target, GetParam());
    const auto once = load_event_log(target, GetParam());
    EXPECT_EQ(once, original);
    const fs::path again = GetParam() == LogFormat::jsonl ? dir.path() / "again.jsonl" : dir.path() / "csv2";
    write_event_log(once, again, GetParam());
    auto twice = load_event_log(again, GetParam());
    EXPECT_EQ(twice, once);
  }
}

INSTANTIATE_TEST_SUITE_P(Formats, RoundTrip, ::testing::Values(LogFormat::jsonl, LogFormat::csv),
                         [](const auto& info) { return info.param == LogFormat::jsonl ? "jsonl" : "csv"; });

TEST(TruncateBefore, DropsFutureEventsAndPendingDeliveries) {
  EventLog log;
  log.profiles["c"] = {"c", "app", 1, 1, {{10, 11}, {20, 21}}};
  log.orders = {{"c", "p", "b", 5 * kMsPerDay, 1}, {"c", "p", "b", 15 * kMsPerDay, 1}};
  log.engagements = {{"c", 3 * kMsPerDay, EngagementKind::app_open, 1}, {"c", 16 * kMsPerDay, EngagementKind::app_open, 1}};
  log.normalize();
  const auto cut = truncate_before(log, 15 * kMsPerDay);
  EXPECT_EQ(cut.orders.size(), 1u);
  EXPECT_EQ(cut.engagements.size(), 1u);
  ASSERT_EQ(cut.profiles.at("c").deliveries.size(), 1u);
  EXPECT_EQ(cut.profiles.at("c").deliveries[0].delivered_day, 11);
}

TEST(EngagementKind, NamesRoundTrip) {
  for (auto k : {EngagementKind::fam_visit, EngagementKind::call_human_seconds, EngagementKind::call_bot_seconds,
                 EngagementKind::app_open, EngagementKind::listing_view, EngagementKind::add_to_cart})
    EXPECT_EQ(parse_engagement_kind(to_string(k)), k);
  EXPECT_THROW(parse_engagement_kind("nope"), Error);
  EXPECT_THROW(parse_log_format("parquet"), Error);
}
