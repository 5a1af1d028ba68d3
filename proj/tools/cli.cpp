#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include <openssl/evp.h>

#include "CLI11.hpp"
#include "propensity/parallel.hpp"

namespace propensity::cli {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& code, const std::string& message) { throw CliError(code, message); }

template <typename F>
auto with_code(const std::string& code, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const CliError&) {
    throw;
  } catch (const json::exception& e) {
    fail(code, e.what());
  } catch (const Error& e) {
    fail(code, e.what());
  }
}

void check_keys(const json& section, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!section.is_object()) fail("E_CONFIG", where + " must be a JSON object");
  for (const auto& [key, value] : section.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      fail("E_CONFIG", "unknown key '" + key + "' in " + where);
}

std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("E_IO", "cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path, const std::string& code) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(code, "cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(code, path.string() + ": " + e.what());
  }
}

FeaturizeSettings parse_featurize(const json& j) {
  check_keys(j, {"start_ms", "end_ms", "start_offset_days", "period_hours", "horizon_hours", "undersample_ratio",
                 "undersample_seed", "split_percent", "split_seed"},
             "featurize");
  FeaturizeSettings s;
  if (j.contains("start_ms")) s.start_ms = j["start_ms"].get<TimestampMs>();
  if (j.contains("end_ms")) s.end_ms = j["end_ms"].get<TimestampMs>();
  s.start_offset_days = j.value("start_offset_days", s.start_offset_days);
  s.period_hours = j.value("period_hours", s.period_hours);
  s.horizon_hours = j.value("horizon_hours", s.horizon_hours);
  s.undersample_ratio = j.value("undersample_ratio", s.undersample_ratio);
  s.undersample_seed = j.value("undersample_seed", s.undersample_seed);
  if (j.contains("split_percent")) s.split_percent = j["split_percent"].get<std::array<double, 3>>();
  s.split_seed = j.value("split_seed", s.split_seed);
  if (!(s.period_hours > 0) || !(s.horizon_hours > 0)) fail("E_CONFIG", "featurize: period and horizon must be positive");
  if (s.undersample_ratio != 0 && !(s.undersample_ratio >= 1))
    fail("E_CONFIG", "featurize: undersample_ratio must be 0 (off) or at least 1");
  if (!(s.start_offset_days >= 0)) fail("E_CONFIG", "featurize: start_offset_days must be non-negative");
  return s;
}

json to_json(const FeaturizeSettings& s) {
  json j = {{"start_offset_days", s.start_offset_days}, {"period_hours", s.period_hours},
            {"horizon_hours", s.horizon_hours},         {"undersample_ratio", s.undersample_ratio},
            {"undersample_seed", s.undersample_seed},   {"split_percent", s.split_percent},
            {"split_seed", s.split_seed}};
  j["start_ms"] = s.start_ms ? json(*s.start_ms) : json(nullptr);
  j["end_ms"] = s.end_ms ? json(*s.end_ms) : json(nullptr);
  return j;
}

TrainSettings parse_train(const json& j) {
  check_keys(j, {"mode", "gbdt", "lr", "mpg_window_days", "oof_folds", "seed", "cv_params"}, "train");
  TrainSettings s;
  if (j.contains("mode")) s.mode = bundle::parse_mode(j["mode"].get<std::string>());
  if (j.contains("gbdt")) s.gbdt = gbdt::hyper_params_from_json(j["gbdt"], s.gbdt);
  if (j.contains("lr")) {
    const auto& l = j["lr"];
    check_keys(l, {"l1", "l2", "tolerance", "max_iterations"}, "train.lr");
    s.lr.penalty.l1 = l.value("l1", s.lr.penalty.l1);
    s.lr.penalty.l2 = l.value("l2", s.lr.penalty.l2);
    s.lr.tolerance = l.value("tolerance", s.lr.tolerance);
    s.lr.max_iterations = l.value("max_iterations", s.lr.max_iterations);
    if (!(s.lr.penalty.l1 >= 0 && s.lr.penalty.l2 >= 0 && s.lr.tolerance > 0 && s.lr.max_iterations > 0))
      fail("E_CONFIG", "train.lr: penalties must be non-negative, tolerance and max_iterations positive");
  }
  s.mpg_window_days = j.value("mpg_window_days", s.mpg_window_days);
  s.oof_folds = j.value("oof_folds", s.oof_folds);
  s.seed = j.value("seed", s.seed);
  if (j.contains("cv_params") && !j["cv_params"].is_null()) s.cv_params = j["cv_params"].get<std::string>();
  if (!(s.mpg_window_days > 0)) fail("E_CONFIG", "train.mpg_window_days must be positive");
  if (s.oof_folds < 2) fail("E_CONFIG", "train.oof_folds must be at least 2");
  return s;
}

CvSettings parse_cv(const json& j) {
  check_keys(j, {"grid", "folds", "seed", "metric"}, "cv");
  CvSettings s;
  if (j.contains("grid")) s.grid = cv::grid_from_json(j["grid"]);
  s.folds = j.value("folds", s.folds);
  s.seed = j.value("seed", s.seed);
  const auto metric = j.value("metric", std::string("auc_pr"));
  if (metric == "auc_pr") s.metric = cv::Metric::auc_pr;
  else if (metric == "auc_roc") s.metric = cv::Metric::auc_roc;
  else fail("E_CONFIG", "cv.metric must be auc_pr or auc_roc");
  if (s.folds < 2) fail("E_CONFIG", "cv.folds must be at least 2");
  return s;
}

EvaluateSettings parse_evaluate(const json& j) {
  check_keys(j, {"bucket_ranges", "threshold"}, "evaluate");
  EvaluateSettings s;
  if (j.contains("bucket_ranges")) {
    s.ranges.clear();
    for (const auto& r : j["bucket_ranges"]) {
      const auto pair = r.get<std::array<double, 2>>();
      if (!(pair[0] >= 0 && pair[0] < pair[1] && pair[1] <= 1)) fail("E_CONFIG", "evaluate.bucket_ranges: need 0 <= lo < hi <= 1");
      s.ranges.push_back({pair[0], pair[1]});
    }
  }
  s.threshold = j.value("threshold", s.threshold);
  if (!(s.threshold >= 0 && s.threshold <= 1)) fail("E_CONFIG", "evaluate.threshold must lie in [0, 1]");
  return s;
}

void update_manifest(const RunConfig& config, const std::vector<fs::path>& written) {
  const auto path = config.run_dir / "manifest.json";
  json m = fs::exists(path) ? read_json(path, "E_IO") : json::object();
  auto& artifacts = m["artifacts"];
  if (!artifacts.is_object()) artifacts = json::object();
  for (const auto& p : written) {
    const auto rel = p.lexically_relative(config.run_dir);
    const auto key = (rel.empty() || *rel.begin() == "..") ? p.generic_string() : rel.generic_string();
    artifacts[key] = {{"sha256", sha256_file(p)}, {"bytes", fs::file_size(p)}};
  }
  m["schema"] = 1;
  write_json(path, m);
}

std::vector<fs::path> event_files(const RunConfig& config) {
  if (config.events_format == events::LogFormat::jsonl) return {config.events};
  std::vector<fs::path> files;
  for (const char* name : {"orders.csv", "engagements.csv", "profiles.csv", "deliveries.csv", "meta.csv"})
    if (fs::exists(config.events / name)) files.push_back(config.events / name);
  return files;
}

events::EventLog load_events(const RunConfig& config) {
  if (!fs::exists(config.events)) fail("E_INPUT", "event log " + config.events.string() + " does not exist");
  return with_code("E_INPUT", [&] { return events::load_event_log(config.events, config.events_format); });
}

bundle::Bundle load_bundle(const RunConfig& config) {
  if (!fs::exists(config.bundle)) fail("E_MISSING_MODEL", "model bundle " + config.bundle.string() + " does not exist");
  try {
    return bundle::load(config.bundle);
  } catch (const Error& e) {
    const std::string what = e.what();
    fail(what.find("schema") != std::string::npos ? "E_SCHEMA" : "E_MODEL", what);
  } catch (const json::exception& e) {
    fail("E_MODEL", e.what());
  }
}

features::EncodedDataset subset(const features::EncodedDataset& d, std::span<const std::size_t> rows) {
  features::EncodedDataset out;
  out.feature_names = d.feature_names;
  out.x = d.x.select_rows(rows);
  out.y = select<int>(d.y, rows);
  out.customer_ids = select<std::string>(d.customer_ids, rows);
  out.as_of = select<TimestampMs>(d.as_of, rows);
  if (!d.splits.empty()) out.splits = select<features::Split>(d.splits, rows);
  return out;
}

gbdt::HyperParams effective_hp(const RunConfig& config) {
  gbdt::HyperParams hp = config.train.gbdt;
  if (config.train.cv_params) {
    const auto j = read_json(*config.train.cv_params, "E_INPUT");
    if (!j.contains("best_params")) fail("E_INPUT", config.train.cv_params->string() + " has no best_params");
    hp = with_code("E_INPUT", [&] { return gbdt::hyper_params_from_json(j["best_params"], hp); });
  }
  return hp;
}

bool is_test_row(const features::EncodedDataset& d, std::size_t i) { return d.splits[i] == features::Split::test; }

}  // namespace

void RunConfig::finalize() {
  if (events.empty()) events = run_dir / (events_format == events::LogFormat::jsonl ? "events.jsonl" : "events");
  if (bundle.empty()) bundle = run_dir / "model.json";
  if (fs::weakly_canonical(events) == fs::weakly_canonical(bundle))
    fail("E_CONFIG", "events and bundle paths must differ");
  if (fs::weakly_canonical(events) == fs::weakly_canonical(run_dir))
    fail("E_CONFIG", "events path must differ from the run directory");
}

RunConfig config_from_json(const json& j) {
  return with_code("E_CONFIG", [&] {
    check_keys(j, {"run_dir", "events", "events_format", "bundle", "simulate", "featurize", "train", "cv", "score", "evaluate"},
               "config");
    RunConfig c;
    c.raw = j;
    if (j.contains("run_dir")) c.run_dir = j["run_dir"].get<std::string>();
    if (j.contains("events")) c.events = j["events"].get<std::string>();
    if (j.contains("events_format")) c.events_format = events::parse_log_format(j["events_format"].get<std::string>());
    if (j.contains("bundle")) c.bundle = j["bundle"].get<std::string>();
    c.simulate = sim::sim_config_from_json(j.value("simulate", json::object()));
    c.featurize = parse_featurize(j.value("featurize", json::object()));
    c.train = parse_train(j.value("train", json::object()));
    c.cv = parse_cv(j.value("cv", json::object()));
    const auto score = j.value("score", json::object());
    check_keys(score, {"as_of_ms"}, "score");
    if (score.contains("as_of_ms")) c.score.as_of_ms = score["as_of_ms"].get<TimestampMs>();
    c.evaluate = parse_evaluate(j.value("evaluate", json::object()));
    c.finalize();
    return c;
  });
}

RunConfig load_config(const fs::path& path) { return config_from_json(read_json(path, "E_CONFIG")); }

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) fail("E_INTERNAL", "sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("E_IO", "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

std::string training_hash(const RunConfig& config) {
  json j;
  j["featurize"] = to_json(config.featurize);
  j["mode"] = bundle::to_string(config.train.mode);
  j["gbdt"] = gbdt::to_json(effective_hp(config));
  j["lr"] = {{"l1", config.train.lr.penalty.l1},
             {"l2", config.train.lr.penalty.l2},
             {"tolerance", config.train.lr.tolerance},
             {"max_iterations", config.train.lr.max_iterations}};
  j["mpg_window_days"] = config.train.mpg_window_days;
  j["oof_folds"] = config.train.oof_folds;
  j["seed"] = config.train.seed;
  json files = json::object();
  for (const auto& f : event_files(config)) files[f.filename().string()] = sha256_file(f);
  j["events"] = files;
  return sha256_hex(j.dump());
}

Prepared prepare(const RunConfig& config, const features::EncodingSpec* encoding) {
  Prepared p;
  p.log = load_events(config);
  if (p.log.empty()) fail("E_DATA", "event log " + config.events.string() + " holds no events");
  const auto& f = config.featurize;
  const auto period = static_cast<DurationMs>(std::llround(f.period_hours * static_cast<double>(kMsPerHour)));
  const auto horizon = static_cast<DurationMs>(std::llround(f.horizon_hours * static_cast<double>(kMsPerHour)));
  p.schedule.period = period;
  p.schedule.start = f.start_ms.value_or(utc_day(p.log.start()) * kMsPerDay +
                                         static_cast<DurationMs>(std::llround(f.start_offset_days * static_cast<double>(kMsPerDay))));
  p.schedule.end = f.end_ms.value_or(p.log.end() - std::max<DurationMs>(0, horizon - period));

  with_code("E_DATA", [&] {
    p.schedule.validate();
    auto dataset = features::build_dataset(p.log, p.schedule, horizon);
    if (dataset.size() == 0) throw Error("the snapshot schedule produced no samples");
    if (f.undersample_ratio > 0) dataset = features::undersample(dataset, f.undersample_ratio, f.undersample_seed);
    dataset = features::split_dataset(dataset, f.split_percent, f.split_seed);
    auto [data, spec] = features::encode_categoricals(dataset, encoding);
    p.data = std::move(data);
    p.encoding = std::move(spec);
    return 0;
  });
  return p;
}

std::vector<fs::path> cmd_simulate(const RunConfig& config) {
  auto [log, truth] = with_code("E_CONFIG", [&] { return sim::simulate(config.simulate); });
  std::vector<fs::path> written;
  with_code("E_IO", [&] {
    if (config.events.has_parent_path()) fs::create_directories(config.events.parent_path());
    events::write_event_log(log, config.events, config.events_format);
    return 0;
  });
  written = event_files(config);
  const auto truth_path = config.run_dir / "ground_truth.json";
  write_text(truth_path, sim::to_json(truth).dump() + "\n");
  written.push_back(truth_path);
  const auto cfg_path = config.run_dir / "sim_config.json";
  write_json(cfg_path, sim::to_json(config.simulate));
  written.push_back(cfg_path);
  update_manifest(config, written);
  return written;
}

std::vector<fs::path> cmd_featurize(const RunConfig& config) {
  const auto p = prepare(config);
  const auto path = config.run_dir / "dataset.csv";
  fs::create_directories(config.run_dir);
  with_code("E_IO", [&] {
    features::write_dataset_csv(p.data, path);
    return 0;
  });
  const auto enc_path = config.run_dir / "encoding.json";
  write_json(enc_path, bundle::to_json(p.encoding));
  update_manifest(config, {path, enc_path});
  return {path, enc_path};
}

std::vector<fs::path> cmd_train(const RunConfig& config) {
  const auto p = prepare(config);
  const auto hp = effective_hp(config);
  const auto& t = config.train;

  bundle::Bundle b = with_code("E_TRAIN", [&] {
    const auto priors = mpg::fit_priors(p.log, p.schedule.start);
    if (t.mode == bundle::Mode::stack) {
      stack::StackConfig sc;
      sc.gbdt = hp;
      sc.lr = t.lr;
      sc.window_days = t.mpg_window_days;
      sc.oof_folds = t.oof_folds;
      sc.seed = t.seed;
      return bundle::from_stack(stack::fit_stack(p.data, p.log, p.encoding, priors, sc), "");
    }
    bundle::Bundle out;
    out.mode = t.mode;
    out.encoding = p.encoding;
    out.priors = priors;
    out.mpg_window_days = t.mpg_window_days;
    if (t.mode == bundle::Mode::gbdt) {
      const auto train = p.data.rows_of(features::Split::train);
      const auto valid = p.data.rows_of(features::Split::valid);
      out.gbdt = gbdt::fit(p.data.x.select_rows(train), select<int>(p.data.y, train), p.data.x.select_rows(valid),
                           select<int>(p.data.y, valid), hp, p.data.feature_names);
    }
    return out;
  });
  b.config_hash = training_hash(config);

  fs::create_directories(config.bundle.has_parent_path() ? config.bundle.parent_path() : fs::path("."));
  with_code("E_IO", [&] {
    bundle::save(b, config.bundle);
    return 0;
  });

  json report;
  report["mode"] = bundle::to_string(b.mode);
  report["config_hash"] = b.config_hash;
  report["schedule"] = {{"start_ms", p.schedule.start}, {"end_ms", p.schedule.end}, {"period_ms", p.schedule.period}};
  for (auto s : {features::Split::train, features::Split::valid, features::Split::test}) {
    const auto rows = p.data.rows_of(s);
    const auto pos = std::count_if(rows.begin(), rows.end(), [&](std::size_t i) { return p.data.y[i] != 0; });
    report["rows"][std::string(features::to_string(s))] = {{"total", rows.size()}, {"positive", pos}};
  }
  const auto valid = subset(p.data, p.data.rows_of(features::Split::valid));
  const auto scores = bundle::score_rows(b, valid, p.log);
  with_code("E_DATA", [&] {
    report["valid_auc_pr"] = eval::auc_pr(scores, valid.y);
    report["valid_auc_roc"] = eval::auc_roc(scores, valid.y);
    return 0;
  });
  if (b.gbdt) report["gbdt_best_iteration"] = b.gbdt->n_used;
  if (b.mode == bundle::Mode::stack) {
    const auto shares = stack::component_importance(*b.lr);
    report["component_importance"] = {{"gbdt_share", shares.gbdt_share}, {"mpg_share", shares.mpg_share}};
  }
  const auto report_path = config.run_dir / "train_report.json";
  write_json(report_path, report);
  update_manifest(config, {config.bundle, report_path});
  return {config.bundle, report_path};
}

std::vector<fs::path> cmd_cv(const RunConfig& config) {
  const auto p = prepare(config);
  const auto train = p.data.rows_of(features::Split::train);
  const auto result = with_code("E_TRAIN", [&] {
    return cv::grid_search_cv(p.data.x.select_rows(train), select<int>(p.data.y, train), config.cv.grid,
                              config.train.gbdt, config.cv.folds, config.cv.seed, config.cv.metric);
  });
  json j = cv::to_json(result);
  j["metric"] = config.cv.metric == cv::Metric::auc_pr ? "auc_pr" : "auc_roc";
  j["folds"] = config.cv.folds;
  const auto path = config.run_dir / "cv_best.json";
  write_json(path, j);
  update_manifest(config, {path});
  return {path};
}

std::vector<fs::path> cmd_score(const RunConfig& config) {
  const auto b = load_bundle(config);
  const auto log = load_events(config);
  const TimestampMs as_of = config.score.as_of_ms.value_or(log.end());

  std::vector<std::string> customers;
  for (const auto& c : log.customers())
    if (!log.orders_before(c, as_of).empty() || !log.engagements_before(c, as_of).empty()) customers.push_back(c);

  std::vector<double> probs(customers.size());
  with_code("E_DATA", [&] {
    parallel_for(customers.size(), [&](std::size_t i) { probs[i] = bundle::score_customer(b, log, customers[i], as_of); });
    return 0;
  });
  std::vector<std::size_t> order(customers.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) { return probs[a] > probs[c]; });

  std::string out = "customer_id,probability,bucket\n";
  for (auto i : order)
    out += customers[i] + "," + format_double(probs[i]) + "," + eval::bucket_label(probs[i], config.evaluate.ranges) + "\n";
  const auto path = config.run_dir / "scores.csv";
  write_text(path, out);
  update_manifest(config, {path});
  return {path};
}

std::vector<fs::path> cmd_evaluate(const RunConfig& config) {
  const auto b = load_bundle(config);
  const auto expected = training_hash(config);
  if (b.config_hash != expected)
    fail("E_CONFIG_MISMATCH", "model bundle was trained with config hash " + b.config_hash + " but the current config hashes to " + expected);
  const auto p = prepare(config, &b.encoding);

  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < p.data.size(); ++i)
    if (is_test_row(p.data, i)) rows.push_back(i);
  const auto test = subset(p.data, rows);
  const auto scores = bundle::score_rows(b, test, p.log);

  const auto dir = config.run_dir / "eval";
  fs::create_directories(dir);
  json report = with_code("E_DATA", [&] { return eval::metrics_report(scores, test.y, config.evaluate.ranges, config.evaluate.threshold); });
  report["model"] = bundle::to_string(b.mode);
  report["n_test"] = test.size();

  // Stand-in for the heuristic call list: most recent buyers first.
  std::vector<double> baseline(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    const double dslo = test.x(i, features::idx::dslo);
    baseline[i] = is_missing(dslo) ? -(features::kDsloCapDays + 1) : -dslo;
  }
  report["baseline_dslo_ascending"] = {{"auc_roc", eval::auc_roc(baseline, test.y)}, {"auc_pr", eval::auc_pr(baseline, test.y)}};

  if (b.gbdt) {
    auto imp = gbdt::feature_importance(*b.gbdt);
    std::vector<std::pair<std::string, double>> ranked(imp.begin(), imp.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](auto& a, auto& c) { return a.second > c.second; });
    json top = json::array();
    for (std::size_t i = 0; i < ranked.size() && i < 15; ++i) top.push_back({{"feature", ranked[i].first}, {"importance", ranked[i].second}});
    report["gbdt_top_features"] = std::move(top);
  }
  if (b.mode == bundle::Mode::stack) {
    const auto shares = stack::component_importance(*b.lr);
    report["component_importance"] = {{"gbdt_share", shares.gbdt_share}, {"mpg_share", shares.mpg_share}};
  }

  const auto metrics_path = dir / "metrics.json";
  const auto roc_path = dir / "roc.csv";
  const auto pr_path = dir / "pr.csv";
  const auto buckets_path = dir / "buckets.csv";
  write_json(metrics_path, report);
  with_code("E_IO", [&] {
    eval::write_curve_csv(eval::roc_curve(scores, test.y), roc_path);
    eval::write_curve_csv(eval::pr_curve(scores, test.y), pr_path);
    return 0;
  });
  const auto rep = eval::bucket_report(scores, test.y, config.evaluate.ranges);
  std::string csv = "range,n_called,n_ordered,pct_orders\n";
  auto row = [&](const std::string& label, const eval::BucketRow& r) {
    char pct[32];
    std::snprintf(pct, sizeof pct, "%.2f", r.pct_orders);
    csv += label + "," + std::to_string(r.n_called) + "," + std::to_string(r.n_ordered) + "," + pct + "\n";
  };
  for (const auto& r : rep.rows) row(r.label(), r);
  row("total", rep.total);
  write_text(buckets_path, csv);

  std::vector<fs::path> written{metrics_path, roc_path, pr_path, buckets_path};
  update_manifest(config, written);
  return written;
}

int run(int argc, char** argv) {
  CLI::App app{"Purchase propensity toolkit: simulate, featurize, train, cross-validate, score and evaluate."};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string run_dir, events_path, events_format, bundle_path;
  unsigned threads = 0;
  app.add_option("-c,--config", config_path, "JSON config (default: $PROPENSITY_CONFIG)");
  app.add_option("--run-dir", run_dir, "Directory for outputs and the manifest");
  app.add_option("--events", events_path, "Event log (JSONL file or CSV directory)");
  app.add_option("--format", events_format, "Event log format: jsonl or csv");
  app.add_option("--bundle", bundle_path, "Model bundle path");
  app.add_option("--threads", threads, "Worker threads (0 = all cores)");

  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic event log with ground truth");
  std::optional<std::size_t> customers, products;
  std::optional<double> days, theta;
  std::optional<std::uint64_t> sim_seed;
  simulate->add_option("--customers", customers, "Number of customers");
  simulate->add_option("--products", products, "Number of products (default peaks)");
  simulate->add_option("--days", days, "Horizon in days");
  simulate->add_option("--theta", theta, "Engagement signal strength");
  simulate->add_option("--seed", sim_seed, "Random seed");

  auto* featurize = app.add_subcommand("featurize", "Build the encoded snapshot dataset as CSV");
  auto* train = app.add_subcommand("train", "Fit a model bundle");
  std::string mode, cv_params;
  train->add_option("--mode", mode, "gbdt, mpg or stack")->check(CLI::IsMember({"gbdt", "mpg", "stack"}));
  app.add_option("--cv-params", cv_params, "Best-parameter file written by cv (train and evaluate)");
  auto* cvcmd = app.add_subcommand("cv", "Grid-search gbdt hyperparameters by stratified k-fold");
  auto* score = app.add_subcommand("score", "Rank customers by purchase probability");
  std::optional<TimestampMs> as_of;
  score->add_option("--as-of", as_of, "Scoring time, epoch milliseconds (default: end of log)");
  auto* evaluate = app.add_subcommand("evaluate", "Metrics, curves and buckets on the test split");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[E_USAGE]: " << e.what() << '\n';
    return 2;
  }

  try {
    if (config_path.empty())
      if (const char* env = std::getenv("PROPENSITY_CONFIG")) config_path = env;
    json j = config_path.empty() ? json::object() : read_json(config_path, "E_CONFIG");
    if (!j.is_object()) fail("E_CONFIG", "config must be a JSON object");
    if (!run_dir.empty()) j["run_dir"] = run_dir;
    if (!events_path.empty()) j["events"] = events_path;
    if (!events_format.empty()) j["events_format"] = events_format;
    if (!bundle_path.empty()) j["bundle"] = bundle_path;
    if (customers) j["simulate"]["n_customers"] = *customers;
    if (products) {
      j["simulate"]["n_products"] = *products;
      if (j["simulate"].contains("products")) j["simulate"].erase("products");
    }
    if (days) j["simulate"]["horizon_days"] = *days;
    if (theta) j["simulate"]["theta"] = *theta;
    if (sim_seed) j["simulate"]["seed"] = *sim_seed;
    if (!mode.empty()) j["train"]["mode"] = mode;
    if (!cv_params.empty()) j["train"]["cv_params"] = cv_params;
    if (as_of) j["score"]["as_of_ms"] = *as_of;

    const auto config = config_from_json(j);
    set_thread_count(threads);
    fs::create_directories(config.run_dir);

    std::vector<fs::path> written;
    if (*simulate) written = cmd_simulate(config);
    else if (*featurize) written = cmd_featurize(config);
    else if (*train) written = cmd_train(config);
    else if (*cvcmd) written = cmd_cv(config);
    else if (*score) written = cmd_score(config);
    else if (*evaluate) written = cmd_evaluate(config);
    for (const auto& p : written) std::cout << p.generic_string() << '\n';
    return 0;
  } catch (const CliError& e) {
    std::cerr << "error[" << e.code() << "]: " << e.what() << '\n';
  } catch (const Error& e) {
    std::cerr << "error[E_RUNTIME]: " << e.what() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error[E_INTERNAL]: " << e.what() << '\n';
  }
  return 1;
}

}  // namespace propensity::cli
