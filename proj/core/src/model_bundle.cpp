#include "propensity/model_bundle.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "propensity/parallel.hpp"

namespace propensity::bundle {
namespace {

using nlohmann::json;

double mpg_any_purchase(const Bundle& b, const events::EventLog& log, const std::string& cid, TimestampMs as_of) {
  double none = 1.0;
  for (const auto& [pid, p] : mpg::score_customer_products(log, cid, as_of, b.priors, b.mpg_window_days)) none *= 1.0 - p;
  return 1.0 - none;
}

void require_models(const Bundle& b) {
  if ((b.mode == Mode::gbdt || b.mode == Mode::stack) && !b.gbdt) throw Error("model bundle lacks its gbdt model");
  if (b.mode == Mode::stack && !b.lr) throw Error("model bundle lacks its meta-learner");
}

}  // namespace

std::string_view to_string(Mode m) noexcept {
  switch (m) {
    case Mode::gbdt: return "gbdt";
    case Mode::mpg: return "mpg";
    case Mode::stack: return "stack";
  }
  return "stack";
}

Mode parse_mode(std::string_view name) {
  if (name == "gbdt") return Mode::gbdt;
  if (name == "mpg") return Mode::mpg;
  if (name == "stack") return Mode::stack;
  throw Error("unknown model mode '" + std::string(name) + "' (expected gbdt, mpg or stack)");
}

Bundle from_stack(const stack::StackModel& model, std::string config_hash) {
  Bundle b;
  b.mode = Mode::stack;
  b.config_hash = std::move(config_hash);
  b.encoding = model.encoding;
  b.priors = model.priors;
  b.mpg_window_days = model.window_days;
  b.gbdt = model.gbdt;
  b.lr = model.lr;
  return b;
}

stack::StackModel to_stack(const Bundle& b) {
  if (b.mode != Mode::stack || !b.gbdt || !b.lr) throw Error("model bundle does not hold a stacked model");
  return {b.encoding, b.priors, *b.gbdt, *b.lr, b.mpg_window_days};
}

std::vector<double> score_rows(const Bundle& b, const features::EncodedDataset& data, const events::EventLog& log) {
  require_models(b);
  switch (b.mode) {
    case Mode::gbdt: return b.gbdt->predict_proba(data.x);
    case Mode::stack: return stack::predict_rows(to_stack(b), data, log);
    case Mode::mpg: break;
  }
  std::vector<double> out(data.size());
  parallel_for(data.size(), [&](std::size_t i) { out[i] = mpg_any_purchase(b, log, data.customer_ids[i], data.as_of[i]); });
  return out;
}

double score_customer(const Bundle& b, const events::EventLog& log, const std::string& customer_id, TimestampMs as_of) {
  require_models(b);
  switch (b.mode) {
    case Mode::gbdt: return b.gbdt->predict_proba(b.encoding.encode(features::extract_features(log, customer_id, as_of)));
    case Mode::stack: return stack::predict_stack(to_stack(b), log, customer_id, as_of);
    case Mode::mpg: break;
  }
  if (!log.profile_of(customer_id) && !log.events_of(customer_id)) throw Error("unknown customer '" + customer_id + "'");
  return mpg_any_purchase(b, log, customer_id, as_of);
}

json to_json(const features::EncodingSpec& spec) {
  json brands = json::array();
  for (const auto& slot : spec.brand_frequency) brands.push_back(slot);
  return {{"activation_levels", spec.activation_levels}, {"brand_frequency", std::move(brands)}};
}

features::EncodingSpec encoding_from_json(const json& j) {
  features::EncodingSpec spec;
  spec.activation_levels = j.at("activation_levels").get<std::vector<std::string>>();
  const auto& brands = j.at("brand_frequency");
  if (!brands.is_array() || brands.size() != spec.brand_frequency.size())
    throw Error("encoding: brand_frequency must hold three maps");
  for (std::size_t s = 0; s < spec.brand_frequency.size(); ++s)
    spec.brand_frequency[s] = brands[s].get<std::map<std::string, double>>();
  return spec;
}

json to_json(const Bundle& b) {
  json priors = json::array();
  for (const auto& [pid, p] : b.priors.products) priors.push_back(mpg::to_json(p));
  json j = {{"schema", kSchemaVersion},
            {"mode", to_string(b.mode)},
            {"config_hash", b.config_hash},
            {"encoding", to_json(b.encoding)},
            {"priors", std::move(priors)},
            {"fallback_prior", mpg::to_json(b.priors.fallback)},
            {"priors_as_of_ms", b.priors.fitted_as_of},
            {"mpg_window_days", b.mpg_window_days}};
  j["gbdt"] = b.gbdt ? gbdt::to_json(*b.gbdt) : json(nullptr);
  j["lr"] = b.lr ? lr::to_json(*b.lr) : json(nullptr);
  return j;
}

Bundle bundle_from_json(const json& j) {
  const int schema = j.at("schema").get<int>();
  if (schema != kSchemaVersion)
    throw Error("model bundle schema " + std::to_string(schema) + " does not match supported schema " +
                std::to_string(kSchemaVersion));
  Bundle b;
  b.mode = parse_mode(j.at("mode").get<std::string>());
  b.config_hash = j.value("config_hash", "");
  b.encoding = encoding_from_json(j.at("encoding"));
  for (const auto& p : j.at("priors")) {
    auto prior = mpg::prior_from_json(p);
    auto id = prior.product_id;
    b.priors.products.emplace(std::move(id), std::move(prior));
  }
  b.priors.fallback = mpg::prior_from_json(j.at("fallback_prior"));
  b.priors.fitted_as_of = j.value("priors_as_of_ms", TimestampMs{0});
  b.mpg_window_days = j.value("mpg_window_days", 2.0);
  if (j.contains("gbdt") && !j.at("gbdt").is_null()) b.gbdt = gbdt::model_from_json(j.at("gbdt"));
  if (j.contains("lr") && !j.at("lr").is_null()) b.lr = lr::model_from_json(j.at("lr"));
  require_models(b);
  return b;
}

void save(const Bundle& b, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json(b).dump(1) << '\n';
}

Bundle load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read model bundle " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error("model bundle " + path.string() + " is not valid JSON: " + e.what());
  }
  return bundle_from_json(j);
}

}  // namespace propensity::bundle
