#pragma once

#include <yaml-cpp/yaml.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "storval/error.hpp"
#include "storval/evaluation.hpp"
#include "storval/markov.hpp"
#include "storval/priceseries.hpp"
#include "storval/storage.hpp"

namespace storval {

/// Residual model written directly in the configuration instead of being
/// calibrated from price data.
struct InlineModel {
  OUParams params;
  std::vector<double> mean_curve;  // T + 1 log-price means
};

enum class OuGranularity { Daily, Hourly };

struct SweepBlock {
  SweepParameter parameter = SweepParameter::Capacity;
  std::vector<double> values;
  std::vector<double> rhos;
  std::size_t se_scenarios = 0;
};

/// Parsed and validated run configuration.
struct RunConfig {
  std::filesystem::path source;  // the configuration file itself
  std::string text;              // its raw contents, hashed for provenance

  std::optional<std::filesystem::path> data_path;
  CsvColumns columns;
  DailyAggregation daily;
  OuGranularity granularity = OuGranularity::Daily;
  std::optional<std::string> start_date;

  std::optional<InlineModel> model;
  double xi0 = 0.0;

  int quadrature_points = 8;
  SamplingVariance sampling = SamplingVariance::Innovation;

  StorageSpec storage;
  TrainOptions train;

  std::size_t scenarios = 1000;
  SimulationMode mode = SimulationMode::OutOfSample;
  std::vector<double> simulation_rhos;
  std::optional<double> kde_bandwidth;

  std::vector<SweepBlock> sweeps;
  std::filesystem::path output = "out";

  int horizon() const { return storage.horizon; }
};

namespace detail {

class ConfigReader {
 public:
  explicit ConfigReader(std::string prefix) : prefix_(std::move(prefix)) {}

  [[noreturn]] void fail(const std::string& field, const std::string& why) const {
    throw ValidationError("config: " + prefix_ + field + ": " + why);
  }

  void check_keys(const YAML::Node& node, const std::set<std::string>& allowed, const std::string& where) const {
    if (!node) return;
    if (!node.IsMap()) fail(where, "must be a mapping");
    for (const auto& kv : node) {
      const auto key = kv.first.as<std::string>();
      if (!allowed.count(key)) fail(where.empty() ? key : where + "." + key, "unknown key");
    }
  }

  template <typename T>
  std::optional<T> get(const YAML::Node& node, const std::string& key, const std::string& field) const {
    if (!node || !node[key]) return std::nullopt;
    try {
      return node[key].as<T>();
    } catch (const YAML::Exception&) {
      fail(field, "has the wrong type");
    }
  }

  std::vector<double> numbers(const YAML::Node& node, const std::string& field) const {
    if (!node.IsSequence()) fail(field, "must be a list of numbers");
    std::vector<double> out;
    for (const auto& v : node) {
      try {
        out.push_back(v.as<double>());
      } catch (const YAML::Exception&) {
        fail(field, "must be a list of numbers");
      }
    }
    return out;
  }

 private:
  std::string prefix_;
};

}  // namespace detail

/**
 * @brief Loads a YAML run configuration.
 *
 * Relative paths are resolved against the directory of the file. Every
 * field is checked eagerly and problems are reported as
 * "config: <field>: <reason>".
 */
inline RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ValidationError("config file not found: " + path.string());
  RunConfig cfg;
  cfg.source = path;
  {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    cfg.text = os.str();
  }
  YAML::Node root;
  try {
    root = YAML::Load(cfg.text);
  } catch (const YAML::Exception& e) {
    throw ValidationError("config: " + path.string() + ": " + e.what());
  }
  if (!root.IsMap()) throw ValidationError("config: top level must be a mapping");

  const detail::ConfigReader rd("");
  rd.check_keys(root,
                {"data", "calibration", "model", "discretization", "horizon", "training", "storage", "simulation",
                 "sweeps", "output"},
                "");
  const auto base = path.parent_path();
  const auto resolve = [&](const std::string& p) {
    const std::filesystem::path q(p);
    return (q.is_absolute() ? q : base / q).lexically_normal();
  };

  if (const auto data = root["data"]) {
    rd.check_keys(data, {"prices", "timestamp_column", "price_column"}, "data");
    if (auto p = rd.get<std::string>(data, "prices", "data.prices")) {
      cfg.data_path = resolve(*p);
      if (!std::filesystem::exists(*cfg.data_path)) rd.fail("data.prices", "file not found: " + cfg.data_path->string());
    }
    if (auto c = rd.get<std::string>(data, "timestamp_column", "data.timestamp_column")) cfg.columns.timestamp = *c;
    if (auto c = rd.get<std::string>(data, "price_column", "data.price_column")) cfg.columns.price = *c;
  }

  if (const auto cal = root["calibration"]) {
    rd.check_keys(cal, {"daily_rule", "fixed_hour", "ou_granularity", "start_date"}, "calibration");
    if (auto r = rd.get<std::string>(cal, "daily_rule", "calibration.daily_rule")) {
      if (*r == "daily_mean") cfg.daily.rule = DailyRule::DailyMean;
      else if (*r == "fixed_hour") cfg.daily.rule = DailyRule::FixedHour;
      else rd.fail("calibration.daily_rule", "must be daily_mean or fixed_hour");
    }
    if (auto h = rd.get<int>(cal, "fixed_hour", "calibration.fixed_hour")) {
      if (*h < 0 || *h > 23) rd.fail("calibration.fixed_hour", "must lie in [0, 23]");
      cfg.daily.hour = *h;
    }
    if (auto g = rd.get<std::string>(cal, "ou_granularity", "calibration.ou_granularity")) {
      if (*g == "daily") cfg.granularity = OuGranularity::Daily;
      else if (*g == "hourly") cfg.granularity = OuGranularity::Hourly;
      else rd.fail("calibration.ou_granularity", "must be daily or hourly");
    }
    if (auto d = rd.get<std::string>(cal, "start_date", "calibration.start_date")) {
      try {
        (void)calendar::parse_day(*d);
      } catch (const Error&) {
        rd.fail("calibration.start_date", "must be a date YYYY-MM-DD");
      }
      cfg.start_date = *d;
    }
  }

  if (auto h = rd.get<int>(root, "horizon", "horizon")) cfg.storage.horizon = *h;
  if (cfg.storage.horizon < 1) rd.fail("horizon", "must be at least 1");

  if (const auto model = root["model"]) {
    rd.check_keys(model, {"a", "sigma", "mean_curve", "xi0"}, "model");
    InlineModel m;
    const auto a = rd.get<double>(model, "a", "model.a");
    const auto sigma = rd.get<double>(model, "sigma", "model.sigma");
    if (!a) rd.fail("model.a", "is required");
    if (!sigma) rd.fail("model.sigma", "is required");
    m.params = {*a, *sigma};
    if (!(m.params.sigma > 0.0)) rd.fail("model.sigma", "must be positive");
    if (!m.params.stationary()) rd.fail("model.a", "must satisfy |1 - a| < 1");
    if (!model["mean_curve"]) rd.fail("model.mean_curve", "is required");
    m.mean_curve = rd.numbers(model["mean_curve"], "model.mean_curve");
    if (m.mean_curve.size() != static_cast<std::size_t>(cfg.storage.horizon) + 1) {
      rd.fail("model.mean_curve", "needs horizon + 1 = " + std::to_string(cfg.storage.horizon + 1) + " values, got " +
                                      std::to_string(m.mean_curve.size()));
    }
    if (auto x = rd.get<double>(model, "xi0", "model.xi0")) cfg.xi0 = *x;
    cfg.model = std::move(m);
  }
  if (!cfg.model && !cfg.data_path) rd.fail("data.prices", "is required unless a model block is given");

  if (const auto disc = root["discretization"]) {
    rd.check_keys(disc, {"quadrature_points", "sampling", "xi0"}, "discretization");
    if (auto n = rd.get<int>(disc, "quadrature_points", "discretization.quadrature_points")) cfg.quadrature_points = *n;
    if (auto s = rd.get<std::string>(disc, "sampling", "discretization.sampling")) {
      if (*s == "innovation") cfg.sampling = SamplingVariance::Innovation;
      else if (*s == "stationary") cfg.sampling = SamplingVariance::Stationary;
      else rd.fail("discretization.sampling", "must be innovation or stationary");
    }
    if (auto x = rd.get<double>(disc, "xi0", "discretization.xi0")) cfg.xi0 = *x;
  }
  if (cfg.quadrature_points < 1 || cfg.quadrature_points > kMaxQuadraturePoints) {
    rd.fail("discretization.quadrature_points", "must lie in [1, " + std::to_string(kMaxQuadraturePoints) + "]");
  }

  // Wall times stay out of the report unless asked for, so reruns produce
  // identical files.
  cfg.train.record_timings = false;
  if (const auto tr = root["training"]) {
    rd.check_keys(tr,
                  {"iterations", "seed", "stall_tolerance", "stall_window", "forward_paths", "skip_duplicate_cuts",
                   "all_nodes", "record_timings"},
                  "training");
    if (auto v = rd.get<int>(tr, "iterations", "training.iterations")) cfg.train.iterations = *v;
    if (auto v = rd.get<std::uint64_t>(tr, "seed", "training.seed")) cfg.train.seed = *v;
    if (auto v = rd.get<double>(tr, "stall_tolerance", "training.stall_tolerance")) cfg.train.stall_tolerance = *v;
    if (auto v = rd.get<int>(tr, "stall_window", "training.stall_window")) cfg.train.stall_window = *v;
    if (auto v = rd.get<int>(tr, "forward_paths", "training.forward_paths")) cfg.train.forward_paths = *v;
    if (auto v = rd.get<bool>(tr, "skip_duplicate_cuts", "training.skip_duplicate_cuts")) cfg.train.skip_duplicate_cuts = *v;
    if (auto v = rd.get<bool>(tr, "all_nodes", "training.all_nodes")) cfg.train.all_nodes = *v;
    if (auto v = rd.get<bool>(tr, "record_timings", "training.record_timings")) cfg.train.record_timings = *v;
  }
  if (cfg.train.iterations < 1) rd.fail("training.iterations", "must be at least 1");
  if (cfg.train.stall_tolerance < 0.0) rd.fail("training.stall_tolerance", "must be >= 0");
  if (cfg.train.stall_window < 1) rd.fail("training.stall_window", "must be at least 1");
  if (cfg.train.forward_paths < 1) rd.fail("training.forward_paths", "must be at least 1");

  if (const auto st = root["storage"]) {
    rd.check_keys(st, {"capacity", "charge_max", "discharge_min", "loss", "interest", "rho", "x0"}, "storage");
    if (auto v = rd.get<double>(st, "capacity", "storage.capacity")) cfg.storage.capacity = *v;
    if (auto v = rd.get<double>(st, "charge_max", "storage.charge_max")) cfg.storage.charge_max = *v;
    if (auto v = rd.get<double>(st, "discharge_min", "storage.discharge_min")) cfg.storage.discharge_min = *v;
    if (auto v = rd.get<double>(st, "loss", "storage.loss")) cfg.storage.loss = *v;
    if (auto v = rd.get<double>(st, "interest", "storage.interest")) cfg.storage.interest = *v;
    if (auto v = rd.get<double>(st, "rho", "storage.rho")) cfg.storage.rho = *v;
    if (auto v = rd.get<double>(st, "x0", "storage.x0")) cfg.storage.x0 = *v;
  }
  try {
    cfg.storage.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }

  if (const auto sim = root["simulation"]) {
    rd.check_keys(sim, {"scenarios", "mode", "rhos", "kde_bandwidth"}, "simulation");
    if (auto v = rd.get<long long>(sim, "scenarios", "simulation.scenarios")) {
      if (*v < 1) rd.fail("simulation.scenarios", "must be at least 1");
      cfg.scenarios = static_cast<std::size_t>(*v);
    }
    if (auto m = rd.get<std::string>(sim, "mode", "simulation.mode")) {
      if (*m == "in_sample") cfg.mode = SimulationMode::InSample;
      else if (*m == "out_of_sample") cfg.mode = SimulationMode::OutOfSample;
      else rd.fail("simulation.mode", "must be in_sample or out_of_sample");
    }
    if (sim["rhos"]) {
      cfg.simulation_rhos = rd.numbers(sim["rhos"], "simulation.rhos");
      for (double r : cfg.simulation_rhos)
        if (!(r > 0.0)) rd.fail("simulation.rhos", "values must be positive");
    }
    if (sim["kde_bandwidth"]) {
      const auto text = sim["kde_bandwidth"].as<std::string>();
      if (text != "silverman") {
        const auto h = rd.get<double>(sim, "kde_bandwidth", "simulation.kde_bandwidth");
        if (!(*h > 0.0)) rd.fail("simulation.kde_bandwidth", "must be silverman or a positive number");
        cfg.kde_bandwidth = *h;
      }
    }
  }
  if (cfg.simulation_rhos.empty()) cfg.simulation_rhos = {cfg.storage.rho};

  if (const auto sweeps = root["sweeps"]) {
    if (!sweeps.IsSequence()) rd.fail("sweeps", "must be a list");
    for (std::size_t k = 0; k < sweeps.size(); ++k) {
      const std::string where = "sweeps[" + std::to_string(k) + "]";
      const auto node = sweeps[k];
      rd.check_keys(node, {"parameter", "values", "rho", "se_scenarios"}, where);
      SweepBlock b;
      const auto name = rd.get<std::string>(node, "parameter", where + ".parameter");
      if (!name) rd.fail(where + ".parameter", "is required");
      try {
        b.parameter = parse_sweep_parameter(*name);
      } catch (const ValidationError& e) {
        rd.fail(where + ".parameter", e.what());
      }
      if (!node["values"]) rd.fail(where + ".values", "is required");
      b.values = rd.numbers(node["values"], where + ".values");
      if (b.values.empty()) rd.fail(where + ".values", "must not be empty");
      for (double v : b.values) {
        const bool ok = b.parameter == SweepParameter::Capacity || b.parameter == SweepParameter::ChargeRateFraction
                            ? v >= 0.0
                            : v > 0.0;
        if (!ok || !std::isfinite(v)) rd.fail(where + ".values", "value " + std::to_string(v) + " is out of range");
      }
      if (node["rho"]) b.rhos = rd.numbers(node["rho"], where + ".rho");
      for (double r : b.rhos)
        if (!(r > 0.0)) rd.fail(where + ".rho", "values must be positive");
      if (auto n = rd.get<long long>(node, "se_scenarios", where + ".se_scenarios")) {
        if (*n < 0) rd.fail(where + ".se_scenarios", "must be >= 0");
        b.se_scenarios = static_cast<std::size_t>(*n);
      }
      cfg.sweeps.push_back(std::move(b));
    }
  }

  if (auto out = rd.get<std::string>(root, "output", "output")) cfg.output = resolve(*out);
  else cfg.output = resolve("out");
  return cfg;
}

}  // namespace storval
