#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "storval/error.hpp"
#include "storval/evaluation.hpp"
#include "storval/markov.hpp"
#include "storval/priceseries.hpp"
#include "storval/sddp.hpp"

#ifndef STORVAL_VERSION
#define STORVAL_VERSION "0.0.0"
#endif

namespace storval::io {

using json = nlohmann::json;

inline constexpr const char* kVersion = STORVAL_VERSION;

/// 64-bit FNV-1a, hex encoded.
inline std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

/// Stamp carried by every artifact.
struct Provenance {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string version = kVersion;

  json to_json() const { return {{"config_hash", config_hash}, {"seed", seed}, {"version", version}}; }

  /// Leading comment line of the CSV artifacts.
  std::string csv_comment() const {
    return "# config_hash=" + config_hash + " seed=" + std::to_string(seed) + " version=" + version + "\n";
  }
};

/// Writes to a temporary sibling and renames it over `path`.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline json parse_json_file(const std::filesystem::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": invalid JSON: " + e.what());
  }
}

/// Shortest text that reads back to the same double.
inline std::string number(double v) {
  if (v == 0.0) v = 0.0;  // no "-0"
  std::ostringstream os;
  os << std::setprecision(17) << v;
  double back = 0.0;
  for (int p = 6; p <= 17; ++p) {
    std::ostringstream trial;
    trial << std::setprecision(p) << v;
    std::istringstream(trial.str()) >> back;
    if (back == v) return trial.str();
  }
  return os.str();
}

// ---- calibration ------------------------------------------------------------

struct Calibration {
  SeasonalProfile profile;
  OUParams params;
  /// Hourly fit kept for reference when `params` come from daily anchors.
  std::optional<OUParams> hourly;
  std::optional<std::string> warning;
  /// Daily log-price means of the decision window, T + 1 values.
  std::vector<double> mean_curve;
  std::optional<std::string> start_date;
};

inline json to_json(const Calibration& c, const Provenance& p) {
  json j;
  j["week_of_year"] = std::vector<double>(c.profile.week_of_year_mean.begin(), c.profile.week_of_year_mean.end());
  j["day_of_week"] = std::vector<double>(c.profile.day_of_week_mean.begin(), c.profile.day_of_week_mean.end());
  j["hour_of_day"] = std::vector<double>(c.profile.hour_of_day_mean.begin(), c.profile.hour_of_day_mean.end());
  j["a"] = c.params.a;
  j["sigma"] = c.params.sigma;
  if (c.hourly) j["hourly"] = {{"a", c.hourly->a}, {"sigma", c.hourly->sigma}};
  if (c.warning) j["warning"] = *c.warning;
  j["mean_curve"] = c.mean_curve;
  if (c.start_date) j["start_date"] = *c.start_date;
  j["provenance"] = p.to_json();
  return j;
}

namespace detail {

template <std::size_t N>
void read_array(const json& j, const char* key, std::array<double, N>& out) {
  if (!j.contains(key) || !j[key].is_array() || j[key].size() != N) {
    throw ValidationError(std::string("calibration: '") + key + "' must be an array of " + std::to_string(N) +
                          " numbers");
  }
  for (std::size_t i = 0; i < N; ++i) out[i] = j[key][i].get<double>();
}

inline double read_number(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || !j[key].is_number()) throw ValidationError(where + ": '" + key + "' must be a number");
  return j[key].get<double>();
}

}  // namespace detail

inline Calibration calibration_from_json(const json& j) {
  Calibration c;
  detail::read_array(j, "week_of_year", c.profile.week_of_year_mean);
  detail::read_array(j, "day_of_week", c.profile.day_of_week_mean);
  detail::read_array(j, "hour_of_day", c.profile.hour_of_day_mean);
  c.params.a = detail::read_number(j, "a", "calibration");
  c.params.sigma = detail::read_number(j, "sigma", "calibration");
  if (j.contains("hourly")) {
    c.hourly = OUParams{detail::read_number(j["hourly"], "a", "calibration.hourly"),
                        detail::read_number(j["hourly"], "sigma", "calibration.hourly")};
  }
  try {
    if (j.contains("warning")) c.warning = j["warning"].get<std::string>();
    if (j.contains("mean_curve")) c.mean_curve = j["mean_curve"].get<std::vector<double>>();
    if (j.contains("start_date")) c.start_date = j["start_date"].get<std::string>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("calibration: ") + e.what());
  }
  return c;
}

// ---- chain ------------------------------------------------------------------

inline json to_json(const MarkovChain& chain, const Provenance& p) {
  json j;
  j["nodes"] = chain.nodes;
  json mats = json::array();
  for (const auto& m : chain.transitions) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(m.cols()));
      for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
      rows.push_back(row);
    }
    mats.push_back(rows);
  }
  j["transitions"] = mats;
  j["provenance"] = p.to_json();
  return j;
}

inline MarkovChain chain_from_json(const json& j) {
  MarkovChain chain;
  try {
    chain.nodes = j.at("nodes").get<std::vector<std::vector<double>>>();
    for (const auto& mat : j.at("transitions")) {
      const auto rows = mat.get<std::vector<std::vector<double>>>();
      Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (static_cast<Eigen::Index>(rows[r].size()) != m.cols()) throw ValidationError("chain: ragged transition matrix");
        for (std::size_t c = 0; c < rows[r].size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
      }
      chain.transitions.push_back(std::move(m));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("chain: ") + e.what());
  }
  chain.validate();
  return chain;
}

// ---- cuts -------------------------------------------------------------------

inline json to_json(const CutPool& pools, const Provenance& p) {
  json cuts = json::array();
  for (int t = 0; t <= pools.horizon(); ++t) {
    for (std::size_t i = 0; i < pools.node_count(t); ++i) {
      for (const Cut& c : pools.cuts(t, i)) {
        cuts.push_back({{"t", t},
                        {"node", i},
                        {"intercept", c.intercept},
                        {"slope", std::vector<double>(c.slope.data(), c.slope.data() + c.slope.size())}});
      }
    }
  }
  return {{"state_dim", pools.state_dim()}, {"horizon", pools.horizon()}, {"cuts", cuts}, {"provenance", p.to_json()}};
}

/// Reads cuts written by `to_json` (or a bare array of cut objects) into
/// pools shaped by `chain`.
inline CutPool cuts_from_json(const json& j, const MarkovChain& chain, Eigen::Index state_dim) {
  const json& cuts = j.is_array() ? j : j.at("cuts");
  CutPool pools(chain, state_dim);
  try {
    for (const auto& c : cuts) {
      const int t = c.at("t").get<int>();
      const auto node = c.at("node").get<std::size_t>();
      if (t < 0 || t > chain.horizon() || node >= chain.node_count(t)) {
        throw ValidationError("cuts: (t=" + std::to_string(t) + ", node=" + std::to_string(node) +
                              ") does not exist in the chain; were the cuts trained with another configuration?");
      }
      const auto slope = c.at("slope").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(slope.size()) != state_dim) throw ValidationError("cuts: slope has wrong dimension");
      pools.add(t, node, {c.at("intercept").get<double>(), Eigen::Map<const Eigen::VectorXd>(slope.data(), state_dim)});
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("cuts: ") + e.what());
  }
  for (int t = 0; t <= chain.horizon(); ++t)
    for (std::size_t i = 0; i < chain.node_count(t); ++i)
      if (pools.cuts(t, i).empty()) {
        throw ValidationError("cuts: pool (t=" + std::to_string(t) + ", node=" + std::to_string(i) + ") is empty");
      }
  return pools;
}

// ---- tables -----------------------------------------------------------------

inline std::string report_csv(const TrainReport& report, const Provenance& p) {
  std::ostringstream os;
  os << p.csv_comment() << "iteration,lower_bound,forward_cost,cuts,ms\n";
  for (const auto& r : report.iterations) {
    os << r.iteration << ',' << number(r.lower_bound) << ',' << number(r.forward_cost) << ',' << r.cuts << ','
       << number(r.ms) << '\n';
  }
  return os.str();
}

inline std::string wealth_csv(std::span<const double> wealth, const Provenance& p) {
  std::ostringstream os;
  os << p.csv_comment() << "scenario,terminal_wealth_eur\n";
  for (std::size_t k = 0; k < wealth.size(); ++k) os << k << ',' << number(wealth[k]) << '\n';
  return os.str();
}

inline std::string kde_csv(std::span<const KdePoint> curve, const Provenance& p) {
  std::ostringstream os;
  os << p.csv_comment() << "x,density\n";
  for (const auto& pt : curve) os << number(pt.x) << ',' << number(pt.density) << '\n';
  return os.str();
}

inline std::string sweep_csv(std::span<const SweepRow> rows, const Provenance& p) {
  std::ostringstream os;
  os << p.csv_comment() << "param,rho,price_eur,price_se_eur,phi,psi\n";
  for (const auto& r : rows) {
    os << number(r.value) << ',' << number(r.rho) << ',' << number(r.price) << ',' << number(r.price_se) << ','
       << number(r.phi) << ',' << number(r.psi) << '\n';
  }
  return os.str();
}

struct Valuation {
  double phi = 0.0;
  double psi = 0.0;
  double price = 0.0;
  double rho = 0.0;
  int horizon = 0;
  double interest = 0.0;
};

inline json to_json(const Valuation& v, const Provenance& p) {
  return {{"phi", v.phi},     {"psi", v.psi}, {"price_eur", v.price},         {"rho", v.rho},
          {"T", v.horizon}, {"r", v.interest}, {"provenance", p.to_json()}};
}

/// Pretty JSON text with a trailing newline.
inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace storval::io
