#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "storval/calendar.hpp"
#include "storval/error.hpp"

namespace storval {

struct PricePoint {
  HourStamp time;
  double log_price;
};

/// Hourly log-prices ordered by time. Gaps between consecutive entries are
/// allowed; `gap_hours` counts the missing hours.
struct PriceSeries {
  std::vector<PricePoint> entries;
  std::size_t gap_hours = 0;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

struct ResidualPoint {
  HourStamp time;
  double value;
};

/// Deterministic seasonal mean of the log-price, split into annual, weekly and
/// daily components.
struct SeasonalProfile {
  static constexpr int kWeeks = 53;
  static constexpr int kDays = 7;
  static constexpr int kHours = 24;

  std::array<double, kWeeks> week_of_year_mean{};
  std::array<double, kDays> day_of_week_mean{};
  std::array<double, kHours> hour_of_day_mean{};

  double mean_at(HourStamp t) const {
    const auto day = calendar::day_of(t);
    return week_of_year_mean[calendar::week_bucket(day)] +
           day_of_week_mean[calendar::iso_weekday_index(day)] +
           hour_of_day_mean[calendar::hour_of_day(t)];
  }
};

struct Decomposition {
  SeasonalProfile profile;
  std::vector<ResidualPoint> residuals;
};

/// Residual dynamics xi[t+1] = (1 - a) xi[t] + sigma eps[t].
struct OUParams {
  double a = 0.0;
  double sigma = 0.0;

  bool stationary() const { return std::abs(1.0 - a) < 1.0; }

  void validate() const {
    if (!std::isfinite(a) || !std::isfinite(sigma)) throw ValidationError("OU parameters must be finite");
    if (!(sigma > 0.0)) throw ValidationError("OU sigma must be positive");
    if (!stationary()) throw ValidationError("OU process is not stationary: |1 - a| >= 1");
  }
};

struct OUFit {
  OUParams params;
  std::size_t pairs = 0;
  std::optional<std::string> warning;
};

struct CsvColumns {
  std::string timestamp = "timestamp";
  std::string price = "price_eur_mwh";
};

namespace detail {

inline std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c) && c != '"'; };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

/// Sorts entries by time, rejects duplicate stamps and recounts gaps.
inline void normalize(PriceSeries& series) {
  auto& e = series.entries;
  std::stable_sort(e.begin(), e.end(), [](const PricePoint& l, const PricePoint& r) { return l.time < r.time; });
  series.gap_hours = 0;
  for (std::size_t i = 1; i < e.size(); ++i) {
    const auto step = (e[i].time - e[i - 1].time).count();
    if (step == 0) throw ValidationError("duplicate timestamp " + calendar::format_timestamp(e[i].time));
    series.gap_hours += static_cast<std::size_t>(step - 1);
  }
  for (const auto& p : e) {
    if (!std::isfinite(p.log_price)) throw ValidationError("non-finite log price at " + calendar::format_timestamp(p.time));
  }
}

/// Reads a CSV of hourly prices and returns the log-transformed series.
/// Data rows are numbered from 1 in error messages.
inline PriceSeries load_prices(const std::string& path, const CsvColumns& columns = {}) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open price file '" + path + "'");

  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty()) throw ValidationError("price file '" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_csv_line(line);
  const auto find = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ValidationError("column '" + name + "' not found in '" + path + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t ts_col = find(columns.timestamp);
  const std::size_t price_col = find(columns.price);

  PriceSeries series;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    ++row;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() <= std::max(ts_col, price_col)) {
      throw ValidationError("row " + std::to_string(row) + ": too few columns");
    }
    HourStamp stamp;
    try {
      stamp = calendar::parse_timestamp(cells[ts_col]);
    } catch (const ValidationError& e) {
      throw ValidationError("row " + std::to_string(row) + ": " + e.what());
    }
    double price = 0.0;
    std::size_t used = 0;
    try {
      price = std::stod(cells[price_col], &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != cells[price_col].size()) {
      throw ValidationError("row " + std::to_string(row) + ": unparseable price '" + cells[price_col] + "'");
    }
    if (!(price > 0.0) || !std::isfinite(price)) {
      throw ValidationError("row " + std::to_string(row) + ": price " + cells[price_col] +
                            " is not positive, log price undefined");
    }
    series.entries.push_back({stamp, std::log(price)});
  }
  if (series.empty()) throw ValidationError("price file '" + path + "' has no data rows");
  normalize(series);
  return series;
}

/// Removes week-of-year, day-of-week and hour-of-day averages in that order.
/// Each step averages the output of the previous one over the available
/// observations; missing hours simply do not contribute.
inline Decomposition decompose(const PriceSeries& series) {
  if (series.empty() || (series.entries.back().time - series.entries.front().time).count() + 1 < 168) {
    throw ValidationError("decomposition needs at least one full week of data");
  }
  const auto& e = series.entries;
  const std::size_t n = e.size();

  std::vector<int> week(n), dow(n), hod(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto day = calendar::day_of(e[k].time);
    week[k] = calendar::week_bucket(day);
    dow[k] = calendar::iso_weekday_index(day);
    hod[k] = calendar::hour_of_day(e[k].time);
  }

  // Averages `data` over the groups in `key` and subtracts them in place.
  const auto demean = [n](std::vector<double>& data, const std::vector<int>& key, auto& means) {
    std::vector<double> sum(means.size(), 0.0);
    std::vector<std::size_t> count(means.size(), 0);
    for (std::size_t k = 0; k < n; ++k) {
      sum[key[k]] += data[k];
      ++count[key[k]];
    }
    for (std::size_t g = 0; g < means.size(); ++g) means[g] = count[g] ? sum[g] / static_cast<double>(count[g]) : 0.0;
    for (std::size_t k = 0; k < n; ++k) data[k] -= means[key[k]];
  };

  Decomposition out;
  std::vector<double> work(n);
  for (std::size_t k = 0; k < n; ++k) work[k] = e[k].log_price;
  demean(work, week, out.profile.week_of_year_mean);
  demean(work, dow, out.profile.day_of_week_mean);
  demean(work, hod, out.profile.hour_of_day_mean);

  out.residuals.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double m = out.profile.week_of_year_mean[week[k]] + out.profile.day_of_week_mean[dow[k]] +
                     out.profile.hour_of_day_mean[hod[k]];
    out.residuals.push_back({e[k].time, e[k].log_price - m});
  }
  return out;
}

namespace detail {

/// Residual spread below which a series counts as constant. Residuals are
/// log-price deviations, so a constant input leaves only rounding noise
/// of order 1e-16.
inline constexpr double kConstantSpread = 1e-12;

template <typename It, typename Get>
bool nearly_constant(It first, It last, Get get) {
  if (first == last) return true;
  const auto [lo, hi] = std::minmax_element(first, last, [&](const auto& a, const auto& b) { return get(a) < get(b); });
  return get(*hi) - get(*lo) <= kConstantSpread;
}

// Regression of dxi = y - x on x without intercept.
inline OUFit fit_pairs(const std::vector<double>& x, const std::vector<double>& y, bool all_equal) {
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxx += x[k] * x[k];
    sxy += x[k] * (y[k] - x[k]);
  }
  if (all_equal || sxx == 0.0) throw ValidationError("degenerate OU regression: residuals carry no variation");
  const double slope = sxy / sxx;
  double ss = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double r = (y[k] - x[k]) - slope * x[k];
    ss += r * r;
  }
  OUFit fit;
  fit.pairs = x.size();
  fit.params = {-slope, std::sqrt(ss / static_cast<double>(x.size() - 1))};
  if (!(fit.params.sigma > 0.0)) throw ValidationError("degenerate OU regression: exact fit leaves sigma = 0");
  if (!fit.params.stationary()) {
    fit.warning = "estimated |1 - a| = " + std::to_string(std::abs(1.0 - fit.params.a)) + " >= 1, process not stationary";
  }
  return fit;
}

}  // namespace detail

/// Least-squares fit of the increment regression dxi = -a xi + sigma eps
/// (no intercept); sigma uses the n - 1 denominator. `values` are
/// consecutive observations.
inline OUFit fit_ou(std::span<const double> values) {
  if (values.size() < 3) throw ValidationError("OU fit needs at least 3 residual points");
  std::vector<double> x(values.begin(), values.end() - 1), y(values.begin() + 1, values.end());
  const bool all_equal = detail::nearly_constant(values.begin(), values.end(), [](double v) { return v; });
  return detail::fit_pairs(x, y, all_equal);
}

/// Timestamped variant: only pairs exactly one hour apart enter the regression.
inline OUFit fit_ou(std::span<const ResidualPoint> residuals) {
  std::vector<double> x, y;
  for (std::size_t k = 0; k + 1 < residuals.size(); ++k) {
    if ((residuals[k + 1].time - residuals[k].time).count() != 1) continue;
    x.push_back(residuals[k].value);
    y.push_back(residuals[k + 1].value);
  }
  if (x.size() < 2) throw ValidationError("OU fit needs at least 3 consecutive residual points");
  const bool all_equal =
      detail::nearly_constant(residuals.begin(), residuals.end(), [](const ResidualPoint& r) { return r.value; });
  return detail::fit_pairs(x, y, all_equal);
}

/// Draws a residual path of length horizon + 1 starting at xi0.
inline std::vector<double> simulate_ou(const OUParams& params, double xi0, int horizon, std::uint64_t seed) {
  if (!(params.sigma > 0.0)) throw ValidationError("OU sigma must be positive");
  if (horizon < 1) throw ValidationError("simulation horizon must be at least 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> path(static_cast<std::size_t>(horizon) + 1);
  path[0] = xi0;
  for (int t = 0; t < horizon; ++t) path[t + 1] = (1.0 - params.a) * path[t] + params.sigma * normal(rng);
  return path;
}

enum class DailyRule { DailyMean, FixedHour };

struct DailyAggregation {
  DailyRule rule = DailyRule::DailyMean;
  int hour = 12;  // only used by FixedHour
};

struct DailyPoint {
  std::chrono::sys_days day;
  double mean;      // seasonal mean m for the decision day
  double residual;  // residual anchor for the same day
};

/// Maps the hourly model onto daily decision stages.
inline std::vector<DailyPoint> daily_series(const PriceSeries& series, const SeasonalProfile& profile,
                                            DailyAggregation rule = {}) {
  if (series.empty()) throw ValidationError("daily aggregation of an empty series");
  if (rule.rule == DailyRule::FixedHour && (rule.hour < 0 || rule.hour > 23)) {
    throw ValidationError("fixed hour must lie in [0, 23]");
  }
  std::vector<DailyPoint> out;
  std::size_t k = 0;
  const auto& e = series.entries;
  while (k < e.size()) {
    const auto day = calendar::day_of(e[k].time);
    double resid_sum = 0.0;
    std::size_t count = 0;
    std::optional<double> at_hour;
    for (; k < e.size() && calendar::day_of(e[k].time) == day; ++k) {
      const double r = e[k].log_price - profile.mean_at(e[k].time);
      resid_sum += r;
      ++count;
      if (calendar::hour_of_day(e[k].time) == rule.hour) at_hour = r;
    }
    DailyPoint p{day, 0.0, 0.0};
    if (rule.rule == DailyRule::DailyMean) {
      for (int h = 0; h < 24; ++h) p.mean += profile.mean_at(day + std::chrono::hours{h});
      p.mean /= 24.0;
      p.residual = resid_sum / static_cast<double>(count);
    } else {
      if (!at_hour) {
        throw ValidationError("day " + calendar::format_day(day) + " is missing hour " + std::to_string(rule.hour));
      }
      p.mean = profile.mean_at(day + std::chrono::hours{rule.hour});
      p.residual = *at_hour;
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace storval
