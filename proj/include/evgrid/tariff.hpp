#pragma once

// Day-ahead energy prices and the stacked dynamic network tariff.
//
// The network component has three bands (low, medium, high) whose edges sit
// at fixed fractions of the transformer rating. The capacity of each band at
// a step is whatever is left of it above the forecast non-EV loading, so a
// high forecast pushes EV charging into the dearer bands.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "evgrid/error.hpp"
#include "evgrid/grid.hpp"
#include "evgrid/units.hpp"

namespace evgrid {

inline constexpr int kBands = 3;
using BandArray = std::array<double, kBands>;  // indexed low, medium, high

struct DayAheadPrices {
  std::vector<double> eur_per_kwh;

  double at(int t) const { return eur_per_kwh.at(static_cast<std::size_t>(t)); }
  int size() const { return static_cast<int>(eur_per_kwh.size()); }
};

struct StackedTariff {
  BandArray fractions{0.6, 0.8, 1.0};
  BandArray prices{0.01, 0.05, 0.15};  // EUR/kWh
  std::vector<BandArray> envelopes_w;   // per step capacity of each band

  int horizon() const { return static_cast<int>(envelopes_w.size()); }
};

inline void validate_band_fractions(const BandArray& f) {
  double prev = 0.0;
  for (double v : f) {
    if (!(v > prev) || v > 1.0) {
      throw ParseError(fmt::format("band fractions must increase strictly within (0, 1]: got ({}, {}, {})", f[0], f[1], f[2]));
    }
    prev = v;
  }
}

inline void validate_band_prices(const BandArray& p) {
  if (!(p[0] < p[1] && p[1] < p[2])) {
    throw ParseError(fmt::format("band prices must satisfy low < medium < high: got ({}, {}, {})", p[0], p[1], p[2]));
  }
}

/// Band capacities for one forecast value. Band p spans (edge[p-1], edge[p]]
/// with the lowest band open below; its capacity is the part above the forecast.
inline BandArray band_capacities(double rated_w, const BandArray& fractions, double forecast_w) {
  BandArray caps{};
  double lower_edge = -std::numeric_limits<double>::infinity();
  for (int p = 0; p < kBands; ++p) {
    const double edge = fractions[p] * rated_w;
    caps[p] = std::max(0.0, edge - std::max(forecast_w, lower_edge));
    lower_edge = edge;
  }
  return caps;
}

inline std::vector<BandArray> build_envelopes(const Network& net, const BandArray& fractions,
                                              std::span<const double> forecast_w) {
  validate_band_fractions(fractions);
  if (static_cast<int>(forecast_w.size()) != net.horizon()) {
    throw Error(fmt::format("forecast length {} does not match horizon {}", forecast_w.size(), net.horizon()));
  }
  std::vector<BandArray> env;
  env.reserve(forecast_w.size());
  for (double f : forecast_w) env.push_back(band_capacities(net.transformer().rated_va, fractions, f));
  return env;
}

/// Stacked tariff whose envelopes follow the network's own base-load forecast.
inline StackedTariff make_stacked_tariff(const Network& net, const BandArray& fractions, const BandArray& prices) {
  validate_band_prices(prices);
  const auto forecast = aggregate_base_load_series(net);
  return StackedTariff{fractions, prices, build_envelopes(net, fractions, forecast)};
}

/// Network cost of `band_powers_w` (per step, per band) over steps of `dt_h` hours.
/// Throws when a band power exceeds its envelope by more than `tol_w`.
inline double network_cost(const StackedTariff& tariff, std::span<const BandArray> band_powers_w, double dt_h,
                           double tol_w = 1e-6) {
  if (static_cast<int>(band_powers_w.size()) > tariff.horizon()) throw Error("band schedule longer than tariff horizon");
  double cost = 0.0;
  for (std::size_t t = 0; t < band_powers_w.size(); ++t) {
    for (int p = 0; p < kBands; ++p) {
      const double pw = band_powers_w[t][p];
      if (pw > tariff.envelopes_w[t][p] + tol_w || pw < -tol_w) {
        throw Error(fmt::format("band {} power {:.3f} W at step {} outside envelope [0, {:.3f}]", p, pw, t,
                                tariff.envelopes_w[t][p]));
      }
      cost += tariff.prices[p] * units::energy_kwh(pw, dt_h);
    }
  }
  return cost;
}

/// Cheapest-first band split of an aggregate EV power series. Power that does
/// not fit in the envelopes is returned as overflow; discharge uses no band.
struct BandAssignment {
  std::vector<BandArray> band_powers_w;
  std::vector<double> overflow_w;
};

inline BandAssignment assign_bands(const StackedTariff& tariff, std::span<const double> ev_power_w) {
  BandAssignment out;
  out.band_powers_w.assign(ev_power_w.size(), BandArray{});
  out.overflow_w.assign(ev_power_w.size(), 0.0);
  for (std::size_t t = 0; t < ev_power_w.size(); ++t) {
    double rest = std::max(0.0, ev_power_w[t]);
    for (int p = 0; p < kBands && rest > 0.0; ++p) {
      const double take = std::min(rest, tariff.envelopes_w[t][p]);
      out.band_powers_w[t][p] = take;
      rest -= take;
    }
    out.overflow_w[t] = rest;
  }
  return out;
}

/// Network cost of an aggregate EV series: band prices within the envelopes,
/// the high-band price for anything beyond them.
inline double network_cost_of_series(const StackedTariff& tariff, std::span<const double> ev_power_w, double dt_h) {
  const auto a = assign_bands(tariff, ev_power_w);
  double cost = network_cost(tariff, a.band_powers_w, dt_h);
  for (double o : a.overflow_w) cost += tariff.prices[kBands - 1] * units::energy_kwh(o, dt_h);
  return cost;
}

/// Day-ahead energy cost of an aggregate EV series (discharge earns the price).
inline double energy_cost(const DayAheadPrices& prices, std::span<const double> ev_power_w, double dt_h) {
  double cost = 0.0;
  for (std::size_t t = 0; t < ev_power_w.size(); ++t) {
    cost += prices.at(static_cast<int>(t)) * units::energy_kwh(ev_power_w[t], dt_h);
  }
  return cost;
}

// Prices file: one row per period, "<step index or ISO timestamp>,<EUR/kWh>".
// Blank lines and lines starting with '#' are skipped, as is a header row
// whose price column is not numeric. Rows may be hourly while the network
// uses shorter steps; each row then covers round(1 / step_hours) steps.
inline DayAheadPrices load_prices(const std::filesystem::path& path, int horizon, double step_hours) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open prices file '{}'", path.string()));
  std::vector<double> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto sep = line.find_first_of(",;\t");
    if (sep == std::string::npos) throw ParseError(fmt::format("{}:{}: expected two columns", path.string(), line_no));
    std::string value = line.substr(sep + 1);
    value.erase(0, value.find_first_not_of(" \t"));
    value.erase(value.find_last_not_of(" \t") + 1);
    double price = 0.0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), price);
    if (ec != std::errc() || ptr != value.data() + value.size() || !std::isfinite(price)) {
      if (rows.empty()) continue;  // header
      throw ParseError(fmt::format("{}:{}: invalid price '{}'", path.string(), line_no, value));
    }
    rows.push_back(price);
  }
  if (static_cast<int>(rows.size()) >= horizon) {
    rows.resize(static_cast<std::size_t>(horizon));
    return {rows};
  }
  const int per_row = static_cast<int>(std::lround(1.0 / step_hours));
  if (per_row > 1 && static_cast<int>(rows.size()) * per_row >= horizon) {
    std::vector<double> expanded;
    expanded.reserve(static_cast<std::size_t>(horizon));
    for (int t = 0; t < horizon; ++t) expanded.push_back(rows[static_cast<std::size_t>(t / per_row)]);
    return {expanded};
  }
  throw ParseError(fmt::format("prices file '{}' has {} rows, fewer than the {}-step horizon", path.string(),
                               rows.size(), horizon));
}

inline void save_prices(const DayAheadPrices& prices, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError(fmt::format("cannot write prices file '{}'", path.string()));
  out << "step,eur_per_kwh\n";
  for (int t = 0; t < prices.size(); ++t) out << fmt::format("{},{}\n", t, prices.at(t));
}

}  // namespace evgrid
