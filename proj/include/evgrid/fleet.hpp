#pragma once

// EV sessions, synthetic session generation and the uncontrolled baseline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "evgrid/error.hpp"
#include "evgrid/grid.hpp"
#include "evgrid/units.hpp"

namespace evgrid {

struct ChargingPoint {
  int id = 0;
  int bus = 0;
  double rated_power_w = 11000.0;
};

struct EvSession {
  int point = 0;
  int arrival = 0;    // first connected step
  int departure = 0;  // first step after disconnection
  double soc_init = 50.0;  // percent
  double soc_max = 100.0;
  double soc_min = 0.0;
  double capacity_kwh = 55.0;
  double rated_power_w = 11000.0;  // min of EV and point rating
  bool v2g = false;

  int duration() const { return departure - arrival; }
  bool active_at(int t) const { return arrival <= t && t < departure; }
  double max_discharge_w() const { return v2g ? rated_power_w : 0.0; }
};

/// Percent-point SOC update for one step; discharge (negative power) lowers SOC.
inline double soc_step(double soc_prev, double power_w, double dt_h, double capacity_kwh) {
  return soc_prev + units::soc_delta_pct(power_w, dt_h, capacity_kwh);
}

inline void validate_session(const EvSession& s, int index = -1) {
  auto fail = [&](const char* what) {
    throw ParseError(fmt::format("session {}: {}", index, what));
  };
  if (!(s.arrival < s.departure)) fail("arrival must precede departure");
  if (!(s.soc_min <= s.soc_init && s.soc_init <= s.soc_max && s.soc_max <= 100.0)) {
    fail("SOC bounds must satisfy min <= init <= max <= 100");
  }
  if (!(s.capacity_kwh > 0.0)) fail("capacity must be positive");
  if (!(s.rated_power_w > 0.0)) fail("rated power must be positive");
}

/// Checks session invariants, point references and per-point non-overlap.
inline void validate_sessions(std::span<const EvSession> sessions, std::span<const ChargingPoint> points, int horizon) {
  std::vector<std::vector<std::pair<int, int>>> per_point(points.size());
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    const auto& s = sessions[i];
    validate_session(s, static_cast<int>(i));
    if (s.point < 0 || s.point >= static_cast<int>(points.size())) {
      throw ParseError(fmt::format("session {}: unknown charging point {}", i, s.point));
    }
    if (s.arrival < 0 || s.departure > horizon) {
      throw ParseError(fmt::format("session {}: steps [{}, {}) outside horizon {}", i, s.arrival, s.departure, horizon));
    }
    per_point[s.point].emplace_back(s.arrival, s.departure);
  }
  for (std::size_t p = 0; p < per_point.size(); ++p) {
    auto& v = per_point[p];
    std::sort(v.begin(), v.end());
    for (std::size_t k = 1; k < v.size(); ++k) {
      if (v[k].first < v[k - 1].second) throw ParseError(fmt::format("overlapping sessions at charging point {}", p));
    }
  }
}

/// Places `count` charging points as two-point stations on distinct non-root buses.
inline std::vector<ChargingPoint> place_charging_points(const Network& net, int count, double rated_power_w,
                                                        std::uint64_t seed) {
  std::vector<int> candidates;
  for (int b = 0; b < net.bus_count(); ++b) {
    if (b != net.root()) candidates.push_back(b);
  }
  if (count > 2 * static_cast<int>(candidates.size())) {
    throw Error(fmt::format("{} charging points exceed two per bus on {} buses", count, candidates.size()));
  }
  std::mt19937_64 rng(seed);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  std::vector<ChargingPoint> points;
  for (int i = 0; i < count; ++i) points.push_back({i, candidates[static_cast<std::size_t>(i / 2)], rated_power_w});
  return points;
}

/// Arrival and stay statistics of the synthetic fleet.
struct SessionProfile {
  double sessions_per_day = 1.2;  // expected arrivals per point per day
  double morning_share = 0.3;
  double morning_hour = 8.0;
  double evening_hour = 18.0;
  double arrival_spread_h = 1.5;
  double median_stay_h = 9.0;
  double stay_sigma = 0.6;  // log-normal shape
  double min_stay_h = 1.0;
  double soc_init_min = 20.0;
  double soc_init_max = 60.0;
  double soc_max = 100.0;
  double soc_min = 0.0;
  std::vector<double> capacities_kwh{40.0, 55.0, 75.0};
  double ev_power_w = 11000.0;
  double v2g_share = 0.8;
};

/// Deterministic synthetic sessions. Every random draw happens in a fixed
/// order regardless of the V2G share, so changing only the share keeps the
/// arrivals, stays and batteries identical.
inline std::vector<EvSession> generate_sessions(const Network& net, std::span<const ChargingPoint> points, int days,
                                                std::uint64_t seed, const SessionProfile& profile) {
  if (points.empty() || days <= 0) return {};
  const double dt = net.step_hours();
  const int steps_per_day = static_cast<int>(std::lround(24.0 / dt));
  const int horizon = std::min(net.horizon(), days * steps_per_day);
  if (profile.sessions_per_day * std::max(profile.min_stay_h, dt) > 24.0) {
    throw Error("session density exceeds what one charging point can host per day");
  }
  if (profile.capacities_kwh.empty()) throw Error("session profile lists no battery capacities");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<EvSession> out;
  for (const auto& cp : points) {
    int free_from = 0;
    for (int d = 0; d < days; ++d) {
      const double whole = std::floor(profile.sessions_per_day);
      const int arrivals = static_cast<int>(whole) + (unit(rng) < profile.sessions_per_day - whole ? 1 : 0);
      std::vector<double> hours;
      for (int k = 0; k < arrivals; ++k) {
        const bool morning = unit(rng) < profile.morning_share;
        const double centre = morning ? profile.morning_hour : profile.evening_hour;
        hours.push_back(std::clamp(centre + profile.arrival_spread_h * normal(rng), 0.0, 23.75));
      }
      std::sort(hours.begin(), hours.end());
      for (double h : hours) {
        const double stay = std::max(profile.min_stay_h, profile.median_stay_h * std::exp(profile.stay_sigma * normal(rng)));
        const double soc0 = profile.soc_init_min + (profile.soc_init_max - profile.soc_init_min) * unit(rng);
        const auto cap_idx = static_cast<std::size_t>(unit(rng) * static_cast<double>(profile.capacities_kwh.size()));
        const bool v2g = unit(rng) < profile.v2g_share;

        int arrival = d * steps_per_day + static_cast<int>(std::lround(h / dt));
        arrival = std::max(arrival, free_from);
        const int departure = std::min(horizon, arrival + std::max(1, static_cast<int>(std::lround(stay / dt))));
        if (arrival >= horizon || departure - arrival < std::max(1, static_cast<int>(std::lround(profile.min_stay_h / dt)))) {
          continue;
        }
        EvSession s;
        s.point = cp.id;
        s.arrival = arrival;
        s.departure = departure;
        s.soc_min = profile.soc_min;
        s.soc_max = profile.soc_max;
        s.soc_init = std::clamp(soc0, profile.soc_min, profile.soc_max);
        s.capacity_kwh = profile.capacities_kwh[std::min(cap_idx, profile.capacities_kwh.size() - 1)];
        s.rated_power_w = std::min(profile.ev_power_w, cp.rated_power_w);
        s.v2g = v2g;
        out.push_back(s);
        free_from = departure;
      }
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const EvSession& a, const EvSession& b) {
    return a.arrival != b.arrival ? a.arrival < b.arrival : a.point < b.point;
  });
  return out;
}

// Sessions file: header optional, one row per session:
// point_id, arrival_step, departure_step, soc_init_pct, soc_max_pct, capacity_kwh, pmax_kw, v2g_flag
inline std::vector<EvSession> load_sessions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open sessions file '{}'", path.string()));
  std::vector<EvSession> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ';', ',');
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8) throw ParseError(fmt::format("{}:{}: expected 8 columns", path.string(), line_no));
    try {
      EvSession s;
      s.point = std::stoi(cells[0]);
      s.arrival = std::stoi(cells[1]);
      s.departure = std::stoi(cells[2]);
      s.soc_init = std::stod(cells[3]);
      s.soc_max = std::stod(cells[4]);
      s.capacity_kwh = std::stod(cells[5]);
      s.rated_power_w = units::watts(std::stod(cells[6]));
      s.v2g = std::stoi(cells[7]) != 0;
      out.push_back(s);
    } catch (const std::exception&) {
      if (out.empty() && line_no == 1) continue;  // header
      throw ParseError(fmt::format("{}:{}: malformed session row", path.string(), line_no));
    }
  }
  return out;
}

inline void save_sessions(std::span<const EvSession> sessions, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError(fmt::format("cannot write sessions file '{}'", path.string()));
  out << "point_id,arrival_step,departure_step,soc_init_pct,soc_max_pct,capacity_kwh,pmax_kw,v2g_flag\n";
  for (const auto& s : sessions) {
    out << fmt::format("{},{},{},{},{},{},{},{}\n", s.point, s.arrival, s.departure, s.soc_init, s.soc_max,
                       s.capacity_kwh, units::kw(s.rated_power_w), s.v2g ? 1 : 0);
  }
}

/// Committed trajectory of one session over its connected steps.
struct SessionSchedule {
  std::vector<double> power_w;  // one entry per connected step
  std::vector<double> soc_pct;  // SOC at the start of each step plus the departure value
  double alpha = 0.0;           // departure SOC as a fraction of the session maximum

  double final_soc() const { return soc_pct.back(); }
};

struct ChargeSchedule {
  double step_hours = 0.25;
  int horizon = 0;
  std::vector<SessionSchedule> sessions;  // parallel to the session list

  /// Aggregate EV power per step.
  std::vector<double> total_power(std::span<const EvSession> list) const {
    std::vector<double> total(static_cast<std::size_t>(horizon), 0.0);
    for (std::size_t i = 0; i < list.size(); ++i) {
      for (std::size_t k = 0; k < sessions[i].power_w.size(); ++k) total[list[i].arrival + k] += sessions[i].power_w[k];
    }
    return total;
  }

  /// Power per step per charging point (zero whenever no session is connected).
  std::vector<std::vector<double>> point_power(std::span<const EvSession> list, int point_count) const {
    std::vector<std::vector<double>> out(static_cast<std::size_t>(horizon), std::vector<double>(point_count, 0.0));
    for (std::size_t i = 0; i < list.size(); ++i) {
      for (std::size_t k = 0; k < sessions[i].power_w.size(); ++k) {
        out[list[i].arrival + k][list[i].point] += sessions[i].power_w[k];
      }
    }
    return out;
  }
};

/// Builds a session trace from committed powers, applying the SOC recursion.
inline SessionSchedule trace_from_powers(const EvSession& s, std::vector<double> power_w, double dt_h) {
  SessionSchedule out;
  out.power_w = std::move(power_w);
  out.soc_pct.reserve(out.power_w.size() + 1);
  out.soc_pct.push_back(s.soc_init);
  for (double p : out.power_w) out.soc_pct.push_back(soc_step(out.soc_pct.back(), p, dt_h, s.capacity_kwh));
  out.alpha = s.soc_max > 0.0 ? std::min(1.0, out.soc_pct.back() / s.soc_max) : 1.0;
  return out;
}

/// Charge at rated power from arrival until soc_max, with a partial final step
/// landing exactly on soc_max; never discharges.
inline ChargeSchedule uncontrolled_schedule(std::span<const EvSession> sessions, double dt_h, int horizon) {
  ChargeSchedule sched;
  sched.step_hours = dt_h;
  sched.horizon = horizon;
  for (const auto& s : sessions) {
    std::vector<double> power(static_cast<std::size_t>(s.duration()), 0.0);
    double soc = s.soc_init;
    const double step_gain = units::soc_delta_pct(s.rated_power_w, dt_h, s.capacity_kwh);
    for (auto& p : power) {
      const double missing = s.soc_max - soc;
      if (missing <= 0.0) break;
      if (missing >= step_gain) {
        p = s.rated_power_w;
      } else {
        p = s.rated_power_w * missing / step_gain;
      }
      soc = soc_step(soc, p, dt_h, s.capacity_kwh);
    }
    auto trace = trace_from_powers(s, std::move(power), dt_h);
    if (trace.final_soc() >= s.soc_max - 1e-9) trace.alpha = 1.0;
    sched.sessions.push_back(std::move(trace));
  }
  return sched;
}

/// Highest departure SOC the session could reach charging flat out.
inline double reachable_soc(const EvSession& s, double dt_h) {
  const double gain = units::soc_delta_pct(s.rated_power_w, dt_h * s.duration(), s.capacity_kwh);
  return std::min(s.soc_max, s.soc_init + gain);
}

}  // namespace evgrid
