#pragma once

// Nonlinear validation of committed schedules and the stakeholder metrics.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "evgrid/error.hpp"
#include "evgrid/fleet.hpp"
#include "evgrid/grid.hpp"
#include "evgrid/powerflow.hpp"
#include "evgrid/tariff.hpp"
#include "evgrid/units.hpp"

namespace evgrid {

struct ViolationCounts {
  long line_congestion = 0;   // (step, line) pairs above ampacity, transformer lines excluded
  long transformer_line = 0;  // same for the lines leaving the transformer bus
  long transformer = 0;       // steps with |S| above rating times the overload allowance
  long undervoltage = 0;      // (step, bus) pairs below the band
  long overvoltage = 0;
  std::vector<long> per_line;  // congestion count of every line

  long total() const { return line_congestion + transformer_line + transformer + undervoltage + overvoltage; }

  /// Congestion events restricted to `lines`.
  long on_lines(std::span<const int> lines) const {
    long n = 0;
    for (int l : lines) n += per_line.at(static_cast<std::size_t>(l));
    return n;
  }
};

struct ValidationOptions {
  double overload_allowance = 1.2;
  double voltage_band = 0.05;
  SweepOptions sweep{};
  bool keep_solutions = false;
};

struct ValidationResult {
  ViolationCounts counts;
  std::vector<PowerFlowSolution> solutions;  // filled when requested
  std::vector<double> losses_w;
  std::vector<double> transformer_p_w;       // sweep active power at the root
  std::vector<double> transformer_s_va;
};

/// Lines leaving the transformer bus.
inline std::vector<int> transformer_lines(const Network& net) {
  std::vector<int> out;
  const auto& topo = net.topology();
  for (int l = 0; l < net.line_count(); ++l) {
    if (topo.line_parent[static_cast<std::size_t>(l)] == net.root()) out.push_back(l);
  }
  return out;
}

/// Solves the sweep at every step with the EV powers added at their buses
/// (unity power factor) and counts limit violations against raw ratings.
inline ValidationResult validate(const Network& net, std::span<const EvSession> sessions,
                                 std::span<const ChargingPoint> points, const ChargeSchedule& schedule,
                                 const ValidationOptions& opt = {}) {
  if (schedule.horizon != net.horizon()) {
    throw Error(fmt::format("schedule horizon {} does not match network horizon {}", schedule.horizon, net.horizon()));
  }
  const auto per_point = schedule.point_power(sessions, static_cast<int>(points.size()));
  const auto root_lines = transformer_lines(net);
  std::vector<bool> is_root_line(static_cast<std::size_t>(net.line_count()), false);
  for (int l : root_lines) is_root_line[static_cast<std::size_t>(l)] = true;

  ValidationResult res;
  res.counts.per_line.assign(static_cast<std::size_t>(net.line_count()), 0);
  for (int t = 0; t < net.horizon(); ++t) {
    auto inj = base_injections(net, t);
    for (std::size_t c = 0; c < points.size(); ++c) {
      const double p = per_point[static_cast<std::size_t>(t)][c];
      if (p != 0.0) add_active_power(inj, net, points[c].bus, p);
    }
    PowerFlowSolution sol;
    try {
      sol = solve_sweep(net, inj, opt.sweep);
    } catch (const ConvergenceError& e) {
      throw ConvergenceError(fmt::format("validation at step {}: {}", t, e.what()), t);
    }
    for (int l = 0; l < net.line_count(); ++l) {
      bool over = false;
      for (int ph = 0; ph < kMaxPhases; ++ph) over = over || sol.current_magnitude(l, ph) > net.line(l).ampacity_a;
      if (!over) continue;
      ++res.counts.per_line[static_cast<std::size_t>(l)];
      ++(is_root_line[static_cast<std::size_t>(l)] ? res.counts.transformer_line : res.counts.line_congestion);
    }
    for (int b = 0; b < net.bus_count(); ++b) {
      bool under = false;
      bool over = false;
      for (int ph = 0; ph < net.bus(b).phases; ++ph) {
        const double v = sol.voltage_magnitude(b, ph) / net.bus(b).v_nom;
        under = under || v < 1.0 - opt.voltage_band;
        over = over || v > 1.0 + opt.voltage_band;
      }
      res.counts.undervoltage += under ? 1 : 0;
      res.counts.overvoltage += over ? 1 : 0;
    }
    const double s_va = std::abs(sol.transformer_power);
    if (s_va > net.transformer().rated_va * opt.overload_allowance) ++res.counts.transformer;
    res.losses_w.push_back(sol.losses_w);
    res.transformer_p_w.push_back(sol.transformer_power.real());
    res.transformer_s_va.push_back(s_va);
    if (opt.keep_solutions) res.solutions.push_back(std::move(sol));
  }
  return res;
}

/// No-loss aggregate loading per step: base load plus EV power.
inline std::vector<double> transformer_trace(const Network& net, std::span<const EvSession> sessions,
                                             const ChargeSchedule& schedule) {
  auto trace = aggregate_base_load_series(net);
  const auto ev = schedule.total_power(sessions);
  for (std::size_t t = 0; t < trace.size(); ++t) trace[t] += ev[t];
  return trace;
}

/// Steps whose aggregate loading reaches the rating within `tolerance` (fraction).
inline int rating_touches(std::span<const double> trace, double rated, double tolerance = 0.01) {
  return static_cast<int>(std::count_if(trace.begin(), trace.end(), [&](double v) { return v >= rated * (1.0 - tolerance); }));
}

inline double rms(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s / static_cast<double>(v.size()));
}

/// Whether a session left at (or within 0.5 pp of) the highest SOC it could have reached.
inline bool reached_full_soc(const EvSession& s, const SessionSchedule& trace, double dt_h) {
  return trace.final_soc() >= reachable_soc(s, dt_h) - 0.5;
}

struct StakeholderMetrics {
  double power_loss_kwh = 0.0;
  double rms_trafo_load_w = 0.0;
  double energy_cost = 0.0;   // day-ahead component
  double network_cost = 0.0;  // stacked-band component
  double full_soc_pct = 0.0;
  int sessions = 0;

  double cpo_cost() const { return energy_cost + network_cost; }
};

inline StakeholderMetrics stakeholder_metrics(const Network& net, std::span<const EvSession> sessions,
                                              const ChargeSchedule& schedule, const ValidationResult& validation,
                                              const DayAheadPrices& prices, const StackedTariff& tariff) {
  const double dt = net.step_hours();
  StakeholderMetrics m;
  for (double l : validation.losses_w) m.power_loss_kwh += units::energy_kwh(l, dt);
  m.rms_trafo_load_w = rms(validation.transformer_p_w);
  const auto ev = schedule.total_power(sessions);
  m.energy_cost = energy_cost(prices, ev, dt);
  m.network_cost = network_cost_of_series(tariff, ev, dt);
  int full = 0;
  for (std::size_t i = 0; i < sessions.size(); ++i) full += reached_full_soc(sessions[i], schedule.sessions[i], dt) ? 1 : 0;
  m.sessions = static_cast<int>(sessions.size());
  m.full_soc_pct = sessions.empty() ? 100.0 : 100.0 * full / static_cast<double>(sessions.size());
  return m;
}

/// Change relative to the baseline in percent; zero when both are zero.
inline double relative_pct(double value, double baseline) {
  if (baseline == 0.0) return value == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), value);
  return 100.0 * (value - baseline) / std::abs(baseline);
}

struct StakeholderRow {
  std::string scenario;
  StakeholderMetrics metrics;
  double loss_rel_pct = 0.0;
  double rms_rel_pct = 0.0;
  double energy_cost_rel_pct = 0.0;
  double cpo_cost_rel_pct = 0.0;
};

/// Metrics per scenario with percentages relative to the baseline label.
inline std::vector<StakeholderRow> stakeholder_table(const std::map<std::string, StakeholderMetrics>& runs,
                                                     const std::string& baseline = "S0") {
  const auto base = runs.find(baseline);
  if (base == runs.end()) throw Error(fmt::format("baseline scenario {} missing from the comparison", baseline));
  const auto& b = base->second;
  std::vector<StakeholderRow> rows;
  for (const auto& [label, m] : runs) {
    StakeholderRow r;
    r.scenario = label;
    r.metrics = m;
    r.loss_rel_pct = relative_pct(m.power_loss_kwh, b.power_loss_kwh);
    r.rms_rel_pct = relative_pct(m.rms_trafo_load_w, b.rms_trafo_load_w);
    r.energy_cost_rel_pct = relative_pct(m.energy_cost, b.energy_cost);
    r.cpo_cost_rel_pct = relative_pct(m.cpo_cost(), b.cpo_cost());
    rows.push_back(r);
  }
  return rows;
}

// Report files.

struct ScenarioReport {
  std::string label;
  ViolationCounts counts;
  StakeholderMetrics metrics;
  std::vector<double> trace_w;
  int rating_touches = 0;
  int fallback_events = 0;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  out << text;
}

inline std::string violations_csv(std::span<const ScenarioReport> reports) {
  std::string s = "scenario,category,count\n";
  for (const auto& r : reports) {
    s += fmt::format("{},line_congestion,{}\n", r.label, r.counts.line_congestion);
    s += fmt::format("{},transformer_line,{}\n", r.label, r.counts.transformer_line);
    s += fmt::format("{},transformer,{}\n", r.label, r.counts.transformer);
    s += fmt::format("{},undervoltage,{}\n", r.label, r.counts.undervoltage);
    s += fmt::format("{},overvoltage,{}\n", r.label, r.counts.overvoltage);
  }
  return s;
}

inline std::string metrics_csv(std::span<const StakeholderRow> rows) {
  std::string s =
      "scenario,power_loss_kwh,rms_trafo_load_kw,energy_cost_eur,network_cost_eur,cpo_cost_eur,full_soc_pct,"
      "power_loss_rel_pct,rms_trafo_load_rel_pct,energy_cost_rel_pct,cpo_cost_rel_pct\n";
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    s += fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.4f},{:.4f},{:.4f},{:.4f},{:.4f}\n", r.scenario,
                     m.power_loss_kwh, units::kw(m.rms_trafo_load_w), m.energy_cost, m.network_cost, m.cpo_cost(),
                     m.full_soc_pct, r.loss_rel_pct, r.rms_rel_pct, r.energy_cost_rel_pct, r.cpo_cost_rel_pct);
  }
  return s;
}

inline std::string trace_csv(std::span<const double> trace) {
  std::string s = "step,aggregate_w\n";
  for (std::size_t t = 0; t < trace.size(); ++t) s += fmt::format("{},{:.3f}\n", t, trace[t]);
  return s;
}

inline nlohmann::ordered_json summary_json(std::span<const ScenarioReport> reports, std::span<const StakeholderRow> rows) {
  nlohmann::ordered_json j;
  auto& sc = j["scenarios"];
  sc = nlohmann::ordered_json::object();
  for (const auto& r : reports) {
    nlohmann::ordered_json e;
    e["violations"] = {{"line_congestion", r.counts.line_congestion},
                       {"transformer_line", r.counts.transformer_line},
                       {"transformer", r.counts.transformer},
                       {"undervoltage", r.counts.undervoltage},
                       {"overvoltage", r.counts.overvoltage}};
    e["per_line_congestion"] = r.counts.per_line;
    e["rating_touches"] = r.rating_touches;
    e["fallback_events"] = r.fallback_events;
    e["trace_w"] = r.trace_w;
    sc[r.label] = e;
  }
  auto& table = j["stakeholders"];
  table = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    table.push_back({{"scenario", r.scenario},
                     {"power_loss_kwh", m.power_loss_kwh},
                     {"rms_trafo_load_w", m.rms_trafo_load_w},
                     {"energy_cost_eur", m.energy_cost},
                     {"network_cost_eur", m.network_cost},
                     {"cpo_cost_eur", m.cpo_cost()},
                     {"full_soc_pct", m.full_soc_pct},
                     {"sessions", m.sessions},
                     {"power_loss_rel_pct", r.loss_rel_pct},
                     {"rms_trafo_load_rel_pct", r.rms_rel_pct},
                     {"energy_cost_rel_pct", r.energy_cost_rel_pct},
                     {"cpo_cost_rel_pct", r.cpo_cost_rel_pct}});
  }
  return j;
}

/// Writes violations.csv, metrics.csv, trace_<label>.csv and summary.json into `dir`.
inline void write_reports(const std::filesystem::path& dir, std::span<const ScenarioReport> reports,
                          std::span<const StakeholderRow> rows) {
  std::filesystem::create_directories(dir);
  write_text(dir / "violations.csv", violations_csv(reports));
  if (!rows.empty()) write_text(dir / "metrics.csv", metrics_csv(rows));
  for (const auto& r : reports) write_text(dir / fmt::format("trace_{}.csv", r.label), trace_csv(r.trace_w));
  write_text(dir / "summary.json", summary_json(reports, rows).dump(2) + "\n");
}

}  // namespace evgrid
