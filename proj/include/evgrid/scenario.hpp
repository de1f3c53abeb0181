#pragma once

// Experiment configuration and the scenario runner.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "evgrid/dispatch.hpp"
#include "evgrid/error.hpp"
#include "evgrid/evaluate.hpp"
#include "evgrid/fleet.hpp"
#include "evgrid/grid.hpp"
#include "evgrid/powerflow.hpp"
#include "evgrid/tariff.hpp"

namespace evgrid {

/// One row of the scenario matrix.
struct ScenarioConfig {
  std::string label;
  bool uncontrolled = false;
  TariffMode tariff = TariffMode::Stacked;
  double v2g_share = 0.8;
  GridConstraints constraints = GridConstraints::Transformer;
  ObjectiveComponents objective{};
};

inline const std::vector<std::string>& standard_labels() {
  static const std::vector<std::string> labels{"S0", "S1", "S2", "S3", "S4"};
  return labels;
}

/// Defaults for the five standard scenarios.
inline ScenarioConfig standard_scenario(const std::string& label) {
  ScenarioConfig s;
  s.label = label;
  if (label == "S0") {
    s.uncontrolled = true;
    s.constraints = GridConstraints::None;
    s.objective = {false, false, false, false};
  } else if (label == "S1") {
    s.tariff = TariffMode::DayAhead;
    s.objective = {true, false, false, true};
  } else if (label == "S2") {
    s.objective = {true, true, false, true};
  } else if (label == "S3") {
    s.v2g_share = 0.0;
    s.objective = {true, true, false, true};
  } else if (label == "S4") {
    s.constraints = GridConstraints::PowerFlow;
    s.objective = {true, true, true, true};
  } else {
    throw ParseError(fmt::format("unknown scenario '{}' (expected S0-S4 or a label defined in the config)", label));
  }
  return s;
}

inline void validate_scenario(const ScenarioConfig& s) {
  if (!(s.v2g_share >= 0.0 && s.v2g_share <= 1.0)) {
    throw ParseError(fmt::format("scenario {}: v2g_share must lie in [0, 1]", s.label));
  }
  if (s.uncontrolled) return;
  if (s.tariff == TariffMode::DayAhead && s.objective.network) {
    throw ParseError(fmt::format("scenario {}: network-tariff objective needs the stacked tariff", s.label));
  }
}

struct ChargingPointSpec {
  std::vector<int> buses;  // explicit placement, one entry per point
  int count = 0;           // random placement when no buses are listed
  std::uint64_t seed = 1;
  double rated_kw = 11.0;
};

struct CalibrationConfig {
  int count = 20;
  std::uint64_t seed = 3;
  double scale_min = 0.2;
  double scale_max = 1.2;
  std::optional<double> kappa;  // fixed value skips the calibration
};

struct ExperimentConfig {
  std::filesystem::path network_path;
  std::filesystem::path prices_path;
  std::optional<std::filesystem::path> sessions_path;
  int days = 2;
  std::uint64_t seed = 7;
  ChargingPointSpec points{};
  SessionProfile profile{};
  BandArray band_fractions{0.6, 0.8, 1.0};
  BandArray band_prices{0.01, 0.05, 0.15};
  DispatchSettings dispatch{};
  CalibrationConfig calibration{};
  ValidationOptions validation{};
  std::map<std::string, ScenarioConfig> scenarios;  // overrides and custom labels

  ScenarioConfig scenario(const std::string& label) const {
    const auto it = scenarios.find(label);
    return it != scenarios.end() ? it->second : standard_scenario(label);
  }
};

namespace detail {

inline BandArray band_array(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != kBands) throw ParseError(fmt::format("'{}' must list three values", what));
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline TariffMode parse_tariff_mode(const std::string& s) {
  if (s == "day-ahead" || s == "day_ahead") return TariffMode::DayAhead;
  if (s == "stacked") return TariffMode::Stacked;
  throw ParseError(fmt::format("unknown tariff_mode '{}'", s));
}

inline GridConstraints parse_constraint_set(const std::string& s) {
  if (s == "none") return GridConstraints::None;
  if (s == "transformer") return GridConstraints::Transformer;
  if (s == "transformer+pf") return GridConstraints::PowerFlow;
  throw ParseError(fmt::format("unknown constraint_set '{}'", s));
}

inline ObjectiveComponents parse_components(const nlohmann::json& j) {
  ObjectiveComponents c{false, false, false, false};
  for (const auto& v : j) {
    const auto s = v.get<std::string>();
    if (s == "I") c.energy = true;
    else if (s == "II") c.network = true;
    else if (s == "III") c.losses = true;
    else if (s == "IV") c.soc = true;
    else throw ParseError(fmt::format("unknown objective component '{}'", s));
  }
  return c;
}

inline ScenarioConfig parse_scenario(const std::string& label, const nlohmann::json& j) {
  ScenarioConfig s = standard_scenario(j.value("base", label));
  s.label = label;
  if (j.contains("tariff_mode")) s.tariff = parse_tariff_mode(j.at("tariff_mode").get<std::string>());
  if (j.contains("v2g_share")) s.v2g_share = j.at("v2g_share").get<double>();
  if (j.contains("constraint_set")) s.constraints = parse_constraint_set(j.at("constraint_set").get<std::string>());
  if (j.contains("objective_components")) s.objective = parse_components(j.at("objective_components"));
  if (j.contains("uncontrolled")) s.uncontrolled = j.at("uncontrolled").get<bool>();
  validate_scenario(s);
  return s;
}

}  // namespace detail

/// Parses an experiment file; relative paths resolve against its directory.
inline ExperimentConfig parse_experiment(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  try {
    auto resolve = [&](const std::string& p) {
      const std::filesystem::path path(p);
      return path.is_absolute() ? path : base_dir / path;
    };
    c.network_path = resolve(j.at("network").get<std::string>());
    c.prices_path = resolve(j.at("prices").get<std::string>());
    if (j.contains("sessions") && !j.at("sessions").is_null()) c.sessions_path = resolve(j.at("sessions").get<std::string>());
    c.days = j.value("days", c.days);
    c.seed = j.value("seed", c.seed);
    if (c.days < 1) throw ParseError("'days' must be at least 1");

    if (j.contains("charging_points")) {
      const auto& cp = j.at("charging_points");
      c.points.buses = cp.value("buses", std::vector<int>{});
      c.points.count = cp.value("count", static_cast<int>(c.points.buses.size()));
      c.points.seed = cp.value("seed", c.points.seed);
      c.points.rated_kw = cp.value("rated_kw", c.points.rated_kw);
    }
    if (j.contains("session_profile")) {
      const auto& sp = j.at("session_profile");
      auto& p = c.profile;
      p.sessions_per_day = sp.value("sessions_per_day", p.sessions_per_day);
      p.morning_share = sp.value("morning_share", p.morning_share);
      p.morning_hour = sp.value("morning_hour", p.morning_hour);
      p.evening_hour = sp.value("evening_hour", p.evening_hour);
      p.arrival_spread_h = sp.value("arrival_spread_h", p.arrival_spread_h);
      p.median_stay_h = sp.value("median_stay_h", p.median_stay_h);
      p.stay_sigma = sp.value("stay_sigma", p.stay_sigma);
      p.min_stay_h = sp.value("min_stay_h", p.min_stay_h);
      p.soc_init_min = sp.value("soc_init_min", p.soc_init_min);
      p.soc_init_max = sp.value("soc_init_max", p.soc_init_max);
      p.soc_max = sp.value("soc_max", p.soc_max);
      p.soc_min = sp.value("soc_min", p.soc_min);
      p.capacities_kwh = sp.value("capacities_kwh", p.capacities_kwh);
      p.ev_power_w = units::watts(sp.value("ev_power_kw", units::kw(p.ev_power_w)));
      p.v2g_share = sp.value("v2g_share", p.v2g_share);
    }
    if (j.contains("tariff")) {
      const auto& tj = j.at("tariff");
      if (tj.contains("band_fractions")) c.band_fractions = detail::band_array(tj.at("band_fractions"), "band_fractions");
      if (tj.contains("band_prices")) c.band_prices = detail::band_array(tj.at("band_prices"), "band_prices");
    }
    validate_band_fractions(c.band_fractions);
    validate_band_prices(c.band_prices);

    if (j.contains("dispatch")) {
      const auto& dj = j.at("dispatch");
      auto& d = c.dispatch;
      d.window = dj.value("window", d.window);
      d.w_loss = dj.value("w_loss", d.w_loss);
      if (dj.contains("big_m") && !dj.at("big_m").is_null()) d.big_m = dj.at("big_m").get<double>();
      d.tie_epsilon = dj.value("tie_epsilon", d.tie_epsilon);
      if (dj.contains("fallback")) {
        d.fallback.drop_power_flow = dj.at("fallback").value("drop_power_flow", true);
        d.fallback.relax_departure_minimum = dj.at("fallback").value("relax_departure_minimum", true);
      }
      if (d.window < 1) throw ParseError("dispatch window must be at least one step");
    }
    if (j.contains("modelled_feeder")) {
      c.dispatch.feeder.lines = j.at("modelled_feeder").value("lines", std::vector<int>{});
      c.dispatch.feeder.buses = j.at("modelled_feeder").value("buses", std::vector<int>{});
    }
    if (j.contains("calibration")) {
      const auto& cj = j.at("calibration");
      auto& k = c.calibration;
      k.count = cj.value("count", k.count);
      k.seed = cj.value("seed", k.seed);
      k.scale_min = cj.value("scale_min", k.scale_min);
      k.scale_max = cj.value("scale_max", k.scale_max);
      if (cj.contains("kappa") && !cj.at("kappa").is_null()) k.kappa = cj.at("kappa").get<double>();
      if (k.count < 1) throw ParseError("calibration count must be positive");
      if (!(0.0 <= k.scale_min && k.scale_min <= k.scale_max)) throw ParseError("calibration scaling range is invalid");
    }
    if (j.contains("validation")) {
      const auto& vj = j.at("validation");
      c.validation.overload_allowance = vj.value("overload_allowance", c.validation.overload_allowance);
      c.validation.voltage_band = vj.value("voltage_band", c.validation.voltage_band);
    }
    c.dispatch.voltage_band = c.validation.voltage_band;
    if (j.contains("scenarios")) {
      for (const auto& [label, sj] : j.at("scenarios").items()) c.scenarios[label] = detail::parse_scenario(label, sj);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("config: {}", e.what()));
  }
  return c;
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open config file '{}'", path.string()));
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("config file '{}': {}", path.string(), e.what()));
  }
  return parse_experiment(j, path.parent_path());
}

/// Shared immutable inputs of every scenario run.
struct Experiment {
  ExperimentConfig config;
  Network net;
  DayAheadPrices prices;
  StackedTariff tariff;
  std::vector<double> forecast_w;
  std::vector<ChargingPoint> points;
  std::optional<std::vector<EvSession>> file_sessions;
};

inline Experiment prepare_experiment(const ExperimentConfig& cfg) {
  Experiment ex;
  ex.config = cfg;
  auto net = load_network(cfg.network_path);
  const int steps_per_day = static_cast<int>(std::lround(24.0 / net.step_hours()));
  const int horizon = cfg.days * steps_per_day;
  if (horizon > net.horizon()) {
    throw ParseError(fmt::format("network '{}' covers {} steps, fewer than {} days", cfg.network_path.string(),
                                 net.horizon(), cfg.days));
  }
  ex.net = horizon < net.horizon() ? truncate_horizon(net, horizon) : std::move(net);
  ex.prices = load_prices(cfg.prices_path, ex.net.horizon(), ex.net.step_hours());
  ex.tariff = make_stacked_tariff(ex.net, cfg.band_fractions, cfg.band_prices);
  ex.forecast_w = aggregate_base_load_series(ex.net);
  const double rated_w = units::watts(cfg.points.rated_kw);
  if (!cfg.points.buses.empty()) {
    for (std::size_t i = 0; i < cfg.points.buses.size(); ++i) {
      const int b = cfg.points.buses[i];
      if (b < 0 || b >= ex.net.bus_count()) throw ParseError(fmt::format("charging point {} on unknown bus {}", i, b));
      ex.points.push_back({static_cast<int>(i), b, rated_w});
    }
  } else {
    ex.points = place_charging_points(ex.net, cfg.points.count, rated_w, cfg.points.seed);
  }
  for (int l : cfg.dispatch.feeder.lines) {
    if (l < 0 || l >= ex.net.line_count()) throw ParseError(fmt::format("modelled feeder names unknown line {}", l));
  }
  for (int b : cfg.dispatch.feeder.buses) {
    if (b < 0 || b >= ex.net.bus_count()) throw ParseError(fmt::format("modelled feeder names unknown bus {}", b));
  }
  if (cfg.sessions_path) {
    auto sessions = load_sessions(*cfg.sessions_path);
    for (auto& s : sessions) s.departure = std::min(s.departure, ex.net.horizon());
    validate_sessions(sessions, ex.points, ex.net.horizon());
    ex.file_sessions = std::move(sessions);
  }
  return ex;
}

/// Sessions of one scenario: the same draws for every scenario, V2G flags per its share.
inline std::vector<EvSession> scenario_sessions(const Experiment& ex, const ScenarioConfig& sc) {
  if (ex.file_sessions) {
    auto s = *ex.file_sessions;
    if (sc.v2g_share == 0.0) {
      for (auto& e : s) e.v2g = false;
    }
    return s;
  }
  SessionProfile p = ex.config.profile;
  p.v2g_share = sc.v2g_share;
  return generate_sessions(ex.net, ex.points, ex.config.days, ex.config.seed, p);
}

/// Random steps, each linearized at its base load and checked at a scaled,
/// jittered load plus random charging power at every charging point.
inline std::vector<CalibrationCase> calibration_scenarios(const Network& net, std::span<const ChargingPoint> points,
                                                          const CalibrationConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<int> step(0, net.horizon() - 1);
  std::uniform_real_distribution<double> scale(cfg.scale_min, cfg.scale_max);
  std::uniform_real_distribution<double> jitter(0.9, 1.1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<CalibrationCase> out;
  for (int k = 0; k < cfg.count; ++k) {
    CalibrationCase c{base_injections(net, step(rng)), {}};
    c.injections = c.base;
    const double s = scale(rng);
    for (auto& b : c.injections) {
      const double f = s * jitter(rng);
      for (auto& ph : b) ph *= f;
    }
    for (const auto& cp : points) add_active_power(c.injections, net, cp.bus, unit(rng) * cp.rated_power_w);
    out.push_back(std::move(c));
  }
  return out;
}

inline CorrectionFactor calibrate_experiment(const Experiment& ex) {
  if (ex.config.calibration.kappa) return {*ex.config.calibration.kappa};
  return calibrate_correction(ex.net, calibration_scenarios(ex.net, ex.points, ex.config.calibration));
}

struct ScenarioRun {
  ScenarioConfig config;
  std::vector<EvSession> sessions;
  ChargeSchedule schedule;
  ValidationResult validation;
  StakeholderMetrics metrics;
  std::vector<double> trace_w;
  std::vector<FallbackEvent> events;
  double seconds = 0.0;

  ScenarioReport report(double rated) const {
    return {config.label, validation.counts, metrics, trace_w, rating_touches(trace_w, rated),
            static_cast<int>(events.size())};
  }
};

inline ScenarioRun run_scenario(const Experiment& ex, const ScenarioConfig& sc, double kappa) {
  const auto start = std::chrono::steady_clock::now();
  ScenarioRun run;
  run.config = sc;
  run.sessions = scenario_sessions(ex, sc);
  if (sc.uncontrolled) {
    run.schedule = uncontrolled_schedule(run.sessions, ex.net.step_hours(), ex.net.horizon());
  } else {
    DispatchSettings s = ex.config.dispatch;
    s.tariff = sc.tariff;
    s.constraints = sc.constraints;
    s.objective = sc.objective;
    s.kappa = kappa;
    std::optional<GridModelCache> grid;
    if (sc.constraints == GridConstraints::PowerFlow || sc.objective.losses) {
      std::vector<int> buses;
      for (const auto& p : ex.points) buses.push_back(p.bus);
      grid.emplace(ex.net, buses, s.feeder, kappa, s.voltage_band);
    }
    DispatchContext ctx;
    ctx.net = &ex.net;
    ctx.sessions = run.sessions;
    ctx.points = ex.points;
    ctx.prices = &ex.prices;
    ctx.tariff = sc.tariff == TariffMode::Stacked ? &ex.tariff : nullptr;
    ctx.grid = grid ? &*grid : nullptr;
    ctx.forecast_w = ex.forecast_w;
    try {
      auto rho = run_rho(ctx, s);
      run.schedule = std::move(rho.schedule);
      run.events = std::move(rho.events);
    } catch (const InfeasibleError& e) {
      throw InfeasibleError(fmt::format("scenario {}: {}", sc.label, e.what()));
    }
  }
  run.validation = validate(ex.net, run.sessions, ex.points, run.schedule, ex.config.validation);
  run.metrics = stakeholder_metrics(ex.net, run.sessions, run.schedule, run.validation, ex.prices, ex.tariff);
  run.trace_w = transformer_trace(ex.net, run.sessions, run.schedule);
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

/// Runs `labels` on up to `parallel` worker threads; results keep the label order.
inline std::vector<ScenarioRun> run_scenarios(const Experiment& ex, const std::vector<std::string>& labels,
                                              int parallel = 1) {
  std::vector<ScenarioConfig> configs;
  for (const auto& l : labels) configs.push_back(ex.config.scenario(l));
  double kappa = 1.0;
  const bool needs_kappa = std::any_of(configs.begin(), configs.end(), [](const ScenarioConfig& c) {
    return !c.uncontrolled && c.constraints == GridConstraints::PowerFlow;
  });
  if (needs_kappa) {
    kappa = calibrate_experiment(ex).kappa;
    spdlog::info("current-limit correction factor {:.4f}", kappa);
  }
  std::vector<std::optional<ScenarioRun>> results(configs.size());
  std::vector<std::exception_ptr> errors(configs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      try {
        spdlog::info("running scenario {}", configs[i].label);
        results[i] = run_scenario(ex, configs[i], kappa);
        spdlog::info("scenario {} done in {:.2f} s", configs[i].label, results[i]->seconds);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n = std::clamp(parallel, 1, static_cast<int>(std::max<std::size_t>(1, configs.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < n; ++k) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<ScenarioRun> out;
  for (auto& r : results) out.push_back(std::move(*r));
  return out;
}

/// Writes every report file for `runs`; relative metrics use `baseline` (the S0 run).
inline std::vector<StakeholderRow> write_experiment_reports(const Experiment& ex, const std::vector<ScenarioRun>& runs,
                                                            const StakeholderMetrics& baseline,
                                                            const std::filesystem::path& out_dir) {
  std::vector<ScenarioReport> reports;
  std::map<std::string, StakeholderMetrics> metrics{{"S0", baseline}};
  for (const auto& r : runs) {
    reports.push_back(r.report(ex.net.transformer().rated_va));
    metrics[r.config.label] = r.metrics;
  }
  std::vector<StakeholderRow> rows;
  for (const auto& row : stakeholder_table(metrics, "S0")) {
    const bool requested = std::any_of(runs.begin(), runs.end(), [&](const ScenarioRun& r) { return r.config.label == row.scenario; });
    if (requested) rows.push_back(row);
  }
  // Keep the requested order rather than the map's.
  std::vector<StakeholderRow> ordered;
  for (const auto& r : runs) {
    for (const auto& row : rows) {
      if (row.scenario == r.config.label) ordered.push_back(row);
    }
  }
  write_reports(out_dir, reports, ordered);
  return ordered;
}

}  // namespace evgrid
