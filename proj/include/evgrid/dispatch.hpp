#pragma once

// Per-window dispatch LP and the receding-horizon controller.
//
// Charging powers are the only per-session decision variables (kW). State of
// charge is eliminated through cumulative sums, so SOC limits become rows
// over prefix sums of a session's powers. Bounds that rarely bind (SOC limits
// between arrival and departure, power-flow limits) are lazy rows added only
// when an intermediate optimum violates them.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "evgrid/error.hpp"
#include "evgrid/fleet.hpp"
#include "evgrid/grid.hpp"
#include "evgrid/lp.hpp"
#include "evgrid/powerflow.hpp"
#include "evgrid/tariff.hpp"
#include "evgrid/units.hpp"

namespace evgrid {

enum class TariffMode { DayAhead, Stacked };
enum class GridConstraints { None, Transformer, PowerFlow };  // PowerFlow includes the transformer row

/// Objective components: I energy, II network tariff, III transformer power, IV departure SOC.
struct ObjectiveComponents {
  bool energy = true;
  bool network = true;
  bool losses = false;
  bool soc = true;
};

struct FallbackPolicy {
  bool drop_power_flow = true;
  bool relax_departure_minimum = true;
};

/// Lines and buses whose current and voltage limits enter the LP. Empty lists select every element.
struct ModelledFeeder {
  std::vector<int> lines;
  std::vector<int> buses;
};

struct DispatchSettings {
  TariffMode tariff = TariffMode::Stacked;
  GridConstraints constraints = GridConstraints::Transformer;
  ObjectiveComponents objective{};
  int window = 96;
  double w_loss = 1.0;             // EUR/kWh on the transformer power
  std::optional<double> big_m;     // EUR per unit alpha per hour; derived when unset
  double tie_epsilon = 1e-9;       // EUR/kWh per step of delay
  double voltage_band = 0.05;
  double kappa = 1.0;
  ModelledFeeder feeder{};
  FallbackPolicy fallback{};
  lp::SolveOptions solver{};
  bool warm_start = true;  // start each window from the previous plan
};

/// Linear grid rows of one step, restricted to the charging-point buses.
struct StepGridModel {
  struct Limit {
    lp::RowClass cls = lp::RowClass::LineCurrent;
    int element = 0;  // line or bus index
    int phase = 0;
    double base = 0.0;           // amps or volts at zero EV power
    double lower = -lp::kInf;
    double upper = lp::kInf;
    std::vector<double> per_kw;  // sensitivity per kW at each charging bus
  };
  std::vector<Limit> limits;
  std::vector<double> root_per_kw;  // transformer power per kW at each charging bus, in kW
};

/// Per-step linear maps around the no-EV operating point, built on demand.
class GridModelCache {
public:
  GridModelCache(const Network& net, std::vector<int> charging_buses, ModelledFeeder feeder, double kappa,
                 double voltage_band, SweepOptions sweep = {})
      : net_(&net),
        buses_(std::move(charging_buses)),
        feeder_(std::move(feeder)),
        kappa_(kappa),
        band_(voltage_band),
        sweep_(sweep),
        steps_(static_cast<std::size_t>(net.horizon())) {
    std::sort(buses_.begin(), buses_.end());
    buses_.erase(std::unique(buses_.begin(), buses_.end()), buses_.end());
    if (feeder_.lines.empty()) {
      for (int l = 0; l < net.line_count(); ++l) feeder_.lines.push_back(l);
    }
    if (feeder_.buses.empty()) {
      for (int b = 0; b < net.bus_count(); ++b) feeder_.buses.push_back(b);
    }
  }

  const std::vector<int>& charging_buses() const { return buses_; }
  int column_of(int bus) const {
    const auto it = std::lower_bound(buses_.begin(), buses_.end(), bus);
    return it != buses_.end() && *it == bus ? static_cast<int>(it - buses_.begin()) : -1;
  }

  const StepGridModel& at(int t) {
    auto& slot = steps_.at(static_cast<std::size_t>(t));
    if (!slot) slot = build(t);
    return *slot;
  }

private:
  StepGridModel build(int t) const {
    const Network& net = *net_;
    LinearGridMap map;
    try {
      map = build_linear_map(net, base_injections(net, t), sweep_);
    } catch (const ConvergenceError& e) {
      throw ConvergenceError(fmt::format("base point at step {}: {}", t, e.what()), t);
    }
    StepGridModel m;
    const std::size_t nc = buses_.size();
    for (std::size_t c = 0; c < nc; ++c) m.root_per_kw.push_back(map.bus_root_power_sensitivity(buses_[c]));
    const auto& topo = net.topology();
    for (int l : feeder_.lines) {
      const int phases = net.bus(topo.line_child[static_cast<std::size_t>(l)]).phases;
      for (int ph = 0; ph < phases; ++ph) {
        StepGridModel::Limit lim;
        lim.cls = lp::RowClass::LineCurrent;
        lim.element = l;
        lim.phase = ph;
        lim.base = map.base_current(l, ph);
        lim.upper = kappa_ * net.line(l).ampacity_a;
        lim.lower = -lim.upper;
        lim.per_kw.resize(nc);
        bool any = false;
        for (std::size_t c = 0; c < nc; ++c) {
          lim.per_kw[c] = units::kWattsPerKilowatt * map.bus_current_sensitivity(l, ph, buses_[c]);
          any = any || lim.per_kw[c] != 0.0;
        }
        if (any) m.limits.push_back(std::move(lim));
      }
    }
    for (int b : feeder_.buses) {
      if (b == net.root()) continue;
      for (int ph = 0; ph < net.bus(b).phases; ++ph) {
        StepGridModel::Limit lim;
        lim.cls = lp::RowClass::Voltage;
        lim.element = b;
        lim.phase = ph;
        lim.base = map.base_voltage(b, ph);
        lim.lower = (1.0 - band_) * net.bus(b).v_nom;
        lim.upper = (1.0 + band_) * net.bus(b).v_nom;
        lim.per_kw.resize(nc);
        bool any = false;
        for (std::size_t c = 0; c < nc; ++c) {
          lim.per_kw[c] = units::kWattsPerKilowatt * map.bus_voltage_sensitivity(b, ph, buses_[c]);
          any = any || lim.per_kw[c] != 0.0;
        }
        if (any) m.limits.push_back(std::move(lim));
      }
    }
    return m;
  }

  const Network* net_;
  std::vector<int> buses_;
  ModelledFeeder feeder_;
  double kappa_;
  double band_;
  SweepOptions sweep_;
  std::vector<std::optional<StepGridModel>> steps_;
};

/// Everything a window LP sees besides the sessions themselves.
struct DispatchContext {
  const Network* net = nullptr;
  std::span<const EvSession> sessions;
  std::span<const ChargingPoint> points;
  const DayAheadPrices* prices = nullptr;
  const StackedTariff* tariff = nullptr;  // required in stacked mode
  GridModelCache* grid = nullptr;         // required with power-flow constraints; the loss term uses it when present
  std::span<const double> forecast_w;     // non-EV aggregate per step
};

struct SessionState {
  int session = 0;     // index into the context's session list
  double soc = 0.0;    // percent at the window start
};

struct DispatchWindow {
  int start = 0;
  int length = 96;
  std::vector<SessionState> active;
};

struct AssembledWindow {
  lp::LpProblem lp;
  DispatchWindow window;
  std::vector<std::vector<int>> power_var;  // [active session][window step], -1 when disconnected
  std::vector<int> alpha_var;               // -1 when component IV is off
  std::vector<std::array<int, kBands>> band_var;
  std::vector<int> discharge_var;
  std::vector<double> alpha_target;  // SOC target of each alpha row, percent
  std::vector<std::vector<int>> soc_rows;  // [active session][k]: lazy SOC row after the k-th connected step
                                           // (row indices are valid until rows are dropped)
  double big_m = 0.0;
  std::vector<double> start;  // optional warm-start values per variable
};

/// Default alpha weight: ten times the largest energy-plus-network cost one
/// vehicle could accrue at full power over a whole window.
inline double default_big_m(const DispatchContext& ctx, const DispatchSettings& s) {
  double max_price = 0.0;
  for (double p : ctx.prices->eur_per_kwh) max_price = std::max(max_price, std::abs(p));
  const double network = ctx.tariff != nullptr ? ctx.tariff->prices[kBands - 1] : 0.0;
  double pmax = 0.0;
  for (const auto& e : ctx.sessions) pmax = std::max(pmax, units::kw(e.rated_power_w));
  return 10.0 * (max_price + network) * pmax * s.window;
}

inline AssembledWindow assemble(const DispatchContext& ctx, const DispatchWindow& window, const DispatchSettings& s) {
  const Network& net = *ctx.net;
  const double dt = net.step_hours();
  const bool stacked = s.tariff == TariffMode::Stacked;
  const bool pf = s.constraints == GridConstraints::PowerFlow;
  if (stacked && ctx.tariff == nullptr) throw Error("stacked tariff mode requires a tariff");
  if (pf && ctx.grid == nullptr) {
    throw Error("power-flow constraints require a linear grid model");
  }
  if (window.length < 1) throw Error("dispatch window must span at least one step");

  AssembledWindow aw;
  aw.window = window;
  aw.big_m = s.big_m.value_or(default_big_m(ctx, s));
  auto& lp = aw.lp;
  const int W = window.length;
  const int t0 = window.start;
  const std::size_t na = window.active.size();
  aw.power_var.assign(na, std::vector<int>(static_cast<std::size_t>(W), -1));
  aw.alpha_var.assign(na, -1);
  aw.alpha_target.assign(na, 0.0);
  aw.soc_rows.assign(na, {});

  // Which window steps carry any connected session.
  std::vector<std::vector<std::pair<int, int>>> by_step(static_cast<std::size_t>(W));  // (active idx, var)
  for (std::size_t a = 0; a < na; ++a) {
    const EvSession& e = ctx.sessions[static_cast<std::size_t>(window.active[a].session)];
    const int last = std::min(e.departure, t0 + W);
    const double pmax = units::kw(e.rated_power_w);
    const double pmin = -units::kw(e.max_discharge_w());
    const int col = ctx.grid != nullptr ? ctx.grid->column_of(ctx.points[static_cast<std::size_t>(e.point)].bus) : -1;
    for (int t = std::max(t0, e.arrival); t < last; ++t) {
      const int k = t - t0;
      double c = s.tie_epsilon * k;
      if (s.objective.energy) c += ctx.prices->at(t);
      if (s.objective.losses) {
        const double root = ctx.grid != nullptr && col >= 0 ? ctx.grid->at(t).root_per_kw[static_cast<std::size_t>(col)] : 1.0;
        c += s.w_loss * root;
      }
      const int v = lp.add_variable(c * dt, pmin, pmax);
      aw.power_var[a][static_cast<std::size_t>(k)] = v;
      by_step[static_cast<std::size_t>(k)].emplace_back(static_cast<int>(a), v);
    }
  }

  // Stacked-band balance and transformer limit per occupied step.
  aw.band_var.assign(static_cast<std::size_t>(W), {-1, -1, -1});
  aw.discharge_var.assign(static_cast<std::size_t>(W), -1);
  const double rated_kw = units::kw(net.transformer().rated_va);
  for (int k = 0; k < W; ++k) {
    const auto& here = by_step[static_cast<std::size_t>(k)];
    if (here.empty()) continue;
    const int t = t0 + k;
    if (stacked) {
      lp::Row bal;
      bal.cls = lp::RowClass::BandBalance;
      bal.lower = bal.upper = 0.0;
      double discharge_cap = 0.0;
      for (auto [a, v] : here) {
        bal.index.push_back(v);
        bal.value.push_back(1.0);
        discharge_cap += -lp.lower()[static_cast<std::size_t>(v)];
      }
      for (int p = 0; p < kBands; ++p) {
        const double cost = s.objective.network ? ctx.tariff->prices[p] * dt : 0.0;
        const int bv = lp.add_variable(cost, 0.0, units::kw(ctx.tariff->envelopes_w.at(static_cast<std::size_t>(t))[p]));
        aw.band_var[static_cast<std::size_t>(k)][p] = bv;
        bal.index.push_back(bv);
        bal.value.push_back(-1.0);
      }
      const int dv = lp.add_variable(0.0, -discharge_cap, 0.0);
      aw.discharge_var[static_cast<std::size_t>(k)] = dv;
      bal.index.push_back(dv);
      bal.value.push_back(-1.0);
      lp.add_row(std::move(bal));
    }
    if (s.constraints != GridConstraints::None) {
      lp::Row tr;
      tr.cls = lp::RowClass::Transformer;
      tr.upper = rated_kw - units::kw(ctx.forecast_w[static_cast<std::size_t>(t)]);
      for (auto [a, v] : here) {
        tr.index.push_back(v);
        tr.value.push_back(1.0);
      }
      lp.add_row(std::move(tr));
    }
    if (pf) {
      const auto& gm = ctx.grid->at(t);
      for (const auto& lim : gm.limits) {
        lp::Row r;
        r.cls = lim.cls;
        r.lazy = true;
        r.lower = lim.lower - lim.base;
        r.upper = lim.upper - lim.base;
        for (auto [a, v] : here) {
          const EvSession& e = ctx.sessions[static_cast<std::size_t>(window.active[static_cast<std::size_t>(a)].session)];
          const int col = ctx.grid->column_of(ctx.points[static_cast<std::size_t>(e.point)].bus);
          const double coef = lim.per_kw[static_cast<std::size_t>(col)];
          if (coef == 0.0) continue;
          r.index.push_back(v);
          r.value.push_back(coef);
        }
        if (!r.index.empty()) lp.add_row(std::move(r));
      }
    }
  }

  // SOC rows on prefix sums of each session's powers.
  for (std::size_t a = 0; a < na; ++a) {
    const auto& st = window.active[a];
    const EvSession& e = ctx.sessions[static_cast<std::size_t>(st.session)];
    const double gain = units::soc_delta_pct(units::watts(1.0), dt, e.capacity_kwh);  // percent per kW-step
    std::vector<int> vars;
    for (int v : aw.power_var[a]) {
      if (v >= 0) vars.push_back(v);
    }
    if (vars.empty()) continue;
    const bool departs = e.departure <= t0 + W;
    // Intermediate limits only bind for vehicles that can discharge.
    if (e.v2g) {
      for (std::size_t k = 0; k + 1 < vars.size(); ++k) {
        lp::Row r;
        r.cls = lp::RowClass::SocBound;
        r.lazy = true;
        r.lower = e.soc_min - st.soc;
        r.upper = e.soc_max - st.soc;
        for (std::size_t j = 0; j <= k; ++j) {
          r.index.push_back(vars[j]);
          r.value.push_back(gain);
        }
        aw.soc_rows[a].push_back(lp.add_row(std::move(r)));
      }
    }
    lp::Row end;
    end.cls = departs ? lp::RowClass::DepartureMinimum : lp::RowClass::SocBound;
    end.lower = e.soc_min - st.soc;
    end.upper = e.soc_max - st.soc;
    for (int v : vars) {
      end.index.push_back(v);
      end.value.push_back(gain);
    }
    if (s.objective.soc) {
      // Departure (or interim) SOC of at least alpha times the target.
      const double target = departs ? e.soc_max
                                    : st.soc + (e.soc_max - st.soc) * static_cast<double>(vars.size()) /
                                                   static_cast<double>(e.departure - std::max(t0, e.arrival));
      const int av = lp.add_variable(-aw.big_m * dt, 0.0, 1.0);
      aw.alpha_var[a] = av;
      aw.alpha_target[a] = target;
      lp::Row r;
      r.cls = departs ? lp::RowClass::DepartureSoc : lp::RowClass::InterimTarget;
      r.lower = -st.soc;
      r.index = end.index;
      r.value = end.value;
      r.index.push_back(av);
      r.value.push_back(-target);
      lp.add_row(std::move(r));
    }
    lp.add_row(std::move(end));
  }
  return aw;
}

struct WindowSolution {
  lp::Status status = lp::Status::Infeasible;
  std::optional<lp::RowClass> violated;
  std::vector<std::vector<double>> power_w;  // [active session][window step], zero when disconnected
  std::vector<double> alpha;
  std::vector<BandArray> band_power_w;
  double objective = 0.0;
  int iterations = 0;
  int lazy_rows = 0;
  int rows = 0;  // rows in the final working system
  double max_residual = 0.0;
};

/// Warm start from planned powers (kW per session and absolute step, indexed
/// from arrival). Band and discharge values follow cheapest-first from the
/// planned net power; alpha takes the largest value the planned SOC supports.
inline std::vector<double> warm_start(const AssembledWindow& aw, const DispatchContext& ctx,
                                      const std::vector<std::vector<double>>& plan_kw) {
  const auto& lp = aw.lp;
  std::vector<double> x(static_cast<std::size_t>(lp.variable_count()), 0.0);
  const int t0 = aw.window.start;
  const double dt = ctx.net->step_hours();
  std::vector<double> net_kw(aw.band_var.size(), 0.0);
  for (std::size_t a = 0; a < aw.power_var.size(); ++a) {
    const auto& st = aw.window.active[a];
    const EvSession& e = ctx.sessions[static_cast<std::size_t>(st.session)];
    const auto& plan = plan_kw[static_cast<std::size_t>(st.session)];
    const double gain = units::soc_delta_pct(units::watts(1.0), dt, e.capacity_kwh);
    double soc = st.soc;
    for (std::size_t k = 0; k < aw.power_var[a].size(); ++k) {
      const int v = aw.power_var[a][k];
      if (v < 0) continue;
      const std::size_t idx = static_cast<std::size_t>(t0 + static_cast<int>(k) - e.arrival);
      double p = idx < plan.size() ? plan[idx] : 0.0;
      p = std::clamp(p, lp.lower()[static_cast<std::size_t>(v)], lp.upper()[static_cast<std::size_t>(v)]);
      p = std::clamp(p, (e.soc_min - soc) / gain, (e.soc_max - soc) / gain);
      x[static_cast<std::size_t>(v)] = p;
      soc += gain * p;
      net_kw[k] += p;
    }
    if (aw.alpha_var[a] >= 0 && aw.alpha_target[a] > 0.0) {
      x[static_cast<std::size_t>(aw.alpha_var[a])] = std::clamp(soc / aw.alpha_target[a], 0.0, 1.0);
    }
  }
  for (std::size_t k = 0; k < aw.band_var.size(); ++k) {
    const int dv = aw.discharge_var[k];
    if (dv < 0) continue;
    double rest = std::max(0.0, net_kw[k]);
    for (int p = 0; p < kBands; ++p) {
      const int bv = aw.band_var[k][p];
      const double take = std::min(rest, lp.upper()[static_cast<std::size_t>(bv)]);
      x[static_cast<std::size_t>(bv)] = take;
      rest -= take;
    }
    x[static_cast<std::size_t>(dv)] = std::min(0.0, net_kw[k]);
  }
  return x;
}

/// Makes the lazy SOC rows that the warm start holds at a limit active from the outset.
inline void activate_binding_soc_rows(AssembledWindow& aw, double tol = 1e-6) {
  if (aw.start.empty()) return;
  auto& rows = aw.lp.rows();
  for (const auto& session_rows : aw.soc_rows) {
    for (const int r : session_rows) {
      auto& row = rows[static_cast<std::size_t>(r)];
      const double delta = row.activity(aw.start);
      if (delta <= row.lower + tol || delta >= row.upper - tol) row.lazy = false;
    }
  }
}

inline WindowSolution solve_window(const AssembledWindow& aw, const lp::SolveOptions& opt = {}) {
  const auto sol = lp::solve(aw.lp, opt, aw.start);
  WindowSolution ws;
  ws.status = sol.status;
  ws.violated = sol.violated_class;
  ws.iterations = sol.iterations;
  ws.lazy_rows = sol.lazy_rows_added;
  ws.rows = sol.rows;
  ws.max_residual = sol.max_residual;
  if (sol.status != lp::Status::Optimal) return ws;
  ws.objective = sol.objective;
  for (std::size_t a = 0; a < aw.power_var.size(); ++a) {
    std::vector<double> p;
    for (int v : aw.power_var[a]) p.push_back(v >= 0 ? units::watts(sol.x[static_cast<std::size_t>(v)]) : 0.0);
    ws.power_w.push_back(std::move(p));
    ws.alpha.push_back(aw.alpha_var[a] >= 0 ? sol.x[static_cast<std::size_t>(aw.alpha_var[a])] : 0.0);
  }
  for (const auto& bv : aw.band_var) {
    BandArray b{};
    for (int p = 0; p < kBands; ++p) b[p] = bv[p] >= 0 ? units::watts(sol.x[static_cast<std::size_t>(bv[p])]) : 0.0;
    ws.band_power_w.push_back(b);
  }
  return ws;
}

/// Drops every row of the given classes.
inline void drop_rows(lp::LpProblem& lp, std::initializer_list<lp::RowClass> classes) {
  auto& rows = lp.rows();
  rows.erase(std::remove_if(rows.begin(), rows.end(),
                            [&](const lp::Row& r) {
                              return std::find(classes.begin(), classes.end(), r.cls) != classes.end();
                            }),
             rows.end());
}

/// Relaxes the lower SOC bound at departure (and in between) to what the vehicle
/// can still hold, keeping the transformer row intact.
inline void relax_soc_minimum(lp::LpProblem& lp) {
  for (auto& r : lp.rows()) {
    if (r.cls == lp::RowClass::DepartureMinimum || r.cls == lp::RowClass::SocBound) r.lower = -lp::kInf;
  }
}

struct FallbackEvent {
  int step = 0;
  std::string action;
  std::string reason;
};

struct RhoResult {
  ChargeSchedule schedule;
  std::vector<FallbackEvent> events;
  int windows = 0;
  long long lp_iterations = 0;
  int lazy_rows = 0;
  int max_rows = 0;
};

/// Solves one window, applying the fallback policy on infeasibility.
inline WindowSolution solve_with_fallback(AssembledWindow& aw, const DispatchSettings& s,
                                          std::vector<FallbackEvent>* events) {
  auto ws = solve_window(aw, s.solver);
  const int step = aw.window.start;
  auto note = [&](const char* action) {
    const std::string reason = ws.violated ? std::string(lp::to_string(*ws.violated)) : std::string(lp::to_string(ws.status));
    spdlog::warn("step {}: window infeasible ({}), {}", step, reason, action);
    if (events != nullptr) events->push_back({step, action, reason});
  };
  if (ws.status == lp::Status::Infeasible && s.fallback.drop_power_flow &&
      s.constraints == GridConstraints::PowerFlow) {
    note("dropping power-flow rows");
    drop_rows(aw.lp, {lp::RowClass::LineCurrent, lp::RowClass::Voltage});
    ws = solve_window(aw, s.solver);
  }
  if (ws.status == lp::Status::Infeasible && s.fallback.relax_departure_minimum) {
    note("relaxing minimum SOC rows");
    relax_soc_minimum(aw.lp);
    ws = solve_window(aw, s.solver);
  }
  if (ws.status != lp::Status::Optimal) {
    const std::string what = ws.violated ? std::string(lp::to_string(*ws.violated)) : std::string(lp::to_string(ws.status));
    throw InfeasibleError(fmt::format("dispatch window at step {} is {} ({})", step, lp::to_string(ws.status), what));
  }
  return ws;
}

/// Sessions connected at step `t` with their SOC at the start of the step.
inline std::vector<SessionState> active_sessions(std::span<const EvSession> sessions, std::span<const double> soc, int t) {
  std::vector<SessionState> out;
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    if (sessions[i].active_at(t)) out.push_back({static_cast<int>(i), soc[i]});
  }
  return out;
}

/// Receding-horizon control: at each step solve a window over the sessions
/// that have already arrived, commit the first step and roll forward.
inline RhoResult run_rho(const DispatchContext& ctx, const DispatchSettings& s) {
  const Network& net = *ctx.net;
  const int horizon = net.horizon();
  const double dt = net.step_hours();
  if (ctx.prices == nullptr || ctx.prices->size() < horizon) throw Error("day-ahead prices shorter than the horizon");
  if (static_cast<int>(ctx.forecast_w.size()) < horizon) throw Error("load forecast shorter than the horizon");
  DispatchSettings settings = s;
  if (!settings.big_m) settings.big_m = default_big_m(ctx, s);

  RhoResult res;
  std::vector<double> soc;
  std::vector<std::vector<double>> power(ctx.sessions.size());
  std::vector<std::vector<double>> plan_kw;  // latest window plan, per session from arrival
  for (const auto& e : ctx.sessions) {
    soc.push_back(e.soc_init);
    plan_kw.emplace_back(static_cast<std::size_t>(e.duration()), 0.0);
  }

  for (int t = 0; t < horizon; ++t) {
    DispatchWindow w;
    w.start = t;
    w.length = std::min(settings.window, horizon - t);
    w.active = active_sessions(ctx.sessions, soc, t);
    if (w.active.empty()) continue;
    auto aw = assemble(ctx, w, settings);
    if (settings.warm_start) {
      aw.start = warm_start(aw, ctx, plan_kw);
      activate_binding_soc_rows(aw);
    }
    const auto ws = solve_with_fallback(aw, settings, &res.events);
    ++res.windows;
    res.lp_iterations += ws.iterations;
    res.lazy_rows += ws.lazy_rows;
    res.max_rows = std::max(res.max_rows, ws.rows);
    for (std::size_t a = 0; a < w.active.size(); ++a) {
      const int i = w.active[a].session;
      const EvSession& e = ctx.sessions[static_cast<std::size_t>(i)];
      for (std::size_t k = 0; k < ws.power_w[a].size(); ++k) {
        const std::size_t idx = static_cast<std::size_t>(t + static_cast<int>(k) - e.arrival);
        if (idx < plan_kw[static_cast<std::size_t>(i)].size()) plan_kw[static_cast<std::size_t>(i)][idx] = units::kw(ws.power_w[a][k]);
      }
      // Clamp solver round-off to the power and SOC limits.
      double p = std::clamp(ws.power_w[a][0], -e.max_discharge_w(), e.rated_power_w);
      const double per_w = units::soc_delta_pct(1.0, dt, e.capacity_kwh);
      const double lo = std::min(0.0, (e.soc_min - soc[static_cast<std::size_t>(i)]) / per_w);
      const double hi = std::max(0.0, (e.soc_max - soc[static_cast<std::size_t>(i)]) / per_w);
      p = std::clamp(p, lo, hi);
      if (std::abs(p) < 1e-6) p = 0.0;
      power[static_cast<std::size_t>(i)].push_back(p);
      soc[static_cast<std::size_t>(i)] = soc_step(soc[static_cast<std::size_t>(i)], p, dt, e.capacity_kwh);
    }
  }

  res.schedule.step_hours = dt;
  res.schedule.horizon = horizon;
  for (std::size_t i = 0; i < ctx.sessions.size(); ++i) {
    res.schedule.sessions.push_back(trace_from_powers(ctx.sessions[i], std::move(power[i]), dt));
  }
  return res;
}

}  // namespace evgrid
