#include <map>
#include <random>

#include <gtest/gtest.h>

#include "evgrid/dispatch.hpp"
#include "evgrid/evaluate.hpp"
#include "test_util.hpp"

using namespace evgrid;

namespace {

EvSession make_session(int point, int arrival, int departure, double soc0, double cap, double pmax_kw, bool v2g) {
  EvSession s;
  s.point = point;
  s.arrival = arrival;
  s.departure = departure;
  s.soc_init = soc0;
  s.capacity_kwh = cap;
  s.rated_power_w = pmax_kw * 1000.0;
  s.v2g = v2g;
  return s;
}

ChargeSchedule fixed_schedule(std::span<const EvSession> sessions, const std::vector<std::vector<double>>& powers,
                              int horizon) {
  ChargeSchedule sched;
  sched.horizon = horizon;
  for (std::size_t i = 0; i < sessions.size(); ++i) sched.sessions.push_back(trace_from_powers(sessions[i], powers[i], 0.25));
  return sched;
}

}  // namespace

TEST(Validate, ZeroScheduleOnLightLoadIsClean) {
  const auto net = fixtures::chain(4, std::vector<double>(8, 3e3), 0.01, 0.0, 200.0, 100e3);
  const std::vector<EvSession> none;
  const auto res = validate(net, none, {}, fixed_schedule(none, {}, 8));
  EXPECT_EQ(res.counts.total(), 0);
  EXPECT_EQ(res.losses_w.size(), 8u);
}

TEST(Validate, UncontrolledOverloadsSmallTransformer) {
  const auto net = fixtures::chain(2, std::vector<double>(8, 10e3), 0.001, 0.0, 500.0, 20e3);
  const std::vector<ChargingPoint> points{{0, 1, 11000.0}, {1, 1, 11000.0}, {2, 1, 11000.0}};
  std::vector<EvSession> sessions;
  for (int c = 0; c < 3; ++c) sessions.push_back(make_session(c, 0, 8, 20.0, 55.0, 11.0, false));
  const auto res = validate(net, sessions, points, uncontrolled_schedule(sessions, 0.25, 8));
  EXPECT_GT(res.counts.transformer, 0);
}

TEST(Validate, HandBuiltLineOverloadCountsEachStep) {
  // 55 A per phase on a 50 A cable for three steps.
  const double p = 3 * 55.0 * 230.0;
  const std::vector<ChargingPoint> points{{0, 2, 40000.0}};
  const std::vector<EvSession> sessions{make_session(0, 0, 6, 0.0, 1000.0, 40.0, false)};
  const auto sched = fixed_schedule(sessions, {{p, p, p, 0.0, 0.0, 0.0}}, 6);

  const auto chain = fixtures::chain(3, std::vector<double>(6, 0.0), 0.001, 0.0, 50.0, 400e3);
  auto net = chain;
  {
    auto lines = chain.lines();
    lines[0].ampacity_a = 500.0;  // transformer line stays clear
    net = Network(chain.buses(), lines, chain.transformer(), 6);
  }
  const auto res = validate(net, sessions, points, sched, {.keep_solutions = true});
  EXPECT_EQ(res.counts.line_congestion, 3);
  EXPECT_EQ(res.counts.transformer_line, 0);
  EXPECT_EQ(res.counts.per_line[1], 3);
  EXPECT_GT(res.solutions[0].current_magnitude(1, 0), 55.0);
  EXPECT_LT(res.solutions[0].current_magnitude(1, 0), 55.1);

  // On a two-bus grid the only line leaves the transformer bus.
  const auto two = fixtures::two_bus(0.001, 0.0, 6, 0.0, 3, 50.0);
  const std::vector<ChargingPoint> leaf{{0, 1, 40000.0}};
  const auto res2 = validate(two, sessions, leaf, sched);
  EXPECT_EQ(res2.counts.transformer_line, 3);
  EXPECT_EQ(res2.counts.line_congestion, 0);
  EXPECT_EQ(res2.counts.per_line[0], 3);
}

TEST(ValidateProperty, CountsMonotoneInScheduleMagnitude) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int T = 10;
  std::vector<double> load(T);
  for (auto& l : load) l = 5e3 + 10e3 * u(rng);
  const auto net = fixtures::chain(5, load, 0.04, 0.01, 90.0, 120e3);
  std::vector<ChargingPoint> points;
  for (int c = 0; c < 6; ++c) points.push_back({c, 1 + c % 4, 22000.0});
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<EvSession> sessions;
    std::vector<std::vector<double>> powers, scaled;
    for (int c = 0; c < 6; ++c) {
      sessions.push_back(make_session(c, 0, T, 0.0, 1000.0, 22.0, false));
      std::vector<double> p(T), q(T);
      for (int t = 0; t < T; ++t) {
        p[t] = 20000.0 * u(rng);
        q[t] = 1.1 * p[t];
      }
      powers.push_back(p);
      scaled.push_back(q);
    }
    const auto a = validate(net, sessions, points, fixed_schedule(sessions, powers, T)).counts;
    const auto b = validate(net, sessions, points, fixed_schedule(sessions, scaled, T)).counts;
    EXPECT_GE(b.line_congestion, a.line_congestion);
    EXPECT_GE(b.transformer_line, a.transformer_line);
    EXPECT_GE(b.transformer, a.transformer);
    EXPECT_GE(b.undervoltage, a.undervoltage);
    EXPECT_GE(b.overvoltage, a.overvoltage);
  }
}

TEST(Trace, ZeroEvsEqualsBaseLoad) {
  const auto net = fixtures::chain(3, {1e3, 2e3, 3e3}, 0.01, 0.0, 100.0, 50e3);
  const std::vector<EvSession> none;
  EXPECT_EQ(transformer_trace(net, none, fixed_schedule(none, {}, 3)), aggregate_base_load_series(net));
}

TEST(Metrics, RmsOfConstantIsItsMagnitude) {
  const std::vector<double> v(17, -42.5);
  EXPECT_DOUBLE_EQ(rms(v), 42.5);
}

TEST(Metrics, IdenticalRunsCompareToZero) {
  StakeholderMetrics m{12.0, 3e5, 40.0, 5.0, 87.5, 8};
  const auto rows = stakeholder_table({{"S0", m}, {"S2", m}});
  for (const auto& r : rows) {
    EXPECT_EQ(r.loss_rel_pct, 0.0);
    EXPECT_EQ(r.rms_rel_pct, 0.0);
    EXPECT_EQ(r.cpo_cost_rel_pct, 0.0);
    EXPECT_EQ(r.metrics.full_soc_pct, 87.5);
  }
  EXPECT_THROW(stakeholder_table({{"S2", m}}), Error);
}

TEST(Metrics, CostDecomposes) {
  const int T = 12;
  const auto net = fixtures::chain(2, std::vector<double>(T, 150e3), 0.001, 0.0, 2000.0, 400e3);
  const std::vector<ChargingPoint> points{{0, 1, 11000.0}, {1, 1, 11000.0}};
  const std::vector<EvSession> sessions{make_session(0, 0, T, 20.0, 55.0, 11.0, false),
                                        make_session(1, 2, T, 40.0, 40.0, 11.0, true)};
  DayAheadPrices prices{std::vector<double>(T, 0.0)};
  for (int t = 0; t < T; ++t) prices.eur_per_kwh[t] = 0.05 + 0.01 * t;
  const auto tariff = make_stacked_tariff(net, {0.6, 0.8, 1.0}, {0.01, 0.05, 0.15});
  const auto sched = uncontrolled_schedule(sessions, 0.25, T);
  const auto val = validate(net, sessions, points, sched);
  const auto m = stakeholder_metrics(net, sessions, sched, val, prices, tariff);
  const auto ev = sched.total_power(sessions);
  const double e = energy_cost(prices, ev, 0.25);
  const double n = network_cost_of_series(tariff, ev, 0.25);
  EXPECT_NEAR(m.cpo_cost(), e + n, 1e-9 * (e + n));
  EXPECT_EQ(m.energy_cost, e);
  EXPECT_EQ(m.network_cost, n);
  EXPECT_EQ(m.full_soc_pct, 100.0);
}

TEST(Metrics, V2gLetsBothVehiclesFinish) {
  // 8 kW of headroom: the early leaver needs 11 kW, which only a discharging neighbour can free up.
  const int T = 10;
  const auto net = fixtures::chain(2, std::vector<double>(T, 12e3), 0.001, 0.0, 500.0, 20e3);
  const std::vector<ChargingPoint> points{{0, 1, 11000.0}, {1, 1, 11000.0}};
  DayAheadPrices prices{std::vector<double>(T, 0.1)};
  const auto tariff = make_stacked_tariff(net, {0.6, 0.8, 1.0}, {0.01, 0.05, 0.15});
  const auto forecast = aggregate_base_load_series(net);
  std::map<bool, double> full;
  for (bool v2g : {false, true}) {
    const std::vector<EvSession> sessions{make_session(0, 0, 4, 0.0, 11.0, 11.0, false),
                                          make_session(1, 0, T, 95.0, 50.0, 11.0, v2g)};
    DispatchContext ctx;
    ctx.net = &net;
    ctx.sessions = sessions;
    ctx.points = points;
    ctx.prices = &prices;
    ctx.tariff = &tariff;
    ctx.forecast_w = forecast;
    const auto rho = run_rho(ctx, DispatchSettings{});
    const auto val = validate(net, sessions, points, rho.schedule);
    full[v2g] = stakeholder_metrics(net, sessions, rho.schedule, val, prices, tariff).full_soc_pct;
  }
  EXPECT_EQ(full[false], 50.0);
  EXPECT_EQ(full[true], 100.0);
}

TEST(Reports, CsvLayout) {
  ScenarioReport r;
  r.label = "S1";
  r.counts.line_congestion = 4;
  r.counts.per_line = {0, 4};
  r.trace_w = {1.0, 2.5};
  const std::vector<ScenarioReport> reports{r};
  EXPECT_EQ(violations_csv(reports),
            "scenario,category,count\nS1,line_congestion,4\nS1,transformer_line,0\nS1,transformer,0\n"
            "S1,undervoltage,0\nS1,overvoltage,0\n");
  EXPECT_EQ(trace_csv(r.trace_w), "step,aggregate_w\n0,1.000\n1,2.500\n");
}
