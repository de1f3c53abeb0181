#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "evgrid/scenario.hpp"

using namespace evgrid;

namespace {

const std::filesystem::path kData = EVGRID_DATA_DIR;

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json small_config() {
  return {
      {"network", "feeder13.json"},
      {"prices", "demo_prices.csv"},
      {"days", 1},
      {"seed", 5},
      {"charging_points", {{"buses", {4, 5, 6, 8}}, {"rated_kw", 11.0}}},
      {"dispatch", {{"window", 24}}},
  };
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("evgrid_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST(StandardScenarios, MatrixDefaults) {
  const auto s0 = standard_scenario("S0");
  EXPECT_TRUE(s0.uncontrolled);

  const auto s1 = standard_scenario("S1");
  EXPECT_EQ(s1.tariff, TariffMode::DayAhead);
  EXPECT_EQ(s1.v2g_share, 0.8);
  EXPECT_EQ(s1.constraints, GridConstraints::Transformer);
  EXPECT_TRUE(s1.objective.energy && s1.objective.soc);
  EXPECT_FALSE(s1.objective.network || s1.objective.losses);

  const auto s2 = standard_scenario("S2");
  EXPECT_EQ(s2.tariff, TariffMode::Stacked);
  EXPECT_EQ(s2.v2g_share, 0.8);
  EXPECT_TRUE(s2.objective.network);
  EXPECT_FALSE(s2.objective.losses);

  const auto s3 = standard_scenario("S3");
  EXPECT_EQ(s3.tariff, TariffMode::Stacked);
  EXPECT_EQ(s3.v2g_share, 0.0);

  const auto s4 = standard_scenario("S4");
  EXPECT_EQ(s4.constraints, GridConstraints::PowerFlow);
  EXPECT_TRUE(s4.objective.energy && s4.objective.network && s4.objective.losses && s4.objective.soc);
}

TEST(StandardScenarios, UnknownLabel) { EXPECT_THROW(standard_scenario("S9"), ParseError); }

TEST(ExperimentConfig, BundledDemoParses) {
  const auto c = load_experiment(kData / "demo.json");
  EXPECT_EQ(c.days, 2);
  EXPECT_EQ(c.points.buses.size(), 8u);
  EXPECT_EQ(c.dispatch.window, 96);
  EXPECT_EQ(c.dispatch.feeder.lines, (std::vector<int>{1, 2, 3, 4, 5}));
  EXPECT_EQ(c.calibration.count, 20);
  EXPECT_TRUE(std::filesystem::exists(c.network_path));
}

TEST(ExperimentConfig, ScenarioOverrides) {
  auto j = small_config();
  j["scenarios"] = {{"S2", {{"v2g_share", 0.5}}},
                    {"S5", {{"base", "S2"}, {"constraint_set", "transformer+pf"}, {"objective_components", {"I", "IV"}}}}};
  const auto c = parse_experiment(j, kData);
  EXPECT_EQ(c.scenario("S2").v2g_share, 0.5);
  const auto s5 = c.scenario("S5");
  EXPECT_EQ(s5.label, "S5");
  EXPECT_EQ(s5.constraints, GridConstraints::PowerFlow);
  EXPECT_FALSE(s5.objective.network);
  EXPECT_EQ(c.scenario("S3").v2g_share, 0.0);
}

TEST(ExperimentConfig, InvalidOverridesAreRejected) {
  auto j = small_config();
  j["scenarios"] = {{"S1", {{"objective_components", {"I", "II"}}}}};
  EXPECT_THROW(parse_experiment(j, kData), ParseError);
  j["scenarios"] = {{"S2", {{"v2g_share", 1.5}}}};
  EXPECT_THROW(parse_experiment(j, kData), ParseError);
  j["scenarios"] = {{"S2", {{"constraint_set", "everything"}}}};
  EXPECT_THROW(parse_experiment(j, kData), ParseError);
  j = small_config();
  j["tariff"] = {{"band_fractions", {0.8, 0.6, 1.0}}};
  EXPECT_THROW(parse_experiment(j, kData), Error);
  j = small_config();
  j.erase("network");
  EXPECT_THROW(parse_experiment(j, kData), ParseError);
}

TEST(Experiment, MissingPricesFileNamesPath) {
  auto j = small_config();
  j["prices"] = "no_such_prices.csv";
  const auto c = parse_experiment(j, kData);
  try {
    prepare_experiment(c);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("no_such_prices.csv"), std::string::npos);
  }
}

TEST(Experiment, HorizonTruncatedToDays) {
  const auto ex = prepare_experiment(parse_experiment(small_config(), kData));
  EXPECT_EQ(ex.net.horizon(), 96);
  EXPECT_EQ(ex.prices.size(), 96u);
  EXPECT_EQ(ex.points.size(), 4u);
}

TEST(Experiment, SessionDrawsSharedAcrossScenarios) {
  const auto ex = prepare_experiment(parse_experiment(small_config(), kData));
  const auto a = scenario_sessions(ex, standard_scenario("S2"));
  const auto b = scenario_sessions(ex, standard_scenario("S3"));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].arrival, b[i].arrival);
    EXPECT_EQ(a[i].departure, b[i].departure);
    EXPECT_EQ(a[i].soc_init, b[i].soc_init);
    EXPECT_FALSE(b[i].v2g);
  }
}

TEST(Experiment, RunsAreDeterministic) {
  const auto ex = prepare_experiment(parse_experiment(small_config(), kData));
  const std::vector<std::string> labels{"S0", "S1", "S2", "S3"};
  const auto first = scratch("det_a");
  const auto second = scratch("det_b");
  const auto r1 = run_scenarios(ex, labels);
  write_experiment_reports(ex, r1, r1.front().metrics, first);
  const auto r2 = run_scenarios(ex, labels, 2);
  write_experiment_reports(ex, r2, r2.front().metrics, second);
  for (const char* f : {"metrics.csv", "violations.csv", "trace_S2.csv"}) {
    const auto a = slurp(first / f);
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, slurp(second / f)) << f;
  }
}

TEST(Experiment, ScheduledSocStaysWithinLimits) {
  const auto ex = prepare_experiment(parse_experiment(small_config(), kData));
  const auto run = run_scenario(ex, standard_scenario("S2"), 1.0);
  for (std::size_t i = 0; i < run.sessions.size(); ++i) {
    const auto& s = run.sessions[i];
    ASSERT_EQ(run.schedule.sessions[i].soc_pct.size(), static_cast<std::size_t>(s.duration() + 1));
    for (const double soc : run.schedule.sessions[i].soc_pct) {
      EXPECT_GE(soc, s.soc_min - 1e-9);
      EXPECT_LE(soc, s.soc_max + 1e-9);
    }
  }
}

#ifdef EVGRID_CLI
TEST(Cli, ExitCodes) {
  const auto dir = scratch("cli");
  auto j = small_config();
  j["network"] = (kData / "feeder13.json").string();
  j["prices"] = (dir / "missing.csv").string();
  std::ofstream(dir / "bad.json") << j.dump();
  const std::string cli = EVGRID_CLI;
  const auto quiet = " > " + (dir / "log.txt").string() + " 2>&1";

  int rc = std::system((cli + " run --config " + (dir / "bad.json").string() + " --out " + dir.string() + quiet).c_str());
  ASSERT_TRUE(WIFEXITED(rc));
  EXPECT_EQ(WEXITSTATUS(rc), 2);
  EXPECT_NE(slurp(dir / "log.txt").find("missing.csv"), std::string::npos);

  j["prices"] = (kData / "demo_prices.csv").string();
  std::ofstream(dir / "good.json") << j.dump();
  rc = std::system((cli + " run --config " + (dir / "good.json").string() + " --scenarios S0,S7 --out " +
                    dir.string() + quiet).c_str());
  EXPECT_EQ(WEXITSTATUS(rc), 2);

  rc = std::system((cli + " run --config " + (dir / "good.json").string() + " --scenarios S0,S1 --out " +
                    (dir / "out").string() + quiet).c_str());
  EXPECT_EQ(WEXITSTATUS(rc), 0);
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "metrics.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "trace_S1.csv"));
}
#endif
