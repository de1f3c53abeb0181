#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "evgrid/grid.hpp"
#include "test_util.hpp"

using namespace evgrid;

namespace {

const std::filesystem::path kTestData = EVGRID_TEST_DATA;
const std::filesystem::path kData = EVGRID_DATA_DIR;

}  // namespace

TEST(LoadNetwork, TwoBus) {
  const auto net = load_network(kTestData / "two_bus.json");
  EXPECT_EQ(net.bus_count(), 2);
  EXPECT_EQ(net.line_count(), 1);
  EXPECT_EQ(net.bus(1).phases, 1);
  EXPECT_EQ(net.bus(1).p_load[0][0], 2300.0);
}

TEST(LoadNetwork, CycleIsRejected) { EXPECT_THROW(load_network(kTestData / "cycle.json"), TopologyError); }

TEST(LoadNetwork, NegativeResistanceIsRejected) {
  EXPECT_THROW(load_network(kTestData / "negative_r.json"), ParseError);
}

TEST(LoadNetwork, MissingTransformerIsRejected) {
  EXPECT_THROW(load_network(kTestData / "no_transformer.json"), Error);
}

TEST(LoadNetwork, MissingFileNamesPath) {
  try {
    load_network(kTestData / "absent.json");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("absent.json"), std::string::npos);
  }
}

TEST(LoadNetwork, BundledFeeder) {
  const auto net = load_network(kData / "feeder13.json");
  EXPECT_EQ(net.bus_count(), 13);
  EXPECT_EQ(net.line_count(), 12);
  EXPECT_EQ(net.transformer().rated_va, 400e3);
  EXPECT_EQ(net.root(), 0);
  EXPECT_EQ(net.horizon(), 192);
}

TEST(LoadNetwork, DisconnectedIsRejected) {
  const int h = 1;
  std::vector<Bus> buses;
  for (int b = 0; b < 3; ++b) buses.push_back(Bus{b, 3, 230.0, std::vector<PhaseArray>(h), std::vector<PhaseArray>(h)});
  EXPECT_THROW(Network(buses, {Line{0, 1, 0.1, 0.0, 10.0}}, Transformer{1e3, 0, 1.0}, h), TopologyError);
}

TEST(Aggregate, ZeroLoads) {
  const auto net = fixtures::two_bus(0.1, 0.0, 3);
  EXPECT_EQ(aggregate_base_load(net, 1), 0.0);
}

TEST(Aggregate, SignedSum) {
  const int h = 1;
  std::vector<Bus> buses{Bus{0, 3, 230.0, {PhaseArray{}}, {PhaseArray{}}},
                         Bus{1, 3, 230.0, {PhaseArray{1e3, 1e3, 1e3}}, {PhaseArray{}}},
                         Bus{2, 1, 230.0, {PhaseArray{-1e3, 0, 0}}, {PhaseArray{}}}};
  const Network net(buses, {Line{0, 1, 0.1, 0.0, 10.0}, Line{1, 2, 0.1, 0.0, 10.0}}, Transformer{1e5, 0, 1.0}, h);
  EXPECT_EQ(aggregate_base_load(net, 0), 2e3);
  EXPECT_THROW(aggregate_base_load(net, 1), std::out_of_range);
}

TEST(Aggregate, BundledFeederRow) {
  const auto net = load_network(kData / "feeder13.json");
  // Independent sum straight from the JSON file.
  std::ifstream in(kData / "feeder13.json");
  nlohmann::json j;
  in >> j;
  double expected = 0.0;
  for (const auto& b : j["buses"]) {
    if (b.contains("p_load")) expected += b["p_load"][72].get<double>();
  }
  EXPECT_NEAR(aggregate_base_load(net, 72), expected, 1e-6);
}

TEST(GridProperty, LinesEqualBusesMinusOne) {
  for (const char* f : {"feeder13.json", "week_network.json"}) {
    const auto net = load_network(kData / f);
    EXPECT_EQ(net.line_count(), net.bus_count() - 1) << f;
  }
}

TEST(GridProperty, AggregateIsLinear) {
  auto net = load_network(kData / "feeder13.json");
  auto buses = net.buses();
  for (auto& b : buses) {
    for (auto& p : b.p_load) {
      for (auto& v : p) v *= 2.0;
    }
  }
  const Network doubled(buses, net.lines(), net.transformer(), net.horizon(), net.step_hours());
  for (int t = 0; t < net.horizon(); ++t) EXPECT_DOUBLE_EQ(aggregate_base_load(doubled, t), 2.0 * aggregate_base_load(net, t));
}

TEST(GridProperty, RoundTrip) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-5e3, 5e3);
  const auto path = std::filesystem::temp_directory_path() / "evgrid_roundtrip.json";
  for (const char* f : {"feeder13.json", "week_network.json"}) {
    const auto net = load_network(kData / f);
    save_network(net, path);
    EXPECT_EQ(load_network(path), net) << f;
  }
  // Unbalanced per-phase loads survive as well.
  const int h = 4;
  std::vector<PhaseArray> p(h), q(h);
  for (int t = 0; t < h; ++t) {
    p[t] = {u(rng), u(rng), u(rng)};
    q[t] = {u(rng), u(rng), u(rng)};
  }
  const Network net({Bus{0, 3, 230.0, std::vector<PhaseArray>(h), std::vector<PhaseArray>(h)}, Bus{1, 3, 231.5, p, q}},
                    {Line{0, 1, 0.013, 0.007, 120.0}}, Transformer{250e3, 0, 26.25}, h);
  save_network(net, path);
  EXPECT_EQ(load_network(path), net);
  std::filesystem::remove(path);
}
