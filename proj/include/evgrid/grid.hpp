#pragma once

// Radial low-voltage network model: buses with per-phase base-load series,
// lines, and the MV/LV transformer at the tree root.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "evgrid/error.hpp"

namespace evgrid {

inline constexpr int kMaxPhases = 3;

/// Per-phase quantity; phases beyond a bus's phase count stay zero.
using PhaseArray = std::array<double, kMaxPhases>;

struct Bus {
  int id = 0;
  int phases = 3;
  double v_nom = 230.0;  // line-to-neutral volts
  std::vector<PhaseArray> p_load;  // W per phase per step, generation negative
  std::vector<PhaseArray> q_load;  // var per phase per step

  bool operator==(const Bus&) const = default;
};

struct Line {
  int from = 0;
  int to = 0;
  double r_ohm = 0.0;
  double x_ohm = 0.0;
  double ampacity_a = 0.0;

  std::complex<double> impedance() const { return {r_ohm, x_ohm}; }
  bool operator==(const Line&) const = default;
};

struct Transformer {
  double rated_va = 0.0;
  int secondary_bus = 0;
  double voltage_ratio = 1.0;

  bool operator==(const Transformer&) const = default;
};

/// Rooted-tree view of the line set, computed once at construction.
struct Topology {
  int root = 0;
  std::vector<int> order;        // buses in breadth-first order, root first
  std::vector<int> parent_bus;   // -1 at the root
  std::vector<int> parent_line;  // line feeding each bus, -1 at the root
  std::vector<int> line_parent;  // upstream endpoint of each line
  std::vector<int> line_child;   // downstream endpoint of each line
  std::vector<int> depth;

  /// Lines from the root down to `bus`, root-side first.
  std::vector<int> path_lines(int bus) const {
    std::vector<int> path;
    for (int b = bus; parent_line[b] >= 0; b = parent_bus[b]) path.push_back(parent_line[b]);
    std::reverse(path.begin(), path.end());
    return path;
  }

  /// True when `bus` lies in the subtree hanging below `line`.
  bool downstream_of(int bus, int line) const {
    const int head = line_child[line];
    for (int b = bus; b >= 0; b = parent_bus[b]) {
      if (b == head) return true;
    }
    return false;
  }
};

class Network {
public:
  Network() = default;

  /// Validates every invariant and builds the rooted topology; throws on violation.
  Network(std::vector<Bus> buses, std::vector<Line> lines, Transformer transformer, int horizon,
          double step_hours = 0.25)
      : buses_(std::move(buses)),
        lines_(std::move(lines)),
        transformer_(transformer),
        horizon_(horizon),
        step_hours_(step_hours) {
    validate();
    build_topology();
  }

  const std::vector<Bus>& buses() const { return buses_; }
  const std::vector<Line>& lines() const { return lines_; }
  const Bus& bus(int id) const { return buses_.at(static_cast<std::size_t>(id)); }
  const Line& line(int index) const { return lines_.at(static_cast<std::size_t>(index)); }
  const Transformer& transformer() const { return transformer_; }
  const Topology& topology() const { return topology_; }
  int horizon() const { return horizon_; }
  double step_hours() const { return step_hours_; }
  int bus_count() const { return static_cast<int>(buses_.size()); }
  int line_count() const { return static_cast<int>(lines_.size()); }
  int root() const { return transformer_.secondary_bus; }

  /// Line index joining `a` and `b` in either orientation, or -1.
  int find_line(int a, int b) const {
    for (int l = 0; l < line_count(); ++l) {
      const auto& ln = lines_[static_cast<std::size_t>(l)];
      if ((ln.from == a && ln.to == b) || (ln.from == b && ln.to == a)) return l;
    }
    return -1;
  }

  bool operator==(const Network& o) const {
    return buses_ == o.buses_ && lines_ == o.lines_ && transformer_ == o.transformer_ &&
           horizon_ == o.horizon_ && step_hours_ == o.step_hours_;
  }

private:
  void validate() {
    if (horizon_ < 1) throw ParseError("network horizon must be at least one step");
    if (!(step_hours_ > 0.0)) throw ParseError("step_hours must be positive");
    if (buses_.empty()) throw TopologyError("network has no buses");
    std::sort(buses_.begin(), buses_.end(), [](const Bus& a, const Bus& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < buses_.size(); ++i) {
      const Bus& b = buses_[i];
      if (b.id != static_cast<int>(i)) {
        throw ParseError(fmt::format("bus ids must be unique and contiguous from 0 (found {} at position {})",
                                     b.id, i));
      }
      if (b.phases != 1 && b.phases != 3) throw ParseError(fmt::format("bus {}: phases must be 1 or 3", b.id));
      if (!(b.v_nom > 0.0)) throw ParseError(fmt::format("bus {}: nominal voltage must be positive", b.id));
      if (static_cast<int>(b.p_load.size()) != horizon_ || static_cast<int>(b.q_load.size()) != horizon_) {
        throw ParseError(fmt::format("bus {}: base load length {} does not match horizon {}", b.id,
                                     b.p_load.size(), horizon_));
      }
    }
    if (!(transformer_.rated_va > 0.0)) throw ParseError("transformer rating must be positive");
    if (transformer_.secondary_bus < 0 || transformer_.secondary_bus >= bus_count()) {
      throw TopologyError(fmt::format("transformer bus {} does not exist", transformer_.secondary_bus));
    }
    for (std::size_t l = 0; l < lines_.size(); ++l) {
      const Line& ln = lines_[l];
      if (ln.from == ln.to) throw TopologyError(fmt::format("line {} is a self loop at bus {}", l, ln.from));
      if (ln.from < 0 || ln.from >= bus_count() || ln.to < 0 || ln.to >= bus_count()) {
        throw TopologyError(fmt::format("line {} references a missing bus ({}-{})", l, ln.from, ln.to));
      }
      if (ln.r_ohm < 0.0) throw ParseError(fmt::format("line {}: negative resistance", l));
      if (ln.x_ohm < 0.0) throw ParseError(fmt::format("line {}: negative reactance", l));
      if (!(ln.ampacity_a > 0.0)) throw ParseError(fmt::format("line {}: ampacity must be positive", l));
    }
  }

  void build_topology() {
    const int n = bus_count();
    // Union-find catches cycles before the traversal.
    std::vector<int> uf(static_cast<std::size_t>(n));
    std::iota(uf.begin(), uf.end(), 0);
    auto find = [&](int v) {
      while (uf[static_cast<std::size_t>(v)] != v) {
        uf[static_cast<std::size_t>(v)] = uf[static_cast<std::size_t>(uf[static_cast<std::size_t>(v)])];
        v = uf[static_cast<std::size_t>(v)];
      }
      return v;
    };
    for (std::size_t l = 0; l < lines_.size(); ++l) {
      const int a = find(lines_[l].from);
      const int b = find(lines_[l].to);
      if (a == b) throw TopologyError(fmt::format("line {} ({}-{}) closes a cycle", l, lines_[l].from, lines_[l].to));
      uf[static_cast<std::size_t>(a)] = b;
    }
    if (line_count() != n - 1) throw TopologyError("network is disconnected (lines != buses - 1)");

    std::vector<std::vector<std::pair<int, int>>> adj(static_cast<std::size_t>(n));
    for (int l = 0; l < line_count(); ++l) {
      const auto& ln = lines_[static_cast<std::size_t>(l)];
      adj[static_cast<std::size_t>(ln.from)].emplace_back(ln.to, l);
      adj[static_cast<std::size_t>(ln.to)].emplace_back(ln.from, l);
    }
    Topology& t = topology_;
    t.root = root();
    t.parent_bus.assign(static_cast<std::size_t>(n), -1);
    t.parent_line.assign(static_cast<std::size_t>(n), -1);
    t.depth.assign(static_cast<std::size_t>(n), -1);
    t.line_parent.assign(lines_.size(), -1);
    t.line_child.assign(lines_.size(), -1);
    t.order.clear();
    t.order.push_back(t.root);
    t.depth[static_cast<std::size_t>(t.root)] = 0;
    for (std::size_t head = 0; head < t.order.size(); ++head) {
      const int b = t.order[head];
      for (auto [nb, l] : adj[static_cast<std::size_t>(b)]) {
        if (t.depth[static_cast<std::size_t>(nb)] >= 0) continue;
        t.depth[static_cast<std::size_t>(nb)] = t.depth[static_cast<std::size_t>(b)] + 1;
        t.parent_bus[static_cast<std::size_t>(nb)] = b;
        t.parent_line[static_cast<std::size_t>(nb)] = l;
        t.line_parent[static_cast<std::size_t>(l)] = b;
        t.line_child[static_cast<std::size_t>(l)] = nb;
        t.order.push_back(nb);
      }
    }
    if (static_cast<int>(t.order.size()) != n) throw TopologyError("network is disconnected from the transformer bus");
    for (int b = 0; b < n; ++b) {
      const int p = t.parent_bus[static_cast<std::size_t>(b)];
      if (p >= 0 && buses_[static_cast<std::size_t>(b)].phases > buses_[static_cast<std::size_t>(p)].phases) {
        throw TopologyError(fmt::format("bus {} has more phases than its upstream bus {}", b, p));
      }
    }
  }

  std::vector<Bus> buses_;
  std::vector<Line> lines_;
  Transformer transformer_;
  int horizon_ = 0;
  double step_hours_ = 0.25;
  Topology topology_;
};

/// Signed sum of all bus active base loads at step `t`, losses excluded.
inline double aggregate_base_load(const Network& net, int t) {
  if (t < 0 || t >= net.horizon()) {
    throw std::out_of_range(fmt::format("step {} outside horizon [0, {})", t, net.horizon()));
  }
  double total = 0.0;
  for (const auto& b : net.buses()) {
    const auto& p = b.p_load[static_cast<std::size_t>(t)];
    for (int ph = 0; ph < b.phases; ++ph) total += p[static_cast<std::size_t>(ph)];
  }
  return total;
}

/// Aggregate base load for every step of the horizon.
inline std::vector<double> aggregate_base_load_series(const Network& net) {
  std::vector<double> out(static_cast<std::size_t>(net.horizon()));
  for (int t = 0; t < net.horizon(); ++t) out[static_cast<std::size_t>(t)] = aggregate_base_load(net, t);
  return out;
}

// ---------------------------------------------------------------------------
// File I/O. Powers in W/var, impedances in ohms, all per phase. A load entry is
// either a number (bus total, split evenly over the bus phases) or an array
// with one value per phase.

namespace detail {

inline std::vector<PhaseArray> parse_phase_series(const nlohmann::json& j, int phases, const char* what,
                                                  int bus_id) {
  if (!j.is_array()) throw ParseError(fmt::format("bus {}: '{}' must be an array", bus_id, what));
  std::vector<PhaseArray> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    PhaseArray a{};
    if (v.is_number()) {
      const double share = v.get<double>() / phases;
      for (int ph = 0; ph < phases; ++ph) a[static_cast<std::size_t>(ph)] = share;
    } else if (v.is_array() && static_cast<int>(v.size()) == phases) {
      for (int ph = 0; ph < phases; ++ph) a[static_cast<std::size_t>(ph)] = v[static_cast<std::size_t>(ph)].get<double>();
    } else {
      throw ParseError(fmt::format("bus {}: '{}' entries must be numbers or {}-element arrays", bus_id, what, phases));
    }
    out.push_back(a);
  }
  return out;
}

inline nlohmann::json phase_series_to_json(const std::vector<PhaseArray>& series, int phases) {
  auto out = nlohmann::json::array();
  for (const auto& a : series) {
    bool balanced = true;
    for (int ph = 1; ph < phases; ++ph) balanced = balanced && a[static_cast<std::size_t>(ph)] == a[0];
    // Emit a total only when splitting it again reproduces the phase values exactly.
    if (balanced && (a[0] * phases) / phases == a[0]) {
      out.push_back(a[0] * phases);
    } else {
      auto arr = nlohmann::json::array();
      for (int ph = 0; ph < phases; ++ph) arr.push_back(a[static_cast<std::size_t>(ph)]);
      out.push_back(std::move(arr));
    }
  }
  return out;
}

}  // namespace detail

inline Network network_from_json(const nlohmann::json& j) {
  try {
    const int horizon = j.at("horizon").get<int>();
    const double step_hours = j.value("step_hours", 0.25);
    if (!j.contains("transformer")) throw TopologyError("network file has no transformer");
    const auto& tj = j.at("transformer");
    Transformer tf{tj.at("rated_kva").get<double>() * 1000.0, tj.at("bus").get<int>(), tj.value("ratio", 1.0)};

    std::vector<Bus> buses;
    for (const auto& bj : j.at("buses")) {
      Bus b;
      b.id = bj.at("id").get<int>();
      b.phases = bj.value("phases", 3);
      b.v_nom = bj.value("v_nom", 230.0);
      if (b.phases != 1 && b.phases != 3) throw ParseError(fmt::format("bus {}: phases must be 1 or 3", b.id));
      if (bj.contains("p_load")) {
        b.p_load = detail::parse_phase_series(bj.at("p_load"), b.phases, "p_load", b.id);
      } else {
        b.p_load.assign(static_cast<std::size_t>(horizon), PhaseArray{});
      }
      if (bj.contains("q_load")) {
        b.q_load = detail::parse_phase_series(bj.at("q_load"), b.phases, "q_load", b.id);
      } else {
        b.q_load.assign(static_cast<std::size_t>(horizon), PhaseArray{});
      }
      buses.push_back(std::move(b));
    }
    std::vector<Line> lines;
    for (const auto& lj : j.at("lines")) {
      lines.push_back(Line{lj.at("from").get<int>(), lj.at("to").get<int>(), lj.at("r_ohm").get<double>(),
                           lj.value("x_ohm", 0.0), lj.at("ampacity_a").get<double>()});
    }
    return Network(std::move(buses), std::move(lines), tf, horizon, step_hours);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("network file: {}", e.what()));
  }
}

inline nlohmann::json to_json(const Network& net) {
  nlohmann::json j;
  j["step_hours"] = net.step_hours();
  j["horizon"] = net.horizon();
  j["transformer"] = {{"rated_kva", net.transformer().rated_va / 1000.0},
                      {"bus", net.transformer().secondary_bus},
                      {"ratio", net.transformer().voltage_ratio}};
  auto buses = nlohmann::json::array();
  for (const auto& b : net.buses()) {
    buses.push_back({{"id", b.id},
                     {"phases", b.phases},
                     {"v_nom", b.v_nom},
                     {"p_load", detail::phase_series_to_json(b.p_load, b.phases)},
                     {"q_load", detail::phase_series_to_json(b.q_load, b.phases)}});
  }
  j["buses"] = std::move(buses);
  auto lines = nlohmann::json::array();
  for (const auto& l : net.lines()) {
    lines.push_back({{"from", l.from}, {"to", l.to}, {"r_ohm", l.r_ohm}, {"x_ohm", l.x_ohm}, {"ampacity_a", l.ampacity_a}});
  }
  j["lines"] = std::move(lines);
  return j;
}

inline Network load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open network file '{}'", path.string()));
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("network file '{}': {}", path.string(), e.what()));
  }
  return network_from_json(j);
}

inline void save_network(const Network& net, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError(fmt::format("cannot write network file '{}'", path.string()));
  out << to_json(net).dump(1) << '\n';
}

/// Copy of `net` truncated to its first `horizon` steps.
inline Network truncate_horizon(const Network& net, int horizon) {
  if (horizon < 1 || horizon > net.horizon()) {
    throw ParseError(fmt::format("cannot truncate a {}-step network to {} steps", net.horizon(), horizon));
  }
  auto buses = net.buses();
  for (auto& b : buses) {
    b.p_load.resize(static_cast<std::size_t>(horizon));
    b.q_load.resize(static_cast<std::size_t>(horizon));
  }
  return Network(std::move(buses), net.lines(), net.transformer(), horizon, net.step_hours());
}

}  // namespace evgrid
