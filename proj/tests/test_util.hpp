#pragma once

#include <vector>

#include "evgrid/grid.hpp"

namespace evgrid::fixtures {

/// Root bus 0 plus one load bus, joined by a single line.
inline Network two_bus(double r_ohm, double x_ohm, int horizon, double p_load_w = 0.0, int phases = 3,
                       double ampacity = 100.0, double rated_va = 400e3) {
  Bus root{0, 3, 230.0, std::vector<PhaseArray>(horizon, PhaseArray{}), std::vector<PhaseArray>(horizon, PhaseArray{})};
  PhaseArray load{};
  for (int ph = 0; ph < phases; ++ph) load[ph] = p_load_w / phases;
  Bus leaf{1, phases, 230.0, std::vector<PhaseArray>(horizon, load), std::vector<PhaseArray>(horizon, PhaseArray{})};
  return Network({root, leaf}, {Line{0, 1, r_ohm, x_ohm, ampacity}}, Transformer{rated_va, 0, 1.0}, horizon);
}

}  // namespace evgrid::fixtures

namespace evgrid::fixtures {

/// Chain feeder 0-1-...-(n-1); every non-root bus carries `load_w[t]` (three-phase total) at step t.
inline Network chain(int n, const std::vector<double>& load_w, double r_ohm, double x_ohm, double ampacity,
                     double rated_va) {
  const int horizon = static_cast<int>(load_w.size());
  std::vector<Bus> buses;
  std::vector<Line> lines;
  for (int b = 0; b < n; ++b) {
    Bus bus{b, 3, 230.0, std::vector<PhaseArray>(horizon, PhaseArray{}), std::vector<PhaseArray>(horizon, PhaseArray{})};
    if (b > 0) {
      for (int t = 0; t < horizon; ++t) bus.p_load[t] = {load_w[t] / 3, load_w[t] / 3, load_w[t] / 3};
      lines.push_back(Line{b - 1, b, r_ohm, x_ohm, ampacity});
    }
    buses.push_back(std::move(bus));
  }
  return Network(buses, lines, Transformer{rated_va, 0, 1.0}, horizon);
}

}  // namespace evgrid::fixtures
