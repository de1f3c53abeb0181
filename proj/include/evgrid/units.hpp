#pragma once

// Unit conventions: powers in W at module boundaries, energies in kWh,
// state of charge in percent of usable capacity, time in hours.

namespace evgrid::units {

inline constexpr double kWattsPerKilowatt = 1000.0;
inline constexpr double kPercent = 100.0;

inline constexpr double kw(double watts) { return watts / kWattsPerKilowatt; }
inline constexpr double watts(double kilowatts) { return kilowatts * kWattsPerKilowatt; }

/// Energy in kWh delivered by `power_w` held for `dt_h` hours.
inline constexpr double energy_kwh(double power_w, double dt_h) { return kw(power_w) * dt_h; }

/// SOC change in percentage points for `power_w` over `dt_h` on a `capacity_kwh` battery.
inline constexpr double soc_delta_pct(double power_w, double dt_h, double capacity_kwh) {
  return kPercent * energy_kwh(power_w, dt_h) / capacity_kwh;
}

}  // namespace evgrid::units
