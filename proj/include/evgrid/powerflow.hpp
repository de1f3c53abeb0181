#pragma once

// Backward/forward sweep power flow for radial feeders, its first-order
// linearization around a base operating point, and calibration of the
// line-current correction factor that absorbs the linearization error.
//
// Phases are decoupled (no mutual impedance). A single-phase bus hangs off
// phase a of its upstream bus. Loads are constant power, consumption positive.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "evgrid/error.hpp"
#include "evgrid/grid.hpp"

namespace evgrid {

using Complex = std::complex<double>;
using PhaseComplex = std::array<Complex, kMaxPhases>;

/// Complex power drawn per bus per phase (VA, consumption positive).
using Injections = std::vector<PhaseComplex>;

struct SweepOptions {
  double tol = 1e-6;  // max voltage update, per unit
  int max_iter = 100;
};

struct PowerFlowSolution {
  std::vector<PhaseComplex> bus_voltages;  // volts line-to-neutral
  std::vector<PhaseComplex> line_currents;  // amps, flowing away from the root
  double losses_w = 0.0;
  Complex transformer_power;  // VA delivered through the root, all phases
  int iterations = 0;
  double kcl_residual_a = 0.0;  // worst current mismatch over all buses and phases

  double voltage_magnitude(int bus, int phase) const { return std::abs(bus_voltages[bus][phase]); }
  double current_magnitude(int line, int phase) const { return std::abs(line_currents[line][phase]); }
};

/// Base-load injections of `net` at step `t`.
inline Injections base_injections(const Network& net, int t) {
  Injections inj(net.bus_count(), PhaseComplex{});
  for (const auto& b : net.buses()) {
    for (int ph = 0; ph < b.phases; ++ph) inj[b.id][ph] = Complex(b.p_load[t][ph], b.q_load[t][ph]);
  }
  return inj;
}

/// Adds active power `watts` at `bus`, split evenly over its phases (unity power factor).
inline void add_active_power(Injections& inj, const Network& net, int bus, double watts) {
  const int phases = net.bus(bus).phases;
  for (int ph = 0; ph < phases; ++ph) inj[bus][ph] += Complex(watts / phases, 0.0);
}

namespace detail {

inline Complex phase_rotation(int phase) {
  const double angle = -2.0 * std::numbers::pi / 3.0 * phase;
  return std::polar(1.0, angle);
}

/// Backward accumulation of line currents from bus injection currents.
inline void accumulate_currents(const Network& net, const std::vector<PhaseComplex>& bus_current,
                                std::vector<PhaseComplex>& line_current) {
  const auto& topo = net.topology();
  std::vector<PhaseComplex> subtree = bus_current;
  for (auto it = topo.order.rbegin(); it != topo.order.rend(); ++it) {
    const int b = *it;
    const int l = topo.parent_line[b];
    if (l < 0) continue;
    line_current[l] = subtree[b];
    const int p = topo.parent_bus[b];
    for (int ph = 0; ph < kMaxPhases; ++ph) subtree[p][ph] += subtree[b][ph];
  }
}

}  // namespace detail

/// Solves the radial power flow for constant-power `injections`.
/// Internally per unit on the root nominal voltage and a per-phase base of a
/// third of the transformer rating.
inline PowerFlowSolution solve_sweep(const Network& net, const Injections& injections, SweepOptions opt = {}) {
  if (!(opt.tol > 0.0)) throw Error("sweep tolerance must be positive");
  if (static_cast<int>(injections.size()) != net.bus_count()) throw Error("injection vector does not match bus count");
  const auto& topo = net.topology();
  const int nb = net.bus_count();
  const int nl = net.line_count();
  const double v_base = net.bus(net.root()).v_nom;
  const double s_base = net.transformer().rated_va / 3.0;
  const double z_base = v_base * v_base / s_base;
  const double i_base = s_base / v_base;

  std::vector<PhaseComplex> s_pu(nb, PhaseComplex{});
  for (int b = 0; b < nb; ++b) {
    for (int ph = 0; ph < net.bus(b).phases; ++ph) s_pu[b][ph] = injections[b][ph] / s_base;
  }
  std::vector<Complex> z_pu(nl);
  for (int l = 0; l < nl; ++l) z_pu[l] = net.line(l).impedance() / z_base;

  std::vector<PhaseComplex> v(nb, PhaseComplex{});
  for (int b = 0; b < nb; ++b) {
    for (int ph = 0; ph < net.bus(b).phases; ++ph) v[b][ph] = detail::phase_rotation(ph);
  }
  std::vector<PhaseComplex> bus_i(nb, PhaseComplex{});
  std::vector<PhaseComplex> line_i(nl, PhaseComplex{});

  auto injection_currents = [&] {
    for (int b = 0; b < nb; ++b) {
      for (int ph = 0; ph < net.bus(b).phases; ++ph) bus_i[b][ph] = std::conj(s_pu[b][ph] / v[b][ph]);
    }
  };

  int iter = 0;
  bool converged = false;
  while (iter < opt.max_iter) {
    ++iter;
    injection_currents();
    detail::accumulate_currents(net, bus_i, line_i);
    double max_dv = 0.0;
    for (std::size_t k = 1; k < topo.order.size(); ++k) {
      const int b = topo.order[k];
      const int p = topo.parent_bus[b];
      const int l = topo.parent_line[b];
      for (int ph = 0; ph < net.bus(b).phases; ++ph) {
        const Complex updated = v[p][ph] - z_pu[l] * line_i[l][ph];
        max_dv = std::max(max_dv, std::abs(updated - v[b][ph]));
        v[b][ph] = updated;
      }
    }
    for (int b = 0; b < nb; ++b) {
      for (int ph = 0; ph < net.bus(b).phases; ++ph) {
        const double mag = std::abs(v[b][ph]);
        if (!std::isfinite(mag) || mag < 0.2) {
          throw ConvergenceError(fmt::format("power flow collapsed at bus {} (|V| = {:.3f} pu)", b, mag));
        }
      }
    }
    if (max_dv < opt.tol) {
      converged = true;
      break;
    }
  }
  if (!converged) throw ConvergenceError(fmt::format("power flow did not converge in {} iterations", opt.max_iter));

  // Final backward pass so the returned currents satisfy KCL at the returned voltages.
  injection_currents();
  detail::accumulate_currents(net, bus_i, line_i);

  PowerFlowSolution sol;
  sol.iterations = iter;
  sol.bus_voltages.assign(nb, PhaseComplex{});
  sol.line_currents.assign(nl, PhaseComplex{});
  for (int b = 0; b < nb; ++b) {
    for (int ph = 0; ph < kMaxPhases; ++ph) sol.bus_voltages[b][ph] = v[b][ph] * v_base;
  }
  for (int l = 0; l < nl; ++l) {
    for (int ph = 0; ph < kMaxPhases; ++ph) sol.line_currents[l][ph] = line_i[l][ph] * i_base;
  }
  for (int l = 0; l < nl; ++l) {
    for (int ph = 0; ph < kMaxPhases; ++ph) {
      sol.losses_w += std::norm(sol.line_currents[l][ph]) * net.line(l).r_ohm;
    }
  }
  // Power through the root: own injection plus everything leaving on its lines.
  const int root = net.root();
  Complex s_root = 0.0;
  for (int ph = 0; ph < net.bus(root).phases; ++ph) s_root += injections[root][ph];
  for (int l = 0; l < nl; ++l) {
    if (topo.line_parent[l] != root) continue;
    for (int ph = 0; ph < kMaxPhases; ++ph) {
      s_root += sol.bus_voltages[root][ph] * std::conj(sol.line_currents[l][ph]);
    }
  }
  sol.transformer_power = s_root;

  // KCL at every bus: inflow = outflow + own injection current.
  double kcl = 0.0;
  for (int b = 0; b < nb; ++b) {
    if (b == root) continue;
    for (int ph = 0; ph < net.bus(b).phases; ++ph) {
      Complex balance = sol.line_currents[topo.parent_line[b]][ph];
      balance -= std::conj(injections[b][ph] / sol.bus_voltages[b][ph]);
      for (int l = 0; l < nl; ++l) {
        if (topo.line_parent[l] == b) balance -= sol.line_currents[l][ph];
      }
      kcl = std::max(kcl, std::abs(balance));
    }
  }
  sol.kcl_residual_a = kcl;
  return sol;
}

/// Affine estimates of voltage and current magnitudes from the linear map.
/// Current estimates are signed projections onto the base-point current
/// direction, so reverse flow shows up as a negative value.
struct MagnitudeEstimate {
  std::vector<PhaseArray> voltage;  // volts
  std::vector<PhaseArray> current;  // amps (signed projection)
};

/// First-order model of the sweep around a base operating point.
///
/// Additional constant-power injections are converted to currents at the
/// base-point voltages, accumulated backward once, propagated forward as
/// voltage drops once, and projected onto the base phasor angles. The result
/// is affine in the injections; at zero additional injection it reproduces the
/// base sweep magnitudes.
class LinearGridMap {
public:
  LinearGridMap() = default;

  LinearGridMap(const Network& net, Injections base_injections, SweepOptions opt = {})
      : base_injections_(std::move(base_injections)), base_(solve_sweep(net, base_injections_, opt)) {
    const auto& topo = net.topology();
    const int nb = net.bus_count();
    const int nl = net.line_count();
    bus_phases_.resize(nb);
    for (int b = 0; b < nb; ++b) bus_phases_[b] = net.bus(b).phases;

    base_v_.assign(nb, PhaseArray{});
    base_i_.assign(nl, PhaseArray{});
    std::vector<PhaseComplex> v_dir(nb, PhaseComplex{});
    std::vector<PhaseComplex> i_dir(nl, PhaseComplex{});
    for (int b = 0; b < nb; ++b) {
      for (int ph = 0; ph < bus_phases_[b]; ++ph) {
        const Complex v = base_.bus_voltages[b][ph];
        base_v_[b][ph] = std::abs(v);
        v_dir[b][ph] = v / std::abs(v);
      }
    }
    for (int l = 0; l < nl; ++l) {
      const int child = topo.line_child[l];
      for (int ph = 0; ph < bus_phases_[child]; ++ph) {
        const Complex i = base_.line_currents[l][ph];
        base_i_[l][ph] = std::abs(i);
        // With no base current the direction of a unity-power-factor load current is used.
        const double ref = 1e-9 * net.transformer().rated_va / net.bus(net.root()).v_nom;
        i_dir[l][ph] = std::abs(i) > ref ? i / std::abs(i) : v_dir[child][ph];
      }
    }

    // Common-path impedance between every pair of buses.
    Eigen::MatrixXcd z_common = Eigen::MatrixXcd::Zero(nb, nb);
    std::vector<std::vector<int>> paths(nb);
    for (int b = 0; b < nb; ++b) paths[b] = topo.path_lines(b);
    for (int b = 0; b < nb; ++b) {
      for (int k = 0; k < nb; ++k) {
        Complex z = 0.0;
        const auto& pb = paths[b];
        const auto& pk = paths[k];
        for (std::size_t i = 0; i < std::min(pb.size(), pk.size()) && pb[i] == pk[i]; ++i) {
          z += net.line(pb[i]).impedance();
        }
        z_common(b, k) = z;
      }
    }

    for (int ph = 0; ph < kMaxPhases; ++ph) {
      vp_[ph] = Eigen::MatrixXd::Zero(nb, nb);
      vq_[ph] = Eigen::MatrixXd::Zero(nb, nb);
      ip_[ph] = Eigen::MatrixXd::Zero(nl, nb);
      iq_[ph] = Eigen::MatrixXd::Zero(nl, nb);
      rootp_[ph] = Eigen::VectorXd::Zero(nb);
      rootq_[ph] = Eigen::VectorXd::Zero(nb);
    }
    const int root = net.root();
    for (int k = 0; k < nb; ++k) {
      for (int ph = 0; ph < bus_phases_[k]; ++ph) {
        const Complex v0 = base_.bus_voltages[k][ph];
        // Current drawn per watt and per var at the base voltage.
        const Complex di_p = std::conj(Complex(1.0, 0.0) / v0);
        const Complex di_q = std::conj(Complex(0.0, 1.0) / v0);
        for (int b = 0; b < nb; ++b) {
          if (ph >= bus_phases_[b]) continue;
          const Complex dv_p = -z_common(b, k) * di_p;
          const Complex dv_q = -z_common(b, k) * di_q;
          vp_[ph](b, k) = (dv_p * std::conj(v_dir[b][ph])).real();
          vq_[ph](b, k) = (dv_q * std::conj(v_dir[b][ph])).real();
        }
        for (int l : paths[k]) {
          ip_[ph](l, k) = (di_p * std::conj(i_dir[l][ph])).real();
          iq_[ph](l, k) = (di_q * std::conj(i_dir[l][ph])).real();
        }
        const Complex vr = base_.bus_voltages[root][ph];
        rootp_[ph](k) = (vr * std::conj(di_p)).real();
        rootq_[ph](k) = (vr * std::conj(di_q)).real();
      }
    }
  }

  const PowerFlowSolution& base() const { return base_; }
  const Injections& base_injections() const { return base_injections_; }
  double base_voltage(int bus, int phase) const { return base_v_[bus][phase]; }
  double base_current(int line, int phase) const { return base_i_[line][phase]; }
  double base_root_power() const { return base_.transformer_power.real(); }

  /// d|V_bus,phase| / dP at (inj_bus, same phase), volts per watt.
  double voltage_sensitivity(int bus, int phase, int inj_bus) const { return vp_[phase](bus, inj_bus); }
  double voltage_sensitivity_q(int bus, int phase, int inj_bus) const { return vq_[phase](bus, inj_bus); }
  /// d|I_line,phase| / dP at (inj_bus, same phase), amps per watt.
  double current_sensitivity(int line, int phase, int inj_bus) const { return ip_[phase](line, inj_bus); }
  double current_sensitivity_q(int line, int phase, int inj_bus) const { return iq_[phase](line, inj_bus); }
  /// dP_root / dP at (inj_bus, phase); exceeds one by the marginal loss factor.
  double root_power_sensitivity(int phase, int inj_bus) const { return rootp_[phase](inj_bus); }

  /// Sensitivities for a balanced active injection at `bus` (split over its phases), per watt of total.
  double bus_voltage_sensitivity(int bus, int phase, int inj_bus) const {
    return phase < bus_phases_[inj_bus] ? vp_[phase](bus, inj_bus) / bus_phases_[inj_bus] : 0.0;
  }
  double bus_current_sensitivity(int line, int phase, int inj_bus) const {
    return phase < bus_phases_[inj_bus] ? ip_[phase](line, inj_bus) / bus_phases_[inj_bus] : 0.0;
  }
  double bus_root_power_sensitivity(int inj_bus) const {
    double s = 0.0;
    for (int ph = 0; ph < bus_phases_[inj_bus]; ++ph) s += rootp_[ph](inj_bus) / bus_phases_[inj_bus];
    return s;
  }

  /// Estimates for injections `delta` added on top of the base point.
  MagnitudeEstimate evaluate_delta(const Injections& delta) const {
    const int nb = static_cast<int>(base_v_.size());
    const int nl = static_cast<int>(base_i_.size());
    MagnitudeEstimate est{base_v_, base_i_};
    for (int ph = 0; ph < kMaxPhases; ++ph) {
      Eigen::VectorXd p = Eigen::VectorXd::Zero(nb);
      Eigen::VectorXd q = Eigen::VectorXd::Zero(nb);
      for (int k = 0; k < nb; ++k) {
        p(k) = delta[k][ph].real();
        q(k) = delta[k][ph].imag();
      }
      const Eigen::VectorXd dv = vp_[ph] * p + vq_[ph] * q;
      const Eigen::VectorXd di = ip_[ph] * p + iq_[ph] * q;
      for (int b = 0; b < nb; ++b) {
        if (ph < bus_phases_[b]) est.voltage[b][ph] += dv(b);
      }
      for (int l = 0; l < nl; ++l) est.current[l][ph] += di(l);
    }
    return est;
  }

  /// Estimates at absolute injections (difference to the base point is linearized).
  MagnitudeEstimate evaluate(const Injections& absolute) const {
    Injections delta = absolute;
    for (std::size_t b = 0; b < delta.size(); ++b) {
      for (int ph = 0; ph < kMaxPhases; ++ph) delta[b][ph] -= base_injections_[b][ph];
    }
    return evaluate_delta(delta);
  }

  /// Linearized root active power for additional injections `delta`.
  double root_power_delta(const Injections& delta) const {
    double p = 0.0;
    for (std::size_t k = 0; k < delta.size(); ++k) {
      for (int ph = 0; ph < kMaxPhases; ++ph) {
        p += rootp_[ph](static_cast<Eigen::Index>(k)) * delta[k][ph].real() +
             rootq_[ph](static_cast<Eigen::Index>(k)) * delta[k][ph].imag();
      }
    }
    return p;
  }

private:
  Injections base_injections_;
  PowerFlowSolution base_;
  std::vector<int> bus_phases_;
  std::vector<PhaseArray> base_v_;
  std::vector<PhaseArray> base_i_;
  std::array<Eigen::MatrixXd, kMaxPhases> vp_, vq_, ip_, iq_;
  std::array<Eigen::VectorXd, kMaxPhases> rootp_, rootq_;
};

inline LinearGridMap build_linear_map(const Network& net, const Injections& base_injections, SweepOptions opt = {}) {
  return LinearGridMap(net, base_injections, opt);
}

/// Multiplier applied to line ampacities in the optimizer's current limits.
struct CorrectionFactor {
  double kappa = 1.0;
};

/// Smallest ratio of linear estimate to exact value, clamped to one.
/// Pairs whose exact value is not positive are ignored.
inline CorrectionFactor correction_from_estimates(std::span<const double> linear, std::span<const double> exact) {
  if (linear.size() != exact.size()) throw Error("estimate and reference sizes differ");
  double kappa = 1.0;
  bool any = false;
  for (std::size_t i = 0; i < linear.size(); ++i) {
    if (!(exact[i] > 0.0)) continue;
    any = true;
    kappa = std::min(kappa, std::abs(linear[i]) / exact[i]);
  }
  if (!any) throw Error("no usable calibration points");
  if (!(kappa > 0.0)) throw Error("calibration produced a non-positive correction factor");
  return {kappa};
}

struct CalibrationOptions {
  double min_loading = 0.05;  // ignore lines below this fraction of ampacity
  SweepOptions sweep{};
};

/// Correction factor such that enforcing linear current <= kappa * ampacity
/// implies sweep current <= ampacity on every calibration scenario.
/// `scenarios` are absolute injections; the map linearizes their difference
/// to its own base point.
inline CorrectionFactor calibrate_correction(const Network& net, std::span<const Injections> scenarios,
                                             const LinearGridMap& map, CalibrationOptions opt = {}) {
  if (scenarios.empty()) throw Error("calibration needs at least one scenario");
  std::vector<double> linear;
  std::vector<double> exact;
  for (std::size_t s = 0; s < scenarios.size(); ++s) {
    PowerFlowSolution sol;
    try {
      sol = solve_sweep(net, scenarios[s], opt.sweep);
    } catch (const ConvergenceError& e) {
      throw ConvergenceError(fmt::format("calibration scenario {}: {}", s, e.what()));
    }
    const auto est = map.evaluate(scenarios[s]);
    for (int l = 0; l < net.line_count(); ++l) {
      const int phases = net.bus(net.topology().line_child[l]).phases;
      for (int ph = 0; ph < phases; ++ph) {
        const double i = sol.current_magnitude(l, ph);
        if (i < opt.min_loading * net.line(l).ampacity_a) continue;
        linear.push_back(est.current[l][ph]);
        exact.push_back(i);
      }
    }
  }
  if (exact.empty()) return {1.0};
  return correction_from_estimates(linear, exact);
}

/// Calibration case linearized at its own operating point.
struct CalibrationCase {
  Injections base;        // linearization point
  Injections injections;  // operating point checked against the sweep
};

inline CorrectionFactor calibrate_correction(const Network& net, std::span<const CalibrationCase> cases,
                                             CalibrationOptions opt = {}) {
  if (cases.empty()) throw Error("calibration needs at least one scenario");
  double kappa = 1.0;
  for (const auto& c : cases) {
    const LinearGridMap map(net, c.base, opt.sweep);
    const Injections one[] = {c.injections};
    kappa = std::min(kappa, calibrate_correction(net, one, map, opt).kappa);
  }
  return {kappa};
}

}  // namespace evgrid
