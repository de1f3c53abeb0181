#!/usr/bin/env python3
"""Generate the bundled network, price and config fixtures.

Run from the repository root:  python3 tools/make_fixtures.py
Outputs are deterministic; the committed files under data/ and tests/data/
are the result of this script.
"""

import json
import math
import random
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "data"
TEST_DATA = ROOT / "tests" / "data"

STEPS_PER_DAY = 96
PF_TAN = math.tan(math.acos(0.95))

# Residential aggregate shape, fraction of the evening peak per hour.
HOURLY_SHAPE = [
    0.55, 0.48, 0.42, 0.40, 0.40, 0.42, 0.50, 0.62, 0.62, 0.58, 0.55, 0.55,
    0.58, 0.55, 0.52, 0.52, 0.60, 0.78, 0.95, 1.00, 0.95, 0.88, 0.80, 0.68,
]

# Day-ahead prices (EUR/kWh): evening peak, late-evening dip, night plateau.
HOURLY_PRICES = [
    0.075, 0.072, 0.070, 0.068, 0.070, 0.080, 0.110, 0.160, 0.180, 0.150, 0.120, 0.100,
    0.090, 0.090, 0.100, 0.120, 0.160, 0.220, 0.280, 0.300, 0.260, 0.150, 0.055, 0.060,
]


def shape_at(step):
    """Piecewise-linear interpolation of the hourly shape at a 15-minute step."""
    h = (step % STEPS_PER_DAY) / 4.0
    i = int(h)
    frac = h - i
    return HOURLY_SHAPE[i] * (1.0 - frac) + HOURLY_SHAPE[(i + 1) % 24] * frac


def load_series(peak_w, days, rng, jitter=0.04):
    day_scale = [1.0 + rng.uniform(-0.03, 0.03) for _ in range(days)]
    out = []
    for t in range(days * STEPS_PER_DAY):
        v = peak_w * shape_at(t) * day_scale[t // STEPS_PER_DAY] * (1.0 + rng.uniform(-jitter, jitter))
        out.append(round(v, 1))
    return out


def bus(bid, p, q=None):
    entry = {"id": bid, "phases": 3, "v_nom": 230.0}
    if p is not None:
        entry["p_load"] = p
        entry["q_load"] = q if q is not None else [round(v * PF_TAN, 1) for v in p]
    return entry


def line(a, b, r, x, amp):
    return {"from": a, "to": b, "r_ohm": r, "x_ohm": x, "ampacity_a": amp}


def feeder13(days, seed=13):
    """Transformer bus 0, busbar 1, feeder A 2-6 (modelled), feeders B 7-9 and C 10-12."""
    rng = random.Random(seed)
    total_peak = 360e3
    shares = {2: 0.08, 3: 0.08, 4: 0.08, 5: 0.08, 6: 0.08, 7: 0.10, 8: 0.10, 9: 0.10, 10: 0.10, 11: 0.10, 12: 0.10}
    buses = [bus(0, None), bus(1, None)]
    for b in range(2, 13):
        buses.append(bus(b, load_series(total_peak * shares[b], days, rng)))
    lines = [line(0, 1, 0.005, 0.003, 600.0)]
    for a, b in [(1, 2), (2, 3), (3, 4), (4, 5), (5, 6)]:
        lines.append(line(a, b, 0.010, 0.004, 250.0))
    for a, b in [(1, 7), (7, 8), (8, 9), (1, 10), (10, 11), (11, 12)]:
        lines.append(line(a, b, 0.010, 0.004, 300.0))
    return {
        "step_hours": 0.25,
        "horizon": days * STEPS_PER_DAY,
        "transformer": {"rated_kva": 400.0, "bus": 0, "ratio": 10500.0 / 400.0},
        "buses": buses,
        "lines": lines,
    }


def week_network(days=7, feeders=4, per_feeder=10, seed=41):
    """Busbar 1 with `feeders` chains of `per_feeder` buses each."""
    rng = random.Random(seed)
    total_peak = 300e3
    n_load = feeders * per_feeder
    buses = [bus(0, None), bus(1, None)]
    lines = [line(0, 1, 0.004, 0.002, 650.0)]
    nxt = 2
    for f in range(feeders):
        prev = 1
        for k in range(per_feeder):
            buses.append(bus(nxt, load_series(total_peak / n_load, days, rng)))
            lines.append(line(prev, nxt, 0.006, 0.003, 260.0))
            prev = nxt
            nxt += 1
    return {
        "step_hours": 0.25,
        "horizon": days * STEPS_PER_DAY,
        "transformer": {"rated_kva": 400.0, "bus": 0, "ratio": 10500.0 / 400.0},
        "buses": buses,
        "lines": lines,
    }


def prices_csv(days, seed):
    rng = random.Random(seed)
    rows = ["hour,eur_per_kwh"]
    for d in range(days):
        for h in range(24):
            p = HOURLY_PRICES[h] * (1.0 + rng.uniform(-0.02, 0.02))
            rows.append(f"{d * 24 + h},{p:.4f}")
    return "\n".join(rows) + "\n"


def write_json(path, obj, indent=None):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=indent) + "\n")


def main():
    write_json(DATA / "feeder13.json", feeder13(2))
    (DATA / "demo_prices.csv").write_text(prices_csv(2, 5))
    write_json(DATA / "demo.json", {
        "network": "feeder13.json",
        "prices": "demo_prices.csv",
        "days": 2,
        "seed": 7,
        "charging_points": {"buses": [4, 4, 5, 5, 6, 6, 8, 8], "rated_kw": 11.0},
        "session_profile": {"sessions_per_day": 1.2, "v2g_share": 0.8},
        "tariff": {"band_fractions": [0.6, 0.8, 1.0], "band_prices": [0.01, 0.05, 0.15]},
        "dispatch": {"window": 96, "w_loss": 1.0},
        "modelled_feeder": {"lines": [1, 2, 3, 4, 5], "buses": [2, 3, 4, 5, 6]},
        "calibration": {"count": 20, "seed": 3, "scale_min": 0.2, "scale_max": 1.2},
        "validation": {"overload_allowance": 1.2, "voltage_band": 0.05},
    }, indent=2)

    week = week_network()
    write_json(DATA / "week_network.json", week)
    (DATA / "week_prices.csv").write_text(prices_csv(7, 6))
    write_json(DATA / "week.json", {
        "network": "week_network.json",
        "prices": "week_prices.csv",
        "days": 7,
        "seed": 11,
        "charging_points": {"count": 64, "rated_kw": 11.0, "seed": 2},
        "session_profile": {"sessions_per_day": 1.2, "v2g_share": 0.8},
        "tariff": {"band_fractions": [0.6, 0.8, 1.0], "band_prices": [0.01, 0.05, 0.15]},
        "dispatch": {"window": 96, "w_loss": 1.0},
        "modelled_feeder": {"lines": list(range(1, 11)), "buses": list(range(2, 12))},
        "calibration": {"count": 20, "seed": 3, "scale_min": 0.2, "scale_max": 1.2},
        "validation": {"overload_allowance": 1.2, "voltage_band": 0.05},
    }, indent=2)

    # Small fixtures for the unit tests.
    write_json(TEST_DATA / "two_bus.json", {
        "step_hours": 0.25,
        "horizon": 2,
        "transformer": {"rated_kva": 100.0, "bus": 0},
        "buses": [{"id": 0, "phases": 3, "v_nom": 230.0}, {"id": 1, "phases": 1, "v_nom": 230.0, "p_load": [2300.0, 0.0]}],
        "lines": [line(0, 1, 0.1, 0.0, 50.0)],
    }, indent=2)
    write_json(TEST_DATA / "cycle.json", {
        "step_hours": 0.25,
        "horizon": 1,
        "transformer": {"rated_kva": 100.0, "bus": 0},
        "buses": [{"id": b, "phases": 3, "v_nom": 230.0} for b in range(3)],
        "lines": [line(0, 1, 0.1, 0.0, 50.0), line(1, 2, 0.1, 0.0, 50.0), line(2, 0, 0.1, 0.0, 50.0)],
    }, indent=2)
    write_json(TEST_DATA / "negative_r.json", {
        "step_hours": 0.25,
        "horizon": 1,
        "transformer": {"rated_kva": 100.0, "bus": 0},
        "buses": [{"id": 0}, {"id": 1}],
        "lines": [line(0, 1, -0.1, 0.0, 50.0)],
    }, indent=2)
    write_json(TEST_DATA / "no_transformer.json", {
        "step_hours": 0.25,
        "horizon": 1,
        "buses": [{"id": 0}, {"id": 1}],
        "lines": [line(0, 1, 0.1, 0.0, 50.0)],
    }, indent=2)


if __name__ == "__main__":
    main()
