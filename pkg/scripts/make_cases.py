"""Regenerate the bundled case files and demand profiles under ``cases/``.

The 30-bus case follows the classic 30-bus/41-branch topology with six
thermal units. Three radial branches are rewired so that every single-line
outage leaves the network connected, and the original reactances are used
as 1/x susceptances.
"""

import csv
import json
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "cases"

# (from, to, reactance_pu, rating_mw)
BRANCHES_30 = [
    (1, 2, 0.06, 130), (1, 3, 0.19, 130), (2, 4, 0.17, 65), (3, 4, 0.04, 130),
    (2, 5, 0.20, 130), (2, 6, 0.18, 65), (4, 6, 0.04, 90), (5, 7, 0.12, 70),
    (6, 7, 0.082, 130), (6, 8, 0.042, 32), (6, 9, 0.208, 65), (11, 10, 0.556, 32),
    (9, 11, 0.208, 65), (9, 10, 0.11, 65), (4, 12, 0.256, 65), (12, 13, 0.14, 65),
    (13, 14, 0.2559, 32), (12, 15, 0.1304, 32), (12, 16, 0.1987, 32), (14, 15, 0.1997, 16),
    (16, 17, 0.1923, 16), (15, 18, 0.2185, 16), (18, 19, 0.1292, 16), (19, 20, 0.068, 32),
    (10, 20, 0.209, 32), (10, 17, 0.0845, 32), (10, 21, 0.0749, 32), (10, 22, 0.1499, 32),
    (21, 22, 0.0236, 32), (15, 23, 0.202, 16), (22, 24, 0.179, 16), (23, 24, 0.27, 16),
    (24, 25, 0.3292, 24), (25, 26, 0.38, 24), (25, 27, 0.2087, 16), (28, 27, 0.396, 65),
    (26, 29, 0.4153, 24), (27, 30, 0.6027, 24), (29, 30, 0.4533, 24), (8, 28, 0.2, 32),
    (6, 28, 0.0599, 32),
]

# (bus, p_min, p_max, ramp per 15-min slot, cost_a, cost_b)
UNITS_30 = [
    (1, 10.0, 80.0, 12.0, 0.02, 2.0),
    (2, 10.0, 80.0, 12.0, 0.0175, 1.75),
    (22, 5.0, 50.0, 8.0, 0.0625, 1.0),
    (27, 5.0, 55.0, 8.0, 0.00834, 3.25),
    (23, 5.0, 30.0, 6.0, 0.025, 3.0),
    (13, 5.0, 40.0, 6.0, 0.025, 3.0),
]

LOADS_30 = {
    2: 21.7, 3: 2.4, 4: 7.6, 7: 22.8, 8: 30.0, 10: 5.8, 12: 11.2, 14: 6.2, 15: 8.2,
    16: 3.5, 17: 9.0, 18: 3.2, 19: 9.5, 20: 2.2, 21: 17.5, 23: 3.2, 24: 8.7, 26: 3.5,
    29: 2.4, 30: 10.6,
}

SLOTS_PER_DAY = 96


def case_30() -> dict:
    return {
        "name": "modified-30-bus",
        "base_mva": 100.0,
        "buses": [{"id": j, "slack": j == 1} for j in range(1, 31)],
        "lines": [
            {"id": k, "from": f, "to": t, "susceptance_pu": round(1.0 / x, 6), "flow_limit_mw": float(r)}
            for k, (f, t, x, r) in enumerate(BRANCHES_30, start=1)
        ],
        "units": [
            {"id": k, "bus": bus, "p_min_mw": pmin, "p_max_mw": pmax, "ramp_up_mw": ramp,
             "ramp_down_mw": ramp, "cost_a": a, "cost_b": b, "cost_c": 0.0}
            for k, (bus, pmin, pmax, ramp, a, b) in enumerate(UNITS_30, start=1)
        ],
    }


def case_2bus() -> dict:
    return {
        "name": "toy-2-bus",
        "base_mva": 100.0,
        "buses": [{"id": 1, "slack": True}, {"id": 2, "slack": False}],
        "lines": [{"id": 1, "from": 1, "to": 2, "susceptance_pu": 10.0, "flow_limit_mw": 60.0}],
        "units": [{"id": 1, "bus": 1, "p_min_mw": 0.0, "p_max_mw": 100.0, "ramp_up_mw": 20.0,
                   "ramp_down_mw": 20.0, "cost_a": 0.01, "cost_b": 2.0, "cost_c": 0.0}],
    }


def daily_shape(n_slots: int, seed: int = 7) -> np.ndarray:
    """Smooth two-peak daily load shape in [~0.65, ~1.0] with mild day-to-day drift."""
    rng = np.random.default_rng(seed)
    hours = np.arange(n_slots) * 24.0 / SLOTS_PER_DAY
    h = hours % 24.0
    shape = (0.68 + 0.22 * np.exp(-((h - 11.0) / 3.5) ** 2)
             + 0.30 * np.exp(-((h - 19.0) / 2.5) ** 2) - 0.05 * np.exp(-((h - 4.0) / 2.0) ** 2))
    days = int(np.ceil(n_slots / SLOTS_PER_DAY))
    drift = np.repeat(1.0 + 0.03 * rng.standard_normal(days), SLOTS_PER_DAY)[:n_slots]
    return np.round(shape / shape.max() * drift, 4)


def write_demand(path: Path, loads: dict, n_buses: int, shape: np.ndarray) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"bus_{j}" for j in range(1, n_buses + 1)])
        for f in shape:
            w.writerow([f"{loads.get(j, 0.0) * f:.4f}" for j in range(1, n_buses + 1)])


def main() -> None:
    OUT.mkdir(exist_ok=True)
    (OUT / "ieee30_modified.json").write_text(json.dumps(case_30(), indent=1) + "\n")
    (OUT / "toy_2bus.json").write_text(json.dumps(case_2bus(), indent=1) + "\n")
    # 40 days plus the padding of one 16-slot look-ahead window
    write_demand(OUT / "demand_30bus_40days.csv", LOADS_30, 30, daily_shape(40 * SLOTS_PER_DAY + 15))
    write_demand(OUT / "demand_2bus.csv", {2: 40.0}, 2, daily_shape(SLOTS_PER_DAY + 15))


if __name__ == "__main__":
    main()
