"""Economy and security metrics of a dispatch trajectory against the baseline.

Per scenario:
  rce  total policy cost / total baseline cost - 1
  rvs  sum of all relative violations (output, ramp, flow)
  rvm  largest single relative violation
  nvc  violated constraints / (N_T * N_tau * (2 N_G + N_L))
  nvt  (t, tau) slots with any violation / (N_T * N_tau)

Across scenarios RVS is summed, RVM maximized, RCE/NVC/NVT averaged, and
eta is the percentage of scenarios without any violation. All values are
fractions; only eta is a percentage.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dispatch import DispatchTrajectory
from .errors import EmptyInputError, ZeroBaselineCostError
from .grid_model import GridModel, PtdfMatrix, window_flows

# Relative violations at or below this are floating-point noise on a binding limit.
ZERO_TOL = 1e-6
LOWER_DEN_FRACTION = 0.01

CSV_COLUMNS = ["s_T", "s_D", "rce", "rvs", "rvm", "nvc", "nvt", "feasible"]


@dataclass(frozen=True)
class ViolationTensor:
    vo: np.ndarray  # (N_G, N_T, N_tau)
    vr: np.ndarray  # (N_G, N_T, N_tau)
    vl: np.ndarray  # (N_L, N_T, N_tau)

    def scaled(self, alpha: float) -> "ViolationTensor":
        return ViolationTensor(self.vo * alpha, self.vr * alpha, self.vl * alpha)

    @property
    def slot_total(self) -> np.ndarray:
        """(N_T, N_tau) sum of every violation in each slot."""
        return self.vo.sum(axis=0) + self.vr.sum(axis=0) + self.vl.sum(axis=0)


def _cut(v: np.ndarray, tol: float) -> np.ndarray:
    v = np.maximum(v, 0.0)
    v[v <= tol] = 0.0
    return v


def compute_violations(
    grid: GridModel,
    ptdf: PtdfMatrix,
    demand: np.ndarray,
    trajectory: DispatchTrajectory,
    tol: float = ZERO_TOL,
) -> ViolationTensor:
    p = trajectory.values
    pmax = grid.p_max[:, None, None]
    pmin = grid.p_min[:, None, None]
    up_den = np.where(pmax > 0, pmax, 1.0)
    low_den = np.maximum(pmin, LOWER_DEN_FRACTION * pmax)
    low_den = np.where(low_den > 0, low_den, 1.0)
    vo = np.maximum((p - pmax) / up_den, (pmin - p) / low_den)

    prev = np.concatenate([trajectory.anchor[:, :, None], p[:, :, :-1]], axis=2)
    ru = grid.ramp_up[:, None, None]
    rd = grid.ramp_down[:, None, None]
    vr = np.maximum((p - prev - ru) / ru, (prev - p - rd) / rd)

    flows = window_flows(grid, ptdf, p, demand)
    vl = np.abs(flows) / grid.flow_limits[:, None, None] - 1.0
    return ViolationTensor(_cut(vo, tol), _cut(vr, tol), _cut(vl, tol))


@dataclass(frozen=True)
class ScenarioMetrics:
    rce: float
    rvs: float
    rvm: float
    nvc: float
    nvt: float
    feasible_baseline: bool = True

    @classmethod
    def skipped(cls) -> "ScenarioMetrics":
        nan = float("nan")
        return cls(nan, nan, nan, nan, nan, feasible_baseline=False)


def metrics_from_violations(
    violations: ViolationTensor, policy_cost: float, baseline_cost: float
) -> ScenarioMetrics:
    if not baseline_cost > 0:
        raise ZeroBaselineCostError(f"baseline cost {baseline_cost} must be positive")
    vo, vr, vl = violations.vo, violations.vr, violations.vl
    n_g, n_t, n_tau = vo.shape
    n_l = vl.shape[0]
    rvs = float(vo.sum() + vr.sum() + vl.sum())
    rvm = float(max(vo.max(initial=0.0), vr.max(initial=0.0), vl.max(initial=0.0)))
    n_violated = int(np.count_nonzero(vo) + np.count_nonzero(vr) + np.count_nonzero(vl))
    nvc = n_violated / (n_t * n_tau * (2 * n_g + n_l))
    nvt = int(np.count_nonzero(violations.slot_total)) / (n_t * n_tau)
    return ScenarioMetrics(
        rce=policy_cost / baseline_cost - 1.0, rvs=rvs, rvm=rvm, nvc=nvc, nvt=nvt
    )


def scenario_metrics(
    grid: GridModel,
    ptdf: PtdfMatrix,
    demand: np.ndarray,
    trajectory: DispatchTrajectory,
    baseline: DispatchTrajectory,
    tol: float = ZERO_TOL,
) -> ScenarioMetrics:
    violations = compute_violations(grid, ptdf, demand, trajectory, tol)
    return metrics_from_violations(
        violations,
        float(grid.cost(trajectory.values).sum()),
        float(grid.cost(baseline.values).sum()),
    )


@dataclass
class EvaluationReport:
    policy: str
    per_scenario: dict[tuple[int, int], ScenarioMetrics]
    aggregate: dict[str, float]
    skipped: list[tuple[int, int]] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        out = []
        for (s_t, s_d), m in sorted(self.per_scenario.items()):
            out.append({"s_T": s_t, "s_D": s_d, "rce": m.rce, "rvs": m.rvs, "rvm": m.rvm,
                        "nvc": m.nvc, "nvt": m.nvt, "feasible": m.feasible_baseline})
        return out

    def to_dict(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and math.isnan(v) else v

        return {
            "policy": self.policy,
            "aggregate": self.aggregate,
            "per_scenario": [{k: clean(v) for k, v in row.items()} for row in self.rows()],
            "skipped": [list(k) for k in self.skipped],
            "config": self.config,
            "seeds": self.seeds,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in self.rows():
            w.writerow([
                row["s_T"], row["s_D"],
                *("" if math.isnan(row[c]) else repr(row[c]) for c in CSV_COLUMNS[2:7]),
                int(row["feasible"]),
            ])
        return buf.getvalue()


def aggregate(
    per_scenario: dict[tuple[int, int], ScenarioMetrics],
    policy: str = "",
    config: Optional[dict] = None,
) -> EvaluationReport:
    """Combine per-scenario metrics; baseline-infeasible scenarios are listed but not scored."""
    scored = {k: m for k, m in per_scenario.items() if m.feasible_baseline}
    skipped = sorted(k for k, m in per_scenario.items() if not m.feasible_baseline)
    if not scored:
        raise EmptyInputError("no scored scenarios to aggregate")
    values = [scored[k] for k in sorted(scored)]
    n = len(values)
    agg = {
        "rce": sum(m.rce for m in values) / n,
        "rvs": sum(m.rvs for m in values),
        "rvm": max(m.rvm for m in values),
        "nvc": sum(m.nvc for m in values) / n,
        "nvt": sum(m.nvt for m in values) / n,
        "eta": 100.0 * (n - sum(1 for m in values if m.nvt > 0)) / n,
        "n_scored": n,
        "n_skipped": len(skipped),
    }
    return EvaluationReport(policy=policy, per_scenario=dict(per_scenario), aggregate=agg,
                            skipped=skipped, config=dict(config or {}))


def as_percent(aggregate_values: dict[str, float]) -> dict[str, float]:
    """Aggregate metrics expressed in percent, the way result tables print them."""
    out = {k: 100.0 * aggregate_values[k] for k in ("rce", "rvs", "rvm", "nvc", "nvt")}
    out["eta"] = aggregate_values["eta"]
    return out
