"""Rolling-horizon look-ahead DCOPF baseline and dispatch policies.

Window ``t`` (1-based) optimizes outputs for slots ``t .. t + n_tau - 1``.
Its ramp constraints at ``tau = 0`` are anchored to the output committed at
``tau = 0`` of window ``t - 1``; window 1 is anchored to an initial output.
Window variables are laid out unit-major: ``x[i * n_tau + tau]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Optional, Protocol, Sequence, Union

import numpy as np

from . import convex_solver
from .convex_solver import ConvexProgram
from .errors import (
    CaseFormatError,
    InvalidRangeError,
    MissingScenarioError,
    ScenarioInfeasibleError,
    ShapeMismatchError,
)
from .grid_model import GridModel, PtdfMatrix

if TYPE_CHECKING:
    from .scenario_gen import DemandScenario, NetworkScenario

TRAJECTORY_FORMAT = "gridbench-trajectory"
TRAJECTORY_VERSION = 1


@dataclass(frozen=True)
class LookAheadConfig:
    n_t: int
    n_tau: int = 16
    slot_minutes: float = 15.0

    def __post_init__(self):
        if self.n_t < 1 or self.n_tau < 1:
            raise InvalidRangeError(f"n_t and n_tau must be >= 1, got {self.n_t}, {self.n_tau}")

    @property
    def n_slots(self) -> int:
        """Demand slots needed so that every window is complete."""
        return self.n_t + self.n_tau - 1


@dataclass(frozen=True)
class DispatchTrajectory:
    """Unit outputs ``values[i, t, tau]`` (MW) over all look-ahead windows."""

    values: np.ndarray
    initial_output: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        init = np.asarray(self.initial_output, dtype=float)
        if values.ndim != 3 or init.shape != (values.shape[0],):
            raise ShapeMismatchError(
                f"trajectory must be (N_G, N_T, N_tau) with an N_G initial output, "
                f"got {values.shape} and {init.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ShapeMismatchError("trajectory contains non-finite values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "initial_output", init)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def anchor(self) -> np.ndarray:
        """N_G x N_T ramp anchors: the output committed before each window."""
        anchor = np.empty(self.values.shape[:2])
        anchor[:, 0] = self.initial_output
        anchor[:, 1:] = self.values[:, :-1, 0]
        return anchor

    def check_against(self, grid: GridModel, config: LookAheadConfig) -> None:
        expected = (grid.n_units, config.n_t, config.n_tau)
        if self.shape != expected:
            raise ShapeMismatchError(f"trajectory shape {self.shape} does not match {expected}")


def window_demand(demand: np.ndarray, t: int, n_tau: int) -> np.ndarray:
    """N_D x n_tau demand block of window ``t`` (1-based)."""
    block = demand[:, t - 1:t - 1 + n_tau]
    if block.shape[1] != n_tau:
        raise ShapeMismatchError(f"demand does not cover window t={t} of length {n_tau}")
    return block


class WindowBuilder:
    """Assembles window programs for one grid topology.

    The constraint matrix is identical for every window of a scenario, so it
    is built once and only right-hand sides change per window.
    """

    def __init__(self, grid: GridModel, ptdf: PtdfMatrix, n_tau: int, ramps: bool = True):
        self.grid, self.ptdf, self.n_tau = grid, ptdf, n_tau
        ng, nl = grid.n_units, grid.n_lines
        n = ng * n_tau
        a2, b1, c0 = grid.cost_coefficients
        self.q = np.repeat(2.0 * a2, n_tau)
        self.c = np.repeat(b1, n_tau)
        self.const = float(n_tau * c0.sum())
        self.lo = np.repeat(grid.p_min, n_tau)
        self.hi = np.repeat(grid.p_max, n_tau)

        self.a_eq = np.zeros((n_tau, n))
        for tau in range(n_tau):
            self.a_eq[tau, tau::n_tau] = 1.0

        blocks = []
        self.ramps = ramps
        if ramps:
            # rows (i, tau): P[i,tau] - P[i,tau-1] <= RU_i, then the mirrored RD rows
            diff = np.zeros((n, n))
            for i in range(ng):
                for tau in range(n_tau):
                    k = i * n_tau + tau
                    diff[k, k] = 1.0
                    if tau > 0:
                        diff[k, k - 1] = -1.0
            blocks += [diff, -diff]
        self.n_ramp_rows = 2 * n if ramps else 0

        t_gen = ptdf.values[:, grid.unit_bus_index]
        flow = np.zeros((nl * n_tau, n))
        for tau in range(n_tau):
            for i in range(ng):
                flow[tau * nl:(tau + 1) * nl, i * n_tau + tau] = t_gen[:, i]
        blocks += [flow, -flow]
        self.g = np.vstack(blocks)
        self.lazy = np.zeros(self.g.shape[0], dtype=bool)
        self.lazy[self.n_ramp_rows:] = True

    def build(self, demand_block: np.ndarray, prev_output: Optional[np.ndarray]) -> ConvexProgram:
        grid, n_tau = self.grid, self.n_tau
        b_eq = demand_block.sum(axis=0)
        h_parts = []
        if self.ramps:
            ru = np.repeat(grid.ramp_up, n_tau)
            rd = np.repeat(grid.ramp_down, n_tau)
            first = np.arange(grid.n_units) * n_tau
            ru_h, rd_h = ru.copy(), rd.copy()
            ru_h[first] += prev_output
            rd_h[first] -= prev_output
            h_parts += [ru_h, rd_h]
        base_flow = (self.ptdf.values @ demand_block).T.reshape(-1)  # (tau, l) order
        limit = np.tile(grid.flow_limits, n_tau)
        h_parts += [limit + base_flow, limit - base_flow]
        return ConvexProgram(
            q=self.q, c=self.c, const=self.const, a_eq=self.a_eq, b_eq=b_eq,
            g=self.g, h=np.concatenate(h_parts), lo=self.lo, hi=self.hi, lazy=self.lazy,
        )


def build_dcopf_window(
    grid: GridModel,
    ptdf: PtdfMatrix,
    demand: np.ndarray,
    t: int,
    prev_output: np.ndarray,
    n_tau: int,
) -> ConvexProgram:
    """Program of window ``t`` for the N_D x slots demand matrix ``demand``."""
    builder = WindowBuilder(grid, ptdf, n_tau)
    return builder.build(window_demand(demand, t, n_tau), np.asarray(prev_output, dtype=float))


def _shift_guess(x: np.ndarray, ng: int, n_tau: int) -> np.ndarray:
    w = x.reshape(ng, n_tau)
    return np.concatenate([w[:, 1:], w[:, -1:]], axis=1).reshape(-1)


def steady_state_output(grid: GridModel, ptdf: PtdfMatrix, demand: np.ndarray) -> np.ndarray:
    """Single-slot DCOPF of the first demand slot without ramp constraints."""
    builder = WindowBuilder(grid, ptdf, 1, ramps=False)
    sol = convex_solver.solve(builder.build(demand[:, :1], None))
    if not sol.optimal:
        raise ScenarioInfeasibleError(1, "no feasible steady-state dispatch for the first slot")
    return sol.x.copy()


def initial_output_for(
    grid: GridModel, ptdf: PtdfMatrix, demand: np.ndarray, spec: Union[str, Sequence[float]]
) -> np.ndarray:
    """Resolve an initial-output setting: ``"p_min"``, ``"steady"`` or explicit MW values."""
    if isinstance(spec, str):
        if spec == "p_min":
            return np.array(grid.p_min, dtype=float)
        if spec == "steady":
            return steady_state_output(grid, ptdf, demand)
        raise InvalidRangeError(f"unknown initial output mode {spec!r}")
    out = np.asarray(spec, dtype=float)
    if out.shape != (grid.n_units,):
        raise ShapeMismatchError(f"initial output needs {grid.n_units} values, got {out.shape}")
    return out


def solve_baseline(
    grid: GridModel,
    ptdf: PtdfMatrix,
    demand: np.ndarray,
    config: LookAheadConfig,
    initial_output: np.ndarray,
) -> DispatchTrajectory:
    """Rolling look-ahead DCOPF over windows ``1 .. n_t``.

    Raises :class:`ScenarioInfeasibleError` carrying the first infeasible window.
    """
    if demand.shape[1] < config.n_slots:
        raise ShapeMismatchError(
            f"demand covers {demand.shape[1]} slots, {config.n_slots} required"
        )
    ng, n_tau = grid.n_units, config.n_tau
    builder = WindowBuilder(grid, ptdf, n_tau)
    values = np.empty((ng, config.n_t, n_tau))
    prev = np.asarray(initial_output, dtype=float).copy()
    guess = None
    for t in range(1, config.n_t + 1):
        program = builder.build(window_demand(demand, t, n_tau), prev)
        sol = convex_solver.solve(program, x0=guess)
        if not sol.optimal:
            raise ScenarioInfeasibleError(
                t, f"DCOPF window t={t} {sol.status} (worst {sol.worst_constraint[0]} "
                f"row {sol.worst_constraint[1]}, violation {sol.max_violation:.3g})"
            )
        window = sol.x.reshape(ng, n_tau)
        values[:, t - 1, :] = window
        prev = window[:, 0].copy()
        guess = _shift_guess(sol.x, ng, n_tau)
    return DispatchTrajectory(values=values, initial_output=np.asarray(initial_output, dtype=float))


class DispatchPolicy(Protocol):
    name: str

    def __call__(
        self,
        network: "NetworkScenario",
        demand: "DemandScenario",
        config: LookAheadConfig,
        grid: GridModel,
        baseline: Optional[DispatchTrajectory] = None,
    ) -> DispatchTrajectory: ...


def _scenario_seed(seed: int, s_t: int, s_d: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, s_t, s_d]))


def _baseline_or_solve(network, demand, config, grid, baseline, initial="steady"):
    if baseline is not None:
        return baseline
    init = initial_output_for(grid, network.ptdf, demand.values, initial)
    return solve_baseline(grid, network.ptdf, demand.values, config, init)


@dataclass(frozen=True)
class OraclePolicy:
    name: str = "oracle"

    def __call__(self, network, demand, config, grid, baseline=None):
        return _baseline_or_solve(network, demand, config, grid, baseline)


@dataclass(frozen=True)
class PerturbedPolicy:
    """Baseline scaled entry-wise by ``1 + sigma * z`` with seeded standard normal ``z``.

    ``z`` depends only on the seed and the scenario ids, so policies that differ
    only in ``sigma`` share the same draws.
    """

    sigma: float
    seed: int
    name: str = ""

    def __post_init__(self):
        if self.sigma < 0:
            raise InvalidRangeError(f"sigma must be >= 0, got {self.sigma}")
        if not self.name:
            object.__setattr__(self, "name", f"perturbed-{self.sigma:g}")

    def __call__(self, network, demand, config, grid, baseline=None):
        base = _baseline_or_solve(network, demand, config, grid, baseline)
        z = _scenario_seed(self.seed, network.id, demand.id).standard_normal(base.shape)
        return DispatchTrajectory(base.values * (1.0 + self.sigma * z), base.initial_output)


@dataclass(frozen=True)
class ProportionalPolicy:
    """Splits each slot's total demand in proportion to ``p_max``, ignoring the network."""

    name: str = "proportional"

    def __call__(self, network, demand, config, grid, baseline=None):
        share = grid.p_max / grid.p_max.sum()
        total = demand.values[:, : config.n_slots].sum(axis=0)
        idx = np.arange(config.n_t)[:, None] + np.arange(config.n_tau)[None, :]
        values = share[:, None, None] * total[idx][None, :, :]
        init = baseline.initial_output if baseline is not None else grid.p_min
        return DispatchTrajectory(values, np.array(init, dtype=float))


def reference_policy(kind: str, seed: int = 0, sigma: float = 0.0) -> DispatchPolicy:
    """Built-in stand-ins for unavailable agents: oracle, perturbed or proportional."""
    if kind == "oracle":
        return OraclePolicy()
    if kind == "perturbed":
        return PerturbedPolicy(sigma=sigma, seed=seed)
    if kind == "proportional":
        return ProportionalPolicy()
    raise InvalidRangeError(f"unknown reference policy {kind!r}")


@dataclass(frozen=True)
class ExternalPolicy:
    """Replays trajectories stored in an exchange file, keyed by (s_T, s_D)."""

    trajectories: dict
    name: str = "external"

    def __call__(self, network, demand, config, grid, baseline=None):
        key = (network.id, demand.id)
        if key not in self.trajectories:
            raise MissingScenarioError(f"trajectory file has no scenario {key}")
        return self.trajectories[key]

    def require(self, keys) -> None:
        missing = [k for k in keys if k not in self.trajectories]
        if missing:
            raise MissingScenarioError(f"trajectory file has no scenario {missing[0]}"
                                       + (f" (and {len(missing) - 1} more)" if len(missing) > 1 else ""))


def dump_trajectories(
    path: Union[str, Path],
    trajectories: dict,
    grid: GridModel,
    config: LookAheadConfig,
) -> None:
    """Write {(s_T, s_D): DispatchTrajectory} in the JSON exchange format."""
    doc = {
        "format": TRAJECTORY_FORMAT,
        "version": TRAJECTORY_VERSION,
        "n_t": config.n_t,
        "n_tau": config.n_tau,
        "unit_ids": [u.id for u in grid.units],
        "scenarios": [
            {
                "s_T": s_t,
                "s_D": s_d,
                "initial_output": traj.initial_output.tolist(),
                "values": traj.values.tolist(),
            }
            for (s_t, s_d), traj in sorted(trajectories.items())
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_external_trajectory(
    path: Union[str, Path], grid: GridModel, config: LookAheadConfig, name: str = "external"
) -> ExternalPolicy:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise CaseFormatError(f"cannot read trajectory file {path}: {err}") from None
    if not isinstance(doc, dict) or doc.get("format") != TRAJECTORY_FORMAT:
        raise CaseFormatError(f"{path}: not a {TRAJECTORY_FORMAT} document")
    if doc.get("n_t") != config.n_t or doc.get("n_tau") != config.n_tau:
        raise ShapeMismatchError(
            f"{path}: file has n_t={doc.get('n_t')}, n_tau={doc.get('n_tau')}, "
            f"config expects n_t={config.n_t}, n_tau={config.n_tau}"
        )
    if doc.get("unit_ids") != [u.id for u in grid.units]:
        raise ShapeMismatchError(f"{path}: unit ids {doc.get('unit_ids')} do not match the grid")
    trajectories = {}
    for entry in doc.get("scenarios", []):
        traj = DispatchTrajectory(np.array(entry["values"], dtype=float),
                                  np.array(entry["initial_output"], dtype=float))
        traj.check_against(grid, config)
        trajectories[(int(entry["s_T"]), int(entry["s_D"]))] = traj
    return ExternalPolicy(trajectories=trajectories, name=name)
