"""Network and fleet description, case-file ingestion and DC sensitivities.

Buses, lines and units are numbered 1..N in the case file; every array
exposed here is ordered by that id, so position ``k`` holds id ``k + 1``.
Line flows are positive in the from-bus to to-bus direction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import (
    CaseFormatError,
    GridValidationError,
    IslandingError,
    SingularMatrixError,
    UnbalancedInjectionError,
    UnknownLineError,
)

BALANCE_TOL_MW = 1e-6


@dataclass(frozen=True)
class Bus:
    id: int
    is_slack: bool = False


@dataclass(frozen=True)
class TransmissionLine:
    id: int
    from_bus: int
    to_bus: int
    susceptance: float  # per unit
    flow_limit: float  # MW


@dataclass(frozen=True)
class ThermalUnit:
    id: int
    bus: int
    p_min: float
    p_max: float
    ramp_up: float  # MW per slot
    ramp_down: float
    cost_quadratic: float = 0.0
    cost_linear: float = 0.0
    cost_constant: float = 0.0


@dataclass(frozen=True)
class GridModel:
    """Immutable grid; construct through :func:`build_grid` or :func:`load_case`."""

    name: str
    buses: tuple[Bus, ...]
    lines: tuple[TransmissionLine, ...]
    units: tuple[ThermalUnit, ...]
    base_mva: float = 100.0

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @property
    def n_units(self) -> int:
        return len(self.units)

    @cached_property
    def slack_bus(self) -> int:
        return next(b.id for b in self.buses if b.is_slack)

    @cached_property
    def line_ids(self) -> tuple[int, ...]:
        return tuple(ln.id for ln in self.lines)

    @cached_property
    def unit_bus_index(self) -> np.ndarray:
        """0-based bus position of every unit, i.e. J(i) - 1."""
        return _frozen(np.array([u.bus - 1 for u in self.units], dtype=int))

    @cached_property
    def p_min(self) -> np.ndarray:
        return _frozen(np.array([u.p_min for u in self.units], dtype=float))

    @cached_property
    def p_max(self) -> np.ndarray:
        return _frozen(np.array([u.p_max for u in self.units], dtype=float))

    @cached_property
    def ramp_up(self) -> np.ndarray:
        return _frozen(np.array([u.ramp_up for u in self.units], dtype=float))

    @cached_property
    def ramp_down(self) -> np.ndarray:
        return _frozen(np.array([u.ramp_down for u in self.units], dtype=float))

    @cached_property
    def cost_coefficients(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(quadratic, linear, constant) cost coefficient vectors."""
        a = np.array([u.cost_quadratic for u in self.units], dtype=float)
        b = np.array([u.cost_linear for u in self.units], dtype=float)
        c = np.array([u.cost_constant for u in self.units], dtype=float)
        return _frozen(a), _frozen(b), _frozen(c)

    @cached_property
    def flow_limits(self) -> np.ndarray:
        return _frozen(np.array([ln.flow_limit for ln in self.lines], dtype=float))

    @cached_property
    def susceptances(self) -> np.ndarray:
        return _frozen(np.array([ln.susceptance for ln in self.lines], dtype=float))

    @cached_property
    def incidence(self) -> np.ndarray:
        """Dense N_L x N_D branch-bus incidence (+1 at from, -1 at to)."""
        a = np.zeros((self.n_lines, self.n_buses))
        for k, ln in enumerate(self.lines):
            a[k, ln.from_bus - 1] = 1.0
            a[k, ln.to_bus - 1] = -1.0
        return _frozen(a)

    def line(self, line_id: int) -> TransmissionLine:
        if not 1 <= line_id <= self.n_lines:
            raise UnknownLineError(f"line {line_id} does not exist in grid {self.name!r}")
        return self.lines[line_id - 1]

    def cost(self, p: np.ndarray) -> np.ndarray:
        """Operating cost C(P) per slot; the unit axis is the first axis of ``p``."""
        a, b, c = self.cost_coefficients
        shape = (-1,) + (1,) * (np.ndim(p) - 1)
        per_unit = a.reshape(shape) * p**2 + b.reshape(shape) * p + c.reshape(shape)
        return per_unit.sum(axis=0)

    def is_connected(self, without: Optional[int] = None) -> bool:
        keep = [k for k, ln in enumerate(self.lines) if ln.id != without]
        return _n_components(self.n_buses, self.lines, keep) == 1

    @cached_property
    def contingency_lines(self) -> tuple[int, ...]:
        """Lines whose single outage leaves the network connected."""
        return tuple(ln.id for ln in self.lines if self.is_connected(without=ln.id))


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _n_components(n_buses: int, lines: Sequence[TransmissionLine], keep: Sequence[int]) -> int:
    rows = [lines[k].from_bus - 1 for k in keep]
    cols = [lines[k].to_bus - 1 for k in keep]
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_buses, n_buses))
    n, _ = connected_components(adj, directed=False)
    return n


def build_grid(
    name: str,
    buses: Sequence[Bus],
    lines: Sequence[TransmissionLine],
    units: Sequence[ThermalUnit],
    base_mva: float = 100.0,
) -> GridModel:
    """Validate the components and assemble a :class:`GridModel`."""
    problems = _check_components(buses, lines, units)
    if problems:
        raise GridValidationError("; ".join(problems))
    grid = GridModel(
        name=name,
        buses=tuple(sorted(buses, key=lambda b: b.id)),
        lines=tuple(sorted(lines, key=lambda ln: ln.id)),
        units=tuple(sorted(units, key=lambda u: u.id)),
        base_mva=float(base_mva),
    )
    if not grid.is_connected():
        raise GridValidationError(f"grid {name!r} is disconnected")
    return grid


def _check_ids(kind: str, ids: list[int]) -> list[str]:
    seen: set[int] = set()
    out = []
    for i in ids:
        if i in seen:
            out.append(f"duplicate {kind} id {i}")
        seen.add(i)
    if not out and sorted(ids) != list(range(1, len(ids) + 1)):
        out.append(f"{kind} ids must be contiguous 1..{len(ids)}, got {sorted(ids)}")
    return out


def _check_components(buses, lines, units) -> list[str]:
    problems = []
    if not buses:
        problems.append("grid has no buses")
    if not units:
        problems.append("grid has no thermal units")
    problems += _check_ids("bus", [b.id for b in buses])
    problems += _check_ids("line", [ln.id for ln in lines])
    problems += _check_ids("unit", [u.id for u in units])
    n_slack = sum(b.is_slack for b in buses)
    if n_slack != 1:
        problems.append(f"exactly one slack bus required, found {n_slack}")
    bus_ids = {b.id for b in buses}
    for ln in lines:
        if ln.from_bus not in bus_ids or ln.to_bus not in bus_ids:
            problems.append(f"line {ln.id} references a missing bus")
        if ln.from_bus == ln.to_bus:
            problems.append(f"line {ln.id} has from_bus == to_bus")
        if not ln.susceptance > 0:
            problems.append(f"line {ln.id} susceptance must be > 0")
        if not ln.flow_limit > 0:
            problems.append(f"line {ln.id} flow_limit must be > 0")
    for u in units:
        if u.bus not in bus_ids:
            problems.append(f"unit {u.id} references missing bus {u.bus}")
        if not 0 <= u.p_min <= u.p_max:
            problems.append(f"unit {u.id} requires 0 <= p_min <= p_max")
        if not (u.ramp_up > 0 and u.ramp_down > 0):
            problems.append(f"unit {u.id} ramp limits must be > 0")
        if u.cost_quadratic < 0:
            problems.append(f"unit {u.id} cost_a must be >= 0")
    return problems


class _BusRecord(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True)
    id: int
    slack: bool = False


class _LineRecord(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True, populate_by_name=True)
    id: int
    from_: int = Field(alias="from")
    to: int
    susceptance_pu: float
    flow_limit_mw: float


class _UnitRecord(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True)
    id: int
    bus: int
    p_min_mw: float
    p_max_mw: float
    ramp_up_mw: float
    ramp_down_mw: float
    cost_a: float = 0.0
    cost_b: float = 0.0
    cost_c: float = 0.0


class _CaseRecord(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True)
    name: str
    base_mva: float = 100.0
    buses: list[_BusRecord]
    lines: list[_LineRecord]
    units: list[_UnitRecord]


def _format_pydantic(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        loc = "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in e["loc"]).lstrip(".")
        parts.append(f"{loc}: {e['msg']}")
    return "; ".join(parts)


def parse_case(document: dict, source: str = "<case>") -> GridModel:
    try:
        rec = _CaseRecord.model_validate(document)
    except ValidationError as err:
        raise CaseFormatError(f"{source}: {_format_pydantic(err)}") from None
    buses = [Bus(b.id, b.slack) for b in rec.buses]
    lines = [
        TransmissionLine(ln.id, ln.from_, ln.to, ln.susceptance_pu, ln.flow_limit_mw)
        for ln in rec.lines
    ]
    units = [
        ThermalUnit(
            u.id, u.bus, u.p_min_mw, u.p_max_mw, u.ramp_up_mw, u.ramp_down_mw,
            u.cost_a, u.cost_b, u.cost_c,
        )
        for u in rec.units
    ]
    try:
        return build_grid(rec.name, buses, lines, units, rec.base_mva)
    except GridValidationError as err:
        raise GridValidationError(f"{source}: {err}") from None


def load_case(path: str | Path) -> GridModel:
    """Read and validate a grid JSON document."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise CaseFormatError(f"cannot read case file {path}: {err}") from None
    try:
        document = json.loads(text)
    except json.JSONDecodeError as err:
        raise CaseFormatError(f"{path}: line {err.lineno} column {err.colno}: {err.msg}") from None
    return parse_case(document, source=str(path))


def case_to_dict(grid: GridModel) -> dict:
    return {
        "name": grid.name,
        "base_mva": grid.base_mva,
        "buses": [{"id": b.id, "slack": b.is_slack} for b in grid.buses],
        "lines": [
            {"id": ln.id, "from": ln.from_bus, "to": ln.to_bus,
             "susceptance_pu": ln.susceptance, "flow_limit_mw": ln.flow_limit}
            for ln in grid.lines
        ],
        "units": [
            {"id": u.id, "bus": u.bus, "p_min_mw": u.p_min, "p_max_mw": u.p_max,
             "ramp_up_mw": u.ramp_up, "ramp_down_mw": u.ramp_down,
             "cost_a": u.cost_quadratic, "cost_b": u.cost_linear, "cost_c": u.cost_constant}
            for u in grid.units
        ],
    }


@dataclass(frozen=True)
class PtdfMatrix:
    """N_L x N_D distribution factors for one topology.

    ``values[l, j]`` is the MW flow on line ``l + 1`` caused by injecting
    1 MW at bus ``j + 1`` and withdrawing it at the slack bus.
    """

    values: np.ndarray
    outage: Optional[int] = None
    slack_bus: int = 1

    @property
    def topology_tag(self) -> str:
        return "intact" if self.outage is None else f"outage-of-line-{self.outage}"

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def compute_ptdf(
    grid: GridModel, outage: Optional[int] = None, slack_bus: Optional[int] = None
) -> PtdfMatrix:
    """Distribution factors for the intact grid or with line ``outage`` removed.

    ``slack_bus`` overrides the grid's own slack choice; physical flows of
    balanced injections do not depend on it.
    """
    slack = grid.slack_bus if slack_bus is None else slack_bus
    if not 1 <= slack <= grid.n_buses:
        raise GridValidationError(f"slack bus {slack} does not exist")
    b = grid.susceptances.copy()
    if outage is not None:
        grid.line(outage)
        if not grid.is_connected(without=outage):
            raise IslandingError(f"outage of line {outage} islands grid {grid.name!r}")
        b[outage - 1] = 0.0

    keep = np.arange(grid.n_buses) != slack - 1
    a_red = grid.incidence[:, keep]
    b_red = a_red.T @ (b[:, None] * a_red)
    try:
        factor = scipy.linalg.cho_factor(b_red)
        x = scipy.linalg.cho_solve(factor, (b[:, None] * a_red).T).T
    except (np.linalg.LinAlgError, ValueError) as err:
        raise SingularMatrixError(f"reduced susceptance matrix is singular: {err}") from None

    values = np.zeros((grid.n_lines, grid.n_buses))
    values[:, keep] = x
    if outage is not None:
        values[outage - 1, :] = 0.0
    if not np.all(np.isfinite(values)):
        raise SingularMatrixError("non-finite distribution factors")
    return PtdfMatrix(values=_frozen(values), outage=outage, slack_bus=slack)


def line_flows(
    ptdf: PtdfMatrix, injections: np.ndarray, tol: float = BALANCE_TOL_MW
) -> np.ndarray:
    """Flows (MW) for a balanced per-bus net injection vector."""
    injections = np.asarray(injections, dtype=float)
    if injections.shape != (ptdf.shape[1],):
        raise UnbalancedInjectionError(
            f"expected {ptdf.shape[1]} bus injections, got shape {injections.shape}"
        )
    imbalance = float(injections.sum())
    if abs(imbalance) > tol:
        raise UnbalancedInjectionError(f"injections sum to {imbalance:.3e} MW")
    return ptdf.values @ injections


def window_flows(
    grid: GridModel, ptdf: PtdfMatrix, values: np.ndarray, demand: np.ndarray
) -> np.ndarray:
    """Line flows ``F[l, t, tau]`` of an (N_G, N_T, N_tau) output tensor.

    ``demand`` is N_D x slots; window ``t`` (0-based here) reads slot ``t + tau``.
    Injections need not balance: any mismatch is absorbed at the slack bus.
    """
    _, n_t, n_tau = values.shape
    t_gen = ptdf.values[:, grid.unit_bus_index]
    slots = np.arange(n_t)[:, None] + np.arange(n_tau)[None, :]
    demand_flow = (ptdf.values @ demand[:, : n_t + n_tau - 1])[:, slots]
    return np.einsum("lg,gtk->ltk", t_gen, values) - demand_flow
