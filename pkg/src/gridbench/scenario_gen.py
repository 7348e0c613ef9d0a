"""Demand and network scenario generation.

Demand scenarios scale a base demand matrix (N_D x slots, MW) by a grid of
coefficients with multiplicative Gaussian noise. Network scenarios come from
clustering the N-1 outages by how strongly each one changes the flow on a
few key lines, then taking the cluster that holds the agent's own outage.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .dispatch import DispatchTrajectory
from .errors import CaseFormatError, EmptyInputError, InvalidRangeError, UnknownLineError
from .grid_model import GridModel, PtdfMatrix, compute_ptdf, window_flows

DEGENERATE_FLOW_MW = 1e-6
RATIO_CAP = 1e6


def load_demand_csv(path: str | Path, n_buses: int) -> np.ndarray:
    """Read a ``bus_1..bus_N`` CSV (one row per slot) into an N_D x slots matrix."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as err:
        raise CaseFormatError(f"cannot read demand file {path}: {err}") from None
    if not rows:
        raise CaseFormatError(f"{path}: empty demand file")
    expected = [f"bus_{j}" for j in range(1, n_buses + 1)]
    header = [h.strip() for h in rows[0]]
    if header != expected:
        raise CaseFormatError(f"{path}: header must be bus_1..bus_{n_buses}, got {header[:4]}...")
    values = np.empty((len(rows) - 1, n_buses))
    for k, row in enumerate(rows[1:]):
        if len(row) != n_buses:
            raise CaseFormatError(f"{path}: line {k + 2} has {len(row)} fields, expected {n_buses}")
        try:
            values[k] = [float(v) for v in row]
        except ValueError as err:
            raise CaseFormatError(f"{path}: line {k + 2}: {err}") from None
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise CaseFormatError(f"{path}: demand values must be finite and >= 0")
    return values.T.copy()


@dataclass(frozen=True)
class DemandScenario:
    id: int
    coefficient: float
    noise_seed: int
    values: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class NetworkScenario:
    id: int
    outage_line: Optional[int]
    ptdf: PtdfMatrix = field(repr=False)


@dataclass(frozen=True)
class ScenarioSet:
    network: list[NetworkScenario]
    demand: list[DemandScenario]

    def __iter__(self) -> Iterator[tuple[NetworkScenario, DemandScenario]]:
        return iter(product(self.network, self.demand))

    def __len__(self) -> int:
        return len(self.network) * len(self.demand)

    @property
    def keys(self) -> list[tuple[int, int]]:
        return [(n.id, d.id) for n, d in self]


def demand_coefficients(count: int, low: float, high: float) -> list[float]:
    if count < 1:
        raise InvalidRangeError(f"scenario count must be >= 1, got {count}")
    if not 0 < low <= high:
        raise InvalidRangeError(f"need 0 < low <= high, got low={low}, high={high}")
    if count == 1:
        return [(low + high) / 2.0]
    n = count - 1
    return [(low * (n - k) + high * k) / n for k in range(count)]


def generate_demand_scenarios(
    base: np.ndarray,
    count: int,
    low: float,
    high: float,
    noise_sigma: float,
    seed: int,
) -> list[DemandScenario]:
    """Scaled and noised copies of ``base``; scenario ``k`` gets the k-th coefficient."""
    if noise_sigma < 0:
        raise InvalidRangeError(f"noise_sigma must be >= 0, got {noise_sigma}")
    base = np.asarray(base, dtype=float)
    out = []
    for k, coef in enumerate(demand_coefficients(count, low, high), start=1):
        noise_seed = int(np.random.SeedSequence([seed, k]).generate_state(1)[0])
        eps = np.random.default_rng(noise_seed).normal(0.0, 1.0, base.shape) * noise_sigma
        values = np.maximum(base * coef * (1.0 + eps), 0.0)
        values.setflags(write=False)
        out.append(DemandScenario(id=k, coefficient=coef, noise_seed=noise_seed, values=values))
    return out


@dataclass(frozen=True)
class ObservationVector:
    outage_line: int
    features: np.ndarray


def change_rate_features(flow_outage: np.ndarray, flow_intact: np.ndarray) -> np.ndarray:
    """Clamped mean |F_outage / F_intact| per key line over all (t, tau).

    Both inputs are (N_key, N_T, N_tau). Where the intact flow is below
    ``DEGENERATE_FLOW_MW`` the term counts as 1 if the outage flow is also
    negligible, otherwise as ``RATIO_CAP``.
    """
    num = np.abs(flow_outage)
    den = np.abs(flow_intact)
    small = den < DEGENERATE_FLOW_MW
    safe = np.where(small, 1.0, den)
    ratio = np.where(small, np.where(num < DEGENERATE_FLOW_MW, 1.0, RATIO_CAP), num / safe)
    ratio = np.minimum(ratio, RATIO_CAP)
    mean = ratio.reshape(ratio.shape[0], -1).mean(axis=1)
    return np.maximum(mean, 1.0)


def compute_observation_vector(
    grid: GridModel,
    outage: int,
    key_lines: Sequence[int],
    base_dispatch: DispatchTrajectory,
    outage_dispatch: DispatchTrajectory,
    demand: np.ndarray,
    intact_ptdf: Optional[PtdfMatrix] = None,
    outage_ptdf: Optional[PtdfMatrix] = None,
) -> ObservationVector:
    if not key_lines:
        raise EmptyInputError("at least one key line is required")
    if base_dispatch.shape != outage_dispatch.shape:
        raise InvalidRangeError("intact and outage dispatch must cover the same windows")
    for ln in key_lines:
        grid.line(ln)
    intact_ptdf = intact_ptdf or compute_ptdf(grid)
    outage_ptdf = outage_ptdf or compute_ptdf(grid, outage)
    rows = np.asarray(key_lines) - 1
    f_intact = window_flows(grid, intact_ptdf, base_dispatch.values, demand)[rows]
    f_outage = window_flows(grid, outage_ptdf, outage_dispatch.values, demand)[rows]
    return ObservationVector(outage_line=outage, features=change_rate_features(f_outage, f_intact))


def select_key_lines(
    grid: GridModel, ptdf: PtdfMatrix, dispatch: DispatchTrajectory, demand: np.ndarray, count: int = 3
) -> list[int]:
    """Lines with the highest mean |flow| / limit; ties go to the lower id."""
    util = np.abs(window_flows(grid, ptdf, dispatch.values, demand)) / grid.flow_limits[:, None, None]
    mean = util.reshape(grid.n_lines, -1).mean(axis=1)
    order = sorted(range(grid.n_lines), key=lambda k: (-mean[k], k))
    return sorted(k + 1 for k in order[:count])


@dataclass
class ClusterResult:
    assignment: dict[int, int]  # outage line -> cluster id (1-based)
    centroids: np.ndarray  # (k, N_key), row c-1 is cluster c
    inertia: float
    inertia_history: list[float]

    def members(self, cluster: int) -> list[int]:
        return sorted(line for line, c in self.assignment.items() if c == cluster)


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            nxt = next(i for i in range(n) if i not in chosen)
        chosen.append(nxt)
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(axis=1))
    return x[chosen].copy()


def _assign(x: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, float]:
    d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)  # first minimum wins ties
    return labels, float(d2[np.arange(x.shape[0]), labels].sum())


def kmeans(
    x: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 300
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Lloyd iterations from k-means++ seeds; empty clusters keep their centroid."""
    centroids = _kmeanspp(x, k, rng)
    labels, inertia = _assign(x, centroids)
    history = [inertia]
    for _ in range(max_iter):
        for c in range(k):
            members = labels == c
            if members.any():
                centroids[c] = x[members].mean(axis=0)
        new_labels, inertia = _assign(x, centroids)
        history.append(inertia)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels, centroids, history


def cluster_observations(
    vectors: Sequence[ObservationVector], k: int, seed: int, n_init: int = 10
) -> ClusterResult:
    """k-means over the observation features, best of ``n_init`` seeded restarts.

    Cluster ids are renumbered 1..k in order of their lowest outage line.
    """
    if not vectors:
        raise EmptyInputError("no observation vectors to cluster")
    if not 1 <= k <= len(vectors):
        raise InvalidRangeError(f"need 1 <= k <= {len(vectors)}, got k={k}")
    vectors = sorted(vectors, key=lambda v: v.outage_line)
    x = np.vstack([v.features for v in vectors]).astype(float)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        labels, centroids, history = kmeans(x, k, rng)
        if best is None or history[-1] < best[2][-1]:
            best = (labels, centroids, history)
    labels, centroids, history = best

    order: list[int] = []
    for lab in labels:
        if lab not in order:
            order.append(int(lab))
    order += [c for c in range(k) if c not in order]
    relabel = {old: new for new, old in enumerate(order, start=1)}
    assignment = {v.outage_line: relabel[int(lab)] for v, lab in zip(vectors, labels)}
    return ClusterResult(
        assignment=assignment,
        centroids=centroids[order],
        inertia=history[-1],
        inertia_history=history,
    )


def select_network_scenarios(
    assignment: dict[int, int], trained_outage: int, grid: GridModel
) -> list[NetworkScenario]:
    """One scenario per outage in the trained outage's cluster, ordered by line id."""
    if trained_outage not in assignment:
        raise UnknownLineError(f"trained outage line {trained_outage} is not in the cluster assignment")
    cluster = assignment[trained_outage]
    lines = sorted(line for line, c in assignment.items() if c == cluster)
    return [
        NetworkScenario(id=k, outage_line=line, ptdf=compute_ptdf(grid, line))
        for k, line in enumerate(lines, start=1)
    ]
