"""End-to-end run: scenarios, baselines, policy evaluation and output files."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import shutil
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .config import PolicySpec, RunConfig
from .dispatch import (
    DispatchTrajectory,
    LookAheadConfig,
    OraclePolicy,
    PerturbedPolicy,
    ProportionalPolicy,
    dump_trajectories,
    initial_output_for,
    load_external_trajectory,
    solve_baseline,
)
from .errors import EmptyInputError, GridbenchError, ScenarioInfeasibleError
from .grid_model import GridModel, compute_ptdf, load_case
from .metrics import EvaluationReport, ScenarioMetrics, aggregate, scenario_metrics
from .scenario_gen import (
    ClusterResult,
    NetworkScenario,
    ObservationVector,
    ScenarioSet,
    cluster_observations,
    compute_observation_vector,
    generate_demand_scenarios,
    load_demand_csv,
    select_key_lines,
    select_network_scenarios,
)

log = logging.getLogger("gridbench")


class StageError(GridbenchError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        self.stage, self.cause = stage, cause
        super().__init__(f"stage {stage!r} failed: {cause}")


class AllInfeasibleError(GridbenchError):
    """Every scenario's baseline was infeasible, so nothing could be scored."""


@dataclass
class Scenarios:
    grid: GridModel
    base_demand: np.ndarray
    key_lines: list[int]
    observations: list[ObservationVector]
    excluded_outages: dict[int, str]
    clusters: Optional[ClusterResult]
    scenario_set: ScenarioSet

    def manifest(self, cfg: RunConfig) -> dict:
        cl = self.clusters
        clustering = None
        if cl is not None:
            clustering = {
                "k": cfg.clustering.k,
                "key_lines": self.key_lines,
                "observations": {str(o.outage_line): o.features.tolist() for o in self.observations},
                "excluded_outages": {str(k): v for k, v in sorted(self.excluded_outages.items())},
                "assignment": {str(k): v for k, v in sorted(cl.assignment.items())},
                "centroids": cl.centroids.tolist(),
                "inertia": cl.inertia,
            }
        return {
            "seed": cfg.seed,
            "case": self.grid.name,
            "n_t": cfg.n_t,
            "n_tau": cfg.n_tau,
            "demand_scenarios": {
                "count": len(self.scenario_set.demand),
                "noise_sigma": cfg.demand.noise_sigma,
                "scenarios": [
                    {"s_D": d.id, "coefficient": d.coefficient, "noise_seed": d.noise_seed}
                    for d in self.scenario_set.demand
                ],
            },
            "clustering": clustering,
            "trained_outage": cfg.clustering.trained_outage if cl is not None else None,
            "network_scenarios": [
                {"s_T": n.id, "outage_line": n.outage_line} for n in self.scenario_set.network
            ],
            "scenarios": [list(k) for k in self.scenario_set.keys],
        }


@dataclass
class BaselineResult:
    trajectory: Optional[DispatchTrajectory] = None
    infeasible_window: Optional[int] = None
    message: str = ""

    @property
    def feasible(self) -> bool:
        return self.trajectory is not None


def _baseline_job(args) -> BaselineResult:
    grid, ptdf, demand, horizon, initial = args
    try:
        init = initial_output_for(grid, ptdf, demand, initial)
        return BaselineResult(trajectory=solve_baseline(grid, ptdf, demand, horizon, init))
    except ScenarioInfeasibleError as err:
        return BaselineResult(infeasible_window=err.window, message=str(err))


def _map(fn: Callable, jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def horizon_of(cfg: RunConfig) -> LookAheadConfig:
    return LookAheadConfig(n_t=cfg.n_t, n_tau=cfg.n_tau, slot_minutes=cfg.slot_minutes)


def build_scenarios(cfg: RunConfig, grid: GridModel, base_demand: np.ndarray) -> Scenarios:
    """Demand scenarios plus the clustered N-1 network scenario set."""
    horizon = horizon_of(cfg)
    demands = generate_demand_scenarios(
        base_demand, cfg.demand.count, cfg.demand.low, cfg.demand.high,
        cfg.demand.noise_sigma, cfg.seed,
    )
    intact = compute_ptdf(grid)
    if cfg.clustering is None:
        network = [NetworkScenario(id=1, outage_line=None, ptdf=intact)]
        return Scenarios(grid, base_demand, [], [], {}, None, ScenarioSet(network=network, demand=demands))
    outages = list(grid.contingency_lines)
    ptdfs = {None: intact} | {ln: compute_ptdf(grid, ln) for ln in outages}
    jobs = [(grid, ptdfs[k], base_demand, horizon, cfg.initial_output) for k in ptdfs]
    results = dict(zip(ptdfs, _map(_baseline_job, jobs, cfg.workers)))
    if not results[None].feasible:
        raise ScenarioInfeasibleError(results[None].infeasible_window,
                                      f"intact base-demand baseline infeasible: {results[None].message}")
    base_dispatch = results[None].trajectory

    if cfg.clustering.key_lines == "auto":
        key_lines = select_key_lines(grid, intact, base_dispatch, base_demand, cfg.clustering.n_key_lines)
    else:
        key_lines = list(cfg.clustering.key_lines)

    observations, excluded = [], {}
    for ln in outages:
        res = results[ln]
        if not res.feasible:
            excluded[ln] = res.message
            log.warning("outage %d excluded from clustering: %s", ln, res.message)
            continue
        observations.append(compute_observation_vector(
            grid, ln, key_lines, base_dispatch, res.trajectory, base_demand,
            intact_ptdf=intact, outage_ptdf=ptdfs[ln],
        ))
    clusters = cluster_observations(observations, cfg.clustering.k, cfg.seed, cfg.clustering.n_init)
    network = select_network_scenarios(clusters.assignment, cfg.clustering.trained_outage, grid)
    return Scenarios(grid, base_demand, key_lines, observations, excluded, clusters,
                     ScenarioSet(network=network, demand=demands))


def solve_baselines(cfg: RunConfig, grid: GridModel, scenario_set: ScenarioSet) -> dict[tuple[int, int], BaselineResult]:
    horizon = horizon_of(cfg)
    pairs = list(scenario_set)
    jobs = [(grid, n.ptdf, d.values, horizon, cfg.initial_output) for n, d in pairs]
    results = _map(_baseline_job, jobs, cfg.workers)
    return {(n.id, d.id): r for (n, d), r in zip(pairs, results)}


def make_policy(spec: PolicySpec, cfg: RunConfig, grid: GridModel):
    if spec.kind == "oracle":
        return OraclePolicy(name=spec.label)
    if spec.kind == "perturbed":
        return PerturbedPolicy(sigma=spec.sigma, seed=cfg.seed, name=spec.label)
    if spec.kind == "proportional":
        return ProportionalPolicy(name=spec.label)
    return load_external_trajectory(cfg.resolve(spec.path), grid, horizon_of(cfg), name=spec.label)


def evaluate_policy(
    policy, cfg: RunConfig, grid: GridModel, scenario_set: ScenarioSet,
    baselines: dict[tuple[int, int], BaselineResult],
) -> EvaluationReport:
    horizon = horizon_of(cfg)
    if hasattr(policy, "require"):
        policy.require([k for k, b in baselines.items() if b.feasible])
    per_scenario = {}
    for network, demand in scenario_set:
        key = (network.id, demand.id)
        base = baselines[key]
        if not base.feasible:
            per_scenario[key] = ScenarioMetrics.skipped()
            continue
        traj = policy(network, demand, horizon, grid, baseline=base.trajectory)
        traj.check_against(grid, horizon)
        per_scenario[key] = scenario_metrics(grid, network.ptdf, demand.values, traj, base.trajectory)
    try:
        report = aggregate(per_scenario, policy=policy.name, config=cfg.echo())
    except EmptyInputError:
        raise AllInfeasibleError("all scenarios have an infeasible baseline") from None
    report.seeds = {"run": cfg.seed,
                    "demand_noise": {str(d.id): d.noise_seed for d in scenario_set.demand}}
    return report


def plot_rows(report: EvaluationReport, scenario_set: ScenarioSet, s_t: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["s_D", "coefficient", "rce", "nvt", "rvm"])
    for d in scenario_set.demand:
        m = report.per_scenario[(s_t, d.id)]
        vals = ["" if math.isnan(v) else repr(v) for v in (m.rce, m.nvt, m.rvm)]
        w.writerow([d.id, repr(d.coefficient), *vals])
    return buf.getvalue()


@dataclass
class RunResult:
    output_dir: Path
    scenarios: Scenarios
    baselines: dict
    reports: dict[str, EvaluationReport] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)


def _stage(name: str, timings: dict):
    class _Ctx:
        def __enter__(self):
            self.t0 = time.perf_counter()
            log.info("stage %s started", name)

        def __exit__(self, exc_type, exc, tb):
            timings[name] = time.perf_counter() - self.t0
            if exc is not None and not isinstance(exc, (StageError, AllInfeasibleError)):
                if isinstance(exc, (GridbenchError, ValueError, OSError)):
                    raise StageError(name, exc) from exc
            log.info("stage %s finished in %.2fs", name, timings[name])
            return False

    return _Ctx()


def _prepare_output(target: Path) -> Path:
    target = target.resolve()
    target.parent.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(prefix=f".{target.name}.partial-", dir=target.parent))


def _commit_output(tmp: Path, target: Path) -> None:
    target = target.resolve()
    if target.exists():
        if not (target / "manifest.json").exists() and any(target.iterdir()):
            raise StageError("write", FileExistsError(f"{target} exists and is not a gridbench output"))
        shutil.rmtree(target)
    os.replace(tmp, target)


def _load_inputs(cfg: RunConfig, timings: dict) -> tuple[GridModel, np.ndarray]:
    with _stage("load", timings):
        grid = load_case(cfg.resolve(cfg.case_path))
        demand = load_demand_csv(cfg.resolve(cfg.demand_path), grid.n_buses)
    return grid, demand[:, : cfg.n_t + cfg.n_tau - 1]


def _attach_log(path: Path) -> logging.Handler:
    handler = logging.FileHandler(path, mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    if log.level == logging.NOTSET or log.level > logging.INFO:
        log.setLevel(logging.INFO)
    return handler


def run(cfg: RunConfig, output_dir: Optional[Path] = None) -> RunResult:
    """Execute the full pipeline and write outputs atomically to ``output_dir``."""
    target = Path(output_dir) if output_dir is not None else cfg.resolve(cfg.output_dir)
    tmp = _prepare_output(target)
    handler = _attach_log(tmp / "run.log")
    timings: dict[str, float] = {}
    try:
        log.info("seed %d, config %s", cfg.seed, json.dumps(cfg.echo(), sort_keys=True))
        grid, base_demand = _load_inputs(cfg, timings)
        with _stage("scenarios", timings):
            scenarios = build_scenarios(cfg, grid, base_demand)
        log.info("network scenarios: %s", [n.outage_line for n in scenarios.scenario_set.network])
        with _stage("baseline", timings):
            baselines = solve_baselines(cfg, grid, scenarios.scenario_set)
        for key, res in sorted(baselines.items()):
            if not res.feasible:
                log.warning("scenario %s skipped: %s", key, res.message)

        result = RunResult(target.resolve(), scenarios, baselines, timings=timings)
        (tmp / "reports").mkdir()
        (tmp / "plots").mkdir()
        with _stage("evaluate", timings):
            for spec in cfg.policies:
                policy = make_policy(spec, cfg, grid)
                report = evaluate_policy(policy, cfg, grid, scenarios.scenario_set, baselines)
                result.reports[policy.name] = report
                (tmp / "reports" / f"{policy.name}.json").write_text(report.to_json())
                (tmp / "reports" / f"{policy.name}.csv").write_text(report.to_csv())
                for n in scenarios.scenario_set.network:
                    (tmp / "plots" / f"{policy.name}_network{n.id}.csv").write_text(
                        plot_rows(report, scenarios.scenario_set, n.id))
                log.info("policy %s aggregate %s", policy.name, json.dumps(report.aggregate, sort_keys=True))
        (tmp / "manifest.json").write_text(
            json.dumps(scenarios.manifest(cfg), indent=1, sort_keys=True) + "\n")
        log.info("timings %s", json.dumps(timings, sort_keys=True))
        log.removeHandler(handler)
        handler.close()
        _commit_output(tmp, target)
        return result
    except BaseException:
        log.removeHandler(handler)
        handler.close()
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def export_baseline(cfg: RunConfig, output: Optional[Path] = None) -> Path:
    """Solve every scenario's baseline and write it in the trajectory exchange format."""
    timings: dict[str, float] = {}
    grid, base_demand = _load_inputs(cfg, timings)
    with _stage("scenarios", timings):
        scenarios = build_scenarios(cfg, grid, base_demand)
    with _stage("baseline", timings):
        baselines = solve_baselines(cfg, grid, scenarios.scenario_set)
    feasible = {k: r.trajectory for k, r in baselines.items() if r.feasible}
    if not feasible:
        raise AllInfeasibleError("all scenarios have an infeasible baseline")
    path = Path(output) if output is not None else cfg.resolve(cfg.output_dir) / "baseline_trajectories.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".partial")
    try:
        dump_trajectories(tmp, feasible, grid, horizon_of(cfg))
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)
    return path
