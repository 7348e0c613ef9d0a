"""Acceptance checks, one per criterion, each printing a single PASS/FAIL line.

Run under pytest (lines are repeated in the terminal summary) or directly:

    python tests/test_acceptance.py

The desk preset is run once per session and shared by the checks that need it.
Set GRIDBENCH_FULL_PAPER=1 to also run the paper preset at full length
(n_t = 3840; expect close to an hour on one core).
"""

from __future__ import annotations

import functools
import json
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent))

from builders import (  # noqa: E402
    CONFIGS,
    bus3_demand,
    congested_ring3,
    dc_flows_from_scratch,
    enumerate_two_unit_window,
    random_connected_grid,
    raw_window_residuals,
    ring3,
    two_bus,
)

from gridbench.config import load_config  # noqa: E402
from gridbench.convex_solver import solve  # noqa: E402
from gridbench.dispatch import DispatchTrajectory, LookAheadConfig, build_dcopf_window  # noqa: E402
from gridbench.grid_model import Bus, TransmissionLine, build_grid, compute_ptdf, line_flows, load_case  # noqa: E402
from gridbench.metrics import ScenarioMetrics, ViolationTensor, aggregate, metrics_from_violations  # noqa: E402
from gridbench.pipeline import export_baseline, run  # noqa: E402
from gridbench.scenario_gen import compute_observation_vector, demand_coefficients  # noqa: E402

RESULTS: dict[str, tuple[bool, str]] = {}

# tolerances and budgets, as stated by the acceptance criteria
RCE_TOL = 1e-6
TOY_BUDGET_S = 10.0
DESK_BUDGET_S = 300.0
ENUM_REL_TOL = 1e-2
RAW_FEAS_MW = 1e-5
PTDF_EXACT = 1e-12
PTDF_RING = 1e-9
OUTAGE_MW = 1e-8
HOMOGENEITY = 1e-9
SCALE = 7.3


def _scratch() -> Path:
    return Path(tempfile.mkdtemp(prefix="gridbench-acceptance-"))


def _config(name: str, **overrides):
    doc = json.loads((CONFIGS / name).read_text())
    doc.update(overrides)
    return load_config(doc, base_dir=CONFIGS)


def _oracle_replay(cfg_name: str, **overrides):
    """Export the baseline, then evaluate it as an external trajectory alongside the presets."""
    out = _scratch()
    t0 = time.perf_counter()
    cfg = _config(cfg_name, **overrides)
    traj = export_baseline(cfg, out / "baseline.json")
    doc = json.loads((CONFIGS / cfg_name).read_text()) | overrides
    doc["policies"] = doc["policies"] + [{"kind": "external", "path": str(traj), "name": "exported-baseline"}]
    result = run(load_config(doc, base_dir=CONFIGS), out / "run")
    return result, time.perf_counter() - t0


@functools.cache
def toy_run():
    return _oracle_replay("toy_2bus.json")


@functools.cache
def desk_run():
    return _oracle_replay("ieee30_desk.json")


def _record(name: str, ok: bool, detail: str) -> bool:
    RESULTS[name] = (ok, detail)
    print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return ok


def _identity(agg) -> bool:
    return (abs(agg["rce"]) <= RCE_TOL and agg["rvs"] == 0 and agg["rvm"] == 0
            and agg["nvc"] == 0 and agg["nvt"] == 0 and agg["eta"] == 100.0)


def check_oracle_identity() -> bool:
    toy, toy_s = toy_run()
    desk, desk_s = desk_run()
    t_agg = toy.reports["exported-baseline"].aggregate
    d_agg = desk.reports["exported-baseline"].aggregate
    ok = (_identity(t_agg) and _identity(d_agg) and toy_s < TOY_BUDGET_S and desk_s < DESK_BUDGET_S
          and d_agg["n_scored"] + d_agg["n_skipped"] == 123)
    return _record(
        "oracle identity", ok,
        f"toy rce={t_agg['rce']:.1e} eta={t_agg['eta']:g}% in {toy_s:.1f}s (<{TOY_BUDGET_S:g}s); "
        f"desk rce={d_agg['rce']:.1e} rvs={d_agg['rvs']:g} eta={d_agg['eta']:g}% over "
        f"{d_agg['n_scored']} scored scenarios in {desk_s:.0f}s export+run (<{DESK_BUDGET_S:g}s)",
    )


def check_dcopf_oracle() -> bool:
    grid = congested_ring3()
    demand = bus3_demand([120.0, 130.0])
    prev = np.array([100.0, 20.0])
    sol = solve(build_dcopf_window(grid, compute_ptdf(grid), demand, 1, prev, 2))
    oracle, _ = enumerate_two_unit_window(grid, demand, prev)
    rel = abs(sol.objective_value - oracle) / abs(oracle)
    traj = DispatchTrajectory(sol.x.reshape(2, 1, 2), prev)
    res = raw_window_residuals(grid, compute_ptdf(grid), demand, traj, LookAheadConfig(n_t=1, n_tau=2))
    worst = max(res.values())
    ok = sol.optimal and rel <= ENUM_REL_TOL and worst <= RAW_FEAS_MW
    return _record("DCOPF oracle equivalence", ok,
                   f"objective {sol.objective_value:.6f} vs enumeration {oracle:.6f} (rel {rel:.1e}), "
                   f"worst raw residual {worst:.1e} MW")


def check_ptdf() -> bool:
    two = compute_ptdf(two_bus())
    e2 = max(abs(two.values[0, 1] + 1.0), abs(two.values[0, 0]),
             abs(line_flows(two, np.array([10.0, -10.0]))[0] - 10.0))
    ring = compute_ptdf(ring3())
    e3 = max(abs(ring.values[0, 1] + 2 / 3), abs(ring.values[1, 1] + 1 / 3))
    par = build_grid("parallel", [Bus(1, True), Bus(2)],
                     [TransmissionLine(1, 1, 2, 5.0, 50.0), TransmissionLine(2, 1, 2, 5.0, 50.0)],
                     two_bus().units)
    e_par = abs(compute_ptdf(par, outage=1).values[1, 1] + 1.0)
    rng = np.random.default_rng(2024)
    worst, cases = 0.0, 0
    while cases < 100:
        grid = random_connected_grid(rng, int(rng.integers(3, 12)), int(rng.integers(1, 6)))
        if not grid.contingency_lines:
            continue
        outage = int(rng.choice(grid.contingency_lines))
        inj = rng.normal(0, 50, grid.n_buses)
        inj -= inj.mean()
        diff = line_flows(compute_ptdf(grid, outage), inj) - dc_flows_from_scratch(grid, inj, without=outage)
        worst = max(worst, float(np.abs(diff).max()))
        cases += 1
    ok = e2 <= PTDF_EXACT and e_par <= PTDF_EXACT and e3 <= PTDF_RING and worst <= OUTAGE_MW
    return _record("PTDF analytics", ok,
                   f"2-bus err {e2:.1e}, parallel outage err {e_par:.1e}, ring err {e3:.1e}, "
                   f"outage fuzz worst {worst:.1e} MW over {cases} cases")


def check_observation() -> bool:
    rng = np.random.default_rng(7)
    grid = load_case(CONFIGS.parent / "cases" / "ieee30_modified.json")
    intact = compute_ptdf(grid)
    outages = grid.contingency_lines
    min_feature, worst_rel = np.inf, 0.0
    for k in range(200):
        outage = outages[k % len(outages)]
        ptdf = compute_ptdf(grid, outage)
        shape = (grid.n_units, 3, 4)
        base = DispatchTrajectory(rng.uniform(-50, 150, shape), rng.uniform(0, 100, grid.n_units))
        alt = DispatchTrajectory(rng.uniform(-50, 150, shape), rng.uniform(0, 100, grid.n_units))
        demand = rng.uniform(0, 30, (grid.n_buses, 6))
        keys = sorted(rng.choice(np.arange(1, 42), size=3, replace=False).tolist())
        f = compute_observation_vector(grid, outage, keys, base, alt, demand, intact, ptdf).features
        g = compute_observation_vector(
            grid, outage, keys,
            DispatchTrajectory(base.values * SCALE, base.initial_output * SCALE),
            DispatchTrajectory(alt.values * SCALE, alt.initial_output * SCALE),
            demand * SCALE, intact, ptdf,
        ).features
        min_feature = min(min_feature, float(f.min()))
        worst_rel = max(worst_rel, float(np.max(np.abs(g - f) / f)))
    ok = min_feature >= 1.0 and worst_rel <= HOMOGENEITY
    return _record("observation clamp and homogeneity", ok,
                   f"200 fuzz pairs, min feature {min_feature:.6g}, x{SCALE} scaling rel change {worst_rel:.1e}")


def check_metric_algebra() -> bool:
    rng = np.random.default_rng(3)
    shape = (3, 4, 5)
    tensors = []
    for _ in range(4):
        parts = [rng.uniform(0, 1, s) * (rng.random(s) < 0.3) for s in (shape, shape, (2, 4, 5))]
        tensors.append(ViolationTensor(*parts))
    tensors.append(ViolationTensor(np.zeros(shape), np.zeros(shape), np.zeros((2, 4, 5))))
    decoupled = True
    for alpha in (0.5, 2.0, 16.0):
        base = {(1, k): metrics_from_violations(v, 2.0, 1.0) for k, v in enumerate(tensors, 1)}
        scaled = {(1, k): metrics_from_violations(v.scaled(alpha), 2.0, 1.0) for k, v in enumerate(tensors, 1)}
        for k in base:
            decoupled &= scaled[k].rvs == alpha * base[k].rvs and scaled[k].rvm == alpha * base[k].rvm
            decoupled &= scaled[k].nvc == base[k].nvc and scaled[k].nvt == base[k].nvt
        decoupled &= aggregate(scaled).aggregate["eta"] == aggregate(base).aggregate["eta"]

    from gridbench.metrics import compute_violations
    grid = two_bus(limit=50.0)
    at_limit = DispatchTrajectory(np.array([[[100.0, 80.0, 100.0]]]), np.array([100.0]))
    demand = np.vstack([np.zeros(3), np.full(3, 50.0)])
    v = compute_violations(grid, compute_ptdf(grid), demand, at_limit)
    boundary = v.vo.max() == 0 and v.vr.max() == 0 and v.vl.max() == 0

    vo = np.zeros((2, 1, 2))
    vo[0, 0, 1] = 0.7
    m = metrics_from_violations(ViolationTensor(vo, np.zeros((2, 1, 2)), np.zeros((1, 1, 2))), 1.0, 1.0)
    counting = m.nvc == 0.1
    clean = ScenarioMetrics(0.0, 0.0, 0.0, 0.0, 0.0)
    eta = aggregate({(1, 1): clean, (1, 2): m}).aggregate["eta"] == 50.0
    ok = decoupled and boundary and counting and eta
    return _record("metric algebra", ok,
                   f"decoupling {decoupled}, boundary {boundary}, NVC {m.nvc!r} (0.1), eta-50% {eta}")


def check_paper_configuration() -> bool:
    paper = _config("ieee30_paper.json")
    desk = _config("ieee30_desk.json")
    coefs = demand_coefficients(paper.demand.count, paper.demand.low, paper.demand.high)
    steps = np.diff(coefs)
    coef_ok = len(coefs) == 41 and coefs[0] == 0.80 and coefs[-1] == 1.20 and np.allclose(steps, 0.01, atol=1e-12)
    same = paper.echo() | {"n_t": 0} == desk.echo() | {"n_t": 0}
    use_full = os.environ.get("GRIDBENCH_FULL_PAPER") == "1"
    result = run(paper, _scratch() / "paper") if use_full else desk_run()[0]
    manifest = result.scenarios.manifest(paper)
    grid = result.scenarios.grid
    assignment = {int(k): v for k, v in manifest["clustering"]["assignment"].items()}
    covered = sorted(assignment) == sorted(grid.contingency_lines)
    k_ok = sorted(set(assignment.values())) == [1, 2, 3, 4]
    trained = paper.clustering.trained_outage
    cluster = sorted(ln for ln, c in assignment.items() if c == assignment[trained])
    s_t = len(manifest["network_scenarios"])
    report = next(iter(result.reports.values()))
    rows = len(report.to_csv().splitlines()) - 1
    rows_ok = rows == s_t * 41 and (s_t != 3 or rows == 123)
    ok = coef_ok and same and covered and k_ok and s_t == len(cluster) and rows_ok and paper.n_tau == 16
    scale = "full n_t=3840" if use_full else "n_t=96 (desk preset, otherwise identical)"
    return _record("paper-configuration reproduction", ok,
                   f"{len(coefs)} coefficients {coefs[0]:.2f}..{coefs[-1]:.2f} step 0.01; k=4 over "
                   f"{len(assignment)}/{len(grid.contingency_lines)} N-1 cases; trained line {trained} "
                   f"cluster {cluster} -> S_T={s_t}; {rows} report rows; {scale}")


def _tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "run.log"}


def check_determinism() -> bool:
    out = _scratch()
    overrides = {"n_t": 24, "demand": {"count": 5, "low": 0.8, "high": 1.2, "noise_sigma": 0.01}}
    for tag in ("a", "b"):
        run(_config("ieee30_desk.json", **overrides), out / f"desk-{tag}")
        run(_config("toy_2bus.json"), out / f"toy-{tag}")
    same = True
    files = 0
    for case in ("desk", "toy"):
        a, b = _tree_bytes(out / f"{case}-a"), _tree_bytes(out / f"{case}-b")
        same &= a == b and any(k.startswith("reports") for k in a) and "manifest.json" in a
        files += len(a)
    return _record("determinism", same, f"{files // 2} report/manifest/plot files byte-identical across two runs")


def check_degradation() -> bool:
    result, _ = desk_run()
    agg = [result.reports[f"perturbed-{s:g}"].aggregate for s in (0.0, 0.02, 0.05)]
    rvs = [a["rvs"] for a in agg]
    eta = [a["eta"] for a in agg]
    ok = rvs[0] <= rvs[1] <= rvs[2] and eta[0] >= eta[1] >= eta[2]
    return _record("degradation ordering", ok,
                   "sigma 0/0.02/0.05: RVS " + "/".join(f"{v:.4g}" for v in rvs)
                   + ", eta " + "/".join(f"{v:.4g}%" for v in eta))


CHECKS = [
    check_oracle_identity,
    check_dcopf_oracle,
    check_ptdf,
    check_observation,
    check_metric_algebra,
    check_paper_configuration,
    check_determinism,
    check_degradation,
]


def test_oracle_identity():
    assert check_oracle_identity(), RESULTS["oracle identity"][1]


def test_dcopf_oracle_equivalence():
    assert check_dcopf_oracle(), RESULTS["DCOPF oracle equivalence"][1]


def test_ptdf_analytics():
    assert check_ptdf(), RESULTS["PTDF analytics"][1]


def test_observation_clamp_and_homogeneity():
    assert check_observation(), RESULTS["observation clamp and homogeneity"][1]


def test_metric_algebra():
    assert check_metric_algebra(), RESULTS["metric algebra"][1]


def test_paper_configuration_reproduction():
    assert check_paper_configuration(), RESULTS["paper-configuration reproduction"][1]


def test_determinism():
    assert check_determinism(), RESULTS["determinism"][1]


def test_degradation_ordering():
    assert check_degradation(), RESULTS["degradation ordering"][1]


if __name__ == "__main__":
    outcomes = []
    for check in CHECKS:
        try:
            outcomes.append(check())
        except Exception as err:  # a crash is a failed criterion, not an aborted run
            outcomes.append(_record(check.__name__.removeprefix("check_"), False, f"raised {err!r}"))
    print(f"{sum(outcomes)}/{len(outcomes)} criteria passed")
    raise SystemExit(0 if all(outcomes) else 1)
