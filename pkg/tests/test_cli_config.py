import json
import shutil

import pytest
from builders import CASES, CONFIGS

from gridbench.cli import main
from gridbench.config import ConfigError, load_config, validate
from gridbench.pipeline import StageError, run


def _toy(**overrides):
    doc = json.loads((CONFIGS / "toy_2bus.json").read_text())
    doc.update(overrides)
    return doc


def _write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def _local_toy(tmp_path, **overrides):
    """Toy config with absolute input paths, written into ``tmp_path``."""
    doc = _toy(case_path=str(CASES / "toy_2bus.json"), demand_path=str(CASES / "demand_2bus.csv"),
               output_dir=str(tmp_path / "out"))
    doc.update(overrides)
    return _write(tmp_path, doc)


def test_shipped_configs_are_valid():
    for path in sorted(CONFIGS.glob("*.json")):
        assert validate(path) == [], path.name


def test_missing_case_file_single_diagnostic():
    diags = validate(_toy(case_path="nowhere/grid.json"), base_dir=CONFIGS)
    assert len(diags) == 1
    assert "nowhere/grid.json" in diags[0]


def test_n_tau_zero():
    diags = validate(_toy(n_tau=0), base_dir=CONFIGS)
    assert any(d.startswith("n_tau:") for d in diags)


def test_low_above_high():
    diags = validate(_toy(demand={"count": 3, "low": 1.2, "high": 0.8}), base_dir=CONFIGS)
    assert diags == ["demand: low (1.2) must not exceed high (0.8)"]


def test_all_problems_reported_at_once():
    doc = _toy(n_tau=0, demand_path="missing.csv", demand={"low": 1.5, "high": 1.0})
    del doc["seed"]
    diags = validate(doc, base_dir=CONFIGS)
    assert any(d.startswith("seed:") for d in diags)
    assert any(d.startswith("n_tau:") for d in diags)
    assert any("missing.csv" in d for d in diags)
    assert any(d.startswith("demand:") for d in diags)


def test_unknown_key_rejected():
    assert any("colour" in d for d in validate(_toy(colour="red"), base_dir=CONFIGS))


def test_case_level_checks():
    doc = json.loads((CONFIGS / "ieee30_desk.json").read_text())
    doc["clustering"] |= {"trained_outage": 99, "k": 50, "key_lines": [3, 77]}
    doc["n_t"] = 5000
    diags = validate(doc, base_dir=CONFIGS)
    assert any("trained_outage" in d for d in diags)
    assert any(d.startswith("clustering.k") for d in diags)
    assert any("line 77" in d for d in diags)
    assert any(d.startswith("demand_path:") and "required" in d for d in diags)


def test_duplicate_policy_names():
    diags = validate(_toy(policies=[{"kind": "oracle"}, {"kind": "oracle"}]), base_dir=CONFIGS)
    assert diags == ["policies: duplicate policy name 'oracle'"]


def test_load_config_raises_with_diagnostics():
    with pytest.raises(ConfigError) as err:
        load_config(_toy(n_tau=0), base_dir=CONFIGS)
    assert err.value.diagnostics


def test_invalid_json_reports_position(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "seed": ,\n}')
    diags = validate(path)
    assert len(diags) == 1 and "line 2" in diags[0]


def test_cli_validate_exit_codes(tmp_path, capsys):
    assert main(["validate", str(CONFIGS / "toy_2bus.json")]) == 0
    bad = _write(tmp_path, _toy(case_path=str(tmp_path / "nope.json")))
    assert main(["validate", str(bad)]) == 1
    assert "nope.json" in capsys.readouterr().out


def test_cli_run_config_error(tmp_path):
    bad = _write(tmp_path, _toy(n_tau=0))
    assert main(["run", str(bad)]) == 1


def test_cli_run_and_outputs(tmp_path, capsys):
    cfg = _local_toy(tmp_path)
    assert main(["run", str(cfg)]) == 0
    assert "eta=100%" in capsys.readouterr().out
    out = tmp_path / "out"
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json", "plots", "reports", "run.log"]
    manifest = json.loads((out / "manifest.json").read_text())
    report = json.loads((out / "reports" / "oracle.json").read_text())
    report_keys = sorted((r["s_T"], r["s_D"]) for r in report["per_scenario"])
    assert report_keys == sorted(tuple(k) for k in manifest["scenarios"])
    assert report["config"]["seed"] == 7 and report["seeds"]["run"] == 7
    assert len(report["seeds"]["demand_noise"]) == 5
    plot = (out / "plots" / "oracle_network1.csv").read_text().splitlines()
    assert plot[0] == "s_D,coefficient,rce,nvt,rvm" and len(plot) == 6
    log = (out / "run.log").read_text()
    assert "seed 7" in log and "timings" in log


def test_cli_output_dir_override(tmp_path):
    cfg = _local_toy(tmp_path)
    assert main(["run", str(cfg), "--output-dir", str(tmp_path / "elsewhere")]) == 0
    assert (tmp_path / "elsewhere" / "manifest.json").is_file()
    assert not (tmp_path / "out").exists()


def test_cli_all_infeasible(tmp_path):
    cfg = _local_toy(tmp_path, demand={"count": 2, "low": 3.0, "high": 3.5, "noise_sigma": 0.0})
    assert main(["run", str(cfg)]) == 3
    assert not (tmp_path / "out").exists()
    assert not any(p.name.startswith(".out.partial") for p in tmp_path.iterdir())


def test_cli_runtime_error_names_stage_and_cleans_up(tmp_path, capsys):
    traj = tmp_path / "traj.json"
    traj.write_text(json.dumps({"format": "gridbench-trajectory", "version": 1, "n_t": 96, "n_tau": 8,
                                "unit_ids": [1], "scenarios": []}))
    cfg = _local_toy(tmp_path, policies=[{"kind": "external", "path": str(traj)}])
    assert main(["run", str(cfg)]) == 2
    assert "stage 'evaluate'" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()
    assert [p.name for p in tmp_path.iterdir() if p.name.startswith(".")] == []
    with pytest.raises(StageError) as err:
        run(load_config(cfg))
    assert err.value.stage == "evaluate"


def test_cli_export_and_replay(tmp_path, capsys):
    cfg = _local_toy(tmp_path)
    assert main(["export-baseline", str(cfg), "--output-dir", str(tmp_path / "exp")]) == 0
    traj = tmp_path / "exp" / "baseline_trajectories.json"
    assert traj.is_file()
    replay = _local_toy(tmp_path, policies=[{"kind": "external", "path": str(traj), "name": "replay"}])
    capsys.readouterr()
    assert main(["run", str(replay)]) == 0
    agg = json.loads((tmp_path / "out" / "reports" / "replay.json").read_text())["aggregate"]
    assert agg["rce"] == 0.0 and agg["rvs"] == 0.0 and agg["eta"] == 100.0


def test_rerun_replaces_previous_output(tmp_path):
    cfg = _local_toy(tmp_path)
    assert main(["run", str(cfg)]) == 0
    first = (tmp_path / "out" / "reports" / "oracle.csv").read_bytes()
    assert main(["run", str(cfg)]) == 0
    assert (tmp_path / "out" / "reports" / "oracle.csv").read_bytes() == first


def test_refuses_to_replace_foreign_directory(tmp_path):
    (tmp_path / "out").mkdir()
    (tmp_path / "out" / "keep.txt").write_text("mine")
    assert main(["run", str(_local_toy(tmp_path))]) == 2
    assert (tmp_path / "out" / "keep.txt").read_text() == "mine"


def test_workers_do_not_change_results(tmp_path):
    one = load_config(_local_toy(tmp_path, workers=1))
    two = load_config(_local_toy(tmp_path, workers=2))
    run(one, tmp_path / "w1")
    run(two, tmp_path / "w2")
    for rel in ("manifest.json", "reports/oracle.json", "reports/oracle.csv", "plots/oracle_network1.csv"):
        assert (tmp_path / "w1" / rel).read_bytes() == (tmp_path / "w2" / rel).read_bytes()


def test_relative_paths_resolve_against_config_dir(tmp_path):
    shutil.copytree(CASES, tmp_path / "cases")
    (tmp_path / "configs").mkdir()
    cfg = _write(tmp_path / "configs", _toy(output_dir="../result"), "toy.json")
    assert main(["run", str(cfg)]) == 0
    assert (tmp_path / "result" / "manifest.json").is_file()
