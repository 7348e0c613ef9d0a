"""Run configuration: one JSON document per run.

Relative paths are resolved against the directory holding the config file.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError

from .errors import GridbenchError


class ConfigError(GridbenchError):
    def __init__(self, diagnostics: list[str]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(diagnostics))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DemandBlock(_Strict):
    count: int = Field(41, ge=1)
    low: float = Field(0.80, gt=0)
    high: float = Field(1.20, gt=0)
    noise_sigma: float = Field(0.01, ge=0)


class ClusteringBlock(_Strict):
    k: int = Field(4, ge=1)
    key_lines: Union[Literal["auto"], list[int]] = "auto"
    n_key_lines: int = Field(3, ge=1)
    trained_outage: int
    n_init: int = Field(10, ge=1)


class PolicySpec(_Strict):
    kind: Literal["oracle", "perturbed", "proportional", "external"]
    sigma: float = Field(0.0, ge=0)
    path: Optional[str] = None
    name: Optional[str] = None

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind == "perturbed":
            return f"perturbed-{self.sigma:g}"
        if self.kind == "external":
            return Path(self.path or "external").stem
        return self.kind


class RunConfig(_Strict):
    case_path: str
    demand_path: str
    n_t: int = Field(ge=1)
    n_tau: int = Field(16, ge=1)
    slot_minutes: float = Field(15.0, gt=0)
    initial_output: Union[Literal["p_min", "steady"], list[float]] = "p_min"
    demand: DemandBlock = DemandBlock()
    clustering: Optional[ClusteringBlock] = None  # None: intact topology only
    policies: list[PolicySpec] = Field(min_length=1)
    seed: int
    workers: int = Field(1, ge=1)
    output_dir: str = "gridbench-out"

    _base_dir: Path = PrivateAttr(default=Path("."))

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else self._base_dir / path

    def echo(self) -> dict:
        """Config as it affects results; excludes output location and worker count."""
        return self.model_dump(mode="json", exclude={"output_dir", "workers"})


def _read(source: Union[str, Path, dict], base_dir=None) -> tuple[Optional[dict], Path, list[str]]:
    if isinstance(source, dict):
        return source, Path(base_dir or "."), []
    path = Path(source)
    try:
        doc = json.loads(path.read_text())
    except OSError as err:
        return None, path.parent, [f"cannot read config {path}: {err.strerror}"]
    except json.JSONDecodeError as err:
        return None, path.parent, [f"{path}: line {err.lineno} column {err.colno}: {err.msg}"]
    if not isinstance(doc, dict):
        return None, path.parent, [f"{path}: top level must be a JSON object"]
    return doc, path.parent, []


def _loc(parts) -> str:
    return "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in parts).lstrip(".")


def validate(source: Union[str, Path, dict], base_dir=None) -> list[str]:
    """Every problem with a config, or an empty list when it is usable.

    ``base_dir`` anchors relative paths when ``source`` is an in-memory dict.
    """
    doc, base, diags = _read(source, base_dir)
    if doc is None:
        return diags
    try:
        cfg = RunConfig.model_validate(doc)
    except ValidationError as err:
        cfg = None
        for e in err.errors():
            loc = _loc(e["loc"])
            if e["type"] == "missing":
                diags.append(f"{loc}: required field missing")
            else:
                diags.append(f"{loc}: {e['msg']}")

    def path_ok(key: str, value) -> Optional[Path]:
        if not isinstance(value, str):
            return None
        p = Path(value) if Path(value).is_absolute() else base / value
        if not p.is_file():
            diags.append(f"{key}: file not found: {p}")
            return None
        return p

    case_file = path_ok("case_path", doc.get("case_path"))
    demand_file = path_ok("demand_path", doc.get("demand_path"))
    for k, pol in enumerate(doc.get("policies") or []):
        if isinstance(pol, dict) and pol.get("kind") == "external":
            if not pol.get("path"):
                diags.append(f"policies[{k}].path: external policy needs a trajectory file")
            else:
                path_ok(f"policies[{k}].path", pol["path"])

    block = doc.get("demand") if isinstance(doc.get("demand"), dict) else {}
    low, high = block.get("low", 0.80), block.get("high", 1.20)
    if isinstance(low, (int, float)) and isinstance(high, (int, float)) and low > high:
        diags.append(f"demand: low ({low}) must not exceed high ({high})")

    if cfg is None:
        return diags
    labels = [p.label for p in cfg.policies]
    for lab in sorted({x for x in labels if labels.count(x) > 1}):
        diags.append(f"policies: duplicate policy name {lab!r}")
    if case_file is not None:
        diags += _check_against_case(cfg, case_file, demand_file)
    return diags


def _check_against_case(cfg: RunConfig, case_file: Path, demand_file: Optional[Path]) -> list[str]:
    from .grid_model import load_case
    from .scenario_gen import load_demand_csv

    diags = []
    try:
        grid = load_case(case_file)
    except GridbenchError as err:
        return [f"case_path: {err}"]
    cl = cfg.clustering
    contingencies = grid.contingency_lines
    if cl is not None and cl.trained_outage not in contingencies:
        diags.append(f"clustering.trained_outage: line {cl.trained_outage} is not a valid N-1 case")
    if cl is not None and cl.k > len(contingencies):
        diags.append(f"clustering.k: {cl.k} exceeds the {len(contingencies)} N-1 cases")
    if cl is not None and cl.key_lines != "auto":
        if not cl.key_lines:
            diags.append("clustering.key_lines: list must not be empty")
        for ln in cl.key_lines:
            if not 1 <= ln <= grid.n_lines:
                diags.append(f"clustering.key_lines: line {ln} does not exist")
    if isinstance(cfg.initial_output, list) and len(cfg.initial_output) != grid.n_units:
        diags.append(f"initial_output: expected {grid.n_units} values")
    if demand_file is not None:
        try:
            demand = load_demand_csv(demand_file, grid.n_buses)
        except GridbenchError as err:
            diags.append(f"demand_path: {err}")
        else:
            need = cfg.n_t + cfg.n_tau - 1
            if demand.shape[1] < need:
                diags.append(f"demand_path: {demand.shape[1]} slots, n_t + n_tau - 1 = {need} required")
    return diags


def load_config(source: Union[str, Path, dict], base_dir=None) -> RunConfig:
    diags = validate(source, base_dir)
    if diags:
        raise ConfigError(diags)
    doc, base, _ = _read(source, base_dir)
    cfg = RunConfig.model_validate(doc)
    cfg._base_dir = base
    return cfg
