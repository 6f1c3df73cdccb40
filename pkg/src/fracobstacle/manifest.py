"""Run manifests: a YAML (or JSON) document describing one scenario run.

Layout (unknown keys are rejected, ranges are checked before any compute)::

    scenario: full            # solve | verify-identities | frequency-map | beta-panel
                              # | blowup | tube-content | full
    seed: 0
    output_dir: out           # FRACOBSTACLE_OUTPUT_DIR overrides it
    problem:
      n: 1                    # 1 or 2
      s: 0.5                  # in (0, 1)
      k: 2                    # Taylor order of the obstacle correction
      grid: {h: 0.00390625, R: 1.0, height: 1.0}
      obstacle: {kind: cap, radius: 0.5, height: 1.0}   # normalized to C^{k+1} norm 1
      boundary: {kind: zero}  # or {kind: constant, value: c}
      solver: {omega: auto, tol: 1.0e-9, max_sweeps: 200000, cascade: 4}
    fixture: {kind: reference, lam: 2}   # optional, replaces the solve in verify-identities
    analysis:
      theta: 0.5
      delta: 1.0e-6
      delta_ladder: [1.0e-2, 1.0e-4, 1.0e-6]
      C_mono: calibrate       # or a number
      eps_mono: 1.0e-3
      Lambda_add: 0.0
      r_max: 0.125
      min_cells: 16
      radii: [0.125, 0.0625]  # optional explicit panel
      band: 0.1               # |I(0+) - (1 + s)| <= band counts as regular
    panels:
      beta_radii: [0.04]
      mean_flatness: true
      base_points: 8
      tau: 0.0208333
      tube_radii_cells: [4, 8, 16, 32]
      blowup_cells: 32
      blowup_min_cells: 32
      free_region: 0.5
    checks:
      - {metric: frequency_map.regular_fraction, op: ">=", value: 0.8}
"""

from __future__ import annotations

import copy
import hashlib
import math
import os
from dataclasses import dataclass, field

import yaml

from .errors import ConfigurationError

SCENARIOS = {
    "solve": "solve the discrete thin obstacle problem and store the solution",
    "verify-identities": "check the H', D and D' identities, L2-vs-H and Cauchy-Schwarz",
    "frequency-map": "frequency profiles and limits at the free-boundary points",
    "beta-panel": "Jones beta-numbers (and mean-flatness ratios) over the free boundary",
    "blowup": "blow-up sequences, homogeneity fits and spines at free-boundary points",
    "tube-content": "tube volumes of the free boundary and their log-log slope",
    "full": "all of the above on one solution",
}

OPS = {"<=": lambda a, b: a <= b, ">=": lambda a, b: a >= b, "<": lambda a, b: a < b,
       ">": lambda a, b: a > b, "==": lambda a, b: a == b}

_TOP = {"scenario", "seed", "output_dir", "problem", "fixture", "analysis", "panels", "checks"}
_PROBLEM = {"n", "s", "k", "grid", "obstacle", "boundary", "solver"}
_GRID = {"h", "R", "height"}
_SOLVER = {"omega", "tol", "max_sweeps", "cascade"}
_OBSTACLE = {
    "cap": {"height", "radius", "center"},
    "gaussian": {"height", "width", "center"},
    "affine": {"constant", "slope"},
    "constant": {"value"},
    "polynomial": {"terms"},
}
_OBSTACLE_COMMON = {"kind", "normalize", "norm_radius"}
_FIXTURE = {"kind", "lam", "terms", "center"}
_ANALYSIS = {"theta", "delta", "delta_ladder", "C_mono", "eps_mono", "Lambda_add", "eps_H",
             "eps_quad", "min_cells", "r_max", "radii", "band"}
_PANELS = {"beta_radii", "mean_flatness", "base_points", "tau", "tube_radii_cells",
           "blowup_cells", "blowup_min_cells", "free_region"}
_CHECK = {"metric", "op", "value"}


def _keys(block, allowed, where):
    if not isinstance(block, dict):
        raise ConfigurationError(f"{where} must be a mapping")
    extra = set(block) - set(allowed)
    if extra:
        raise ConfigurationError(f"unknown keys in {where}: {sorted(extra)}")


def _num(block, key, where, default=None, lo=None, hi=None, integer=False, open_lo=False):
    val = block.get(key, default)
    if val is None:
        raise ConfigurationError(f"{where}.{key} is required")
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigurationError(f"{where}.{key} must be a number")
    if integer and int(val) != val:
        raise ConfigurationError(f"{where}.{key} must be an integer")
    if not math.isfinite(val):
        raise ConfigurationError(f"{where}.{key} must be finite")
    if lo is not None and (val < lo or (open_lo and val == lo)):
        raise ConfigurationError(f"{where}.{key} = {val} is below its range")
    if hi is not None and val > hi:
        raise ConfigurationError(f"{where}.{key} = {val} is above its range")
    return int(val) if integer else float(val)


@dataclass
class RunManifest:
    scenario: str
    problem: dict
    analysis: dict = field(default_factory=dict)
    panels: dict = field(default_factory=dict)
    fixture: dict | None = None
    checks: list = field(default_factory=list)
    output_dir: str = "out"
    seed: int = 0
    path: str | None = None
    sha256: str | None = None

    def resolved_output_dir(self) -> str:
        return os.environ.get("FRACOBSTACLE_OUTPUT_DIR") or self.output_dir


def validate(doc) -> RunManifest:
    if not isinstance(doc, dict):
        raise ConfigurationError("manifest must be a mapping")
    _keys(doc, _TOP, "manifest")
    scen = doc.get("scenario")
    if scen not in SCENARIOS:
        raise ConfigurationError(f"scenario must be one of {sorted(SCENARIOS)}, got {scen!r}")
    if "problem" not in doc:
        raise ConfigurationError("manifest.problem is required")
    prob = copy.deepcopy(doc["problem"])
    _keys(prob, _PROBLEM, "problem")
    n = _num(prob, "n", "problem", integer=True, lo=1, hi=2)
    s = _num(prob, "s", "problem", lo=0, hi=1, open_lo=True)
    if s >= 1:
        raise ConfigurationError("problem.s must lie in (0, 1)")
    k = _num(prob, "k", "problem", default=2, integer=True, lo=0, hi=8)
    grid = prob.get("grid")
    if grid is None:
        raise ConfigurationError("problem.grid is required")
    _keys(grid, _GRID, "problem.grid")
    h = _num(grid, "h", "problem.grid", lo=0, open_lo=True, hi=0.5)
    R = _num(grid, "R", "problem.grid", default=1.0, lo=0, open_lo=True)
    height = _num(grid, "height", "problem.grid", default=R, lo=0, open_lo=True)
    for name, val in (("R", R), ("height", height)):
        q = val / h
        if abs(q - round(q)) > 1e-9 * max(q, 1.0):
            raise ConfigurationError(f"problem.grid.{name} must be an integer multiple of h")
    prob["n"], prob["s"], prob["k"] = n, s, k
    prob["grid"] = {"h": h, "R": R, "height": height}
    obs = prob.get("obstacle")
    if obs is None:
        if doc.get("fixture") is None:
            raise ConfigurationError("problem.obstacle is required")
    else:
        if not isinstance(obs, dict) or obs.get("kind") not in _OBSTACLE:
            raise ConfigurationError(f"problem.obstacle.kind must be one of {sorted(_OBSTACLE)}")
        _keys(obs, _OBSTACLE[obs["kind"]] | _OBSTACLE_COMMON, "problem.obstacle")
        for key in ("center", "slope"):
            if key in obs and (not isinstance(obs[key], list) or len(obs[key]) != n):
                raise ConfigurationError(f"problem.obstacle.{key} must be a list of length n")
    bnd = prob.get("boundary", {"kind": "zero"})
    if not isinstance(bnd, dict) or bnd.get("kind") not in ("zero", "constant"):
        raise ConfigurationError("problem.boundary.kind must be zero or constant")
    _keys(bnd, {"kind", "value"}, "problem.boundary")
    if bnd["kind"] == "constant":
        _num(bnd, "value", "problem.boundary")
    prob["boundary"] = bnd
    solver = prob.get("solver", {})
    _keys(solver, _SOLVER, "problem.solver")
    om = solver.get("omega", "auto")
    if om != "auto":
        _num(solver, "omega", "problem.solver", lo=0, hi=2, open_lo=True)
        if om >= 2:
            raise ConfigurationError("problem.solver.omega must lie in (0, 2)")
    if "tol" in solver:
        _num(solver, "tol", "problem.solver", lo=0, open_lo=True)
    if "max_sweeps" in solver:
        _num(solver, "max_sweeps", "problem.solver", integer=True, lo=1)
    if "cascade" in solver:
        _num(solver, "cascade", "problem.solver", integer=True, lo=0, hi=10)
    prob["solver"] = solver

    fix = doc.get("fixture")
    if fix is not None:
        _keys(fix, _FIXTURE, "fixture")
        if fix.get("kind") not in ("reference", "polynomial"):
            raise ConfigurationError("fixture.kind must be reference or polynomial")
        if fix["kind"] == "reference" and "lam" not in fix:
            raise ConfigurationError("fixture.lam is required for a reference fixture")
        if "center" in fix and (not isinstance(fix["center"], list) or len(fix["center"]) != n):
            raise ConfigurationError("fixture.center must be a list of length n")

    ana = copy.deepcopy(doc.get("analysis", {}))
    _keys(ana, _ANALYSIS, "analysis")
    if "theta" in ana:
        th = _num(ana, "theta", "analysis", lo=0, hi=1, open_lo=True)
        if th >= 1:
            raise ConfigurationError("analysis.theta must lie in (0, 1)")
    for key in ("delta", "eps_mono", "eps_H", "eps_quad", "r_max", "band"):
        if key in ana:
            _num(ana, key, "analysis", lo=0, open_lo=True)
    if "Lambda_add" in ana:
        _num(ana, "Lambda_add", "analysis", lo=0)
    if "min_cells" in ana:
        _num(ana, "min_cells", "analysis", lo=4)
    if "C_mono" in ana and ana["C_mono"] != "calibrate":
        _num(ana, "C_mono", "analysis", lo=0)
    for key in ("delta_ladder", "radii"):
        if key in ana:
            if not isinstance(ana[key], list) or not ana[key]:
                raise ConfigurationError(f"analysis.{key} must be a non-empty list")
            for i, v in enumerate(ana[key]):
                _num({"v": v}, "v", f"analysis.{key}[{i}]", lo=0, open_lo=True)

    pan = copy.deepcopy(doc.get("panels", {}))
    _keys(pan, _PANELS, "panels")
    for key in ("beta_radii", "tube_radii_cells"):
        if key in pan:
            if not isinstance(pan[key], list) or not pan[key]:
                raise ConfigurationError(f"panels.{key} must be a non-empty list")
            for i, v in enumerate(pan[key]):
                _num({"v": v}, "v", f"panels.{key}[{i}]", lo=0, open_lo=True)
    for key in ("base_points", "blowup_cells"):
        if key in pan:
            _num(pan, key, "panels", integer=True, lo=1)
    for key in ("tau", "blowup_min_cells", "free_region"):
        if key in pan:
            _num(pan, key, "panels", lo=0, open_lo=True)

    checks = doc.get("checks", [])
    if not isinstance(checks, list):
        raise ConfigurationError("checks must be a list")
    seen = set()
    for i, c in enumerate(checks):
        _keys(c, _CHECK, f"checks[{i}]")
        if not isinstance(c.get("metric"), str) or c.get("op") not in OPS:
            raise ConfigurationError(f"checks[{i}] needs a metric name and an op in {sorted(OPS)}")
        _num(c, "value", f"checks[{i}]")
        key = (c["metric"], c["op"], c["value"])
        if key in seen:
            raise ConfigurationError(f"checks[{i}] duplicates an earlier check")
        seen.add(key)
    seed = _num(doc, "seed", "manifest", default=0, integer=True, lo=0)
    out = doc.get("output_dir", "out")
    if not isinstance(out, str) or not out:
        raise ConfigurationError("output_dir must be a non-empty string")
    return RunManifest(scen, prob, ana, pan, fix, checks, out, seed)


def load_manifest(path: str) -> RunManifest:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read manifest: {exc}") from exc
    try:
        doc = yaml.safe_load(raw.decode("utf-8"))
    except (yaml.YAMLError, UnicodeDecodeError) as exc:
        raise ConfigurationError(f"manifest is not valid YAML: {exc}") from exc
    man = validate(doc)
    man.path = path
    man.sha256 = hashlib.sha256(raw).hexdigest()
    return man
