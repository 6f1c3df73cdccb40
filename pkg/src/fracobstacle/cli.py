"""Command line entry point: run manifests, compare outputs with goldens.

    fracobstacle run manifest.yaml
    fracobstacle compare out/report.json golden/report.json
    fracobstacle list-scenarios

Exit codes: 0 pass, 1 failed check or golden mismatch, 2 manifest error,
3 solver non-convergence, 4 analysis degeneracy, 5 missing golden.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time

import numpy as np

from .errors import ConfigurationError, DegenerateError, IterationLimitError, ResolutionError
from .manifest import OPS, SCENARIOS, RunManifest, load_manifest

EXIT_PASS, EXIT_FAIL, EXIT_SCHEMA, EXIT_SOLVER, EXIT_DEGENERATE, EXIT_NO_GOLDEN = 0, 1, 2, 3, 4, 5


class Run:
    """State shared by the scenario steps of one manifest."""

    def __init__(self, manifest: RunManifest, out_dir: str):
        self.m = manifest
        self.out = out_dir
        self.timings = {}
        self.summary = {}
        self.files = []
        self.rng = np.random.default_rng(manifest.seed)
        self._solution = None
        self._geometry = None
        self._config = None

    # -- helpers ---------------------------------------------------------

    def timed(self, name, fn, *args):
        t0 = time.perf_counter()
        try:
            return fn(*args)
        finally:
            self.timings[name] = round(time.perf_counter() - t0, 6)

    def write_csv(self, name, header, rows):
        path = os.path.join(self.out, name)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        self.files.append(name)

    def write_json(self, name, obj):
        path = os.path.join(self.out, name)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(_plain(obj), fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.files.append(name)

    @property
    def n(self):
        return self.m.problem["n"]

    @property
    def s(self):
        return self.m.problem["s"]

    def config(self):
        if self._config is None:
            from .frequency import AnalysisConfig

            ana = dict(self.m.analysis)
            kw = {}
            for key in ("theta", "delta", "eps_mono", "Lambda_add", "eps_H", "eps_quad",
                        "min_cells", "r_max"):
                if key in ana:
                    kw[key] = float(ana[key])
            if "delta_ladder" in ana:
                kw["delta_ladder"] = tuple(float(v) for v in ana["delta_ladder"])
            if isinstance(ana.get("C_mono"), (int, float)):
                kw["C_mono"] = float(ana["C_mono"])
            kw["k"] = self.m.problem["k"]
            self._config = AnalysisConfig(**kw).validate()
        return self._config

    def grid(self):
        from .grid import WeightedGrid

        g = self.m.problem["grid"]
        return WeightedGrid.box(self.n, 1.0 - 2.0 * self.s, g["h"], g["R"], g["height"])

    def problem(self):
        from .obstacles import obstacle_from_config
        from .solver import ObstacleProblem, SolverOptions

        p = self.m.problem
        block = dict(p["obstacle"])
        block.setdefault("k", p["k"])
        obs = obstacle_from_config(block, self.n)
        bnd = p["boundary"]
        boundary = None
        if bnd["kind"] == "constant":
            val = float(bnd["value"])
            boundary = lambda *c: np.full(np.broadcast_shapes(*[np.shape(v) for v in c]), val)  # noqa: E731
        sv = p["solver"]
        opts = SolverOptions(omega=sv.get("omega", "auto"), tol=float(sv.get("tol", 1e-9)),
                             max_sweeps=int(sv.get("max_sweeps", 200000)),
                             cascade=int(sv.get("cascade", 4)))
        return ObstacleProblem(self.grid(), obs, boundary, opts, p["k"])

    def solution(self):
        if self._solution is None:
            from .solver import solve

            prob = self.problem()
            sol = self.timed("solve", solve, prob)
            self._solution = sol
            np.save(os.path.join(self.out, "solution.npy"), sol.u)
            self.files.append("solution.npy")
            self.write_json("solution_meta.json", {
                "grid": prob.grid.describe(), "obstacle": prob.obstacle.describe(),
                "layout": "array axes (t, x_1, ..., x_n); t-major, row j at t = j h",
                "sweeps": sol.sweeps, "seconds": sol.seconds})
            rep = sol.report
            self.summary["solve"] = {
                "sweeps": sol.sweeps, "update": sol.update, "residual": sol.residual,
                "max_violation": rep.max_violation, "max_product": rep.max_product,
                "contact_nodes": int(np.sum(sol.thin_gap() <= 1e-3 * prob.grid.h ** min(2 * self.s, 1.0))),
            }
        return self._solution

    def geometry(self):
        if self._geometry is None:
            from .geometry import extract_geometry

            region = float(self.m.panels.get("free_region", 0.5))
            self._geometry = self.timed("geometry", extract_geometry, self.solution(), self.config(),
                                        1e-3, 1.0, region)
            geo = self._geometry
            self.summary["geometry"] = {
                "contact": int(geo.contact.sum()), "free": int(geo.free.sum()),
                "critical": int(geo.critical.sum()), "Z": int(geo.Z_mask().sum()),
                **geo.inclusion_violations()}
            rows = []
            for idx in zip(*np.nonzero(geo.contact | geo.critical)):
                rows.append(list(geo.points[idx]) + [int(geo.contact[idx]), int(geo.free[idx]),
                                                     int(geo.critical[idx]), geo.growth[idx]])
            xs = [f"x{i + 1}" for i in range(self.n)]
            self.write_csv("geometry.csv", xs + ["contact", "free", "critical", "growth"], rows)
        return self._geometry

    def z_points(self):
        geo = self.geometry()
        return geo.points[geo.Z_mask()]


# --------------------------------------------------------------------------
# scenarios


def scenario_solve(run: Run):
    run.solution()


def scenario_identities(run: Run):
    from .frequency import LocalField, check_identities, dyadic_radii
    from .polynomial import Polynomial
    from .references import polynomial_reference, reference_library

    cfg = run.config()
    fix = run.m.fixture
    if fix is not None:
        grid = run.grid()
        if fix["kind"] == "reference":
            ref = reference_library(run.s, fix["lam"], run.n)
        else:
            ref = polynomial_reference(Polynomial.from_json(run.n, fix.get("terms", [])), run.s)
        field = LocalField(grid, ref.sample(grid))
        center = np.asarray(fix.get("center", [0.0] * run.n), dtype=float)
    else:
        pts = run.z_points()
        if len(pts) == 0:
            raise DegenerateError("no free-boundary point to verify identities at")
        center = pts[0]
        sol = run.solution()
        grid = sol.grid
        field = LocalField.corrected(sol, center, cfg.r_max * 1.25)
    radii = run.m.analysis.get("radii") or dyadic_radii(cfg.r_max, cfg.min_cells * grid.h)
    rows = run.timed("identities", check_identities, field, center, radii)
    cols = ["r", "r_over_h", "H", "D", "G", "E", "Hprime_residual", "D_residual", "Dprime_residual",
            "L2", "rH", "HE_minus_G2"]
    run.write_csv("identities.csv", cols, [[r["r"], r["r"] / grid.h, r["H"], r["D"], r["G"], r["E"],
                                            r["Hprime_residual"], r["D_residual"], r["Dprime_residual"],
                                            r["L2"], r["rH"], r["cauchy_schwarz"]] for r in rows])
    scale = max(max(abs(r["H"] * r["E"]) for r in rows), 1e-300)
    run.summary["identities"] = {
        "center": center.tolist(),
        "max_Hprime_residual": max(r["Hprime_residual"] for r in rows),
        "max_D_residual": max(r["D_residual"] for r in rows),
        "max_Dprime_residual": max(r["Dprime_residual"] for r in rows),
        "L2_vs_H_all": all(r["L2_vs_H_ok"] for r in rows),
        "min_cauchy_schwarz_rel": min(r["cauchy_schwarz"] for r in rows) / scale,
    }


def scenario_frequency_map(run: Run):
    from .frequency import (LocalField, calibrate_C_mono, classify_frequency, frequency_profile)

    cfg = run.config()
    sol = run.solution()
    pts = run.z_points()
    profiles = []
    t0 = time.perf_counter()
    for x in pts:
        f = LocalField.corrected(sol, x, cfg.r_max)
        profiles.append(frequency_profile(f, x, cfg, run.m.analysis.get("radii")))
    C = cfg.C_mono
    if run.m.analysis.get("C_mono") == "calibrate":
        C = calibrate_C_mono(profiles, cfg.theta, cfg.eps_mono)
        C = C if math.isfinite(C) else 128.0
    flagged = small = steps = 0
    for p in profiles:
        p.recompute_J(C, cfg.theta, cfg.eps_mono)
        m = len(p.records)
        steps += max(m - 1, 0)
        flagged += len(p.flags)
        small += sum(1 for j in p.flags if j >= m - 3)
    run.timings["frequency_map"] = round(time.perf_counter() - t0, 6)
    xs = [f"x{i + 1}" for i in range(run.n)]
    rows = []
    for p in profiles:
        for rec in p.records:
            rows.append(list(p.x0) + [rec.r, rec.H, rec.D, rec.G, rec.E, rec.I, rec.J])
    run.write_csv("frequency_profiles.csv", xs + ["r", "H", "D", "G", "E", "I", "J"], rows)
    band = float(run.m.analysis.get("band", 0.1))
    mrows, regular = [], 0
    for p in profiles:
        lam = p.I0
        cls = str(classify_frequency(lam, run.s, band)) if lam > 0 else "Other"
        if abs(lam - (1 + run.s)) <= band:
            regular += 1
        mrows.append(list(p.x0) + [p.I0, p.I0_extrapolated, p.lambda_slope, cls, len(p.flags)])
    run.write_csv("frequency_map.csv", xs + ["I0", "I0_extrapolated", "lambda_slope", "class", "flags"], mrows)
    run.summary["frequency_map"] = {
        "points": len(profiles), "regular_fraction": regular / len(profiles) if profiles else 0.0,
        "C_mono": C, "steps": steps, "flagged_steps": flagged,
        "flagged_fraction": flagged / steps if steps else 0.0,
        "flagged_small_radius": small,
        "I0_min": min((p.I0 for p in profiles), default=math.nan),
        "I0_max": max((p.I0 for p in profiles), default=math.nan),
    }


def _base_indices(run: Run, pts, count):
    if count >= len(pts):
        return list(range(len(pts)))
    return sorted(run.rng.choice(len(pts), size=count, replace=False).tolist())


def scenario_beta_panel(run: Run):
    from .frequency import CorrectedFieldCache
    from .geometry import PointMeasure, beta_number, mean_flatness_diag, refine_free_points

    cfg = run.config()
    sol = run.solution()
    geo = run.geometry()
    Z = geo.Z_mask()
    nodes = geo.points[Z]
    if len(nodes) == 0:
        raise DegenerateError("empty Z set: no beta panel")
    pts = refine_free_points(sol, geo, Z)
    mu = PointMeasure.unit(pts, anchors=nodes)
    radii = run.m.panels.get("beta_radii", [4 * sol.grid.h])
    base = _base_indices(run, pts, int(run.m.panels.get("base_points", len(pts))))
    do_mf = bool(run.m.panels.get("mean_flatness", False))
    fields = CorrectedFieldCache(sol)
    cache = {}
    rows = []
    t0 = time.perf_counter()
    for i in base:
        for r in radii:
            b = beta_number(mu, pts[i], r).beta
            ratio = math.nan
            if do_mf:
                try:
                    ratio = mean_flatness_diag(sol, mu, pts[i], r, cfg, cache, fields)["ratio"]
                except (ResolutionError, DegenerateError):
                    ratio = math.nan
            rows.append(list(pts[i]) + [r, b, ratio])
    run.timings["beta_panel"] = round(time.perf_counter() - t0, 6)
    xs = [f"p{i + 1}" for i in range(run.n)]
    run.write_csv("beta_panel.csv", xs + ["r", "beta", "ratio"], rows)
    ratios = [row[-1] for row in rows if math.isfinite(row[-1])]
    run.summary["beta_panel"] = {
        "entries": len(rows), "max_beta": max(row[-2] for row in rows),
        "max_ratio": max(ratios) if ratios else math.nan}


def scenario_blowup(run: Run):
    from .blowup import blowup_sequence
    from .frequency import dyadic_radii

    cfg = run.config()
    sol = run.solution()
    pts = run.z_points()
    cells = int(run.m.panels.get("blowup_cells", 32))
    rmin = float(run.m.panels.get("blowup_min_cells", 32)) * sol.grid.h
    radii = dyadic_radii(cfg.r_max, rmin)
    reports = []
    t0 = time.perf_counter()
    for x in pts:
        try:
            rep = blowup_sequence(sol, x, radii, cfg, cells=cells)
            reports.append(rep.as_dict())
        except (ResolutionError, DegenerateError, ConfigurationError) as exc:
            reports.append({"center": list(x), "error": str(exc)})
    run.timings["blowup"] = round(time.perf_counter() - t0, 6)
    run.write_json("blowup.json", reports)
    lam = 1 + run.s
    good = [r for r in reports if "lambda" in r]
    regular = [r for r in good if r["frequency_class"] == "Regular"]
    run.summary["blowup"] = {
        "points": len(reports),
        "regular_fraction": len(regular) / len(reports) if reports else 0.0,
        "converged_fraction": sum(r.get("converged", False) for r in reports) / len(reports) if reports else 0.0,
        "max_lambda_rel_error": max((abs(r["lambda"] - lam) / lam for r in good), default=math.nan),
    }


def scenario_tube(run: Run):
    from .geometry import minkowski_tube

    sol = run.solution()
    geo = run.geometry()
    h = sol.grid.h
    cells = run.m.panels.get("tube_radii_cells", [4, 8, 16, 32])
    radii = np.array(cells, dtype=float) * h
    tab = run.timed("tube", minkowski_tube, geo.free_points(), h, radii, run.n)
    run.write_csv("tube.csv", ["r", "volume"], zip(tab.radii, tab.volumes))
    run.summary["tube"] = {"slope": tab.slope, "points": int(geo.free.sum())}


STEPS = {
    "solve": [scenario_solve],
    "verify-identities": [scenario_identities],
    "frequency-map": [scenario_frequency_map],
    "beta-panel": [scenario_beta_panel],
    "blowup": [scenario_blowup],
    "tube-content": [scenario_tube],
    "full": [scenario_solve, scenario_frequency_map, scenario_beta_panel, scenario_blowup,
             scenario_tube],
}


# --------------------------------------------------------------------------
# reports


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _lookup(summary, metric):
    cur = summary
    for part in metric.split("."):
        if not isinstance(cur, dict) or part not in cur:
            return None
        cur = cur[part]
    return cur


def evaluate_checks(checks, summary):
    out = []
    for c in checks:
        val = _lookup(summary, c["metric"])
        ok = False
        if isinstance(val, (bool, np.bool_)):
            val = float(val)
        if isinstance(val, (int, float)) and math.isfinite(float(val)):
            ok = bool(OPS[c["op"]](float(val), float(c["value"])))
        out.append({"metric": c["metric"], "op": c["op"], "value": c["value"],
                    "observed": val, "passed": ok})
    return out


def run_manifest(path: str) -> int:
    try:
        man = load_manifest(path)
    except ConfigurationError as exc:
        print(f"manifest error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    out = man.resolved_output_dir()
    os.makedirs(out, exist_ok=True)
    run = Run(man, out)
    code = EXIT_PASS
    error = None
    t0 = time.perf_counter()
    try:
        for step in STEPS[man.scenario]:
            step(run)
    except IterationLimitError as exc:
        code, error = EXIT_SOLVER, str(exc)
    except (DegenerateError, ResolutionError) as exc:
        code, error = EXIT_DEGENERATE, str(exc)
    except ConfigurationError as exc:
        code, error = EXIT_SCHEMA, str(exc)
    run.timings["total"] = round(time.perf_counter() - t0, 6)
    checks = evaluate_checks(man.checks, run.summary)
    if code == EXIT_PASS and not all(c["passed"] for c in checks):
        code = EXIT_FAIL
    report = {
        "scenario": man.scenario, "seed": man.seed, "manifest": os.path.basename(path),
        "manifest_sha256": man.sha256, "problem": man.problem, "summary": run.summary,
        "checks": checks, "timings": run.timings, "files": sorted(set(run.files)),
        "exit_code": code, "error": error,
    }
    run.write_json("report.json", report)
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['metric']} {c['op']} {c['value']}  "
              f"(observed {c['observed']})")
    if error:
        print(f"error: {error}", file=sys.stderr)
    return code


# --------------------------------------------------------------------------
# golden comparison


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigurationError(f"{path} is empty")
    return rows[0], rows[1:]


def _close(a, b, tol):
    try:
        x, y = float(a), float(b)
    except ValueError:
        return a == b
    if math.isnan(x) or math.isnan(y):
        return math.isnan(x) and math.isnan(y)
    return abs(x - y) <= tol["atol"] + tol["rtol"] * abs(y)


def compare_csv(report, golden, tolerances) -> tuple[bool, str]:
    h1, rows1 = _read_csv(report)
    h2, rows2 = _read_csv(golden)
    if h1 != h2:
        extra = [c for c in h1 if c not in h2]
        missing = [c for c in h2 if c not in h1]
        return False, f"column mismatch (extra {extra}, missing {missing})"
    if len(rows1) != len(rows2):
        return False, f"row count {len(rows1)} != {len(rows2)}"
    for i, (r1, r2) in enumerate(zip(rows1, rows2)):
        for col, a, b in zip(h1, r1, r2):
            tol = tolerances.get(col, tolerances["*"])
            if not _close(a, b, tol):
                return False, f"row {i + 1}, column {col}: {a} vs golden {b}"
    return True, "identical within tolerance"


def _flatten(obj, prefix=""):
    out = {}
    if isinstance(obj, dict):
        for k, v in obj.items():
            out.update(_flatten(v, f"{prefix}{k}."))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            out.update(_flatten(v, f"{prefix}{i}."))
    else:
        out[prefix[:-1]] = obj
    return out


def compare_json(report, golden, tolerances, ignore=("timings",)) -> tuple[bool, str]:
    with open(report, encoding="utf-8") as fh:
        a = _flatten(json.load(fh))
    with open(golden, encoding="utf-8") as fh:
        b = _flatten(json.load(fh))

    def keep(k):
        return not any(k == p or k.startswith(p + ".") for p in ignore)

    a = {k: v for k, v in a.items() if keep(k)}
    b = {k: v for k, v in b.items() if keep(k)}
    if set(a) != set(b):
        return False, f"field mismatch (extra {sorted(set(a) - set(b))}, missing {sorted(set(b) - set(a))})"
    for k in sorted(b):
        tol = tolerances.get(k.rsplit(".", 1)[-1], tolerances["*"])
        va, vb = a[k], b[k]
        if isinstance(vb, bool) or isinstance(va, bool) or not isinstance(vb, (int, float)):
            if va != vb:
                return False, f"field {k}: {va!r} vs golden {vb!r}"
        elif not isinstance(va, (int, float)) or not _close(va, vb, tol):
            return False, f"field {k}: {va!r} vs golden {vb!r}"
    return True, "identical within tolerance"


def compare_golden(report, golden, tolerances=None) -> tuple[bool, str]:
    """Field-by-field comparison; tolerances maps column names (or '*') to atol/rtol."""
    tol = {"*": {"atol": 1e-12, "rtol": 1e-9}}
    tol.update(tolerances or {})
    if os.path.isdir(golden):
        return _compare_dirs(report, golden, tol)
    if report.endswith(".json"):
        return compare_json(report, golden, tol)
    return compare_csv(report, golden, tol)


def _compare_dirs(report, golden, tol) -> tuple[bool, str]:
    """Every CSV/JSON table of the golden directory must match its namesake."""
    if not os.path.isdir(report):
        return False, f"{report} is not a directory"
    names = sorted(f for f in os.listdir(golden) if f.endswith((".csv", ".json")))
    if not names:
        return False, f"no tables in {golden}"
    for name in names:
        mine = os.path.join(report, name)
        if not os.path.exists(mine):
            return False, f"{name}: missing from {report}"
        ok, msg = compare_golden(mine, os.path.join(golden, name), tol)
        if not ok:
            return False, f"{name}: {msg}"
    return True, f"{len(names)} tables identical within tolerance"


def _parse_tol(items):
    out = {}
    for item in items or []:
        name, _, val = item.partition("=")
        if not val:
            raise ConfigurationError(f"column tolerance must look like NAME=ATOL, got {item!r}")
        out[name] = {"atol": float(val), "rtol": 0.0}
    return out


# --------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="fracobstacle", description="Fractional thin obstacle lab.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario manifest")
    r.add_argument("manifest")
    c = sub.add_parser("compare", help="compare a CSV table or JSON report with a golden file")
    c.add_argument("report")
    c.add_argument("golden")
    c.add_argument("--atol", type=float, default=1e-12)
    c.add_argument("--rtol", type=float, default=1e-9)
    c.add_argument("--column-tol", action="append", metavar="NAME=ATOL",
                   help="absolute tolerance for one column or field (repeatable)")
    sub.add_parser("list-scenarios", help="print the available scenarios")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-scenarios":
        for name, desc in SCENARIOS.items():
            print(f"{name:18s} {desc}")
        return EXIT_PASS
    if args.command == "run":
        return run_manifest(args.manifest)
    if not os.path.exists(args.golden):
        print(f"missing golden: {args.golden}", file=sys.stderr)
        return EXIT_NO_GOLDEN
    if not os.path.exists(args.report):
        print(f"missing report: {args.report}", file=sys.stderr)
        return EXIT_FAIL
    try:
        tol = {"*": {"atol": args.atol, "rtol": args.rtol}}
        tol.update(_parse_tol(args.column_tol))
        ok, msg = compare_golden(args.report, args.golden, tol)
    except (ConfigurationError, ValueError, json.JSONDecodeError) as exc:
        print(f"compare error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(("PASS: " if ok else "FAIL: ") + msg)
    return EXIT_PASS if ok else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
