"""Reproducible experiment orchestration.

A plain key=value config (CLI overrides win) selects experiments; each
experiment writes JSON/CSV artifacts that embed the experiment-defining
config and contain no timestamps, so identical configs produce byte-identical
numeric outputs at any parallelism degree.  The manifest records the full
config (plumbing included), its hash, artifact names, per-experiment status,
and wall-clock (the one field allowed to differ between runs).
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import __version__
from .geometry import (
    CarpetParams,
    box_vertices,
    build_graph,
    count_cells,
    hausdorff_dimension,
    validate_params,
)
from .harmonic import harnack_constant, hitting_pair_catalog, hitting_probability, HittingSpec
from .heat import (
    TransitionOperator,
    central_vertex,
    estimate_ds,
    estimate_dw,
    regime_fit,
    saturation_time,
)
from .coupling import run_coupled_walk, upgrade_statistics
from .resistance import face_resistance, resistance_to_infinity

__all__ = [
    "ExperimentConfig",
    "RunManifest",
    "parse_config_file",
    "config_from_sources",
    "config_hash",
    "run_suite",
    "export_report",
    "EXPERIMENT_ORDER",
]


@dataclass
class ExperimentConfig:
    d: int = 2
    k: int = 3
    a: int = 1
    levels: tuple = (2, 3, 4)
    seed: int = 42
    tolerance: float = 1e-10
    experiments: tuple = ("build", "harnack", "heat", "hitting", "couple", "resist")
    output_dir: str = "artifacts"
    jobs: int = 1
    trials: int = 2000

    def params(self) -> CarpetParams:
        return validate_params(self.d, self.k, self.a)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["levels"] = list(self.levels)
        out["experiments"] = list(self.experiments)
        return out

    def echo_dict(self) -> dict:
        """The experiment-defining fields embedded into every artifact.

        Where results land (output_dir) and how many workers compute them
        (jobs) cannot influence the numbers, so they are left out; this is
        what makes artifacts byte-comparable across runs and parallelism
        degrees.  The full config, plumbing included, lives in the manifest.
        """
        out = self.to_dict()
        del out["output_dir"]
        del out["jobs"]
        return out


_INT_KEYS = {"d", "k", "a", "seed", "jobs", "trials"}
_FLOAT_KEYS = {"tolerance"}
_LIST_INT_KEYS = {"levels"}
_LIST_STR_KEYS = {"experiments"}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _INT_KEYS:
        return int(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    if key in _LIST_INT_KEYS:
        return tuple(int(p) for p in raw.split(",") if p.strip())
    if key in _LIST_STR_KEYS:
        return tuple(p.strip() for p in raw.split(",") if p.strip())
    return raw


def parse_config_file(path: str) -> dict:
    """Read a key=value config file; '#' starts a comment."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
            key, raw = stripped.split("=", 1)
            key = key.strip()
            if key not in ExperimentConfig.__dataclass_fields__:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = _parse_value(key, raw)
    return out


def config_from_sources(path: Optional[str] = None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Merge defaults, an optional config file, and CLI overrides (CLI wins)."""
    data = {}
    if path:
        data.update(parse_config_file(path))
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**data)


def config_hash(config: ExperimentConfig) -> str:
    """Hash of the experiment-defining fields (stable across plumbing)."""
    payload = json.dumps(config.echo_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass
class RunManifest:
    config: dict
    config_hash: str
    version: str
    experiments: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    wall_clock_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "config_hash": self.config_hash,
            "version": self.version,
            "experiments": self.experiments,
            "artifacts": self.artifacts,
            "wall_clock_seconds": self.wall_clock_seconds,
        }


class _SuiteContext:
    """Shared graph cache and artifact writer for one suite run."""

    def __init__(self, config: ExperimentConfig, manifest: RunManifest):
        self.config = config
        self.manifest = manifest
        self.params = config.params()
        self._graphs = {}
        os.makedirs(config.output_dir, exist_ok=True)

    def graph(self, level: int):
        if level not in self._graphs:
            self._graphs[level] = build_graph(level, self.params)
        return self._graphs[level]

    def write_json(self, name: str, payload: dict) -> str:
        path = os.path.join(self.config.output_dir, name)
        body = {"config": self.config.echo_dict(), **payload}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(body, fh, sort_keys=True, indent=1)
            fh.write("\n")
        self.manifest.artifacts.append(name)
        return name

    def write_csv(self, name: str, header: list, rows: list) -> str:
        path = os.path.join(self.config.output_dir, name)
        cfg = json.dumps(self.config.echo_dict(), sort_keys=True, separators=(",", ":"))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# config {cfg}\n")
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_cell(v) for v in row) + "\n")
        self.manifest.artifacts.append(name)
        return name

    def parallel(self, fn: Callable, items: list) -> list:
        """Order-preserving map; results identical at any worker count."""
        if self.config.jobs <= 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.config.jobs) as pool:
            return list(pool.map(fn, items))


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def exp_build(ctx: _SuiteContext) -> dict:
    rows = []
    for n in sorted(set(ctx.config.levels)):
        g = ctx.graph(n)
        rows.append((n, g.num_vertices, g.num_edges))
    expected = [count_cells(n, ctx.params) for n, _, _ in rows]
    artifacts = [
        ctx.write_csv("build.csv", ["level", "vertices", "edges"], rows),
        ctx.write_json(
            "build.json",
            {
                "hausdorff_dimension": hausdorff_dimension(ctx.params),
                "cells": {str(n): int(v) for (n, v, _) in rows},
            },
        ),
    ]
    checks = {"counts_match_formula": all(v == e for (_, v, _), e in zip(rows, expected))}
    return {"artifacts": artifacts, "checks": checks}


def exp_harnack(ctx: _SuiteContext) -> dict:
    levels = [n for n in sorted(set(ctx.config.levels)) if n >= 2]
    graph = ctx.graph(max(ctx.config.levels))
    reports = ctx.parallel(
        lambda n: harnack_constant(graph, n, tolerance=ctx.config.tolerance), levels
    )
    rows = [
        (r.level, r.constant, r.rho, r.witness[0], r.witness[1], r.witness[2], r.max_residual)
        for r in reports
    ]
    ratio_ok = True
    for prev, cur in zip(reports, reports[1:]):
        ratio = cur.constant / prev.constant
        ratio_ok = ratio_ok and 0.8 <= ratio <= 1.25
    artifacts = [
        ctx.write_csv(
            "harnack.csv",
            ["level", "constant", "rho", "witness_max", "witness_min", "witness_boundary", "max_residual"],
            rows,
        ),
        ctx.write_json("harnack.json", {"reports": [r.to_dict() for r in reports]}),
    ]
    checks = {
        "constant_stable": ratio_ok,
        "rho_below_one": all(r.rho < 1.0 for r in reports),
        "rho_vs_constant": all(r.rho <= 1.0 - 1.0 / r.constant + 1e-9 for r in reports),
    }
    return {"artifacts": artifacts, "checks": checks}


def exp_heat(ctx: _SuiteContext) -> dict:
    graph = ctx.graph(max(ctx.config.levels))
    op = TransitionOperator(graph)
    x = central_vertex(graph)
    ds = estimate_ds(op, x)
    k = ctx.params.k
    room = float(graph.side - 1 - graph.coords[x].max())
    radii = [float(k ** m) for m in range(1, graph.level + 1) if k ** m <= room]
    dw = estimate_dw(graph, x, radii, tolerance=ctx.config.tolerance)
    df = hausdorff_dimension(ctx.params)

    # Off-diagonal regime data: targets spread over distances, dyadic times.
    t_hi = min(512, saturation_time(graph))
    times = [t for t in (64, 128, 256, 512) if t <= t_hi]
    targets = _regime_targets(graph, x)
    pairs = [(y, t) for t in times for y in targets]
    fit = regime_fit(op, x, pairs, ds=ds.value, dw=dw.value)

    artifacts = [
        ctx.write_csv("heat_diag.csv", ["t", "p_tt"], [(t, p) for t, p in ds.points]),
        ctx.write_json(
            "heat.json",
            {
                "ds": ds.to_dict(),
                "dw": dw.to_dict(),
                "df": df,
                "relation_gap": abs(dw.value - 2.0 * df / ds.value),
                "sub_gaussian": fit.sub_gaussian.to_dict() if fit.sub_gaussian else None,
                "gaussian": fit.gaussian.to_dict() if fit.gaussian else None,
                "n_floor_excluded": fit.n_floor_excluded,
            },
        ),
    ]
    checks = {
        "ds_in_range": 1.0 < ds.value < df,
        "dw_above_two": dw.value > 2.0,
        "relation_within_10pct": abs(dw.value - 2.0 * df / ds.value) <= 0.10 * dw.value,
        "sub_gaussian_r2": bool(fit.sub_gaussian and fit.sub_gaussian.r_squared >= 0.9),
        # The far regime |x-y| > t is empty for a unit-step walk (nothing
        # travels faster than one cell per step); assert the structural
        # absence rather than pretending a fit could exist.
        "gaussian_regime_empty": fit.gaussian is None and fit.n_gauss == 0,
    }
    return {"artifacts": artifacts, "checks": checks}


def _regime_targets(graph, x, count: int = 24) -> list:
    """Deterministic spread of targets by distance ring around x."""
    delta = (graph.coords - graph.coords[x]).astype(np.float64)
    dist = np.sqrt((delta ** 2).sum(axis=1))
    order = np.argsort(dist, kind="stable")
    # skip x itself, then take evenly spaced targets out to half the window
    reach = dist[order] <= graph.side / 2.0
    pool = order[reach][1:]
    if len(pool) <= count:
        return [int(v) for v in pool]
    idx = np.linspace(0, len(pool) - 1, count).astype(np.int64)
    return [int(pool[i]) for i in idx]


def exp_hitting(ctx: _SuiteContext) -> dict:
    graph = ctx.graph(max(ctx.config.levels))
    k = ctx.params.k
    c1, c2 = 2.0, 4.0
    rows = []
    minima = {}
    for m in (1, 2, 3):
        r = float(k ** m)
        if not ((graph.coords + c2 * r <= graph.side - 1).all(axis=1)).any():
            continue  # no admissible centers at this radius in this build
        pairs = hitting_pair_catalog(graph, r, c1=c1, c2=c2, count=50, seed=ctx.config.seed)

        def probe(pair, _m=m, _r=r):
            x, y = pair
            p = hitting_probability(
                graph, HittingSpec(x=x, r=_r, c1=c1, c2=c2), y, tolerance=ctx.config.tolerance
            )
            return (_m, _r, x, y, p)

        results = ctx.parallel(probe, pairs)
        rows.extend(results)
        minima[m] = min(p for (_, _, _, _, p) in results)
    artifacts = [
        ctx.write_csv("hitting.csv", ["m", "r", "x", "y", "probability"], rows),
        ctx.write_json("hitting.json", {"minima": {str(m): v for m, v in minima.items()},
                                        "c1": c1, "c2": c2}),
    ]
    vals = list(minima.values())
    checks = {
        "floor_met": all(v >= 0.01 for v in vals),
        "stable_across_scales": (max(vals) / min(vals) < 2.0) if len(vals) > 1 else False,
    }
    return {"artifacts": artifacts, "checks": checks}


def exp_couple(ctx: _SuiteContext) -> dict:
    top = max(ctx.config.levels)
    n = min(2, top - 1)
    if n < 1:
        raise ValueError("coupling experiment needs a graph of level >= 2")
    graph = ctx.graph(top)
    # adjacent 0-associated pair in the corner of the inner box
    x0 = int(graph.vertex_id(np.zeros(ctx.params.d, dtype=np.int64)))
    first_dir = np.zeros(ctx.params.d, dtype=np.int64)
    first_dir[-1] = 1
    y0 = int(graph.vertex_id(first_dir))

    def one_trial(trial):
        return run_coupled_walk(graph, x0, y0, n, seed=ctx.config.seed, trial=trial)

    outcomes = ctx.parallel(one_trial, list(range(ctx.config.trials)))
    valid = [o for o in outcomes if not o.truncated]
    coupled = sum(1 for o in valid if o.coupled)
    p_hat = coupled / len(valid) if valid else float("nan")
    se = (p_hat * (1 - p_hat) / len(valid)) ** 0.5 if valid else float("nan")

    upgrade = upgrade_statistics(
        graph, m=0, trials=ctx.config.trials, n=n, seed=ctx.config.seed, j=8
    )
    artifacts = [
        ctx.write_json(
            "couple.json",
            {
                "n": n,
                "pair": [x0, y0],
                "trials": ctx.config.trials,
                "valid": len(valid),
                "coupled": coupled,
                "probability": p_hat,
                "standard_error": se,
                "upgrade": upgrade,
            },
        )
    ]
    checks = {
        "coupling_positive": bool(valid) and p_hat >= 0.05,
        "upgrade_positive": upgrade["probability"] > 0.0,
    }
    return {"artifacts": artifacts, "checks": checks}


def exp_resist(ctx: _SuiteContext) -> dict:
    top = max(ctx.config.levels)
    ns = list(range(1, top + 1))
    values = ctx.parallel(
        lambda n: face_resistance(ctx.params, n, tolerance=ctx.config.tolerance), ns
    )
    rows = list(zip(ns, values))
    ratios = [values[i + 1] / values[i] for i in range(len(values) - 1)]
    stable = (
        abs(ratios[-1] / ratios[-2] - 1.0) <= 0.15 if len(ratios) >= 2 else False
    )
    graph = ctx.graph(top)
    # target the corner cell: it sits inside every ground box, so the R_N
    # sequence is genuinely nested
    inf_report = resistance_to_infinity(
        graph, [0], list(range(1, top + 1)), tolerance=ctx.config.tolerance
    )
    artifacts = [
        ctx.write_csv("face_resistance.csv", ["n", "resistance"], rows),
        ctx.write_json(
            "resist.json",
            {
                "face": {str(n): v for n, v in rows},
                "ratios": ratios,
                "to_infinity": inf_report.to_dict(),
            },
        ),
    ]
    checks = {
        "ratio_stable_15pct": stable,
        "monotone_R_N": all(
            b >= a - 1e-9 for a, b in zip(inf_report.resistances, inf_report.resistances[1:])
        ),
        # d=2 carpet is recurrent: the sequence must be flagged divergent
        "divergence_flagged": inf_report.divergent if ctx.config.d == 2 else True,
    }
    return {"artifacts": artifacts, "checks": checks}


EXPERIMENT_ORDER = [
    ("build", exp_build),
    ("harnack", exp_harnack),
    ("heat", exp_heat),
    ("hitting", exp_hitting),
    ("couple", exp_couple),
    ("resist", exp_resist),
]


def run_suite(config: ExperimentConfig, fail_fast: bool = False) -> RunManifest:
    """Run the selected experiments in dependency order and write artifacts.

    Failures are recorded in the manifest and the suite continues unless
    ``fail_fast``.  The manifest itself is written as manifest.json; its
    wall-clock field is the only output allowed to vary between identical
    runs.
    """
    config.params()  # validate early
    manifest = RunManifest(
        config=config.to_dict(), config_hash=config_hash(config), version=__version__
    )
    ctx = _SuiteContext(config, manifest)
    started = time.monotonic()
    for name, fn in EXPERIMENT_ORDER:
        if name not in config.experiments:
            continue
        try:
            result = fn(ctx)
            manifest.experiments[name] = {
                "status": "ok",
                "artifacts": result["artifacts"],
                "checks": result["checks"],
            }
        except Exception as exc:  # recorded, not raised: the suite is a survey
            manifest.experiments[name] = {
                "status": "failed",
                "artifacts": [],
                "checks": {},
                "error": f"{type(exc).__name__}: {exc}",
            }
            if fail_fast:
                break
    manifest.wall_clock_seconds = time.monotonic() - started
    path = os.path.join(config.output_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(), fh, sort_keys=True, indent=1)
        fh.write("\n")
    return manifest


def _fit_line(points) -> tuple[float, float]:
    """OLS slope and intercept of log(y) against log(x) for (x, y) pairs."""
    xs = np.log([p[0] for p in points])
    ys = np.log([p[1] for p in points])
    slope = float(np.cov(xs, ys, bias=True)[0, 1] / np.var(xs))
    return slope, float(ys.mean() - slope * xs.mean())


def _write_figure(path: str, header: list, rows: list) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _figure_loglog(fig_dir: str, name: str, points, xlab: str, ylab: str) -> str:
    """Per-figure data: the log-log series, its fit line, and residuals."""
    slope, icept = _fit_line(points)
    rows = []
    for x, y in points:
        fit = icept + slope * float(np.log(x))
        rows.append((x, y, float(np.log(x)), float(np.log(y)), fit, float(np.log(y)) - fit))
    path = os.path.join(fig_dir, name)
    _write_figure(path, [xlab, ylab, f"log_{xlab}", f"log_{ylab}", "fit", "residual"], rows)
    return name


def export_report(manifest_path: str) -> tuple[str, list]:
    """Render a text summary plus per-figure data files; returns (text, gaps).

    Every number quoted comes from an artifact listed in the manifest; a
    listed artifact that is missing on disk is reported as a gap.  Figure
    files (report_*.csv: series, fit line, residuals) land next to the
    manifest, ready for any external plotting tool.
    """
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    base = os.path.dirname(os.path.abspath(manifest_path))
    lines = []
    gaps = []
    experiments = manifest.get("experiments", {})
    lines.append(f"config {manifest['config_hash']} (version {manifest['version']})")
    if not experiments:
        lines.append("nothing to report: manifest lists no experiments")
        return "\n".join(lines) + "\n", gaps

    for name in manifest.get("artifacts", []):
        if not os.path.exists(os.path.join(base, name)):
            gaps.append(name)

    def artifact(name):
        path = os.path.join(base, name)
        if not os.path.exists(path):
            return None
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)

    figures = []
    order = [name for name, _ in EXPERIMENT_ORDER if name in experiments]
    order += [name for name in sorted(experiments) if name not in order]
    for name in order:
        entry = experiments[name]
        lines.append(f"\n[{name}] status={entry['status']}")
        if entry["status"] != "ok":
            lines.append(f"  error: {entry.get('error', 'unknown')}")
            continue
        for check, ok in sorted(entry.get("checks", {}).items()):
            lines.append(f"  check {check}: {'pass' if ok else 'FAIL'}")
        for art in entry.get("artifacts", []):
            tag = "" if os.path.exists(os.path.join(base, art)) else "  [MISSING]"
            lines.append(f"  artifact {art}{tag}")

        if name == "build" and (data := artifact("build.json")):
            lines.append(f"  hausdorff dimension {data['hausdorff_dimension']!r}")
            lines.append("  level      cells")
            for lvl in sorted(data["cells"], key=int):
                lines.append(f"  {int(lvl):>5} {data['cells'][lvl]:>10}")
        elif name == "harnack" and (data := artifact("harnack.json")):
            lines.append("      n        C_H(n)          rho(n)")
            rows = []
            for rep in data["reports"]:
                lines.append(f"  {rep['level']:>5} {rep['constant']:>13.8f} {rep['rho']:>15.8f}")
                rows.append((rep["level"], rep["constant"], rep["rho"]))
            path = os.path.join(base, "report_harnack.csv")
            _write_figure(path, ["n", "harnack_constant", "oscillation_rho"], rows)
            figures.append("report_harnack.csv")
        elif name == "heat" and (data := artifact("heat.json")):
            ds, dw = data["ds"], data["dw"]
            lines.append(f"  d_s = {ds['value']:.6f} +- {ds['standard_error']:.6f} (r2 {ds['r_squared']:.6f})")
            lines.append(f"  d_w = {dw['value']:.6f} +- {dw['standard_error']:.6f} (r2 {dw['r_squared']:.6f})")
            lines.append(f"  d_f = {data['df']:.6f}; |d_w - 2 d_f / d_s| = {data['relation_gap']:.6f}")
            figures.append(_figure_loglog(base, "report_heat_diag.csv", ds["points"], "t", "p_t"))
            figures.append(_figure_loglog(base, "report_heat_exit.csv", dw["points"], "r", "exit_time"))
            if data.get("sub_gaussian"):
                sub = data["sub_gaussian"]
                lines.append(
                    f"  sub-gaussian fit: slope {sub['value']:.6f} +- {sub['standard_error']:.6f}"
                    f" over {sub['n_points']} pairs (r2 {sub['r_squared']:.6f})"
                )
                slope, icept = _fit_line([(np.exp(u), np.exp(v)) for u, v in sub["points"]])
                rows = [
                    (u, v, icept + slope * u, v - (icept + slope * u)) for u, v in sub["points"]
                ]
                path = os.path.join(base, "report_subgaussian.csv")
                _write_figure(path, ["abscissa", "neg_log_p", "fit", "residual"], rows)
                figures.append("report_subgaussian.csv")
            lines.append(
                "  gaussian regime: "
                + ("fitted" if data.get("gaussian") else "empty (unit-step walk reaches nothing beyond t)")
            )
        elif name == "hitting" and (data := artifact("hitting.json")):
            lines.append("      m   min hitting probability")
            for m in sorted(data["minima"], key=int):
                lines.append(f"  {int(m):>5} {data['minima'][m]:>25.12f}")
        elif name == "couple" and (data := artifact("couple.json")):
            lines.append(
                f"  coupling p-hat = {data['probability']:.6f} +- {data['standard_error']:.6f}"
                f" ({data['coupled']}/{data['valid']} trials, box level {data['n']})"
            )
            up = data["upgrade"]
            lines.append(
                f"  upgrade m={up['m']} j={up['j']}: {up['probability']:.6f}"
                f" ({up['successes']}/{up['valid']}, immediate {up['immediate']})"
            )
        elif name == "resist" and (data := artifact("resist.json")):
            lines.append("      n   face resistance")
            rows = []
            for lvl in sorted(data["face"], key=int):
                lines.append(f"  {int(lvl):>5} {data['face'][lvl]:>17.10f}")
                rows.append((int(lvl), data["face"][lvl]))
            inf = data["to_infinity"]
            tail = "divergent (recurrent)" if inf["divergent"] else f"-> {inf['extrapolated']!r}"
            lines.append(f"  corner-cell resistance to infinity: {tail}")
            path = os.path.join(base, "report_resist_face.csv")
            _write_figure(path, ["n", "face_resistance"], rows)
            figures.append("report_resist_face.csv")

    if figures:
        lines.append("\nfigure data files:")
        lines.extend(f"  {f}" for f in figures)
    if gaps:
        lines.append("\ngaps (missing artifacts):")
        lines.extend(f"  {p}" for p in gaps)
    return "\n".join(lines) + "\n", gaps
