"""Command-line interface: carpet <subcommand>.

Exit codes: 0 success, 1 experiment failure, 2 usage error, 3 capacity error
(graph too large for the configured budget).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .geometry import (
    CapacityError,
    DEFAULT_VERTEX_BUDGET,
    build_graph,
    read_graph,
    validate_params,
    write_graph,
)
from .harmonic import (
    HittingSpec,
    harnack_constant,
    hitting_pair_catalog,
    hitting_probability,
)
from .heat import TransitionOperator, central_vertex, estimate_ds, estimate_dw, regime_fit
from .coupling import run_coupled_walk, upgrade_statistics
from .linalg import ConvergenceError
from .resistance import face_resistance, resistance_to_infinity
from .harness import config_from_sources, export_report, run_suite


def _add_graph_arg(p):
    p.add_argument("--graph", required=True, help="graph file produced by `carpet build`")


def _write_json_out(payload: dict, out: str | None):
    text = json.dumps(payload, sort_keys=True, indent=1) + "\n"
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="carpet",
        description="numerical laboratory for generalized Sierpinski-carpet graphs",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="build a carpet graph and write it to a file")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--a", type=int, default=1)
    p.add_argument("--n", type=int, required=True, help="subdivision level")
    p.add_argument("--budget", type=int, default=DEFAULT_VERTEX_BUDGET)
    p.add_argument("--out", required=True)

    p = sub.add_parser("harnack", help="boundary-sweep Harnack constant on a box level")
    _add_graph_arg(p)
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--out")

    p = sub.add_parser("hitting", help="hit-the-inner-ball-before-the-shell probability")
    _add_graph_arg(p)
    p.add_argument("--x", type=int, help="center vertex id (default: sample a catalog)")
    p.add_argument("--y", type=int, help="start vertex id (with --x: single probe)")
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--c1", type=float, default=2.0)
    p.add_argument("--c2", type=float, default=4.0)
    p.add_argument("--count", type=int, default=50, help="catalog size when sampling")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--out")

    p = sub.add_parser("heat", help="heat-kernel diagnostics")
    heat_sub = p.add_subparsers(dest="heat_command", required=True)
    q = heat_sub.add_parser("diag", help="on-diagonal series and exponent estimates")
    _add_graph_arg(q)
    q.add_argument("--x", type=int, help="source vertex (default: most central cell)")
    q.add_argument("--tmax", type=int, default=4096)
    q.add_argument("--out", help="CSV path for the t, p_tt series")
    q = heat_sub.add_parser("regime", help="near/far decay-regime fits")
    _add_graph_arg(q)
    q.add_argument("--x", type=int)
    q.add_argument("--pairs", required=True, help="CSV of y,t pairs (no header)")
    q.add_argument("--ds", type=float, help="spectral dimension (default: estimate)")
    q.add_argument("--dw", type=float, help="walk dimension (default: estimate)")
    q.add_argument("--out")

    p = sub.add_parser("couple", help="mirrored coupling experiments")
    couple_sub = p.add_subparsers(dest="couple_command", required=True)
    q = couple_sub.add_parser("run", help="coupling probability for a start pair")
    _add_graph_arg(q)
    q.add_argument("--n", type=int, required=True, help="box level")
    q.add_argument("--x", type=int, help="first walker (default: origin cell)")
    q.add_argument("--y", type=int, help="second walker (default: origin's axis-d neighbor)")
    q.add_argument("--trials", type=int, default=10000)
    q.add_argument("--seed", type=int, default=42)
    q.add_argument("--max-steps", type=int, default=100_000)
    q.add_argument("--audit", action="store_true", help="include per-trial digests")
    q.add_argument("--out")
    q = couple_sub.add_parser("upgrade", help="association upgrade rate per renewal window")
    _add_graph_arg(q)
    q.add_argument("--m", type=int, required=True)
    q.add_argument("--n", type=int, required=True)
    q.add_argument("--j", type=int, default=8)
    q.add_argument("--trials", type=int, default=10000)
    q.add_argument("--seed", type=int, default=42)
    q.add_argument("--out")

    p = sub.add_parser("resist", help="effective-resistance experiments")
    resist_sub = p.add_subparsers(dest="resist_command", required=True)
    q = resist_sub.add_parser("face", help="face-to-face resistance at one level")
    _add_graph_arg(q)
    q.add_argument("--n", type=int, required=True)
    q.add_argument("--tol", type=float, default=1e-10)
    q = resist_sub.add_parser("infinity", help="resistance to growing box boundaries")
    _add_graph_arg(q)
    q.add_argument("--set", dest="set_file", required=True,
                   help="vertex ids, one per line; blank lines separate groups")
    q.add_argument("--levels", required=True, help="comma-separated ground levels")
    q.add_argument("--tol", type=float, default=1e-10)
    q.add_argument("--out")

    p = sub.add_parser("suite", help="run the experiment suite from a config")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--levels", help="comma-separated levels override")
    p.add_argument("--experiments", help="comma-separated experiment override")
    p.add_argument("--out", dest="output_dir", help="artifact directory")
    p.add_argument("--jobs", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--fail-fast", action="store_true")

    p = sub.add_parser("report", help="summarize a suite manifest")
    p.add_argument("--manifest", required=True)

    return parser


def _read_sets(path: str) -> list[list[int]]:
    groups: list[list[int]] = [[]]
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            s = line.strip()
            if not s:
                if groups[-1]:
                    groups.append([])
                continue
            groups[-1].append(int(s))
    return [g for g in groups if g]


def _cmd_build(args) -> int:
    params = validate_params(args.d, args.k, args.a)
    graph = build_graph(args.n, params, budget=args.budget)
    write_graph(graph, args.out)
    print(f"wrote level-{args.n} graph: {graph.num_vertices} vertices, "
          f"{graph.num_edges} edges -> {args.out}")
    return 0


def _cmd_harnack(args) -> int:
    graph = read_graph(args.graph)
    report = harnack_constant(graph, args.level, tolerance=args.tol)
    _write_json_out(report.to_dict(), args.out)
    return 0


def _cmd_hitting(args) -> int:
    graph = read_graph(args.graph)
    if args.y is not None and args.x is None:
        raise ValueError("--y requires --x")
    if args.x is not None and args.y is not None:
        spec = HittingSpec(x=args.x, r=args.r, c1=args.c1, c2=args.c2)
        p = hitting_probability(graph, spec, args.y, tolerance=args.tol)
        _write_json_out({"x": args.x, "y": args.y, "r": args.r, "probability": p}, args.out)
        return 0
    if args.x is not None:
        # One center, every admissible start in the annulus r <= dist <= c1*r.
        delta = (graph.coords - graph.coords[args.x]).astype(np.float64)
        dist = np.sqrt((delta ** 2).sum(axis=1))
        starts = np.nonzero((dist >= args.r) & (dist <= args.c1 * args.r))[0]
        if starts.size == 0:
            raise ValueError(f"no start vertices in the [r, c1*r] annulus around {args.x}")
        pairs = [(args.x, int(y)) for y in starts]
    else:
        pairs = hitting_pair_catalog(graph, args.r, c1=args.c1, c2=args.c2,
                                     count=args.count, seed=args.seed)
    probes = []
    for x, y in pairs:
        spec = HittingSpec(x=x, r=args.r, c1=args.c1, c2=args.c2)
        probes.append({"x": x, "y": y,
                       "probability": hitting_probability(graph, spec, y, tolerance=args.tol)})
    values = [p["probability"] for p in probes]
    _write_json_out(
        {"r": args.r, "count": len(probes), "min": min(values), "mean": sum(values) / len(values),
         "probes": probes},
        args.out,
    )
    return 0


def _cmd_heat(args) -> int:
    graph = read_graph(args.graph)
    op = TransitionOperator(graph)
    x = args.x if args.x is not None else central_vertex(graph)
    if args.heat_command == "diag":
        dist = np.zeros(graph.num_vertices)
        dist[x] = 1.0
        rows = []
        for t in range(1, args.tmax + 1):
            dist = op.step(dist)
            rows.append((t, float(dist[x])))
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write("t,p_tt\n")
                for t, ptt in rows:
                    fh.write(f"{t},{ptt!r}\n")
        ds = estimate_ds(op, x)
        dw = estimate_dw(graph, x)
        summary = {"x": x, "ds": ds.to_dict(), "dw": dw.to_dict()}
        sys.stdout.write(json.dumps(summary, sort_keys=True, indent=1) + "\n")
        return 0
    pairs = []
    with open(args.pairs, "r", encoding="utf-8") as fh:
        for line in fh:
            s = line.strip()
            if not s or s.startswith("#") or s.startswith("y,"):
                continue
            y_str, t_str = s.split(",")
            pairs.append((int(y_str), int(t_str)))
    ds = args.ds if args.ds is not None else estimate_ds(op, x).value
    dw = args.dw if args.dw is not None else estimate_dw(graph, x).value
    fit = regime_fit(op, x, pairs, ds=ds, dw=dw)
    _write_json_out(
        {
            "x": x,
            "ds": ds,
            "dw": dw,
            "sub_gaussian": fit.sub_gaussian.to_dict() if fit.sub_gaussian else None,
            "gaussian": fit.gaussian.to_dict() if fit.gaussian else None,
            "n_floor_excluded": fit.n_floor_excluded,
        },
        args.out,
    )
    return 0


def _cmd_couple(args) -> int:
    graph = read_graph(args.graph)
    if args.couple_command == "run":
        x, y = args.x, args.y
        if x is None or y is None:
            if (x is None) != (y is None):
                raise ValueError("give both --x and --y, or neither")
            # Default: the origin cell and its neighbor one step along the
            # last axis — an adjacent, 0-associated pair.
            origin = np.zeros(graph.params.d, dtype=np.int64)
            x = graph.vertex_id(origin)
            origin[-1] = 1
            y = graph.vertex_id(origin)
        outcomes = [
            run_coupled_walk(graph, x, y, args.n, max_steps=args.max_steps,
                             seed=args.seed, trial=i)
            for i in range(args.trials)
        ]
        valid = [o for o in outcomes if not o.truncated]
        coupled = sum(1 for o in valid if o.coupled)
        payload = {
            "n": args.n,
            "pair": [int(x), int(y)],
            "trials": args.trials,
            "valid": len(valid),
            "coupled": coupled,
            "probability": coupled / len(valid) if valid else None,
        }
        if args.audit:
            payload["digests"] = [o.trajectory_digest for o in outcomes]
        _write_json_out(payload, args.out)
        return 0
    stats = upgrade_statistics(graph, m=args.m, trials=args.trials, n=args.n,
                               seed=args.seed, j=args.j)
    _write_json_out(stats, args.out)
    return 0


def _cmd_resist(args) -> int:
    if args.resist_command == "face":
        params = read_graph(args.graph).params
        value = face_resistance(params, args.n, tolerance=args.tol)
        sys.stdout.write(json.dumps({"n": args.n, "resistance": value}) + "\n")
        return 0
    graph = read_graph(args.graph)
    levels = [int(s) for s in args.levels.split(",") if s.strip()]
    reports = [
        resistance_to_infinity(graph, group, levels, tolerance=args.tol).to_dict()
        for group in _read_sets(args.set_file)
    ]
    _write_json_out({"levels": levels, "reports": reports}, args.out)
    return 0


def _cmd_suite(args) -> int:
    overrides = {
        "seed": args.seed,
        "output_dir": args.output_dir,
        "jobs": args.jobs,
        "trials": args.trials,
    }
    if args.levels:
        overrides["levels"] = tuple(int(s) for s in args.levels.split(","))
    if args.experiments:
        overrides["experiments"] = tuple(s.strip() for s in args.experiments.split(","))
    config = config_from_sources(args.config, overrides)
    manifest = run_suite(config, fail_fast=args.fail_fast)
    failed = [n for n, e in manifest.experiments.items() if e["status"] != "ok"]
    print(f"suite {manifest.config_hash}: {len(manifest.experiments)} experiments, "
          f"{len(manifest.artifacts)} artifacts, {manifest.wall_clock_seconds:.1f}s")
    if failed:
        print("failed: " + ", ".join(failed))
        return 1
    return 0


def _cmd_report(args) -> int:
    text, gaps = export_report(args.manifest)
    sys.stdout.write(text)
    if "nothing to report" in text:
        return 2
    return 1 if gaps else 0


_HANDLERS = {
    "build": _cmd_build,
    "harnack": _cmd_harnack,
    "hitting": _cmd_hitting,
    "heat": _cmd_heat,
    "couple": _cmd_couple,
    "resist": _cmd_resist,
    "suite": _cmd_suite,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, FileNotFoundError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ConvergenceError, RuntimeError) as exc:
        print(f"experiment failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
