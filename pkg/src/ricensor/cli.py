"""Command-line interface: ``ricensor test | invert | simulate | gen-network``.

Exit codes: 0 success, 1 usage error, 2 data or configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
import warnings
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__, dataio, inference, simulate
from .causal import MODEL_NAMES, Theta, parse_model
from .interference import (
    InterferenceError,
    degree_summary,
    gen_poisson_neighbors,
    gen_preferential_attachment,
    read_edge_list,
    write_edge_list,
)
from .randomize import DataError, Method, StatKind, run_test

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
THREADS_ENV = "RICENSOR_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with status 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _stat_list(text: str) -> list[str]:
    out = [s.strip().lower() for s in text.split(",") if s.strip()]
    for s in out:
        if s not in {k.value for k in StatKind}:
            raise argparse.ArgumentTypeError(f"unknown statistic {s!r}")
    return out


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=_positive_int, default=None,
                   help=f"worker cap (default: ${THREADS_ENV} or all cores)")
    p.add_argument("--manifest", type=Path, default=None, help="run manifest JSON path")


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", type=Path, required=True, help="CSV with columns id,y,d,z[,b]")
    p.add_argument("--edges", type=Path, required=True, help="edge list, one 'i j' pair per line")
    p.add_argument("--symmetric", action="store_true", help="insert every edge in both directions")
    p.add_argument("--model", choices=MODEL_NAMES, default="add-G")
    p.add_argument("--method", choices=[m.value for m in Method], default=Method.IPZ.value)
    p.add_argument("--draws", type=_positive_int, default=1000, help="Monte Carlo draws C")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ricensor", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("test", help="test H0: (delta, tau) = (delta0, tau0)")
    _add_data_args(p)
    p.add_argument("--delta0", type=float, required=True)
    p.add_argument("--tau0", type=float, required=True)
    p.add_argument("--stat", type=_stat_list, default=["lraft"], help="logr, lraft, ks (comma list)")
    p.add_argument("--exact", action="store_true", help="enumerate all assignments (fixed_d only)")
    p.add_argument("--out", type=Path, required=True)
    _add_common(p)

    p = sub.add_parser("invert", help="p-value grid, confidence set and point estimate")
    _add_data_args(p)
    p.add_argument("--stat", choices=[k.value for k in StatKind], default="lraft")
    p.add_argument("--delta-grid", required=True, help="start:stop:step or comma list")
    p.add_argument("--tau-grid", required=True, help="start:stop:step or comma list")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out-grid", type=Path, required=True, help="CSV delta0,tau0,pvalue")
    p.add_argument("--out", type=Path, required=True, help="summary JSON")
    _add_common(p)

    p = sub.add_parser("simulate", help="type-I, power or coverage study")
    p.add_argument("--study", choices=["type1", "power", "coverage"], required=True)
    p.add_argument("--config", type=Path, default=None, help="JSON file of study settings")
    p.add_argument("--outdir", type=Path, required=True)
    p.add_argument("--replicates", type=_positive_int, default=None)
    p.add_argument("--draws", type=_positive_int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--alpha", type=float, default=0.05, help="coverage level for --study coverage")
    p.add_argument("--paper-scale", action="store_true",
                   help="full budgets: 2000 replicates with C=10000 (C=2500 for power/coverage)")
    _add_common(p)

    p = sub.add_parser("gen-network", help="generate a synthetic interference structure")
    p.add_argument("--kind", choices=["poisson", "pa"], required=True)
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--mean", type=float, default=16.0, help="Poisson mean set size")
    p.add_argument("--m-edges", type=_positive_int, default=8, help="edges per new node (pa)")
    p.add_argument("--symmetrize", action="store_true", help="symmetrize a Poisson network")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--summary", type=Path, default=None, help="degree summary JSON")
    p.add_argument("--manifest", type=Path, default=None, help="run manifest JSON path")
    return parser


# --------------------------------------------------------------------------
# commands


def _load(args):
    data = dataio.read_data_csv(args.data)
    A = read_edge_list(args.edges, n=data.n, symmetric=args.symmetric)
    return data, A


def cmd_test(args, threads: int) -> dict:
    data, A = _load(args)
    if args.draws < 1:
        raise UsageError("--draws must be at least 1")
    model = parse_model(args.model)
    res = run_test(
        data, A, model, Theta(args.delta0, args.tau0), args.stat, args.draws, args.seed,
        args.method, exact=args.exact, workers=threads,
    )
    out = {s.value: r.to_dict() for s, r in res.items()}
    dataio.write_json(out if len(out) > 1 else next(iter(out.values())), args.out)
    return {"nonconverged_fits": {k: v["nonconverged_fits"] for k, v in out.items()}}


def cmd_invert(args, threads: int) -> dict:
    data, A = _load(args)
    deltas = inference.parse_axis(args.delta_grid)
    taus = inference.parse_axis(args.tau_grid)
    grid = inference.invert(
        data, A, parse_model(args.model), args.stat, deltas, taus, args.draws, args.alpha,
        args.seed, args.method, workers=threads,
    )
    with open(args.out_grid, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["delta0", "tau0", "pvalue"])
        for d, t, p in grid.rows():
            w.writerow([simulate.fmt(d), simulate.fmt(t), simulate.fmt(p)])
    summary: dict = {
        "alpha": args.alpha,
        "stat": grid.stat,
        "method": grid.method,
        "model": grid.model,
        "draws": grid.draws,
        "seed": grid.seed,
        "poor_fit": grid.poor_fit,
        "confidence_set_size": len(grid.confidence_set()),
        "failed_points": [
            {"delta0": float(deltas[a]), "tau0": float(taus[b]), "error": e} for (a, b), e in grid.errors.items()
        ],
        "nonconverged_fits": grid.nonconverged_fits,
    }
    try:
        est = inference.point_estimate(grid)
        summary["point_estimate"] = {"delta": est.theta.delta, "tau": est.theta.tau,
                                     "max_pvalue": est.max_pvalue, "tied": est.tied}
        if grid.model.startswith("add"):
            summary["interpretation"] = asdict(inference.interpret_add(est.theta))
    except ValueError:
        summary["point_estimate"] = None
    for axis in ("delta", "tau"):
        mi = inference.marginal_interval(grid, axis)
        summary[f"{axis}_marginal"] = {"values": list(mi.values), "hull": list(mi.hull) if mi.hull else None}
    dataio.write_json(summary, args.out)
    warn = {"poor_fit": grid.poor_fit, "failed_points": len(grid.errors),
            "nonconverged_fits": grid.nonconverged_fits}
    if grid.poor_fit:
        print("warning: empty confidence set; the causal model fits poorly", file=sys.stderr)
    return warn


def _study_config(args) -> simulate.SimConfig:
    raw = {}
    if args.config is not None:
        try:
            raw = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise simulate.ConfigError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise simulate.ConfigError(f"{args.config}: expected a JSON object")
    cfg = simulate.SimConfig.from_dict(raw)
    if args.paper_scale:
        cfg = cfg.paper_scale(C=10_000 if args.study == "type1" else 2500)
    overrides = {}
    if args.replicates is not None:
        overrides["replicates"] = args.replicates
    if args.draws is not None:
        overrides["C"] = args.draws
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.study != "type1" and not cfg.theta0:
        overrides["theta0"] = ((cfg.delta_true, cfg.tau_true),)
    return replace(cfg, **overrides) if overrides else cfg


def cmd_simulate(args, threads: int) -> dict:
    cfg = _study_config(args)
    args.outdir.mkdir(parents=True, exist_ok=True)
    if args.study == "type1":
        study = simulate.run_type1(cfg, workers=threads)
        table = simulate.rejection_table(study)
    elif args.study == "power":
        study, table = simulate.run_power(cfg, workers=threads)
    else:
        study, table = simulate.run_coverage(cfg, alpha=args.alpha, workers=threads)
    simulate.write_pvalues_csv(study.rows, args.outdir / "pvalues.csv")
    simulate.write_ecdf_csv(study, args.outdir / "ecdf.csv")
    simulate.write_table_csv(table, args.outdir / ("coverage.csv" if args.study == "coverage" else "rejection.csv"))
    dataio.write_json(study.manifest(), args.outdir / "study.json")
    return {"failed_replicates": len(study.failures), "nonconverged_fits": study.nonconverged,
            "ridge_added": study.ridge_added}


def cmd_gen_network(args, threads: int) -> dict:
    rng = np.random.default_rng(args.seed)
    if args.kind == "poisson":
        A = gen_poisson_neighbors(args.n, args.mean, rng, symmetrize=args.symmetrize)
    else:
        A = gen_preferential_attachment(args.n, args.m_edges, rng)
    write_edge_list(A, args.out)
    summary_path = args.summary or args.out.with_name(args.out.name + ".summary.json")
    dataio.write_json(degree_summary(A), summary_path)
    return {}


COMMANDS = {"test": cmd_test, "invert": cmd_invert, "simulate": cmd_simulate, "gen-network": cmd_gen_network}


_OUTPUT_KEYS = {"threads", "manifest", "out", "out_grid", "outdir", "summary"}


def _manifest(args, argv, threads, start, extra) -> dict:
    settings = {}
    for k, v in vars(args).items():
        if k in _OUTPUT_KEYS:
            continue
        # hash input contents, not paths, so the digest is platform independent
        settings[k] = hashlib.sha256(v.read_bytes()).hexdigest() if isinstance(v, Path) else v
    digest = hashlib.sha256(json.dumps(settings, sort_keys=True, default=str).encode()).hexdigest()
    return {
        "command_line": ["ricensor", *argv],
        "config_digest": digest,
        "master_seed": getattr(args, "seed", None),
        "version": __version__,
        "threads": threads,
        "wall_time_seconds": time.perf_counter() - start,
        "warnings": extra,
    }


def _default_manifest_path(args) -> Path | None:
    if args.manifest is not None:
        return args.manifest
    if args.command == "simulate":
        return args.outdir / "manifest.json"
    out = getattr(args, "out", None)
    return out.with_name(out.name + ".manifest.json") if out is not None else None


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    start = time.perf_counter()
    try:
        threads = args.threads if getattr(args, "threads", None) else default_threads()
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", RuntimeWarning)
            extra = COMMANDS[args.command](args, threads)
        messages = [str(w.message) for w in caught]
        for msg in messages:
            print(f"warning: {msg}", file=sys.stderr)
        extra = dict(extra, messages=messages)
        path = _default_manifest_path(args) if args.command != "gen-network" else args.manifest
        if path is not None:
            dataio.write_json(_manifest(args, argv, threads, start, extra), path)
    except UsageError as exc:
        print(f"ricensor: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, np.linalg.LinAlgError, OverflowError) as exc:
        print(f"ricensor: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, InterferenceError, simulate.ConfigError, ValueError, OSError) as exc:
        print(f"ricensor: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
