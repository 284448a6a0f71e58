"""Command line front end.

    mixbias {bias,lambda,proposition,consistency,regularity} --config PATH [--out DIR]

Every run writes ``report.json``, one or more CSV files and
``manifest.json`` into the output directory.  Exit status is 0 on
success, 2 when the config is invalid and 1 on a numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from mixbias import __version__
from mixbias.bias import bias_cells, lambda_map, proposition_check, root_offset
from mixbias.config import ConfigError, build, experiment_config, load_config, load_schema
from mixbias.consistency import detect_inconsistency, run_consistency_experiment
from mixbias.estimating import basic_score, mixture_component_score, regularity_matrices
from mixbias.expectation import Weight
from mixbias.families import DomainError
from mixbias.rng import RANDOM_MODELS, stream
from mixbias.scenarios import random_mixture_model

COMMANDS = {
    "bias": "bias of every mixture score under its own component law",
    "lambda": "expected score along a parameter grid, with its roots",
    "proposition": "mixture flag vs. measured bias, plus a sign audit",
    "consistency": "simulate estimator sequences over growing n",
    "regularity": "variability and sensitivity matrices of the basic score",
}


def _clean(obj):
    """JSON-ready copy: numpy scalars/arrays to Python, NaN to None."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def dump_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _write(path: Path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# -- commands -------------------------------------------------------------


def cmd_bias(setup, threads):
    cells = bias_cells(setup.model, setup.quadrature, threads, setup.config["mixture_tol"])
    result = {"model": setup.model.summary(), "cells": [c.to_dict() for c in cells]}
    rows = [("row", "component", "coordinate", "pi", "bias", "quadrature_error", "detectable")]
    for c in cells:
        for coord, b in enumerate(c.bias):
            rows.append((c.row, c.component, coord, c.weight, float(b), float(c.error), c.detectable))
    return result, {"bias.csv": rows}


def cmd_proposition(setup, threads):
    report = proposition_check(setup.model, setup.quadrature, threads, setup.config["mixture_tol"])
    result = report.to_dict()
    audit = [dict(source="config", **a) for a in result["sign_audit"]]
    n_random = setup.config.get("proposition", {}).get("random_rows", 0)
    rng = stream(setup.config["seed"], RANDOM_MODELS)
    for j in range(n_random):
        extra = proposition_check(random_mixture_model(setup.family, rng), setup.quadrature, threads)
        audit.extend(dict(source=f"random:{j}", **a) for a in extra.sign_audit())
    result["sign_audit"] = audit
    cols = ("source", "row", "component", "coordinate", "bias", "sign", "detectable", "agrees")
    audit_rows = [cols] + [tuple(a[c] for c in cols) for a in audit]
    return result, {"bias.csv": list(report.csv_rows()), "sign_audit.csv": audit_rows}


def cmd_lambda(setup, threads):
    sec = setup.config.get("lambda", {})
    k = sec.get("component", 0)
    row = sec.get("row", 0)
    coord = sec.get("coordinate", 0)
    model = setup.model
    star = np.asarray(sec.get("theta_star", model.components[k]), dtype=float)
    if sec.get("weight", "component") == "marginal":
        weight = Weight.of_row(model.with_component(k, star), row)
    else:
        weight = Weight.of_family(setup.family, star)
    grid_spec = sec.get("grid")
    if grid_spec is None:
        scale = setup.family.location_scale(star)[1]
        lo, hi = star[coord] - 3 * scale, star[coord] + 3 * scale
        dom = setup.family.default_interval(coord)
        lo = max(lo, dom[0] + 1e-3 * (star[coord] - dom[0]))
        grid = np.linspace(lo, hi, 61)
    else:
        grid = np.linspace(grid_spec["lower"], grid_spec["upper"], grid_spec["points"])
    curve = lambda_map(mixture_component_score(model, k), weight, star, grid,
                       coordinate=coord, row=row, spec=setup.quadrature)
    result = curve.to_dict()
    result["root_offset"] = root_offset(curve) if curve.roots else None
    return result, {"lambda.csv": list(curve.csv_rows())}


def cmd_consistency(setup, threads):
    cfg = experiment_config(setup)
    trace = run_consistency_experiment(cfg, threads)
    result = trace.summary()
    result["epsilon"] = cfg.epsilon
    result["inconsistent"] = detect_inconsistency(trace, trace.truth(), cfg.epsilon)
    return result, {"trace.csv": list(trace.csv_rows())}


def cmd_regularity(setup, threads):
    theta = np.asarray(setup.config.get("regularity", {}).get("theta", setup.components[0]))
    rep = regularity_matrices(basic_score(setup.family), theta,
                              Weight.of_family(setup.family, theta), setup.quadrature)
    result = {"theta": theta.tolist(), **rep.to_dict()}
    if not math.isfinite(result["S_condition_estimate"]):
        result["S_condition_estimate"] = None
    return result, {}


HANDLERS = {
    "bias": cmd_bias,
    "lambda": cmd_lambda,
    "proposition": cmd_proposition,
    "consistency": cmd_consistency,
    "regularity": cmd_regularity,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixbias", description="Measure the bias of mixture scores in finite mixed models."
    )
    parser.add_argument("--version", action="version", version=f"mixbias {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, summary in COMMANDS.items():
        p = sub.add_parser(name, help=summary, description=summary)
        p.add_argument("--config", required=True, type=Path, help="experiment config or run manifest")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--tol-abs", type=float, dest="tol_abs", help="absolute quadrature tolerance")
        p.add_argument("--tol-rel", type=float, dest="tol_rel", help="relative quadrature tolerance")
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = args.threads if args.threads is not None else os.cpu_count() or 1
    if threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return 2
    t0 = time.perf_counter()
    overrides = {"seed": args.seed, "tol_abs": args.tol_abs, "tol_rel": args.tol_rel}
    try:
        cfg = load_config(args.config, overrides)
        setup = build(cfg, str(args.config))
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    t1 = time.perf_counter()
    try:
        result, tables = HANDLERS[args.command](setup, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, DomainError) as exc:
        print(f"numerical failure in '{args.command}': {exc}", file=sys.stderr)
        return 1
    t2 = time.perf_counter()

    report = {"command": args.command, "tool_version": __version__, "result": result}
    report = json.loads(dump_json(report))
    jsonschema.validate(report, load_schema("report.schema.json"))

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    outputs = ["report.json"]
    _write(out / "report.json", dump_json(report))
    for name, rows in tables.items():
        _write(out / name, dump_csv(rows))
        outputs.append(name)
    manifest = {
        "command": args.command,
        "tool_version": __version__,
        "config_path": str(args.config),
        "resolved_config": setup.config,
        "master_seed": setup.config["seed"],
        "threads": threads,
        "outputs": outputs + ["manifest.json"],
        "timings": {
            "load_seconds": t1 - t0,
            "compute_seconds": t2 - t1,
            "total_seconds": time.perf_counter() - t0,
        },
    }
    _write(out / "manifest.json", dump_json(manifest))
    print(f"{args.command}: wrote {', '.join(outputs)} and manifest.json to {out}")
    return 0


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
