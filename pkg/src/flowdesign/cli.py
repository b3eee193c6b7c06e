"""Command-line front end: run the adaptive loop, direct-MC references and
the LHS baseline, exporting traces and design logs as CSV/JSON artifacts.

Exit codes: 0 success, 1 invalid configuration (message names the offending
field), 2 runtime failure (diagnostics on stderr, failure record in
trace.json when the run command got far enough to own an output directory).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .driver import (DnfConfig, RunTrace, lhs_baseline, run_dnf, save_trace,
                     trace_from_dict)
from .mc import mc_failure_probability
from .problems import make_problem
from .surrogate import SurrogateModel

OUTPUT_ENV_VAR = "FLOWDESIGN_OUT"

_RUN_KEYS = ("problem", "criterion", "n0", "nd", "nmax", "eps0", "tolerance",
             "mc_n", "seed", "out", "grid_res", "initial_design")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # invalid flags must exit 1, not argparse's default 2
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="flowdesign",
                     description="Adaptive flow-based design for failure probability estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the adaptive design loop")
    run.add_argument("--problem", choices=["four-branch", "iso", "iso-probability", "darcy"])
    run.add_argument("--criterion", choices=["nfbd", "nfbd-fg", "nfbd-ag"])
    run.add_argument("--n0", type=int, help="initial design size")
    run.add_argument("--nd", type=int, help="design points per iteration")
    run.add_argument("--nmax", type=int, help="total simulation budget")
    run.add_argument("--eps0", type=float, help="separation threshold (fg/ag)")
    run.add_argument("--tolerance", type=float, help="relative-change stop; 0 disables")
    run.add_argument("--mc-n", type=int, dest="mc_n", help="Monte Carlo sample count")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV_VAR} or cwd)")
    run.add_argument("--grid-res", type=int, dest="grid_res",
                     help="dump surrogate values on a res x res grid (2-d problems)")
    run.add_argument("--initial-design", choices=["grid", "lhs"], dest="initial_design")
    run.add_argument("--config", help="INI config file with a [run] section")

    ref = sub.add_parser("reference", help="direct Monte Carlo on the true limit state")
    ref.add_argument("--problem", required=True,
                     choices=["four-branch", "iso", "iso-probability", "darcy"])
    ref.add_argument("--mc-n", type=int, dest="mc_n", default=100_000)
    ref.add_argument("--seed", type=int, default=0)
    ref.add_argument("--out")

    base = sub.add_parser("baseline", help="LHS-trained surrogate baseline")
    base.add_argument("--problem", required=True,
                      choices=["four-branch", "iso", "iso-probability", "darcy"])
    base.add_argument("--nmax", type=int, required=True)
    base.add_argument("--mc-n", type=int, dest="mc_n", default=100_000)
    base.add_argument("--seed", type=int, default=0)
    base.add_argument("--out")
    return parser


def _load_config_file(path: str) -> dict:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise UsageError(f"config: cannot read file {path!r}")
    for section in parser.sections():
        if section != "run":
            raise UsageError(f"config: unknown section {section!r}")
    if not parser.has_section("run"):
        raise UsageError("config: missing [run] section")
    values = {}
    for key, raw in parser.items("run"):
        if key not in _RUN_KEYS:
            raise UsageError(f"config: unknown key {key!r}")
        values[key] = raw
    # typed parsing, with the failing key named
    typed = {}
    casts = {"n0": int, "nd": int, "nmax": int, "seed": int, "grid_res": int,
             "mc_n": int, "eps0": float, "tolerance": float}
    for key, raw in values.items():
        cast = casts.get(key)
        if cast is None:
            typed[key] = raw
            continue
        try:
            typed[key] = cast(raw)
        except ValueError:
            raise UsageError(f"config: key {key!r} has invalid value {raw!r}")
    return typed


def _effective_run_settings(args) -> dict:
    file_values = _load_config_file(args.config) if args.config else {}
    settings = dict(file_values)
    for key in _RUN_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            settings[key] = flag

    if settings.get("problem") is None:
        raise UsageError("problem: a problem name is required")
    problem_name = settings["problem"]
    dim = 4 if problem_name == "darcy" else 2

    settings.setdefault("criterion", "nfbd-ag")
    settings.setdefault("eps0", 0.5 if dim == 2 else 0.25)
    settings.setdefault("tolerance", 0.10)
    settings.setdefault("mc_n", 100_000)
    settings.setdefault("seed", 0)
    settings.setdefault("grid_res", 0)
    settings.setdefault("initial_design", "lhs" if problem_name == "darcy" else "grid")
    settings.setdefault("out", os.environ.get(OUTPUT_ENV_VAR, "."))
    for key in ("n0", "nd", "nmax"):
        if settings.get(key) is None:
            raise UsageError(f"{key}: required for the run command")
    if settings["grid_res"] and dim != 2:
        raise UsageError("grid_res: contour grids are only available for 2-d problems")
    return settings


def _out_dir(raw) -> Path:
    out = Path(raw if raw is not None else os.environ.get(OUTPUT_ENV_VAR, "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args) -> int:
    settings = _effective_run_settings(args)
    try:
        config = DnfConfig(
            n_max=settings["nmax"], n0=settings["n0"], n_d=settings["nd"],
            criterion=settings["criterion"], eps0=settings["eps0"],
            tolerance=settings["tolerance"], mc_n=settings["mc_n"],
            seed=settings["seed"], initial_design=settings["initial_design"])
    except ValueError as exc:
        raise UsageError(str(exc))
    out = _out_dir(settings["out"])
    problem = make_problem(settings["problem"])

    try:
        trace = run_dnf(problem, config)
    except Exception as exc:
        failure = {"format": "flowdesign-trace", "version": 1, "status": "failed",
                   "error": f"{type(exc).__name__}: {exc}", "settings": settings}
        (out / "trace.json").write_text(json.dumps(failure, sort_keys=True, indent=1))
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2

    trace.config["cli"] = {k: settings[k] for k in sorted(settings)}
    save_trace(trace, json_path=out / "trace.json", csv_path=out / "trace.csv")
    _write_designs_csv(trace, out / "designs.csv")
    if settings["grid_res"]:
        _write_grid_csv(trace.final_model, problem.box, settings["grid_res"],
                        out / "grid.csv")
    print(f"final estimate {trace.final_estimate:.6e} "
          f"(+- {trace.final_standard_error:.2e}) after {trace.total_calls} calls; "
          f"stop: {trace.stop_reason}")
    return 0


def cmd_reference(args) -> int:
    if args.mc_n < 1:
        raise UsageError("mc_n: sample count must be at least 1")
    problem = make_problem(args.problem)
    est = mc_failure_probability(problem.g_batch, problem.sample_inputs,
                                 args.mc_n, args.seed)
    doc = {"problem": problem.name, "n": est.n, "seed": args.seed,
           "estimate": est.estimate, "standard_error": est.standard_error,
           "failures": est.failures}
    out = _out_dir(args.out)
    (out / "reference.json").write_text(json.dumps(doc, sort_keys=True, indent=1))
    print(f"reference estimate {est.estimate:.6e} +- {est.standard_error:.2e} "
          f"({est.failures}/{est.n} failures)")
    return 0


def cmd_baseline(args) -> int:
    if args.mc_n < 1 or args.nmax < 2:
        raise UsageError("mc_n/nmax: need mc_n >= 1 and nmax >= 2")
    problem = make_problem(args.problem)
    est = lhs_baseline(problem, args.nmax, args.mc_n, args.seed)
    doc = {"problem": problem.name, "n_max": args.nmax, "mc_n": est.n,
           "seed": args.seed, "estimate": est.estimate,
           "standard_error": est.standard_error, "failures": est.failures}
    out = _out_dir(args.out)
    (out / "baseline.json").write_text(json.dumps(doc, sort_keys=True, indent=1))
    print(f"baseline estimate {est.estimate:.6e} +- {est.standard_error:.2e} "
          f"({args.nmax} evaluations)")
    return 0


def _write_designs_csv(trace: RunTrace, path: Path) -> None:
    dim = trace.records[0].points.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{j + 1}" for j in range(dim)] + ["y", "iteration", "threshold"])
        for record in trace.records:
            thr = record.thresholds
            for i, (x, y) in enumerate(zip(record.points, record.values)):
                row = [repr(float(v)) for v in x]
                row.append(repr(float(y)))
                row.append(record.t)
                row.append("" if thr is None else repr(float(thr[i])))
                writer.writerow(row)


def _write_grid_csv(model: SurrogateModel, box, res: int, path: Path) -> None:
    xs = np.linspace(box.lower[0], box.upper[0], res)
    ys = np.linspace(box.lower[1], box.upper[1], res)
    grid = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
    vals = model.evaluate_batch(grid)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x1", "x2", "g_surrogate"])
        for (x1, x2), v in zip(grid, vals):
            writer.writerow([repr(float(x1)), repr(float(x2)), repr(float(v))])


# -- loaders (round-trip counterparts of every file the CLI writes) ----------


def load_run_trace(path):
    """Trace loader that also understands failure records."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("status") == "failed":
        return doc
    return trace_from_dict(doc)


def load_trace_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for row in reader:
            rows.append({
                "iteration": int(row["iteration"]),
                "cumulative_calls": int(row["cumulative_calls"]),
                "p_hat": float(row["p_hat"]),
                "rel_change": None if row["rel_change"] == "" else float(row["rel_change"]),
                "criterion": row["criterion"],
            })
    return rows


def load_designs_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for row in reader:
            coords = [float(v) for k, v in row.items() if k.startswith("x")]
            rows.append({
                "x": coords,
                "y": float(row["y"]),
                "iteration": int(row["iteration"]),
                "threshold": None if row["threshold"] == "" else float(row["threshold"]),
            })
    return rows


def load_grid_csv(path) -> list:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()}
                for row in csv.DictReader(fh)]


def load_reference_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


load_baseline_json = load_reference_json


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "run":
            return cmd_run(args)
        if args.command == "reference":
            return cmd_reference(args)
        if args.command == "baseline":
            return cmd_baseline(args)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure outside cmd_run's own handling
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
