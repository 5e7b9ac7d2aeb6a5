"""Command-line entry point.

    ductsr generate                      # solve the c sweep, write train/test/cases CSVs
    ductsr fit --target u                # symbolic regression on train.csv
    ductsr filter --facts F --constraints C
    ductsr report --frontier F --id N --data D

Settings come from an optional ``--config`` key-value file; command-line
flags override it.  Exit codes: 0 success (SAT), 2 input error, 3 UNSAT,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import filterlang as fl
from .expr import evaluate_batch
from .flowgen import (
    TEST_C,
    TRAIN_C,
    DuctGeometry,
    SolverDivergenceError,
    assemble_dataset,
    export_csv,
    read_records,
)
from .metrics import report as metric_report
from .sr import ParetoFrontier, SRConfig, data_columns, evolve

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_UNSAT = 3
EXIT_NUMERIC = 4

ENV_OUTPUT_DIR = "DUCTSR_OUTPUT_DIR"


class InputError(Exception):
    pass


class NumericalError(Exception):
    pass


def _float_list(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _name_list(text: str) -> tuple:
    return tuple(v.strip().lower() for v in text.split(",") if v.strip())


CONFIG_KEYS = {
    "output_dir": str,
    "L": float,
    "H": float,
    "W": float,
    "nx": int,
    "ny": int,
    "nz": int,
    "tol": float,
    "c_train": _float_list,
    "c_test": _float_list,
    "seed": int,
    "n_iterations": int,
    "population_size": int,
    "tournament_size": int,
    "max_size": int,
    "p_crossover": float,
    "p_mutation": float,
    "constant_optimizer_steps": int,
    "max_samples": int,
    "n_islands": int,
    "p_archive_parent": float,
    "max_complexity": int,
    "max_loss": int,
    "forbid": _name_list,
    "require": _name_list,
}

_SR_KEYS = (
    "n_iterations", "population_size", "tournament_size", "max_size", "p_crossover",
    "p_mutation", "constant_optimizer_steps", "max_samples", "n_islands", "p_archive_parent",
)


def read_config(path) -> dict:
    """Parse a ``key = value`` file (``#`` comments) into typed settings."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror or exc}") from None
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise InputError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = CONFIG_KEYS[key](value)
        except ValueError:
            raise InputError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return out


def format_config(settings: dict) -> str:
    lines = []
    for key in CONFIG_KEYS:
        if key not in settings:
            continue
        v = settings[key]
        if isinstance(v, tuple):
            v = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


def _settings(args) -> dict:
    out = read_config(args.config) if args.config else {}
    for key in CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            out[key] = v
    return out


def _output_dir(settings: dict) -> Path:
    return Path(settings.get("output_dir") or os.environ.get(ENV_OUTPUT_DIR) or ".")


def _check_writable(directory: Path) -> None:
    """Fail before any work is done if ``directory`` cannot be created or written."""
    probe = directory
    while not probe.exists():
        if probe.parent == probe:
            break
        probe = probe.parent
    if not probe.is_dir():
        raise InputError(f"cannot use output directory {directory}: {probe} is not a directory")
    if not os.access(probe, os.W_OK | os.X_OK):
        raise InputError(f"output directory {directory} is not writable")


def _write_files(directory: Path, files: dict) -> None:
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            (directory / name).write_text(text)
    except OSError as exc:
        raise InputError(f"cannot write to {directory}: {exc.strerror or exc}") from None


def _load_records(path: Path):
    if not path.is_file():
        raise InputError(f"missing dataset file {path}")
    try:
        return read_records(path)
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from None


def _fmt_loss(loss: float) -> str:
    return f"{loss:.2f}" if loss >= 0.01 else f"{loss:.3e}"


# --------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    s = _settings(args)
    try:
        geometry = DuctGeometry(s.get("L", 5.0), s.get("H", 1.0), s.get("W", 1.0))
    except ValueError as exc:
        raise InputError(str(exc)) from None
    c_train = s.get("c_train", TRAIN_C)
    c_test = s.get("c_test", TEST_C)
    if not c_train or not c_test:
        raise InputError("c_train and c_test must both be non-empty")
    if any(not c < 0 for c in c_train + c_test):
        raise InputError("pressure gradients must be negative")
    nx, ny, nz = s.get("nx", 11), s.get("ny", 101), s.get("nz", 101)
    if nx < 2:
        raise InputError("nx must be >= 2")
    for name, n in (("ny", ny), ("nz", nz)):
        if n < 17 or n % 2 == 0:
            raise InputError(f"{name} must be odd and >= 17, got {n}")
    out = _output_dir(s)
    _check_writable(out)

    try:
        ds = assemble_dataset(geometry, c_train, c_test, nx, ny, nz, s.get("tol", 1e-10))
    except SolverDivergenceError as exc:
        raise NumericalError(str(exc)) from None
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = export_csv(ds, out)
    except OSError as exc:
        raise InputError(str(exc)) from None

    print(f"{'c':>10} {'Re':>10} {'u_max':>10} {'u_max/Re':>9}")
    for c, re, u_max in ds.case_table:
        print(f"{c:>10.1f} {re:>10.4f} {u_max:>10.4f} {u_max / re:>9.4f}")
    print(f"wrote {paths['train']} ({len(ds.train)} rows), {paths['test']} ({len(ds.test)} rows), "
          f"{paths['cases']}")
    return EXIT_OK


def cmd_fit(args) -> int:
    s = _settings(args)
    out = _output_dir(s)
    data_dir = Path(args.data) if args.data else out
    train = _load_records(data_dir / "train.csv")
    if len(train) == 0:
        raise InputError(f"{data_dir / 'train.csv'} has no records")
    s.setdefault("seed", SRConfig.rng_seed)
    try:
        config = SRConfig(rng_seed=s["seed"], **{k: s[k] for k in _SR_KEYS if k in s})
    except ValueError as exc:
        raise InputError(str(exc)) from None
    _check_writable(out)

    progress = None
    if args.verbose:
        def progress(gen, archive):
            print(f"generation {gen}: best loss {archive.best_loss():.6g}", file=sys.stderr)

    frontier = evolve(config, train, args.target, callback=progress)
    if not len(frontier):
        raise NumericalError("no candidate with a finite loss was found")

    resolved = {"seed": config.rng_seed, **{k: getattr(config, k) for k in _SR_KEYS}}
    t = args.target
    _write_files(out, {
        f"frontier_{t}.json": frontier.to_json(),
        f"frontier_{t}.facts": fl.format_facts(fl.facts_from_frontier(frontier)),
        f"run_{t}.cfg": format_config(resolved),
    })

    print(f"{'ID':<4} {'Complexity':<11} {'Loss':<14} Equation")
    for e in frontier:
        print(f"{e.id:<4} {e.complexity:<11} {_fmt_loss(e.loss):<14} {e.text}")
    return EXIT_OK


def cmd_filter(args) -> int:
    s = _settings(args)
    try:
        facts = fl.parse_facts_file(Path(args.facts).read_text())
    except OSError as exc:
        raise InputError(f"cannot read facts file {args.facts}: {exc.strerror or exc}") from None
    except fl.FactsError as exc:
        raise InputError(f"{args.facts}: {exc}") from None

    base = fl.ConstraintProgram()
    if args.constraints:
        try:
            base = fl.parse_program(Path(args.constraints).read_text())
        except OSError as exc:
            raise InputError(f"cannot read constraints {args.constraints}: {exc.strerror or exc}") from None
        except fl.ProgramError as exc:
            raise InputError(f"{args.constraints}: {exc}") from None
    try:
        program = fl.ConstraintProgram(
            s.get("max_complexity", base.max_complexity),
            s.get("max_loss", base.max_loss),
            frozenset(s["forbid"]) if "forbid" in s else base.forbidden_features,
            tuple(s["require"]) if "require" in s else base.required_features,
        )
    except fl.ProgramError as exc:
        raise InputError(str(exc)) from None
    out = _output_dir(s)
    _check_writable(out)

    selection = fl.solve(facts, program)
    verdicts = "".join(v.render() + "\n" for v in fl.explain(facts, program))
    _write_files(out, {
        "selection.json": selection.to_json(),
        "selection.txt": selection.render(),
        "explain.txt": verdicts,
    })
    print(selection.render(), end="")
    if args.explain:
        print()
        print(verdicts, end="")
    return EXIT_OK if selection.status == "SAT" else EXIT_UNSAT


def _nearest(values: np.ndarray, target: float) -> float:
    uniq = np.unique(values)
    return float(uniq[np.argmin(np.abs(uniq - target))])


def cmd_report(args) -> int:
    s = _settings(args)
    try:
        frontier = ParetoFrontier.from_json(Path(args.frontier).read_text())
    except OSError as exc:
        raise InputError(f"cannot read frontier {args.frontier}: {exc.strerror or exc}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{args.frontier}: malformed frontier ({exc})") from None
    try:
        entry = frontier.by_id(args.id)
    except KeyError:
        raise InputError(f"no equation with id {args.id} in {args.frontier}") from None
    target = args.target
    if target is None:
        stem = Path(args.frontier).stem
        target = stem[-1] if stem.startswith("frontier_") and stem[-1] in "up" else "u"
    data_dir = Path(args.data)
    splits = {name: _load_records(data_dir / f"{name}.csv") for name in ("train", "test")}

    predictions = {}
    metrics = {}
    for name, recs in splits.items():
        if len(recs) == 0:
            continue
        env, actual = data_columns(recs, target)
        pred = np.broadcast_to(evaluate_batch(entry.expression, env), actual.shape)
        if not np.all(np.isfinite(pred)):
            raise NumericalError(f"equation {args.id} is non-finite on {name} data")
        predictions[name] = (actual, np.asarray(pred, dtype=float))
        metrics[name] = {
            k: (v if math.isfinite(v) else str(v)) for k, v in metric_report(actual, pred).as_dict().items()
        }
    if not predictions:
        raise InputError(f"no records in {data_dir}")
    out = _output_dir(s)
    _check_writable(out)

    # plot data from the held-out split when it exists
    plot_split = "test" if "test" in predictions else "train"
    recs = splits[plot_split]
    actual, pred = predictions[plot_split]
    x0 = _nearest(recs["x"], args.x if args.x is not None else float(recs["x"].max()) / 2)
    z0 = _nearest(recs["z"], args.z)
    at_x = recs["x"] == x0
    profile = at_x & (recs["z"] == z0)

    def rows(header, mask, cols):
        lines = [header]
        for i in np.flatnonzero(mask):
            lines.append(",".join(repr(float(c[i])) for c in cols))
        return "\n".join(lines) + "\n"

    identity = ["split,actual,predicted"]
    for name, (a, p) in predictions.items():
        identity += [f"{name},{float(ai)!r},{float(pi)!r}" for ai, pi in zip(a, p)]
    tag = f"{target}_{args.id}"
    doc = {
        "id": entry.id,
        "expression": entry.text,
        "complexity": entry.complexity,
        "target": target,
        "metrics": metrics,
        "plot_x": x0,
        "plot_z": z0,
    }
    _write_files(out, {
        f"report_{tag}.json": json.dumps(doc, indent=2) + "\n",
        f"identity_{tag}.csv": "\n".join(identity) + "\n",
        f"profile_{tag}.csv": rows("re,y,actual,predicted", profile,
                                   (recs["re"], recs["y"], actual, pred)),
        f"section_{tag}.csv": rows("re,y,z,actual,predicted", at_x,
                                   (recs["re"], recs["y"], recs["z"], actual, pred)),
    })

    print(f"ID {entry.id}: {entry.text}")
    print(f"{'':<10} {'MSE':>14} {'MAE':>14} {'NMAE (%)':>12}")
    for name, m in metrics.items():
        label = "Training" if name == "train" else "Testing"
        print(f"{label:<10} {float(m['mse']):>14.6g} {float(m['mae']):>14.6g} "
              f"{float(m['nmae_percent']):>12.6g}")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value settings file (flags override it)")
    common.add_argument("--out", dest="output_dir",
                        help=f"output directory (default: ${ENV_OUTPUT_DIR} or .)")

    parser = argparse.ArgumentParser(prog="ductsr", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="generate the duct-flow dataset")
    for name in ("L", "H", "W", "tol"):
        g.add_argument(f"--{name}", type=float)
    for name in ("nx", "ny", "nz"):
        g.add_argument(f"--{name}", type=int)
    g.add_argument("--c-train", dest="c_train", type=_float_list, help="comma list, e.g. -1000,-3000")
    g.add_argument("--c-test", dest="c_test", type=_float_list)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", parents=[common], help="symbolic regression on train.csv")
    f.add_argument("--target", choices=("u", "p"), required=True)
    f.add_argument("--data", help="directory holding train.csv (default: output directory)")
    f.add_argument("--seed", type=int)
    f.add_argument("--iterations", dest="n_iterations", type=int)
    f.add_argument("--population", dest="population_size", type=int)
    f.add_argument("--tournament-size", dest="tournament_size", type=int)
    f.add_argument("--max-size", dest="max_size", type=int)
    f.add_argument("--constant-steps", dest="constant_optimizer_steps", type=int)
    f.add_argument("--max-samples", dest="max_samples", type=int)
    f.add_argument("--islands", dest="n_islands", type=int)
    f.add_argument("-v", "--verbose", action="store_true", help="per-generation progress on stderr")
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("filter", parents=[common], help="apply a constraint program to equation facts")
    c.add_argument("--facts", required=True)
    c.add_argument("--constraints")
    c.add_argument("--max-complexity", dest="max_complexity", type=int)
    c.add_argument("--max-loss", dest="max_loss", type=int)
    c.add_argument("--forbid", type=_name_list)
    c.add_argument("--require", type=_name_list)
    c.add_argument("--explain", action="store_true", help="also print per-equation verdicts")
    c.set_defaults(func=cmd_filter)

    r = sub.add_parser("report", parents=[common], help="metrics and plot data for one equation")
    r.add_argument("--frontier", required=True)
    r.add_argument("--id", type=int, required=True)
    r.add_argument("--data", required=True, help="directory holding train.csv and test.csv")
    r.add_argument("--target", choices=("u", "p"))
    r.add_argument("--x", type=float, help="axial station for profile/section data")
    r.add_argument("--z", type=float, default=0.0, help="z of the y-profile (default 0)")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except InputError as exc:
        print(f"ductsr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"ductsr {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
