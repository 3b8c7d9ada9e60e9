"""``robustlab`` command line: train, eval, sweep, report, make-digits.

Exit codes: 0 success, 2 usage/config/input error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import config as cfgmod
from .attacks import AttackSpec, PerturbationModel
from .data import FormatError, load_checkpoint, load_idx, read_runlog_csv, write_runlog_csv
from .regularize import RegularizerSpec
from .report import gap_table, learning_curve_svg, report_for
from .trainer import TrainingDiverged, evaluate, fit_pseudo_pool, train

log = logging.getLogger("robustlab")

EXIT_USAGE, EXIT_RUNTIME = 2, 3
EVAL_DEFAULTS = {"linf": (8 / 255, 2 / 255), "l2": (128 / 255, 15 / 255)}
AXES = ("width", "l1", "l2", "cutout", "mixup")


class UsageError(Exception):
    pass


def run_config(config, source, out: Path) -> dict:
    """Train one resolved config into ``out``; returns the gap report dict."""
    out.mkdir(parents=True, exist_ok=True)
    doc = cfgmod.to_document(config, source)
    (out / "resolved_config.json").write_text(cfgmod.canonical_json(doc))
    digest = cfgmod.digest(doc)
    data = cfgmod.load_data(source)
    pool = None
    if config.regularizer.kind == "semisup":
        pool = fit_pseudo_pool(config, data, out / "teacher")
    runlog = train(config, data, out / "checkpoints", pool=pool, config_digest=digest)
    write_runlog_csv(runlog, out / "runlog.csv")
    rep = report_for(runlog).to_dict()
    rep["config_digest"] = digest
    (out / "gap_report.json").write_text(json.dumps(rep, sort_keys=True, indent=2) + "\n")
    return rep


def _load(path, seed=None):
    config, source = cfgmod.load_document(path)
    if seed is not None:
        config = dataclasses.replace(config, seed=seed)
    return config, source


def cmd_train(args) -> int:
    config, source = _load(args.config, args.seed)
    cfgmod.load_data(source)  # fail fast on missing files
    rep = run_config(config, source, Path(args.out))
    print(json.dumps(rep, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    spec = None
    if args.config:
        config, source = _load(args.config)
        spec = config.model
        data = cfgmod.load_data(source)
        split = data.test if args.split == "test" else data.train
    elif args.data:
        split = load_idx(args.data[0], args.data[1], "test")
    else:
        raise UsageError("eval needs --data IMAGES LABELS or --config PATH")
    model, header = load_checkpoint(args.checkpoint, spec)
    eps_default, alpha_default = EVAL_DEFAULTS[args.norm]
    pm = PerturbationModel(args.norm, eps_default if args.eps is None else args.eps)
    atk = AttackSpec("pgd", args.steps, alpha_default if args.alpha is None else args.alpha,
                     not args.no_random_init, args.restarts)
    rob, std = evaluate(model, split, pm, atk, args.seed, args.batch_size)
    print(json.dumps({"robust_err": rob, "std_err": std, "n": len(split), "epoch": header["epoch"],
                      "attack": {"norm": pm.norm, "eps": pm.eps, **atk.to_dict()}}, sort_keys=True))
    return 0


def sweep_config(config, axis: str, value: float):
    if axis == "width":
        return dataclasses.replace(config, model=dataclasses.replace(config.model, width_factor=int(value)))
    if axis == "l1":
        return dataclasses.replace(config, regularizer=RegularizerSpec("l1", lam=value))
    if axis == "l2":
        # the penalty replaces weight decay rather than stacking on it
        return dataclasses.replace(config, regularizer=RegularizerSpec("l2", lam=value), weight_decay=0.0)
    if axis == "cutout":
        return dataclasses.replace(config, regularizer=RegularizerSpec("cutout", patch_len=int(value)))
    if axis == "mixup":
        return dataclasses.replace(config, regularizer=RegularizerSpec("mixup", mixup_alpha=value))
    raise UsageError(f"unknown sweep axis {axis!r}")


def _sweep_member(job):
    config, source, out = job
    return run_config(config, source, out)


def cmd_sweep(args) -> int:
    config, source = _load(args.config)
    cfgmod.load_data(source)
    values = sorted(float(v) for chunk in args.values for v in chunk.split(",") if v)
    if not values:
        raise UsageError("--values is empty")
    out = Path(args.out)
    jobs = []
    for v in values:
        try:
            member = sweep_config(config, args.axis, v)
            member.validate()
        except ValueError as e:
            raise cfgmod.ConfigError(f"{args.axis}={v:g}", str(e)) from e
        jobs.append((member, source, out / f"{args.axis}_{v:g}"))
    workers = max(1, min(int(os.environ.get("ROBUSTLAB_WORKERS", "1")), len(jobs)))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            reports = list(pool.map(_sweep_member, jobs))
    else:
        reports = [_sweep_member(j) for j in jobs]
    with open(out / "sweep_table.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["value", "best", "final", "diff"])
        for v, rep in zip(values, reports):
            w.writerow([f"{v:g}", f"{rep['best']:.6g}", f"{rep['final_mean']:.6g}", f"{rep['diff']:.6g}"])
    print((out / "sweep_table.csv").read_text(), end="")
    return 0


def cmd_report(args) -> int:
    runs = []
    for r in args.runs:
        p = Path(r)
        csv_path = p / "runlog.csv" if p.is_dir() else p
        if csv_path.is_file():
            name = p.name if p.is_dir() else p.stem
            runs.append((name, read_runlog_csv(csv_path)))
    if not runs:
        raise UsageError("no runlog.csv found in the given runs")
    table = gap_table(runs)
    print(table, end="")
    if args.table:
        Path(args.table).write_text(table)
    if args.plot:
        Path(args.plot).write_text(learning_curve_svg(runs))
    return 0


def cmd_make_digits(args) -> int:
    from .digits import write_digits_idx
    paths = write_digits_idx(Path(args.out), args.n_train, args.n_test, args.size, args.seed)
    print(json.dumps({k: str(v) for k, v in paths.items()}, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robustlab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one configuration")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint under a PGD adversary")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", nargs=2, metavar=("IMAGES", "LABELS"))
    e.add_argument("--config", help="take data (and model spec) from a run config")
    e.add_argument("--split", choices=("test", "train"), default="test")
    e.add_argument("--norm", choices=("linf", "l2"), default="linf")
    e.add_argument("--eps", type=float)
    e.add_argument("--steps", type=int, default=10)
    e.add_argument("--alpha", type=float)
    e.add_argument("--restarts", type=int, default=1)
    e.add_argument("--no-random-init", action="store_true")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--batch-size", type=int, default=256)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="train one run per value along an axis")
    s.add_argument("--config", required=True)
    s.add_argument("--axis", choices=AXES, required=True)
    s.add_argument("--values", nargs="+", required=True, help="comma or space separated")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="gap table and learning-curve SVG")
    r.add_argument("--runs", nargs="+", required=True)
    r.add_argument("--plot")
    r.add_argument("--table")
    r.set_defaults(func=cmd_report)

    m = sub.add_parser("make-digits", help="write a desk-scale IDX dataset from scikit-learn digits")
    m.add_argument("--out", required=True)
    m.add_argument("--n-train", type=int, default=5000)
    m.add_argument("--n-test", type=int, default=1000)
    m.add_argument("--size", type=int, default=16)
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(func=cmd_make_digits)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except cfgmod.ConfigError as e:
        print(f"config error at {e}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, FileNotFoundError, FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, RuntimeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
