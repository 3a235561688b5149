"""Command line: ``doml generate | run | compare | trace``.

Every :class:`ExperimentConfig` field is also a flag (``--samples-per-task``,
``--tau-max`` ...). Flags override values read from ``--config``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .experiment import ALGORITHMS, ConfigError, ExperimentConfig, compare, run_experiment
from .metrics import bitmap, render_bitmap, sparsity_trace, write_trace_csv
from .synth import generate_family, write_dataset
from .transport.latency import LINKS
from .transport.spout import synthetic_stream

log = logging.getLogger("doml")

EXIT_OK, EXIT_INVALID, EXIT_CHECK = 0, 2, 1


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _optional_int(text: str) -> int | None:
    return None if text.lower() == "none" else int(text)


def _add_config_flags(p: argparse.ArgumentParser, skip: Sequence[str] = ()) -> None:
    g = p.add_argument_group("experiment config (overrides --config)")
    g.add_argument("--config", type=Path, help="JSON config file, nested by section or flat")
    g.add_argument("--full-scale", action="store_true", help="15,000 samples per task")
    for f in dataclasses.fields(ExperimentConfig):
        if f.name in skip or f.name == "latency":
            continue
        flag = "--" + f.name.replace("_", "-")
        default = f.default
        if isinstance(default, bool):
            kind = _bool
        elif f.name in ("oml_buffer", "latency_seed"):
            kind = _optional_int
        elif f.name in ("dataset", "output_dir"):
            kind = str
        else:
            kind = type(default)
        g.add_argument(flag, dest=f.name, type=kind, default=None, help=f"default: {default}")
    g.add_argument(
        "--latency",
        action="append",
        default=None,
        metavar="LINK=DELAY",
        help=f"per-link delay, LINK in {LINKS}; DELAY is zero, fixed:S or uniform:LO:HI",
    )


def resolve_config(args: argparse.Namespace, **fixed) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "full_scale", False):
        cfg = cfg.replace(samples_per_task=15000)
    over = {}
    for f in dataclasses.fields(ExperimentConfig):
        v = getattr(args, f.name, None)
        if v is not None and f.name != "latency":
            over[f.name] = v
    if getattr(args, "latency", None):
        lat = dict(cfg.latency)
        for item in args.latency:
            link, sep, spec = item.partition("=")
            if not sep:
                raise ConfigError({"latency": f"expected LINK=DELAY, got {item!r}"})
            if link not in LINKS:
                raise ConfigError({"latency": f"unknown link {link!r}"})
            lat[link] = spec
        over["latency"] = lat
    over.update(fixed)
    return cfg.replace(**over).validate()


# verbs ------------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = resolve_config(args)
    family = generate_family(cfg.k, cfg.sigma, cfg.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    total = cfg.k * cfg.samples_per_task
    stream = synthetic_stream(family, [cfg.samples_per_task] * cfg.k, cfg.seed, cfg.order)
    with open(out, "w") as fh:
        write_dataset(stream, fh, k=cfg.k, sigma=cfg.sigma, seed=cfg.seed, count=total)
    if args.family:
        Path(args.family).write_text(family.to_json() + "\n")
    print(f"wrote {total} instances for K={cfg.k} tasks to {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    res = run_experiment(cfg)
    s = res.summary
    line = f"{s['algorithm']} ({s['mode']}) seed={s['seed']} final macro error {s['final_error']:.4f} after {s['epochs']} samples/task"
    if "rounds" in s:
        line += f", {s['rounds']} rounds, mean nonzero blocks {s['mean_nonzero_blocks']:.2f}"
    print(line)
    if cfg.output_dir:
        print(f"outputs in {cfg.output_dir}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = resolve_config(args)
    seeds = list(range(args.seeds)) if args.seed_list is None else args.seed_list
    table = compare(cfg, args.algorithms, seeds)
    means = {a: float(np.mean(v)) for a, v in table.items()}
    width = max(len(a) for a in table)
    print(f"K={cfg.k} N={cfg.n_workers} sigma={cfg.sigma} samples/task={cfg.samples_per_task} seeds={seeds}")
    for a, vals in table.items():
        cells = " ".join(f"{v * 100:6.2f}" for v in vals)
        print(f"  {a:<{width}}  mean {means[a] * 100:6.2f}%  | {cells}")
    if cfg.output_dir:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.to_json() + "\n")
        (out / "compare.json").write_text(json.dumps({"seeds": seeds, "final_error": table, "mean": means}, indent=2) + "\n")
    if not args.check:
        return EXIT_OK
    failures = check_ordering(means, args.check)
    for msg in failures:
        print(f"FAIL {msg}")
    if not failures:
        print("PASS all checks")
    return EXIT_CHECK if failures else EXIT_OK


def check_ordering(means: dict[str, float], checks: Sequence[str]) -> list[str]:
    """Checks look like ``doml~oml:0.02`` (within) or ``doml<ol:0.02`` (below by at least)."""
    failures = []
    for c in checks:
        expr, _, tol = c.partition(":")
        tol = float(tol or 0.0)
        if "~" in expr:
            a, b = expr.split("~")
            ok = abs(means[a] - means[b]) <= tol
        elif "<" in expr:
            a, b = expr.split("<")
            ok = means[b] - means[a] >= tol if tol else means[a] < means[b]
        else:
            raise ConfigError({"check": f"cannot parse {c!r}"})
        if not ok:
            failures.append(f"{c}: {a}={means[a]:.4f} {b}={means[b]:.4f}")
    return failures


def cmd_trace(args) -> int:
    cfg = resolve_config(args, algorithm="doml")
    res = run_experiment(cfg)
    rows = sparsity_trace(res.update_log, args.first, args.worker)
    bits = bitmap(rows, res.curves.k)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            write_trace_csv(rows, fh)
    print(render_bitmap(bits))
    pops = bits.sum(axis=1)
    print(f"{len(rows)} gradients, max nonzero blocks {int(pops.max(initial=0))}, mean {float(pops.mean()) if len(pops) else 0.0:.2f} of {res.curves.k}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="doml", description="Distributed online multitask learning experiments")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("generate", help="write a synthetic task stream to a dataset file")
    g.add_argument("--out", required=True)
    g.add_argument("--family", help="also write the task parameters as JSON")
    _add_config_flags(g)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run one experiment")
    _add_config_flags(r)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="final-error table across algorithms and seeds")
    c.add_argument("--algorithms", nargs="+", default=list(ALGORITHMS), choices=ALGORITHMS)
    c.add_argument("--seeds", type=int, default=5, help="use seeds 0..n-1")
    c.add_argument("--seed-list", type=int, nargs="+", default=None)
    c.add_argument("--check", action="append", default=None, metavar="EXPR", help="e.g. 'doml~oml:0.02' or 'doml<ol:0.02'")
    _add_config_flags(c, skip=("algorithm", "seed"))
    c.set_defaults(func=cmd_compare)

    t = sub.add_parser("trace", help="gradient sparsity bitmap")
    t.add_argument("--first", type=int, default=100, help="number of applied gradients to show")
    t.add_argument("--worker", type=int, default=None, help="only this worker's gradients")
    t.add_argument("--csv", help="also write the trace as CSV")
    _add_config_flags(t, skip=("algorithm",))
    t.set_defaults(func=cmd_trace)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for name, msg in exc.errors.items():
            print(f"invalid config: {name}: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
