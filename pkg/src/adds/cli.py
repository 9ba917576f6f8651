"""Command-line entry point: ``adds {certify,attack-check,oracle-check,sweep,init-config}``.

Exit codes: 0 ok, 1 configuration error, 2 I/O error, 3 oracle failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import experiment as ex
from .oracles import CHECKS, run_battery

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_ORACLE = 0, 1, 2, 3

log = logging.getLogger("adds")


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def cmd_certify(args) -> int:
    cfg = ex.ExperimentConfig.load(args.config)
    if args.output:
        cfg.output = args.output
    rows = ex.run_certify(cfg)
    summary = ex.summarize(rows, cfg.radius_fractions)
    ex.write_outputs(rows, summary, cfg.output)
    print(ex.tables_markdown(summary))
    print(f"wrote {cfg.output}")
    return EXIT_OK


def cmd_attack_check(args) -> int:
    cfg = ex.ExperimentConfig.load(args.config)
    rows = ex.read_rows(args.csv)
    report = ex.attack_check(cfg, rows, args.trials, args.fraction)
    text = json.dumps(report, indent=2)
    if args.output:
        Path(args.output).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    checks = None if args.checks is None else [c for c in args.checks.split(",") if c]
    if checks is not None and not checks:
        raise ex.ConfigError("empty oracle battery selection")
    try:
        results = run_battery(args.seed, checks, fault=args.fault)
    except ValueError as exc:
        raise ex.ConfigError(str(exc)) from None
    for r in results:
        print(r.line())
        for f in r.failures[:5]:
            print(f"    {f}")
    if args.output:
        Path(args.output).write_text(json.dumps(
            [dataclasses.asdict(r) for r in results], indent=2, default=float) + "\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_ORACLE


def sweep_configs(cfg: ex.ExperimentConfig, scales, steps) -> list[ex.ExperimentConfig]:
    """One config per (scale, steps) grid cell; guided pipelines take the cell's scale."""
    cells = []
    for st in steps:
        for sc in scales:
            pipes = []
            for p in cfg.pipelines:
                changes = {"respaced_steps": st}
                if p.method in ("adds", "adds_oneshot"):
                    changes["guidance_scale"] = sc
                pipes.append(dataclasses.replace(p, **changes))
            cells.append(dataclasses.replace(cfg, pipelines=pipes))
    return cells


def cmd_sweep(args) -> int:
    cfg = ex.ExperimentConfig.load(args.config)
    out = Path(args.output or cfg.output)
    all_rows, curves = [], []
    for cell in sweep_configs(cfg, args.scales, args.steps):
        rows = ex.run_certify(cell)
        summary = ex.summarize(rows, cfg.radius_fractions)
        steps = cell.pipelines[0].respaced_steps
        for e in summary["entries"]:
            for r, acc in e["curve"]:
                curves.append([e["method"], e["sigma"], e["votes"], e["guidance_scale"], steps,
                               r, acc, e["clean_accuracy"]])
        all_rows.extend(rows)
    out.write_text(ex.rows_to_csv(all_rows))
    header = "method,sigma,votes,guidance_scale,respaced_steps,radius,certified_accuracy,clean_accuracy\n"
    out.with_suffix(".curves.csv").write_text(
        header + "".join(",".join(ex._fmt(v) for v in c) + "\n" for c in curves))
    print(f"wrote {out} and {out.with_suffix('.curves.csv')}")
    return EXIT_OK


def cmd_init_config(args) -> int:
    sigmas = args.sigmas or [1.0, 1.5, 2.0]
    cfg = ex.ExperimentConfig(pipelines=ex.standard_grid(sigmas),
                              num_test_points=args.points, output=args.csv)
    Path(args.path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    print(f"wrote {args.path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adds", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("certify", help="certify test points, write CSV + summary")
    c.add_argument("config")
    c.add_argument("-o", "--output")
    c.set_defaults(func=cmd_certify)

    a = sub.add_parser("attack-check", help="random-perturbation check of certified rows")
    a.add_argument("config")
    a.add_argument("csv")
    a.add_argument("--trials", type=int, default=200)
    a.add_argument("--fraction", type=float, default=0.99)
    a.add_argument("-o", "--output")
    a.set_defaults(func=cmd_attack_check)

    o = sub.add_parser("oracle-check", help="run the oracle battery")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--checks", help=f"comma-separated subset of {','.join(CHECKS)}")
    o.add_argument("--fault", choices=["c_t"], help="inject a known fault (negative control)")
    o.add_argument("-o", "--output")
    o.set_defaults(func=cmd_oracle_check)

    s = sub.add_parser("sweep", help="certify over a guidance-scale x step-count grid")
    s.add_argument("config")
    s.add_argument("--scales", type=_float_list, default=[0.8, 0.9])
    s.add_argument("--steps", type=_int_list, default=[20])
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_sweep)

    i = sub.add_parser("init-config", help="write a config for the standard method grid")
    i.add_argument("path")
    i.add_argument("--points", type=int, default=250)
    i.add_argument("--sigmas", type=_float_list)
    i.add_argument("--csv", default="certify.csv")
    i.set_defaults(func=cmd_init_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ex.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
