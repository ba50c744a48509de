"""Command line entry point: ``fairaim {train,eval,analyze,select}``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .config import ConfigError, load_config


def build_parser():
    p = argparse.ArgumentParser(prog="fairaim", description="Fairness-aware multi-objective intersection control.")
    p.add_argument("command", choices=("train", "eval", "analyze", "select"))
    p.add_argument("--config", metavar="PATH", help="sectioned key=value file; defaults apply when omitted")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides run.out)")
    p.add_argument("--seed", metavar="N", type=int, action="append", help="seed to run; repeatable (overrides run.seeds)")
    p.add_argument(
        "--override", metavar="KEY=VALUE", action="append", default=[], help="section.key=value; repeatable"
    )
    p.add_argument("--resume", action="store_true", help="continue training from existing checkpoints")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = list(args.override)
    if args.out is not None:
        overrides.append(f"run.out={args.out}")
    if args.seed:
        overrides.append("run.seeds=" + ",".join(str(s) for s in args.seed))
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return harness.EXIT_CONFIG

    try:
        if args.command == "train":
            for seed, rows in harness.cmd_train(cfg, resume=args.resume).items():
                last = rows[-1] if rows else None
                tail = f"final hypervolume {last['hypervolume']:.4f}, crashes {last['crashes']}" if last else "no evaluations"
                print(f"seed {seed}: {len(rows)} evaluations, {tail}")
        elif args.command == "eval":
            rows = harness.cmd_eval(cfg)
            print(f"wrote {len(rows)} points to {cfg.run.out}/points.csv")
        elif args.command == "analyze":
            res = harness.cmd_analyze(cfg)
            r = res.report
            print(f"front size {len(r.front)} of {len(r.points)}, hypervolume {r.hypervolume:.6g}, ref {tuple(r.ref_point)}")
        else:
            p = harness.cmd_select(cfg)
            if p is None:
                print(
                    f"no feasible policy (emission cap {cfg.eval.emission_cap} g/s, speed floor {cfg.eval.speed_floor} m/s)"
                )
                return harness.EXIT_NO_POLICY
            print(
                f"omega {p.omega!r} speed {p.obj_speed:.4f} m/s emission {p.obj_emission:.4f} g/s "
                f"delta_f {p.delta_f:.4f} s crashes {p.crashes}"
            )
    except (harness.HarnessError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return harness.EXIT_ERROR
    return harness.EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
