"""Command-line entry point: busholding {gen-env,simulate,train,evaluate,sweep}."""

import argparse
import logging
import sys
from pathlib import Path

from . import experiment as ex
from .config import ConfigError, ProfileConstructionError
from .nn import CheckpointError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_DIVERGED = 0, 2, 3, 4


def load_config(args):
    cfg = ex.ExperimentConfig.load(args.config) if args.config else ex.ExperimentConfig()
    if args.seed is not None:
        cfg.seeds = [args.seed]
        cfg.train_seed = args.seed
    if args.out:
        cfg.out_dir = args.out
    if getattr(args, "checkpoint", None):
        cfg.checkpoint = args.checkpoint
    if getattr(args, "controller", None):
        cfg.controller = args.controller
    return cfg.validate()


def _train(cfg, out):
    def progress(row):
        w = row["eval_wait_s"]
        print(f"epoch {row['epoch']:4d}  reward {row['mean_reward']:.4f}  "
              f"delta {row['mean_delta']:+.3f}" + ("" if w != w else f"  eval wait {w:.2f}s"),
              flush=True)
    ex.train(cfg, out, progress=progress)


def _report(summaries, failures=()):
    for s in summaries:
        print(f"{s.controller:13s} xi={s.xi:.3f} seed={s.seed}  wait={s.mean_wait_s}  "
              f"hold={s.mean_hold_s}  bunching={s.bunching_events}")
    for f in failures:
        print("FAILED", *f, file=sys.stderr)


COMMANDS = {
    "gen-env": lambda cfg, out: print(*ex.gen_env(cfg, out), sep="\n"),
    "simulate": lambda cfg, out: _report(ex.simulate(cfg, out)),
    "train": _train,
    "evaluate": lambda cfg, out: _report(*ex.evaluate(cfg, out)),
    "sweep": lambda cfg, out: _report(*ex.sweep(cfg, out)),
}


def build_parser():
    p = argparse.ArgumentParser(prog="busholding", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="experiment JSON document")
        sp.add_argument("--seed", type=int, help="replace the seed list (and the training seed)")
        sp.add_argument("--out", help="output directory")
        if name in ("simulate", "train", "evaluate"):
            sp.add_argument("--controller", choices=ex.CONTROLLERS)
        if name in ("simulate", "evaluate"):
            sp.add_argument("--checkpoint", help="checkpoint for rl / ippo-dh")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, out)
    except (ConfigError, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ex.DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, RuntimeError, ValueError, ArithmeticError, ProfileConstructionError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
