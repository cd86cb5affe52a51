"""Command-line entry point.

    multirobust train --config c.json
    multirobust attack --model m.bin --config c.json
    multirobust verify-theory [--samples N] [--seed S] [--out DIR]
    multirobust scan-surface --model m.bin --point i --dir-a linf --dir-b l1 --config c.json
    multirobust report --in DIR
    multirobust make-surrogate --out DIR
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import io as mio
from .harness import ExperimentConfig, load_config, run_experiment


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="multirobust")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", required=True)

    p = sub.add_parser("attack", help="evaluate attacks on a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--config", required=True)

    p = sub.add_parser("verify-theory", help="run the Monte-Carlo theory checks")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")

    p = sub.add_parser("scan-surface", help="loss on a 2-D grid spanned by two attacks")
    p.add_argument("--model", required=True)
    p.add_argument("--point", type=int, required=True)
    p.add_argument("--dir-a", required=True)
    p.add_argument("--dir-b", required=True)
    p.add_argument("--config", required=True, help="JSON with the dataset entry")
    p.add_argument("--grid", type=int, default=21)

    p = sub.add_parser("report", help="recompute union/average accuracy from stored masks")
    p.add_argument("--in", dest="src", required=True)
    p.add_argument("--out", default=None)

    p = sub.add_parser("make-surrogate", help="write MNIST-format IDX digits from scikit-learn")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=10_000)
    p.add_argument("--n-test", type=int, default=1_000)
    p.add_argument("--seed", type=int, default=0)
    return ap


def _config(args) -> ExperimentConfig:
    if args.command == "verify-theory":
        return ExperimentConfig("verify-theory", output=os.path.abspath(args.out), seed=args.seed,
                                extra={"samples": args.samples})
    if args.command == "report":
        src = os.path.abspath(args.src)
        out = os.path.abspath(args.out) if args.out else (src if os.path.isdir(src)
                                                          else os.path.dirname(src))
        return ExperimentConfig("report", output=out, extra={"in": src})
    cfg = load_config(args.config)
    cfg.command = args.command
    if args.command in ("attack", "scan-surface"):
        cfg.model = os.path.abspath(args.model)
    if args.command == "scan-surface":
        # a direction is an attack type name or an inline JSON attack spec
        dirs = [json.loads(d) if d.lstrip().startswith("{") else d
                for d in (args.dir_a, args.dir_b)]
        cfg.extra.update({"point": args.point, "dir_a": dirs[0], "dir_b": dirs[1],
                          "grid": args.grid})
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "make-surrogate":
        paths = mio.write_surrogate_mnist(args.out, args.n_train, args.n_test, args.seed)
        print(json.dumps(paths, indent=2))
        return 0
    try:
        cfg = _config(args)
        status = run_experiment(cfg)
    except Exception as e:  # report and exit non-zero
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(f"{cfg.command}: wrote outputs to {cfg.out_dir()} (status {status})")
    return status


if __name__ == "__main__":
    sys.exit(main())
