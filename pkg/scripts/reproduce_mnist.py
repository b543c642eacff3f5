#!/usr/bin/env python3
"""Run every replacement strategy on MNIST and print an accuracy table.

Trains the ReLU baseline of each architecture once, then applies Taylor,
Poly-Reg, QuaIL and QuaIL + AMM to it.  Each run writes its own
results.json / trace.csv under ``--out-dir/{arch}-{strategy}-{seed}``.

Usage:
  python scripts/reproduce_mnist.py --data-dir /root/data/mnist
  python scripts/reproduce_mnist.py --data-dir data/mnist --architectures mlp --strategies taylor quail
"""

import argparse
import json
import logging
import os
import sys

from polyrelu.experiment import STRATEGIES, ExperimentConfig, run_experiment


def main(argv=None):
    parser = argparse.ArgumentParser(description="Reproduce the MNIST accuracy table.")
    parser.add_argument("--data-dir", required=True, help="directory with the four MNIST IDX files")
    parser.add_argument("--out-dir", default="runs", help="root directory for run outputs")
    parser.add_argument("--architectures", nargs="+", default=["mlp", "lenet"],
                        choices=["mlp", "lenet"])
    parser.add_argument("--strategies", nargs="+", default=[s for s in STRATEGIES if s != "baseline"],
                        choices=[s for s in STRATEGIES if s != "baseline"])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")

    table = []
    for arch in args.architectures:
        base_dir = os.path.join(args.out_dir, f"{arch}-baseline-{args.seed}")
        checkpoint = os.path.join(base_dir, "model.npz")
        for strategy in ["baseline"] + args.strategies:
            out_dir = os.path.join(args.out_dir, f"{arch}-{strategy}-{args.seed}")
            cfg = ExperimentConfig(dataset="mnist", data_dir=args.data_dir, architecture=arch,
                                   strategy=strategy, seed=args.seed, out_dir=out_dir,
                                   baseline_checkpoint=None if strategy == "baseline" else checkpoint)
            res = run_experiment(cfg)
            acc = res["accuracy"]
            row = {"architecture": arch, "strategy": strategy,
                   "accuracy_all": acc["accuracy_all"],
                   "accuracy_finite_only": acc["accuracy_finite_only"],
                   "diverged": res["diverged"], "wall_seconds": round(res["wall_seconds"], 1)}
            table.append(row)
            print(f"{arch:6s} {strategy:10s} all={row['accuracy_all']:.4f} "
                  f"finite={row['accuracy_finite_only']}  diverged={row['diverged']}  "
                  f"{row['wall_seconds']}s", flush=True)

    with open(os.path.join(args.out_dir, "summary.json"), "w") as f:
        json.dump(table, f, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
