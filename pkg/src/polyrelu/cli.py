"""Command-line entry point: ``python -m polyrelu <subcommand> ...``.

Exit status is 0 whenever an experiment completes, including runs whose
training diverged (the report records it).  Configuration and usage mistakes
exit with 2, malformed networks or input files with 3, and unwritable output
locations with 4.
"""

import argparse
import json
import logging
import sys

from .errors import FormatError, NumericError, StructuralError, UsageError
from .experiment import ExperimentConfig, SearchBudget, run_experiment, run_trace

SUBCOMMANDS = {
    "train-baseline": "baseline",
    "taylor": "taylor",
    "polyreg": "polyreg",
    "quail": "quail",
    "quail-amm": "quail-amm",
    "trace": None,
}

EXIT_USAGE, EXIT_STRUCTURAL, EXIT_IO = 2, 3, 4


def build_parser():
    parser = argparse.ArgumentParser(prog="polyrelu", description="Polynomial ReLU replacement experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment config; flags override its fields")
        p.add_argument("--data-dir", help="directory holding the MNIST IDX files")
        p.add_argument("--out-dir", help="where reports and checkpoints are written")
        p.add_argument("--seed", type=int)
        p.add_argument("--architecture", choices=["mlp", "lenet"])
        p.add_argument("--dataset", choices=["mnist", "synthetic-blobs", "synthetic-spirals"])
        if name not in ("train-baseline",):
            p.add_argument("--baseline", dest="baseline_checkpoint",
                           help="baseline model.npz produced by train-baseline")
        if name == "polyreg":
            p.add_argument("--full-budget", action="store_true",
                           help="10 seed + 40 optimised evaluations instead of 5 + 15")
        if name == "trace":
            p.add_argument("--checkpoint", dest="trace_checkpoint", help="network to trace")
            p.add_argument("--input-scale", type=float, help="multiply test inputs by this factor")
    return parser


def config_from_args(args):
    raw = {}
    if args.config:
        with open(args.config) as f:
            raw = json.load(f)
    for key in ("data_dir", "out_dir", "seed", "architecture", "dataset", "baseline_checkpoint",
                "trace_checkpoint", "input_scale"):
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value
    strategy = SUBCOMMANDS[args.command]
    if strategy is not None:
        raw["strategy"] = strategy
    cfg = ExperimentConfig.from_dict(raw)
    if getattr(args, "full_budget", False):
        cfg.search = SearchBudget.full()
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        results = run_trace(cfg) if args.command == "trace" else run_experiment(cfg)
    except (UsageError, ValueError, TypeError, json.JSONDecodeError) as exc:
        if isinstance(exc, (StructuralError, FormatError)):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_STRUCTURAL
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_STRUCTURAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    acc = results["accuracy"]
    finite = acc["accuracy_finite_only"]
    print(f"{results['strategy']}: accuracy_all={acc['accuracy_all']:.4f} "
          f"accuracy_finite_only={'n/a' if finite is None else f'{finite:.4f}'} "
          f"diverged={results['diverged']} -> {cfg.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
