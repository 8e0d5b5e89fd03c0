"""Command-line entry point.

Four subcommands share one JSON config format:

* ``sample-study``   replicated allocate-and-estimate runs at a fixed design
* ``ouu-study``      trust-region optimization with estimator variants
* ``allocate``       one allocation run, reported as JSON
* ``derive-epsilon`` accuracy target for the configured statistic

Exit codes: 0 success, 2 configuration problems, 3 sampling budget
exceeded.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .allocation import BudgetExceededError
from .experiments import (
    ConfigError,
    ExperimentConfig,
    ouu_study,
    run_allocate,
    run_derive_epsilon,
    sampling_study,
)

_COMMANDS = {
    "sample-study": sampling_study,
    "ouu-study": ouu_study,
    "allocate": run_allocate,
    "derive-epsilon": run_derive_epsilon,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlmc-ouu",
        description="Multilevel Monte Carlo sampling studies and optimization under uncertainty.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0].lower().rstrip("."))
        p.add_argument("--config", required=True, help="path to a JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory (default: out/<command>)")
        p.add_argument(
            "--scale",
            type=float,
            default=None,
            help="scale replicate and iteration counts (e.g. 0.1 for a smoke run)",
        )
    return parser


def _summary_line(command: str, result: dict) -> str:
    if command == "derive-epsilon":
        return f"epsilon_sq={result['epsilon_sq']:.6g} for {result['target_kind']}"
    if command == "allocate":
        counts = ",".join(str(c) for c in result["counts"])
        return (
            f"counts=[{counts}] predicted_variance={result['predicted_variance']:.6g}"
            f" estimate={result['estimate']:.6g} cost={result['cost_spent']:.6g}"
        )
    if command == "sample-study":
        return (
            f"replicates={result['replicates']}"
            f" value_mean={result['value_mean']:.6g}"
            f" value_variance={result['value_variance']:.6g}"
            f" epsilon_sq={result['epsilon_sq']:.6g}"
        )
    variants = ", ".join(
        f"{name}: rmsdev={info['dist_rmsdev']:.4g}"
        for name, info in sorted(result["variants"].items())
    )
    return f"replicates={result['replicates']} | {variants}"


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = ExperimentConfig.from_json(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.scale is not None:
            overrides["scale"] = args.scale
        if overrides:
            config = dataclasses.replace(config, **overrides)
            config.validate()
        out_dir = args.out if args.out is not None else f"out/{args.command}"
        result = _COMMANDS[args.command](config, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except BudgetExceededError as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return 3
    print(_summary_line(args.command, result))
    print(f"outputs written to {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
