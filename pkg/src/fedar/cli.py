"""Command-line entry point."""

import argparse
import json
import sys
from pathlib import Path

from . import experiments
from .config import load_config
from .errors import ConfigError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedar",
        description="Deterministic federated-learning simulator with trust-based "
        "client selection, sync/async aggregation, and fault injection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment config to CSV outputs")
    run.add_argument("config", help="path to a JSON experiment config")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--out-dir", default="out", help="output directory (default: out)")

    sweep = sub.add_parser("sweep", help="run a figure-level parameter sweep")
    sweep.add_argument("config", help="path to the base JSON config")
    sweep.add_argument(
        "--vary",
        required=True,
        choices=("batch_epochs", "stragglers"),
        help="which knob to sweep",
    )
    sweep.add_argument("--seed", type=int, default=None, help="override the config seed")
    sweep.add_argument("--out-dir", default="sweep_out", help="output directory")

    table2 = sub.add_parser(
        "table2", help="print the built-in 12-robot federation config"
    )
    table2.add_argument("--out", default=None, help="write to a file instead of stdout")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            doc = load_config(args.config)
            records = experiments.run_to_dir(doc, Path(args.out_dir), seed=args.seed)
            if records:
                print(
                    f"ran {len(records)} rounds, final test accuracy "
                    f"{records[-1].test_accuracy:.4f}, outputs in {args.out_dir}"
                )
            else:
                print(f"ran 0 rounds, outputs in {args.out_dir}")
        elif args.command == "sweep":
            doc = load_config(args.config)
            if args.vary == "batch_epochs":
                experiments.sweep_batch_epochs(doc, Path(args.out_dir), seed=args.seed)
            else:
                experiments.sweep_stragglers(doc, Path(args.out_dir), seed=args.seed)
            print(f"sweep outputs in {args.out_dir}")
        else:
            text = json.dumps(experiments.table2_config(), indent=2)
            if args.out:
                Path(args.out).write_text(text + "\n", encoding="utf-8")
            else:
                print(text)
    except ConfigError as exc:
        for detail in exc.details:
            print(f"config error: {detail}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
