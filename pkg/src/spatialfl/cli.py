"""Command-line front end: ``spatialfl partition | train | compare``.

Exit codes: 0 success, 1 configuration or input error, 2 runtime error.
"""
import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from spatialfl.config import ConfigError, ExperimentConfig, load_config
from spatialfl.experiment import cmd_partition, cmd_train, compare, format_comparison

log = logging.getLogger("spatialfl")


def _load(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def build_parser():
    parser = argparse.ArgumentParser(prog="spatialfl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment JSON file")
        p.add_argument("--seed", type=int, help="override the base seed")
        p.add_argument("--out", help="output directory (overrides output_dir)")

    p = sub.add_parser("partition", help="generate a world and write partition.json + summary")
    common(p)

    p = sub.add_parser("train", help="run every policy x repeat and write metrics CSVs")
    common(p)
    p.add_argument("--partition", help="use this partition file instead of generating worlds")
    p.add_argument("--resume", action="store_true", help="continue from existing checkpoints")

    p = sub.add_parser("compare", help="summarize metrics CSVs per policy")
    p.add_argument("csv", nargs="+")
    p.add_argument("--out", help="also write the table to this file")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        if args.command == "partition":
            cfg = _load(args)
            part = cmd_partition(cfg, args.out)
            out = Path(args.out or cfg.output_dir)
            print((out / "partition_summary.txt").read_text(), end="")
            log.info("wrote %s (%d UEs)", out / "partition.json", len(part.ues))
        elif args.command == "train":
            cfg = _load(args)
            for path in cmd_train(cfg, args.out, args.partition, args.resume):
                print(path)
        else:
            text = format_comparison(compare(args.csv))
            if args.out:
                Path(args.out).write_text(text)
            print(text, end="")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("run failed")
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
