#!/usr/bin/env python3
"""Compare all four estimators on the normal and the tilted/squeezed system,
at first- and second-order observation, plus the 9D and 5D variants."""

import argparse
import sys

from dmdbench.cli import main as cli_main

PRESETS = [
    "paper-algorithms-normal-order1",
    "paper-algorithms-normal-order2",
    "paper-algorithms-nonnormal-order1",
    "paper-algorithms-nonnormal-order2",
    "nonresonant-9d",
    "legged-5d",
]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="runs/algorithms")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--batches", type=int, default=None)
    parser.add_argument("--presets", nargs="+", default=PRESETS)
    args = parser.parse_args()

    for name in args.presets:
        cmd = [
            "sweep", "--config", name, "--seed", str(args.seed),
            "--threads", str(args.threads), "--out", f"{args.out}/{name}",
        ]
        if args.batches is not None:
            cmd += ["--batches", str(args.batches)]
        code = cli_main(cmd)
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
