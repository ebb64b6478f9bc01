#!/usr/bin/env python3
"""Run the conditioning study: the (theta, phi, s) grid with the fixed
spectrum, at first- and second-order observation.

The full grid at the default batch budget takes a while; pass --batches to
cap the budget for a desk-scale run.
"""

import argparse
import sys

from dmdbench.cli import main as cli_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="runs/cond-sweep")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--batches", type=int, default=None)
    parser.add_argument(
        "--orders", type=int, nargs="+", default=[1, 2], choices=[1, 2]
    )
    args = parser.parse_args()

    for order in args.orders:
        name = f"paper-cond-sweep-order{order}"
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
