#!/usr/bin/env python3
"""Run every smoke preset end to end; a quick health check of the pipeline."""

import argparse
import sys

from dmdbench.cli import main as cli_main

SMOKE_PRESETS = ["smoke-noiseless", "smoke-noisy", "smoke-lifted"]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="runs/smoke")
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()

    for name in SMOKE_PRESETS:
        code = cli_main([
            "sweep", "--config", name, "--seed", str(args.seed),
            "--threads", str(args.threads), "--out", f"{args.out}/{name}",
        ])
        if code != 0:
            return code
    return cli_main(["report", args.out])


if __name__ == "__main__":
    sys.exit(main())
