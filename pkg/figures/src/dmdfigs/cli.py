"""Figure script entry point.

The canonical invocation takes a JSON figure spec::

    dmdfigs --spec figure.json --out figure.png

Convenience subcommands build the spec from run artifacts::

    dmdfigs density --manifest runs/x/manifest.json --algorithm exact --out d.png
    dmdfigs std --binstats runs/x/binstats.csv --x kappa --out s.png
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .io import density_panels_from_manifest
from .render import render, render_density, render_std


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmdfigs", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_render = sub.add_parser("render", help="render a JSON figure spec")
    p_render.add_argument("--spec", required=True)
    p_render.add_argument("--out", required=True)

    p_density = sub.add_parser("density", help="density panels from a run manifest")
    p_density.add_argument("--manifest", required=True)
    p_density.add_argument("--algorithm", default="exact")
    p_density.add_argument("--levels", type=float, nargs="+", default=None)
    p_density.add_argument("--dpi", type=int, default=150)
    p_density.add_argument("--out", required=True)

    p_std = sub.add_parser("std", help="deviation charts from bin statistics")
    p_std.add_argument("--binstats", nargs="+", required=True)
    p_std.add_argument("--x", choices=["kappa", "real-eigenvalue"], default="kappa")
    p_std.add_argument("--algorithm", default=None)
    p_std.add_argument("--dpi", type=int, default=150)
    p_std.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0].startswith("--"):
        argv = ["render", *argv]
    args = build_parser().parse_args(argv)

    if args.command == "render":
        spec = json.loads(Path(args.spec).read_text())
        out = render(spec, args.out)
    elif args.command == "density":
        spec = {
            "kind": "density",
            "rows": density_panels_from_manifest(args.manifest, args.algorithm),
            "dpi": args.dpi,
        }
        if args.levels:
            spec["levels"] = args.levels
        out = render_density(spec, args.out)
    else:
        spec = {
            "kind": "std",
            "binstats": args.binstats,
            "x": args.x,
            "dpi": args.dpi,
        }
        if args.algorithm:
            spec["algorithm"] = args.algorithm
        out = render_std(spec, args.out)
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
