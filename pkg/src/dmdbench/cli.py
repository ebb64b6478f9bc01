"""Command-line harness: simulate, fit, sweep, report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .algorithms import exact_dmd, fb_dmd, make_pairs, opt_dmd, save_model, tls_dmd
from .harness import (
    SchemaError,
    aggregate_binstats,
    default_output_root,
    derive_trial_seed,
    enumerate_cells,
    load_config,
    run_preset,
)
from .systems import NoiseSpec, read_trajectory_csv, simulate, write_trajectory_csv


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--out", type=str, default=None, help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dmdbench",
        description=(
            "Benchmark spectral recovery of latent linear systems observed "
            "through multinomial measurements."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="emit a trajectory CSV for one preset cell")
    p_sim.add_argument("--config", required=True, help="preset JSON path or builtin name")
    p_sim.add_argument("--grid-index", type=int, default=0)
    p_sim.add_argument("--shape-index", type=int, default=0)
    p_sim.add_argument("--trial", type=int, default=0, help="trial index for seeding")
    _add_common(p_sim)

    p_fit = sub.add_parser("fit", help="run one spectral fit on a trajectory CSV")
    p_fit.add_argument("--input", required=True, help="trajectory CSV path")
    p_fit.add_argument(
        "--algorithm", choices=["exact", "fb", "tls", "opt"], default="exact"
    )
    p_fit.add_argument("--rank", type=int, default=None)
    p_fit.add_argument("--lifting-order", type=int, default=1)
    _add_common(p_fit)

    p_sweep = sub.add_parser("sweep", help="run a preset and emit artifacts")
    p_sweep.add_argument("--config", required=True, help="preset JSON path or builtin name")
    p_sweep.add_argument(
        "--batches", type=int, default=None, help="override the batch budget"
    )
    p_sweep.add_argument("--threads", type=int, default=1, help="trial worker threads")
    _add_common(p_sweep)

    p_report = sub.add_parser("report", help="aggregate bin statistics across runs")
    p_report.add_argument(
        "inputs", nargs="+", help="binstats CSVs, manifest JSONs, or run directories"
    )
    _add_common(p_report)
    return parser


def _cmd_simulate(args) -> int:
    preset = load_config(args.config)
    cells = enumerate_cells(preset)
    chosen = [
        c
        for c in cells
        if c.grid_index == args.grid_index and c.shape_index == args.shape_index
    ]
    if not chosen:
        print(
            f"no cell with grid index {args.grid_index} and shape index "
            f"{args.shape_index}",
            file=sys.stderr,
        )
        return 2
    cell = chosen[0]
    seed = derive_trial_seed(
        args.seed, cell.grid_index, cell.shape_index, cell.algorithm, args.trial
    )
    noise = NoiseSpec(cell.system_sigma, cell.measurement_sigma, seed=seed)
    data = simulate(cell.system, cell.omap, noise, cell.shape[0], cell.shape[1])
    out = Path(args.out) if args.out else default_output_root() / f"{cell.cell_id}_trajectories.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(data, out)
    print(f"wrote {out} and {out.with_suffix('.json')}")
    return 0


def _cmd_fit(args) -> int:
    data = read_trajectory_csv(args.input)
    lifting = args.lifting_order if args.lifting_order > 1 else None
    if args.algorithm == "opt":
        if data.n_traj > 1:
            print(
                f"optimized fit uses only the first of {data.n_traj} trajectories",
                file=sys.stderr,
            )
        model = opt_dmd(data.take(0), rank=args.rank, lifting=lifting)
    else:
        pairs = make_pairs(data, lifting)
        fit = {"exact": exact_dmd, "fb": fb_dmd, "tls": tls_dmd}[args.algorithm]
        model = fit(pairs, rank=args.rank)
    out = Path(args.out) if args.out else Path(args.input).with_suffix(".model.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    eigs = ", ".join(f"{z.real:.6g}{z.imag:+.6g}j" for z in model.eigenvalues)
    print(f"{args.algorithm}: rank {model.rank}, eigenvalues [{eigs}]")
    print(f"wrote {out}")
    return 0


def _cmd_sweep(args) -> int:
    preset = load_config(args.config)
    manifest = run_preset(
        preset,
        master_seed=args.seed,
        out_dir=args.out,
        workers=args.threads,
        max_batches=args.batches,
    )
    failed = manifest.payload["failed_cells"]
    print(f"wrote {manifest.path}")
    if failed:
        print(f"{len(failed)} cell(s) failed: {', '.join(failed)}", file=sys.stderr)
    return 0


def _resolve_report_inputs(inputs) -> list[Path]:
    paths = []
    for raw in inputs:
        p = Path(raw)
        if p.is_dir():
            paths.extend(sorted(p.rglob("binstats.csv")))
        elif p.suffix == ".json":
            payload = json.loads(p.read_text())
            root = p.parent
            for entry in payload.get("files", []):
                if entry["path"].endswith("binstats.csv"):
                    paths.append(root / entry["path"])
        else:
            paths.append(p)
    return paths


def _cmd_report(args) -> int:
    paths = _resolve_report_inputs(args.inputs)
    if not paths:
        print("no binstats.csv inputs found", file=sys.stderr)
        return 2
    rows = aggregate_binstats(paths)
    by_cell: dict[tuple, list[dict]] = {}
    for row in rows:
        by_cell.setdefault(
            (row["preset"], row["system"], row["shape_n"], row["shape_l"], row["algorithm"]),
            [],
        ).append(row)
    print(f"{'preset':<24}{'system':<28}{'shape':<10}{'alg':<6}{'max std':>12}{'discard':>10}")
    for key in sorted(by_cell):
        cell_rows = by_cell[key]
        stds = [float(r["std"]) for r in cell_rows if r["std"] != "nan"]
        max_std = max(stds) if stds else float("nan")
        discard = float(cell_rows[0]["discard_fraction"])
        preset, system, n, length, alg = key
        print(
            f"{preset:<24}{system:<28}{n + 'x' + length:<10}{alg:<6}"
            f"{max_std:>12.5g}{discard:>10.3f}"
        )
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("w", newline="") as fh:
            import csv as _csv

            writer = _csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
        print(f"wrote {out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "fit":
            return _cmd_fit(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "report":
            return _cmd_report(args)
    except SchemaError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
