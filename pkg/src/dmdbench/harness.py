"""Configuration loading, preset sweeps, seeding, and artifact emission."""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import os
import re
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .algorithms import (
    EmptyData,
    IllConditionedBlock,
    RankDeficient,
    RankExceedsData,
    SingularBackwardOperator,
    SquareRootBranchFailure,
    exact_dmd,
    fb_dmd,
    make_pairs,
    opt_dmd,
    tls_dmd,
)
from .evaluation import (
    CellResult,
    DensityGrid,
    TrialOutcome,
    run_until_converged,
    write_density_csv,
)
from .observables import (
    ObservableMap,
    build_basis,
    coupled_quadratic_observable,
    linear_observable,
    monomial_observable,
)
from .systems import (
    LinearSystem,
    NoiseSpec,
    SingularParameterization,
    SystemSpec,
    build_system,
    simulate,
)

OUTPUT_ROOT_ENV = "DMDBENCH_OUT"
ALGORITHMS = ("exact", "fb", "tls", "opt")
_ALGO_INDEX = {name: i for i, name in enumerate(ALGORITHMS)}
_SOLVER_ERRORS = (
    EmptyData,
    RankDeficient,
    RankExceedsData,
    SingularBackwardOperator,
    SquareRootBranchFailure,
    IllConditionedBlock,
)

_DEFAULT_GRID = {
    "re_range": (-1.1, 1.1),
    "im_range": (-1.1, 1.1),
    "resolution": 0.01,
    "sigma": 0.01,
}


class SchemaError(ValueError):
    """Configuration rejected; the message carries the offending field path."""


@dataclass(frozen=True)
class GridPoint:
    """One system of a sweep, with a filename-safe label."""

    label: str
    spec: SystemSpec


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    grid_points: tuple[GridPoint, ...]
    observable: str
    dataset_shapes: tuple[tuple[int, int], ...]
    system_sigma: float
    measurement_sigma: float
    algorithms: tuple[str, ...]
    lifting_order: int
    batch_size: int = 300
    kl_threshold: float = 1e-3
    max_batches: int = 40
    grid: dict = field(default_factory=lambda: dict(_DEFAULT_GRID))
    output_dir: Optional[str] = None
    config: dict = field(default_factory=dict)

    def truth_order(self, omap: ObservableMap) -> int:
        # Effective ladder order of the identifiable spectrum: a full
        # monomial observation multiplies the order, other observations
        # keep the lifted dimension.
        match = re.fullmatch(r"monomial-order-(\d+)", self.observable)
        factor = int(match.group(1)) if match else 1
        return self.lifting_order * factor


def _reject_unknown(cfg: dict, known: Sequence[str], path: str) -> None:
    for key in cfg:
        if key not in known:
            raise SchemaError(f"{path}{key}: unknown key")


def _require(cfg: dict, key: str, path: str):
    if key not in cfg:
        raise SchemaError(f"{path}{key}: missing required key")
    return cfg[key]


def _as_number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _as_number_list(value, path: str) -> list[float]:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return [float(value)]
    if isinstance(value, (list, tuple)):
        return [_as_number(v, f"{path}[{i}]") for i, v in enumerate(value)]
    raise SchemaError(f"{path}: expected a number or list of numbers")


def _format_label(parts: list[str]) -> str:
    return "_".join(parts)


def _expand_system(cfg: dict, path: str = "system.") -> tuple[GridPoint, ...]:
    _reject_unknown(cfg, ["pairs", "reals", "theta", "phi", "s", "real_sweep"], path)
    pairs_raw = cfg.get("pairs", [])
    if not isinstance(pairs_raw, (list, tuple)):
        raise SchemaError(f"{path}pairs: expected a list of [alpha, beta] pairs")
    pairs = []
    for i, entry in enumerate(pairs_raw):
        if not isinstance(entry, (list, tuple)) or len(entry) != 2:
            raise SchemaError(f"{path}pairs[{i}]: expected [alpha, beta]")
        pairs.append((_as_number(entry[0], f"{path}pairs[{i}][0]"),
                      _as_number(entry[1], f"{path}pairs[{i}][1]")))
    reals = [_as_number(v, f"{path}reals[{i}]") for i, v in enumerate(cfg.get("reals", []))]
    real_sweep = cfg.get("real_sweep")
    if real_sweep is not None:
        if reals:
            raise SchemaError(f"{path}real_sweep: cannot combine with reals")
        real_sweep = _as_number_list(real_sweep, f"{path}real_sweep")
    if not pairs and not reals and not real_sweep:
        raise SchemaError(f"{path}: spectrum is empty")

    thetas = _as_number_list(cfg.get("theta", 0.0), f"{path}theta")
    phis = _as_number_list(cfg.get("phi", 0.0), f"{path}phi")
    ss = _as_number_list(cfg.get("s", 1.0), f"{path}s")
    for i, s in enumerate(ss):
        if s <= 0.0:
            raise SchemaError(f"{path}s[{i}]: must be positive, got {s}")
    for i, th in enumerate(thetas):
        if abs(math.cos(th)) <= 1e-12:
            raise SchemaError(f"{path}theta[{i}]: cos(theta) vanishes, got {th}")

    sweep_real = real_sweep if real_sweep is not None else [None]
    points = []
    for th, ph, s, lam in product(thetas, phis, ss, sweep_real):
        these_reals = tuple(reals) if lam is None else (lam,)
        spec = SystemSpec(pairs=tuple(pairs), reals=these_reals, theta=th, phi=ph, s=s)
        parts = [f"th{th:g}", f"ph{ph:g}", f"s{s:g}"]
        if lam is not None:
            parts.append(f"lam{lam:g}")
        label = _format_label(parts).replace(".", "p").replace("-", "m")
        points.append(GridPoint(label=label, spec=spec))
    return tuple(points)


_TOP_KEYS = [
    "name",
    "system",
    "observable",
    "dataset_shapes",
    "noise",
    "algorithms",
    "lifting_order",
    "batch_size",
    "kl_threshold",
    "max_batches",
    "grid",
    "output_dir",
]


def preset_from_config(cfg: dict) -> ExperimentPreset:
    """Validate a configuration mapping; unknown keys are rejected with the
    offending field path."""
    if not isinstance(cfg, dict):
        raise SchemaError(": configuration must be a mapping")
    _reject_unknown(cfg, _TOP_KEYS, "")
    name = _require(cfg, "name", "")
    if not isinstance(name, str) or not name:
        raise SchemaError("name: expected a nonempty string")

    system_cfg = _require(cfg, "system", "")
    if not isinstance(system_cfg, dict):
        raise SchemaError("system: expected a mapping")
    grid_points = _expand_system(system_cfg)
    for gp in grid_points:
        if gp.spec.dim != 3 and (gp.spec.theta, gp.spec.phi, gp.spec.s) != (0.0, 0.0, 1.0):
            raise SchemaError(
                "system: geometry knobs require one conjugate pair plus one real eigenvalue"
            )

    observable = cfg.get("observable", "linear")
    if observable not in ("linear", "coupled-quadratic") and not re.fullmatch(
        r"monomial-order-\d+", str(observable)
    ):
        raise SchemaError(f"observable: unknown tag {observable!r}")
    if observable == "coupled-quadratic" and grid_points[0].spec.dim != 3:
        raise SchemaError("observable: coupled-quadratic requires a 3D system")

    shapes_cfg = _require(cfg, "dataset_shapes", "")
    if not isinstance(shapes_cfg, (list, tuple)) or not shapes_cfg:
        raise SchemaError("dataset_shapes: expected a nonempty list of [N, L]")
    shapes = []
    for i, entry in enumerate(shapes_cfg):
        if not isinstance(entry, (list, tuple)) or len(entry) != 2:
            raise SchemaError(f"dataset_shapes[{i}]: expected [N, L]")
        n, length = entry
        if not isinstance(n, int) or not isinstance(length, int) or n < 1 or length < 2:
            raise SchemaError(f"dataset_shapes[{i}]: need integers N >= 1, L >= 2")
        shapes.append((n, length))

    noise_cfg = cfg.get("noise", {})
    if not isinstance(noise_cfg, dict):
        raise SchemaError("noise: expected a mapping")
    _reject_unknown(noise_cfg, ["system_sigma", "measurement_sigma"], "noise.")
    system_sigma = _as_number(noise_cfg.get("system_sigma", 0.0), "noise.system_sigma")
    measurement_sigma = _as_number(
        noise_cfg.get("measurement_sigma", 0.0), "noise.measurement_sigma"
    )
    if system_sigma < 0 or measurement_sigma < 0:
        raise SchemaError("noise: standard deviations must be nonnegative")

    algorithms = cfg.get("algorithms", ["exact"])
    if not isinstance(algorithms, (list, tuple)) or not algorithms:
        raise SchemaError("algorithms: expected a nonempty list")
    for i, alg in enumerate(algorithms):
        if alg not in ALGORITHMS:
            raise SchemaError(f"algorithms[{i}]: unknown algorithm {alg!r}")

    lifting_order = cfg.get("lifting_order", 1)
    if not isinstance(lifting_order, int) or lifting_order < 1:
        raise SchemaError("lifting_order: expected a positive integer")

    batch_size = cfg.get("batch_size", 300)
    if not isinstance(batch_size, int) or batch_size < 1:
        raise SchemaError("batch_size: expected a positive integer")
    kl_threshold = _as_number(cfg.get("kl_threshold", 1e-3), "kl_threshold")
    max_batches = cfg.get("max_batches", 40)
    if not isinstance(max_batches, int) or max_batches < 1:
        raise SchemaError("max_batches: expected a positive integer")

    grid_cfg = cfg.get("grid", {})
    if not isinstance(grid_cfg, dict):
        raise SchemaError("grid: expected a mapping")
    _reject_unknown(grid_cfg, ["re_range", "im_range", "resolution", "sigma"], "grid.")
    grid = dict(_DEFAULT_GRID)
    for key in ("re_range", "im_range"):
        if key in grid_cfg:
            rng = grid_cfg[key]
            if not isinstance(rng, (list, tuple)) or len(rng) != 2:
                raise SchemaError(f"grid.{key}: expected [lo, hi]")
            lo, hi = (_as_number(v, f"grid.{key}") for v in rng)
            if hi <= lo:
                raise SchemaError(f"grid.{key}: empty interval")
            grid[key] = (lo, hi)
    for key in ("resolution", "sigma"):
        if key in grid_cfg:
            val = _as_number(grid_cfg[key], f"grid.{key}")
            if val <= 0:
                raise SchemaError(f"grid.{key}: must be positive")
            grid[key] = val

    output_dir = cfg.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise SchemaError("output_dir: expected a string")

    return ExperimentPreset(
        name=name,
        grid_points=grid_points,
        observable=str(observable),
        dataset_shapes=tuple(shapes),
        system_sigma=system_sigma,
        measurement_sigma=measurement_sigma,
        algorithms=tuple(algorithms),
        lifting_order=lifting_order,
        batch_size=batch_size,
        kl_threshold=kl_threshold,
        max_batches=max_batches,
        grid=grid,
        output_dir=output_dir,
        config=copy.deepcopy(cfg),
    )


def load_config(path_or_name) -> ExperimentPreset:
    """Load a preset from a JSON file, or by builtin name."""
    from .presets import BUILTIN_CONFIGS

    text_path = Path(str(path_or_name))
    if text_path.exists():
        try:
            cfg = json.loads(text_path.read_text())
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{text_path}: invalid JSON ({exc})") from exc
        return preset_from_config(cfg)
    if str(path_or_name) in BUILTIN_CONFIGS:
        return preset_from_config(BUILTIN_CONFIGS[str(path_or_name)])
    raise SchemaError(f"{path_or_name}: no such file or builtin preset")


def observable_from_tag(tag: str, dim: int) -> ObservableMap:
    if tag == "linear":
        return linear_observable(dim)
    if tag == "coupled-quadratic":
        return coupled_quadratic_observable()
    match = re.fullmatch(r"monomial-order-(\d+)", tag)
    if match:
        return monomial_observable(dim, int(match.group(1)))
    raise SchemaError(f"observable: unknown tag {tag!r}")


def derive_trial_seed(
    master_seed: int, grid_index: int, shape_index: int, algorithm: str, trial_index: int
) -> int:
    """Deterministic per-trial seed; every cell is independently re-runnable."""
    ss = np.random.SeedSequence(
        master_seed,
        spawn_key=(grid_index, shape_index, _ALGO_INDEX[algorithm], trial_index),
    )
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class ExperimentCell:
    """One (system, dataset shape, algorithm) combination of a preset."""

    cell_id: str
    grid_index: int
    grid_point: GridPoint
    system: LinearSystem
    omap: ObservableMap
    shape_index: int
    shape: tuple[int, int]
    algorithm: str
    lifting: object
    truth: tuple[complex, ...]
    system_sigma: float
    measurement_sigma: float
    warnings: tuple[str, ...] = ()


def enumerate_cells(preset: ExperimentPreset) -> list[ExperimentCell]:
    cells = []
    for gi, gp in enumerate(preset.grid_points):
        system = build_system(gp.spec)
        omap = observable_from_tag(preset.observable, gp.spec.dim)
        truth_order = preset.truth_order(omap)
        if truth_order > 1:
            basis = build_basis(gp.spec.spectrum, truth_order)
            truth = basis.multipliers
        else:
            basis = None
            truth = gp.spec.spectrum
        lifting = (
            build_basis(gp.spec.spectrum, preset.lifting_order)
            if preset.lifting_order > 1
            else None
        )
        for si, shape in enumerate(preset.dataset_shapes):
            for alg in preset.algorithms:
                notes = []
                if alg == "opt" and shape[0] > 1:
                    notes.append(
                        f"optimized fit consumes a single trajectory of length "
                        f"{shape[1]} out of the {shape[0]} simulated"
                    )
                cells.append(
                    ExperimentCell(
                        cell_id=f"{gp.label}_N{shape[0]}L{shape[1]}_{alg}",
                        grid_index=gi,
                        grid_point=gp,
                        system=system,
                        omap=omap,
                        shape_index=si,
                        shape=shape,
                        algorithm=alg,
                        lifting=lifting,
                        truth=truth,
                        system_sigma=preset.system_sigma,
                        measurement_sigma=preset.measurement_sigma,
                        warnings=tuple(notes),
                    )
                )
    return cells


def make_trial_fn(cell: ExperimentCell, master_seed: int):
    """Pure per-trial closure mapping a trial index to a TrialOutcome."""
    n_traj, length = cell.shape

    def run(trial_index: int) -> TrialOutcome:
        seed = derive_trial_seed(
            master_seed, cell.grid_index, cell.shape_index, cell.algorithm, trial_index
        )
        noise = NoiseSpec(cell.system_sigma, cell.measurement_sigma, seed=seed)
        data = simulate(cell.system, cell.omap, noise, n_traj, length)
        try:
            if cell.algorithm == "opt":
                model = opt_dmd(data.take(0), lifting=cell.lifting)
            else:
                pairs = make_pairs(data, cell.lifting)
                fit = {"exact": exact_dmd, "fb": fb_dmd, "tls": tls_dmd}[cell.algorithm]
                model = fit(pairs)
        except _SOLVER_ERRORS:
            return TrialOutcome(failure="solver-error")
        return TrialOutcome(tuple(model.eigenvalues), model.kappa_est)

    return run


def run_cell(
    cell: ExperimentCell,
    master_seed: int,
    batch_size: int,
    kl_threshold: float,
    max_batches: int,
    grid_cfg: dict,
    workers: int = 1,
) -> CellResult:
    grid = DensityGrid.empty(
        re_range=tuple(grid_cfg["re_range"]),
        im_range=tuple(grid_cfg["im_range"]),
        resolution=grid_cfg["resolution"],
        sigma=grid_cfg["sigma"],
    )
    return run_until_converged(
        make_trial_fn(cell, master_seed),
        cell.truth,
        grid,
        batch_size=batch_size,
        kl_threshold=kl_threshold,
        max_batches=max_batches,
        workers=workers,
    )


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


BINSTATS_HEADER = [
    "preset",
    "cell",
    "system",
    "shape_n",
    "shape_l",
    "algorithm",
    "bin",
    "truth_re",
    "truth_im",
    "mean_re",
    "mean_im",
    "std",
    "count",
    "discard_fraction",
    "kappa_A",
    "kappa_est_mean",
]


@dataclass(frozen=True)
class RunManifest:
    path: Path
    payload: dict

    @property
    def files(self) -> list[dict]:
        return list(self.payload["files"])


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def run_preset(
    preset: ExperimentPreset,
    master_seed: int = 0,
    out_dir=None,
    workers: int = 1,
    max_batches: Optional[int] = None,
) -> RunManifest:
    """Run every cell of a preset and write density CSVs, the bin-statistics
    CSV, and a manifest with content hashes.

    Cell failures are recorded in the manifest instead of aborting the run.
    """
    root = Path(out_dir) if out_dir else default_output_root() / preset.name
    root.mkdir(parents=True, exist_ok=True)
    budget = max_batches if max_batches is not None else preset.max_batches

    cells = enumerate_cells(preset)
    cell_records = []
    stats_rows = []
    emitted: list[Path] = []
    for cell in cells:
        record = {
            "id": cell.cell_id,
            "system": cell.grid_point.label,
            "shape": list(cell.shape),
            "algorithm": cell.algorithm,
            "warnings": list(cell.warnings),
        }
        try:
            result = run_cell(
                cell,
                master_seed,
                preset.batch_size,
                preset.kl_threshold,
                budget,
                preset.grid,
                workers=workers,
            )
        except Exception as exc:  # cell-level failure: record and continue
            record.update({"status": "failed", "error": f"{type(exc).__name__}: {exc}"})
            cell_records.append(record)
            continue

        density_csv = root / f"{cell.cell_id}_density.csv"
        write_density_csv(
            result.grid,
            density_csv,
            extra_meta={
                "preset": preset.name,
                "cell": cell.cell_id,
                "system": cell.grid_point.label,
                "shape": list(cell.shape),
                "algorithm": cell.algorithm,
                "truth": [[z.real, z.imag] for z in cell.truth],
                "kappa_A": cell.system.kappa,
                "eigenvector_condition": cell.system.eigenvector_condition,
                "kappa_est_mean": result.stats.kappa_mean,
                "discard_fraction": result.stats.discard_fraction,
                "batches": result.batches,
                "converged": result.converged,
            },
        )
        emitted.extend([density_csv, density_csv.with_suffix(".json")])

        for b, truth_val in enumerate(result.stats.truth):
            stats_rows.append(
                [
                    preset.name,
                    cell.cell_id,
                    cell.grid_point.label,
                    str(cell.shape[0]),
                    str(cell.shape[1]),
                    cell.algorithm,
                    str(b),
                    _fmt(truth_val.real),
                    _fmt(truth_val.imag),
                    _fmt(result.stats.means[b].real),
                    _fmt(result.stats.means[b].imag),
                    _fmt(result.stats.stds[b]),
                    str(result.stats.counts[b]),
                    _fmt(result.stats.discard_fraction),
                    _fmt(cell.system.kappa),
                    _fmt(result.stats.kappa_mean),
                ]
            )
        record.update(
            {
                "status": "ok",
                "batches": result.batches,
                "kl_history": list(result.kl_history),
                "converged": result.converged,
                "discard_fraction": result.stats.discard_fraction,
            }
        )
        cell_records.append(record)

    stats_path = root / "binstats.csv"
    with stats_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BINSTATS_HEADER)
        writer.writerows(stats_rows)
    emitted.append(stats_path)

    manifest_payload = {
        "preset": preset.config,
        "preset_name": preset.name,
        "master_seed": master_seed,
        "seed_rule": "seed-sequence(master, grid_index, shape_index, algorithm_index, trial_index)",
        "version": __version__,
        "cells": cell_records,
        "failed_cells": [r["id"] for r in cell_records if r["status"] == "failed"],
        "files": [
            {"path": str(p.relative_to(root)), "sha256": _sha256(p)} for p in emitted
        ],
    }
    manifest_path = root / "manifest.json"
    manifest_path.write_text(json.dumps(manifest_payload, indent=2, sort_keys=True))
    return RunManifest(path=manifest_path, payload=manifest_payload)


def aggregate_binstats(paths: Sequence) -> list[dict]:
    """Merge bin-statistics CSVs into a list of row dictionaries."""
    rows = []
    for path in paths:
        with Path(path).open(newline="") as fh:
            reader = csv.DictReader(fh)
            rows.extend(dict(r) for r in reader)
    return rows
