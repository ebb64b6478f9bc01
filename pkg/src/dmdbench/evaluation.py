"""Evaluation pipeline for recovered spectra.

Per-trial eigenvalue estimates are registered to the nearest true eigenvalue
bins, structurally broken trials are discarded, surviving estimates feed a
Gaussian-smoothed density grid, and batches accumulate until the density
stops moving in KL divergence.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

REAL_TOL = 1e-9
PAIR_TOL = 1e-9
KERNEL_CUTOFF = 5.0  # kernel support in units of sigma
KL_FLOOR = 1e-12

DISCARD_EXCESS_REAL = "excess-real"
DISCARD_SOLVER_ERROR = "solver-error"


class GeometryMismatch(ValueError):
    """Density grids do not share bounds and resolution."""


@dataclass(frozen=True)
class RegisteredTrial:
    """Estimates of one trial, assigned per true-eigenvalue bin."""

    assignments: tuple[tuple[complex, ...], ...]
    discarded: bool = False
    discard_reason: Optional[str] = None

    @property
    def values(self) -> tuple[complex, ...]:
        return tuple(v for bin_vals in self.assignments for v in bin_vals)


def _is_real(z: complex, tol: float) -> bool:
    return abs(z.imag) <= tol * max(1.0, abs(z))


def _mirror_indices(truth: list[complex], tol: float) -> list[int]:
    mirror = [-1] * len(truth)
    used = [False] * len(truth)
    order = sorted(range(len(truth)), key=lambda i: -abs(truth[i].imag))
    for i in order:
        if mirror[i] >= 0:
            continue
        target = truth[i].conjugate()
        best, best_d = -1, math.inf
        for j in range(len(truth)):
            if used[j] and j != i:
                continue
            d = abs(target - truth[j])
            if d < best_d:
                best, best_d = j, d
        if best < 0 or best_d > tol * max(1.0, abs(truth[i])):
            raise ValueError("truth spectrum is not conjugate-closed")
        mirror[i] = best
        mirror[best] = i
        used[i] = used[best] = True
    return mirror


def _discarded(n_bins: int, reason: str) -> RegisteredTrial:
    return RegisteredTrial(tuple(() for _ in range(n_bins)), True, reason)


def register(
    estimates: Sequence[complex],
    truth: Sequence[complex],
    real_tol: float = REAL_TOL,
    pair_tol: float = PAIR_TOL,
) -> RegisteredTrial:
    """Assign estimated eigenvalues to their nearest true bins.

    An estimate counts as real when |Im| <= real_tol * max(1, |z|).  A trial
    with more real estimates than real truth eigenvalues is discarded
    (``excess-real``); fewer estimates than bins, or complex estimates that do
    not pair up under conjugation, discard as ``solver-error``.  When several
    conjugate estimate pairs land on one true pair, the upper-half
    representatives are averaged and the average is registered once per
    contributing pair, conjugate-mirrored into the lower bin.
    """
    truth_c = [complex(t) for t in truth]
    ests = [complex(e) for e in estimates]
    n_bins = len(truth_c)
    mirror = _mirror_indices(truth_c, pair_tol)

    if len(ests) < n_bins:
        return _discarded(n_bins, DISCARD_SOLVER_ERROR)

    real_truth = sum(_is_real(t, real_tol) for t in truth_c)
    real_ests = [z for z in ests if _is_real(z, real_tol)]
    if len(real_ests) > real_truth:
        return _discarded(n_bins, DISCARD_EXCESS_REAL)

    complex_ests = [z for z in ests if not _is_real(z, real_tol)]
    uppers = sorted(
        (z for z in complex_ests if z.imag > 0), key=lambda z: (z.imag, z.real)
    )
    lowers = [z for z in complex_ests if z.imag < 0]
    if len(uppers) != len(lowers):
        return _discarded(n_bins, DISCARD_SOLVER_ERROR)
    pairs: list[tuple[complex, complex]] = []
    pool = list(lowers)
    for u in uppers:
        best, best_d = -1, math.inf
        for i, w in enumerate(pool):
            d = abs(u.conjugate() - w)
            if d < best_d:
                best, best_d = i, d
        if best < 0 or best_d > pair_tol * max(1.0, abs(u)):
            return _discarded(n_bins, DISCARD_SOLVER_ERROR)
        pairs.append((u, pool.pop(best)))

    def nearest(z: complex) -> int:
        dists = [abs(z - t) for t in truth_c]
        return dists.index(min(dists))

    bins: list[list[complex]] = [[] for _ in range(n_bins)]
    for z in real_ests:
        bins[nearest(z)].append(z)

    grouped: dict[int, list[tuple[complex, complex]]] = {}
    for u, low in pairs:
        grouped.setdefault(nearest(u), []).append((u, low))
    for iu, members in grouped.items():
        il = mirror[iu]
        if il == iu or len(members) == 1:
            # Real-bin target or single pair: keep the raw values.
            for u, low in members:
                bins[iu].append(u)
                bins[il].append(low)
        else:
            avg = sum(u for u, _ in members) / len(members)
            bins[iu].extend([avg] * len(members))
            bins[il].extend([avg.conjugate()] * len(members))

    return RegisteredTrial(tuple(tuple(b) for b in bins), False, None)


@dataclass(frozen=True)
class DensityGrid:
    """Gaussian-smoothed density of registered eigenvalue estimates.

    ``values[j, i]`` is the unnormalized density at the node
    ``(re_min + i*resolution, im_min + j*resolution)``; normalization (unit
    mass over node cells) is deferred to export.
    """

    re_min: float
    re_max: float
    im_min: float
    im_max: float
    resolution: float
    sigma: float
    values: np.ndarray
    sample_count: int = 0
    clipped: int = 0

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def empty(
        cls,
        re_range: tuple[float, float] = (-1.1, 1.1),
        im_range: tuple[float, float] = (-1.1, 1.1),
        resolution: float = 0.01,
        sigma: float = 0.01,
    ) -> "DensityGrid":
        re_min, re_max = (float(v) for v in re_range)
        im_min, im_max = (float(v) for v in im_range)
        if not (re_max > re_min and im_max > im_min):
            raise ValueError("empty grid ranges")
        if resolution <= 0.0 or sigma <= 0.0:
            raise ValueError("resolution and sigma must be positive")
        n_re = int(round((re_max - re_min) / resolution)) + 1
        n_im = int(round((im_max - im_min) / resolution)) + 1
        return cls(
            re_min=re_min,
            re_max=re_max,
            im_min=im_min,
            im_max=im_max,
            resolution=float(resolution),
            sigma=float(sigma),
            values=np.zeros((n_im, n_re)),
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def re_coords(self) -> np.ndarray:
        return self.re_min + self.resolution * np.arange(self.shape[1])

    @property
    def im_coords(self) -> np.ndarray:
        return self.im_min + self.resolution * np.arange(self.shape[0])

    @property
    def cell_area(self) -> float:
        return self.resolution**2

    def geometry(self) -> tuple:
        return (
            self.re_min,
            self.re_max,
            self.im_min,
            self.im_max,
            self.resolution,
            self.shape,
        )

    def normalized(self) -> np.ndarray:
        """Density with unit mass: sum(values) * cell_area == 1."""
        total = float(self.values.sum()) * self.cell_area
        if total == 0.0:
            return self.values.copy()
        return self.values / total


def _deposit(
    vals: np.ndarray, grid: DensityGrid, re: float, im: float
) -> None:
    half = KERNEL_CUTOFF * grid.sigma
    res = grid.resolution
    n_im, n_re = vals.shape
    i0 = max(0, int(math.ceil((re - half - grid.re_min) / res)))
    i1 = min(n_re - 1, int(math.floor((re + half - grid.re_min) / res)))
    j0 = max(0, int(math.ceil((im - half - grid.im_min) / res)))
    j1 = min(n_im - 1, int(math.floor((im + half - grid.im_min) / res)))
    if i1 < i0:  # coarse grid: fall back to the nearest node
        i0 = i1 = min(n_re - 1, max(0, int(round((re - grid.re_min) / res))))
    if j1 < j0:
        j0 = j1 = min(n_im - 1, max(0, int(round((im - grid.im_min) / res))))
    xr = grid.re_min + res * np.arange(i0, i1 + 1)
    xi = grid.im_min + res * np.arange(j0, j1 + 1)
    wr = np.exp(-((xr - re) ** 2) / (2.0 * grid.sigma**2))
    wi = np.exp(-((xi - im) ** 2) / (2.0 * grid.sigma**2))
    bump = wi[:, None] * wr[None, :]
    total = bump.sum() * grid.cell_area
    if total > 0.0:
        vals[j0 : j1 + 1, i0 : i1 + 1] += bump / total


def accumulate_density(
    grid: DensityGrid, registered: Sequence[RegisteredTrial]
) -> DensityGrid:
    """Deposit every registered estimate of the non-discarded trials.

    Each estimate contributes an isotropic Gaussian bump of bandwidth
    ``sigma`` truncated at five sigma and carrying unit mass, so mass is
    conserved even when the bump is cut by the grid boundary.  Out-of-bounds
    estimates are clipped to the boundary and counted.
    """
    vals = grid.values.copy()
    count = grid.sample_count
    clipped = grid.clipped
    for trial in registered:
        if trial.discarded:
            continue
        for z in trial.values:
            re, im = z.real, z.imag
            if not (grid.re_min <= re <= grid.re_max and grid.im_min <= im <= grid.im_max):
                clipped += 1
                re = min(max(re, grid.re_min), grid.re_max)
                im = min(max(im, grid.im_min), grid.im_max)
            _deposit(vals, grid, re, im)
            count += 1
    return replace(grid, values=vals, sample_count=count, clipped=clipped)


def kl_divergence(p: DensityGrid, q: DensityGrid, floor: float = KL_FLOOR) -> float:
    """Discrete KL divergence between two grids of identical geometry.

    A small additive floor per cell (applied before normalization) keeps the
    logarithm finite on empty cells.
    """
    if p.geometry() != q.geometry():
        raise GeometryMismatch(f"{p.geometry()} vs {q.geometry()}")
    pv = p.values + floor
    qv = q.values + floor
    pv = pv / pv.sum()
    qv = qv / qv.sum()
    return float(np.sum(pv * np.log(pv / qv)))


@dataclass(frozen=True)
class BinStats:
    """Per-bin summary over non-discarded trials."""

    truth: tuple[complex, ...]
    means: tuple[complex, ...]
    stds: tuple[float, ...]
    counts: tuple[int, ...]
    n_trials: int
    discard_counts: dict = field(default_factory=dict)
    kappa_mean: float = math.nan

    @property
    def discard_fraction(self) -> float:
        if self.n_trials == 0:
            return 0.0
        return sum(self.discard_counts.values()) / self.n_trials


def compute_bin_stats(
    truth: Sequence[complex],
    per_bin_values: Sequence[Sequence[complex]],
    n_trials: int,
    discard_counts: Optional[dict] = None,
    kappas: Optional[Sequence[float]] = None,
) -> BinStats:
    """Mean, scalar deviation, and counts per bin.

    The per-bin deviation is the square root of the mean squared modulus of
    the centered complex estimates, one scalar per bin.
    """
    means: list[complex] = []
    stds: list[float] = []
    counts: list[int] = []
    for vals in per_bin_values:
        vals = list(vals)
        counts.append(len(vals))
        if not vals:
            means.append(complex(math.nan, math.nan))
            stds.append(math.nan)
            continue
        mean = sum(vals) / len(vals)
        means.append(mean)
        stds.append(math.sqrt(sum(abs(v - mean) ** 2 for v in vals) / len(vals)))
    finite_kappas = [k for k in (kappas or []) if math.isfinite(k)]
    kappa_mean = (
        sum(finite_kappas) / len(finite_kappas) if finite_kappas else math.nan
    )
    return BinStats(
        truth=tuple(complex(t) for t in truth),
        means=tuple(means),
        stds=tuple(stds),
        counts=tuple(counts),
        n_trials=n_trials,
        discard_counts=dict(discard_counts or {}),
        kappa_mean=kappa_mean,
    )


@dataclass(frozen=True)
class TrialOutcome:
    """Raw result of one trial: an eigenvalue list or a failure tag."""

    eigenvalues: Optional[tuple[complex, ...]] = None
    kappa_est: float = math.nan
    failure: Optional[str] = None


class CellResult(NamedTuple):
    grid: DensityGrid
    stats: BinStats
    batches: int
    kl_history: tuple[float, ...]
    converged: bool


def run_until_converged(
    trial_fn: Callable[[int], TrialOutcome],
    truth: Sequence[complex],
    grid: Optional[DensityGrid] = None,
    batch_size: int = 300,
    kl_threshold: float = 1e-3,
    max_batches: int = 40,
    workers: int = 1,
) -> CellResult:
    """Accumulate trial batches until the density stops moving.

    After each batch the KL divergence between the pre- and post-batch
    normalized densities is computed; the loop stops once it drops below
    ``kl_threshold`` (non-convergence within ``max_batches`` is flagged, not
    raised).  Trials may run on ``workers`` threads; registration and
    deposition happen in trial-index order, so results are identical for any
    worker count.
    """
    truth_c = tuple(complex(t) for t in truth)
    if grid is None:
        grid = DensityGrid.empty()
    per_bin: list[list[complex]] = [[] for _ in truth_c]
    discard_counts: Counter = Counter()
    kappas: list[float] = []
    kl_history: list[float] = []
    converged = False
    total = 0

    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for _ in range(max_batches):
            indices = range(total, total + batch_size)
            if executor is None:
                outcomes = [trial_fn(i) for i in indices]
            else:
                outcomes = list(executor.map(trial_fn, indices))
            registered = []
            for outcome in outcomes:
                if outcome.failure is not None or outcome.eigenvalues is None:
                    trial = _discarded(
                        len(truth_c), outcome.failure or DISCARD_SOLVER_ERROR
                    )
                else:
                    trial = register(outcome.eigenvalues, truth_c)
                registered.append(trial)
                if trial.discarded:
                    discard_counts[trial.discard_reason] += 1
                else:
                    for i, vals in enumerate(trial.assignments):
                        per_bin[i].extend(vals)
                    kappas.append(outcome.kappa_est)
            previous = grid
            grid = accumulate_density(grid, registered)
            total += batch_size
            kl_history.append(kl_divergence(previous, grid))
            if kl_history[-1] < kl_threshold:
                converged = True
                break
    finally:
        if executor is not None:
            executor.shutdown()

    stats = compute_bin_stats(truth_c, per_bin, total, discard_counts, kappas)
    return CellResult(grid, stats, len(kl_history), tuple(kl_history), converged)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_density_csv(grid: DensityGrid, csv_path, meta_path=None, extra_meta=None) -> None:
    """Write the normalized density as (re, im, density) rows plus a JSON
    metadata sidecar (bounds, smoothing, truth spectrum, counters)."""
    csv_path = Path(csv_path)
    norm = grid.normalized()
    res = grid.resolution
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["re", "im", "density"])
        for j in range(grid.shape[0]):
            im = grid.im_min + res * j
            for i in range(grid.shape[1]):
                writer.writerow(
                    [_fmt(grid.re_min + res * i), _fmt(im), _fmt(norm[j, i])]
                )
    meta = {
        "re_range": [grid.re_min, grid.re_max],
        "im_range": [grid.im_min, grid.im_max],
        "resolution": grid.resolution,
        "sigma": grid.sigma,
        "sample_count": grid.sample_count,
        "clipped": grid.clipped,
    }
    if extra_meta:
        meta.update(extra_meta)
    meta_path = Path(meta_path) if meta_path else csv_path.with_suffix(".json")
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True))


def read_density_csv(csv_path, meta_path=None) -> tuple[DensityGrid, dict]:
    """Read a density CSV (with sidecar) back into a grid of normalized
    values."""
    csv_path = Path(csv_path)
    meta_path = Path(meta_path) if meta_path else csv_path.with_suffix(".json")
    meta = json.loads(meta_path.read_text())
    grid = DensityGrid.empty(
        re_range=tuple(meta["re_range"]),
        im_range=tuple(meta["im_range"]),
        resolution=meta["resolution"],
        sigma=meta["sigma"],
    )
    vals = np.zeros(grid.shape)
    with csv_path.open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for re_s, im_s, dens_s in reader:
            i = int(round((float(re_s) - grid.re_min) / grid.resolution))
            j = int(round((float(im_s) - grid.im_min) / grid.resolution))
            vals[j, i] = float(dens_s)
    grid = replace(
        grid,
        values=vals,
        sample_count=int(meta.get("sample_count", 0)),
        clipped=int(meta.get("clipped", 0)),
    )
    return grid, meta
