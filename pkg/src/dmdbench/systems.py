"""Latent linear systems: parameterized construction and noisy simulation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg

from .observables import DimensionMismatch, ObservableMap, observe

COS_THETA_FLOOR = 1e-12


class SingularParameterization(ValueError):
    """The eigenvector geometry (theta, s) is not invertible."""


@dataclass(frozen=True)
class SystemSpec:
    """Latent dynamics parameters: spectrum plus eigenvector geometry.

    The spectrum is given as conjugate pairs ``(alpha, beta)`` standing for
    ``alpha +/- i*beta`` together with real eigenvalues.  For one pair plus
    one real eigenvalue (dim 3) the geometry knobs select the eigenvector
    arrangement: ``theta``/``phi`` tilt the real eigendirection out of the
    plane of the spiral, ``s`` rescales the spiral's major vs minor axis.
    Any other spectrum shape requires the trivial geometry and is realized
    block-diagonally.
    """

    pairs: tuple[tuple[float, float], ...] = ()
    reals: tuple[float, ...] = ()
    theta: float = 0.0
    phi: float = 0.0
    s: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "pairs",
            tuple((float(a), float(b)) for a, b in self.pairs),
        )
        object.__setattr__(self, "reals", tuple(float(r) for r in self.reals))
        if self.dim < 1:
            raise ValueError("spectrum must contain at least one eigenvalue")

    @property
    def dim(self) -> int:
        return 2 * len(self.pairs) + len(self.reals)

    @property
    def spectrum(self) -> tuple[complex, ...]:
        vals: list[complex] = []
        for a, b in self.pairs:
            vals.append(complex(a, b))
            vals.append(complex(a, -b))
        vals.extend(complex(r, 0.0) for r in self.reals)
        return tuple(vals)

    def to_config(self) -> dict:
        return {
            "pairs": [list(p) for p in self.pairs],
            "reals": list(self.reals),
            "theta": self.theta,
            "phi": self.phi,
            "s": self.s,
        }


@dataclass(frozen=True)
class LinearSystem:
    """A realized system matrix with its spectrum and conditioning."""

    A: np.ndarray
    spectrum: tuple[complex, ...]
    kappa: float
    eigenvector_condition: float

    def __post_init__(self) -> None:
        A = np.asarray(self.A, dtype=float)
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @property
    def dim(self) -> int:
        return self.A.shape[0]


def _condition_number(M: np.ndarray) -> float:
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[-1] == 0.0:
        return math.inf
    return float(sv[0] / sv[-1])


def build_system(spec: SystemSpec) -> LinearSystem:
    """Realize the system matrix for a :class:`SystemSpec`.

    For one conjugate pair plus one real eigenvalue the matrix is
    Q S L S^-1 Q^-1 with Q the (theta, phi)-tilted eigenvector frame, S the
    axis rescaling and L the block-diagonal spectrum.  ``kappa`` is the
    ratio of the largest to smallest singular value of the result;
    ``eigenvector_condition`` is the 2-norm condition number of the
    eigenvector matrix (1 exactly when the matrix is normal).
    """
    if spec.s <= 0.0:
        raise SingularParameterization(f"axis ratio s must be positive, got {spec.s}")
    c = math.cos(spec.theta)
    if abs(c) <= COS_THETA_FLOOR:
        raise SingularParameterization(
            f"|cos(theta)| = {abs(c):.3e} leaves the eigenvector frame singular"
        )

    if len(spec.pairs) == 1 and len(spec.reals) == 1:
        a = math.sin(spec.theta) * math.cos(spec.phi)
        b = math.sin(spec.theta) * math.sin(spec.phi)
        Q = np.array([[1.0, 0.0, a], [0.0, 1.0, b], [0.0, 0.0, c]])
        Qinv = np.array([[1.0, 0.0, -a / c], [0.0, 1.0, -b / c], [0.0, 0.0, 1.0 / c]])
        S = np.diag([spec.s, 1.0, 1.0])
        Sinv = np.diag([1.0 / spec.s, 1.0, 1.0])
        al, be = spec.pairs[0]
        lam = spec.reals[0]
        L = np.array([[al, be, 0.0], [-be, al, 0.0], [0.0, 0.0, lam]])
        A = Q @ S @ L @ Sinv @ Qinv
    else:
        if (spec.theta, spec.phi, spec.s) != (0.0, 0.0, 1.0):
            raise ValueError(
                "geometry parameters are only defined for one conjugate pair "
                "plus one real eigenvalue; use theta=phi=0, s=1 otherwise"
            )
        blocks = [np.array([[a, b], [-b, a]]) for a, b in spec.pairs]
        blocks.extend(np.array([[r]]) for r in spec.reals)
        A = scipy.linalg.block_diag(*blocks)

    evals, V = np.linalg.eig(A)
    return LinearSystem(
        A=A,
        spectrum=spec.spectrum,
        kappa=_condition_number(A),
        eigenvector_condition=_condition_number(V),
    )


@dataclass(frozen=True)
class NoiseSpec:
    """Gaussian disturbance levels plus the stream seed."""

    system_sigma: float = 0.0
    measurement_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.system_sigma < 0.0 or self.measurement_sigma < 0.0:
            raise ValueError("noise standard deviations must be nonnegative")

    def to_config(self) -> dict:
        return {
            "system_sigma": self.system_sigma,
            "measurement_sigma": self.measurement_sigma,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class TrajectorySet:
    """Simulated observations: ``observations[n, k]`` is trajectory n at step k."""

    observations: np.ndarray
    latent: Optional[np.ndarray]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        obs = np.asarray(self.observations, dtype=float)
        if obs.ndim != 3:
            raise ValueError("observations must have shape (n_traj, length, obs_dim)")
        obs.setflags(write=False)
        object.__setattr__(self, "observations", obs)
        if self.latent is not None:
            lat = np.asarray(self.latent, dtype=float)
            lat.setflags(write=False)
            object.__setattr__(self, "latent", lat)

    @property
    def n_traj(self) -> int:
        return self.observations.shape[0]

    @property
    def length(self) -> int:
        return self.observations.shape[1]

    @property
    def obs_dim(self) -> int:
        return self.observations.shape[2]

    def take(self, index: int) -> "TrajectorySet":
        """A single-trajectory subset (keeps provenance)."""
        lat = None if self.latent is None else self.latent[index : index + 1]
        return TrajectorySet(
            self.observations[index : index + 1], lat, dict(self.provenance)
        )


def _trajectory_rng(seed: int, traj_index: int) -> np.random.Generator:
    # Philox is counter-based; per-trajectory spawn keys make serial and
    # parallel simulation agree bit for bit.
    ss = np.random.SeedSequence(seed, spawn_key=(traj_index,))
    return np.random.Generator(np.random.Philox(ss))


def simulate(
    system: LinearSystem,
    omap: ObservableMap,
    noise: NoiseSpec,
    n_traj: int,
    length: int,
) -> TrajectorySet:
    """Simulate noisy observed trajectories.

    Initial latent states are drawn uniformly on the unit sphere (normalized
    isotropic Gaussians).  The latent recurrence is ``x[k+1] = A x[k] + w[k]``
    with isotropic Gaussian system noise added after the linear map, and each
    observation is ``P(x[k]) + v[k]`` with isotropic Gaussian measurement
    noise.  Identical ``(system, omap, noise, n_traj, length)`` inputs
    reproduce bit-identical output.
    """
    if n_traj < 1:
        raise ValueError(f"n_traj must be >= 1, got {n_traj}")
    if length < 2:
        raise ValueError(f"length must be >= 2, got {length}")
    d = system.dim
    if omap.in_dim != d:
        raise DimensionMismatch(
            f"observable expects dimension {omap.in_dim}, system has {d}"
        )

    latent = np.empty((n_traj, length, d))
    obs = np.empty((n_traj, length, omap.out_dim))
    for n in range(n_traj):
        # Fixed draw order per trajectory stream: initial state, then the
        # system-noise block, then the measurement-noise block.
        rng = _trajectory_rng(noise.seed, n)
        x = rng.standard_normal(d)
        nrm = np.linalg.norm(x)
        while nrm == 0.0:  # pragma: no cover - probability zero
            x = rng.standard_normal(d)
            nrm = np.linalg.norm(x)
        x = x / nrm
        w = (
            noise.system_sigma * rng.standard_normal((length - 1, d))
            if noise.system_sigma > 0.0
            else None
        )
        latent[n, 0] = x
        for k in range(1, length):
            x = system.A @ x
            if w is not None:
                x = x + w[k - 1]
            latent[n, k] = x
        y = observe(omap, latent[n])
        if noise.measurement_sigma > 0.0:
            y = y + noise.measurement_sigma * rng.standard_normal(y.shape)
        obs[n] = y

    provenance = {
        "n_traj": n_traj,
        "length": length,
        "obs_dim": omap.out_dim,
        "observable": omap.tag,
        "noise": noise.to_config(),
        "spectrum": [[z.real, z.imag] for z in system.spectrum],
        "kappa": system.kappa,
    }
    return TrajectorySet(obs, latent, provenance)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_trajectory_csv(
    data: TrajectorySet, csv_path, sidecar_path=None
) -> None:
    """Write observations as CSV rows (trial, step, coordinates) plus a JSON
    sidecar holding the provenance."""
    csv_path = Path(csv_path)
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["trial", "step"] + [f"y{i}" for i in range(data.obs_dim)]
        )
        for n in range(data.n_traj):
            for k in range(data.length):
                writer.writerow(
                    [n, k] + [_fmt(v) for v in data.observations[n, k]]
                )
    sidecar = Path(sidecar_path) if sidecar_path else csv_path.with_suffix(".json")
    meta = dict(data.provenance)
    meta.update(
        {"n_traj": data.n_traj, "length": data.length, "obs_dim": data.obs_dim}
    )
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True))


def read_trajectory_csv(csv_path, sidecar_path=None) -> TrajectorySet:
    """Read a trajectory CSV written by :func:`write_trajectory_csv`."""
    csv_path = Path(csv_path)
    rows: dict[int, list[tuple[int, list[float]]]] = {}
    with csv_path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        q = len(header) - 2
        for row in reader:
            trial, step = int(row[0]), int(row[1])
            rows.setdefault(trial, []).append((step, [float(v) for v in row[2 : 2 + q]]))
    if not rows:
        raise ValueError(f"{csv_path}: no trajectory rows")
    trials = sorted(rows)
    lengths = {len(rows[t]) for t in trials}
    if len(lengths) != 1:
        raise ValueError(f"{csv_path}: trajectories have unequal lengths")
    length = lengths.pop()
    obs = np.empty((len(trials), length, q))
    for i, t in enumerate(trials):
        for step, vals in sorted(rows[t]):
            obs[i, step] = vals
    provenance = {}
    sidecar = Path(sidecar_path) if sidecar_path else csv_path.with_suffix(".json")
    if sidecar.exists():
        provenance = json.loads(sidecar.read_text())
    return TrajectorySet(obs, None, provenance)
