"""Spectral estimators for snapshot data.

Four fits of a linear one-step operator are provided: a plain SVD-projected
least-squares fit, a forward-backward averaged fit, a total-least-squares
fit, and a variable-projection fit that optimizes eigenvalues directly.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .observables import MonomialBasis, lift, multi_indices
from .systems import TrajectorySet

SVD_RTOL = 1e-10
PAIR_TOL = 1e-9
_COND_LIMIT = 1e14


class EmptyData(ValueError):
    """No usable snapshot pairs."""


class RankDeficient(ValueError):
    """Data cannot support the requested (or any) rank."""


class RankExceedsData(ValueError):
    """More modes requested than a single trajectory can resolve."""


class SingularBackwardOperator(ValueError):
    """The reverse-time operator is not invertible at this rank."""


class SquareRootBranchFailure(ValueError):
    """The averaged operator has an eigenvalue on the closed negative real
    axis, so no principal square root exists."""


class IllConditionedBlock(ValueError):
    """The leading block of the stacked subspace basis is numerically
    singular."""


@dataclass(frozen=True)
class SnapshotPairs:
    """Paired snapshot matrices: column k of ``Xp`` is the within-trajectory
    successor of column k of ``X``."""

    X: np.ndarray
    Xp: np.ndarray
    traj_lengths: tuple[int, ...] = ()
    source: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=float)
        Xp = np.asarray(self.Xp, dtype=float)
        if X.shape != Xp.shape or X.ndim != 2:
            raise ValueError(f"mismatched pair shapes {X.shape} vs {Xp.shape}")
        if self.traj_lengths:
            expected = sum(L - 1 for L in self.traj_lengths)
            if expected != X.shape[1]:
                raise ValueError(
                    f"{X.shape[1]} pairs inconsistent with trajectory lengths "
                    f"{self.traj_lengths}"
                )
        X.setflags(write=False)
        Xp.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Xp", Xp)

    @property
    def dim(self) -> int:
        return self.X.shape[0]

    @property
    def n_pairs(self) -> int:
        return self.X.shape[1]


def _resolve_lifting(lifting, obs_dim: int):
    if lifting is None:
        return None
    if isinstance(lifting, MonomialBasis):
        return lifting.multi_indices
    if isinstance(lifting, int):
        return multi_indices(obs_dim, lifting)
    return tuple(lifting)


def make_pairs(data: TrajectorySet, lifting=None) -> SnapshotPairs:
    """Arrange trajectories into snapshot-pair matrices.

    ``lifting`` may be a :class:`MonomialBasis`, an integer order, or a bare
    multi-index tuple; when given, every snapshot is replaced by its monomial
    features before pairing.  Pairs never cross trajectory boundaries.
    """
    if data.n_traj < 1:
        raise EmptyData("no trajectories")
    if data.length < 2:
        raise EmptyData("trajectories must contain at least two snapshots")
    indices = _resolve_lifting(lifting, data.obs_dim)
    xs = []
    xps = []
    for n in range(data.n_traj):
        Y = data.observations[n]
        if indices is not None:
            Y = lift(indices, Y)
        xs.append(Y[:-1].T)
        xps.append(Y[1:].T)
    X = np.hstack(xs)
    Xp = np.hstack(xps)
    return SnapshotPairs(
        X=X,
        Xp=Xp,
        traj_lengths=tuple([data.length] * data.n_traj),
        source=dict(data.provenance),
    )


@dataclass(frozen=True)
class DmdModel:
    """Eigenvalues, modes, and amplitudes of a fitted linear evolution."""

    eigenvalues: tuple[complex, ...]
    modes: np.ndarray
    amplitudes: np.ndarray
    rank: int
    algorithm: str
    kappa_est: float
    conjugate_closed: bool
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        modes = np.asarray(self.modes, dtype=complex)
        amps = np.asarray(self.amplitudes, dtype=complex)
        modes.setflags(write=False)
        amps.setflags(write=False)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(
            self, "eigenvalues", tuple(complex(v) for v in self.eigenvalues)
        )

    @property
    def dim(self) -> int:
        return self.modes.shape[0]


def _condition_number(M: np.ndarray) -> float:
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[-1] == 0.0:
        return math.inf
    return float(sv[0] / sv[-1])


def _truncation_rank(s: np.ndarray, rank: Optional[int]) -> int:
    if s.size == 0 or s[0] <= 0.0:
        raise RankDeficient("data matrix is identically zero")
    positive = int(np.count_nonzero(s > 0.0))
    if rank is None:
        r = int(np.count_nonzero(s > SVD_RTOL * s[0]))
        if r == 0:
            raise RankDeficient("no singular value passes the relative threshold")
        return r
    r = int(rank)
    if r < 1:
        raise ValueError(f"rank must be positive, got {rank}")
    if r > positive:
        raise RankDeficient(f"requested rank {r} exceeds data rank {positive}")
    return r


def _sort_spectral(evals: np.ndarray, *columns: np.ndarray):
    # Canonical ordering keeps serialized output stable: descending modulus,
    # then descending imaginary and real parts.
    order = sorted(
        range(len(evals)),
        key=lambda i: (-abs(evals[i]), -evals[i].imag, -evals[i].real),
    )
    out = [np.asarray([evals[i] for i in order])]
    for col in columns:
        out.append(col[:, order])
    return out


def conjugate_closed(eigenvalues, tol: float = PAIR_TOL) -> bool:
    """Whether a spectrum pairs up under conjugation within ``tol``."""
    pending = [complex(z) for z in eigenvalues if abs(z.imag) > tol * max(1.0, abs(z))]
    while pending:
        z = pending.pop()
        best = None
        best_d = math.inf
        for i, w in enumerate(pending):
            d = abs(z.conjugate() - w)
            if d < best_d:
                best, best_d = i, d
        if best is None or best_d > tol * max(1.0, abs(z)):
            return False
        pending.pop(best)
    return True


def _first_snapshot_amplitudes(Phi: np.ndarray, x1: np.ndarray) -> np.ndarray:
    b, *_ = np.linalg.lstsq(Phi, x1.astype(complex), rcond=None)
    return b


def _all_snapshot_amplitudes(
    Phi: np.ndarray, evals: np.ndarray, X: np.ndarray
) -> np.ndarray:
    # min_b || X - Phi diag(b) T ||_F for a single trajectory, with
    # T[j, k] = evals[j]**k over the columns of X.
    m = X.shape[1]
    T = evals[:, None] ** np.arange(m)[None, :]
    G = np.empty((X.size, len(evals)), dtype=complex)
    for j in range(len(evals)):
        G[:, j] = np.outer(Phi[:, j], T[j]).ravel()
    b, *_ = np.linalg.lstsq(G, X.astype(complex).ravel(), rcond=None)
    return b


def _finish(
    algorithm: str,
    evals: np.ndarray,
    modes: np.ndarray,
    pairs: SnapshotPairs,
    rank: int,
    kappa_est: float,
    amplitudes: str,
    diagnostics: Optional[dict] = None,
) -> DmdModel:
    evals, modes = _sort_spectral(evals.astype(complex), modes.astype(complex))
    if amplitudes == "lstsq":
        if len(pairs.traj_lengths) != 1:
            raise ValueError(
                "all-snapshot amplitude refinement requires a single trajectory"
            )
        b = _all_snapshot_amplitudes(modes, evals, pairs.X)
    else:
        b = _first_snapshot_amplitudes(modes, pairs.X[:, 0])
    return DmdModel(
        eigenvalues=tuple(evals),
        modes=modes,
        amplitudes=b,
        rank=rank,
        algorithm=algorithm,
        kappa_est=kappa_est,
        conjugate_closed=conjugate_closed(evals),
        diagnostics=diagnostics or {},
    )


def exact_dmd(
    pairs: SnapshotPairs, rank: Optional[int] = None, amplitudes: str = "first"
) -> DmdModel:
    """SVD-projected least-squares fit of the one-step operator.

    The SVD of X is truncated at ``rank`` (default: all singular values above
    1e-10 relative).  Modes are mapped back through the shifted data, so each
    column is an exact eigenvector of X' X^+.  Amplitudes solve
    ``modes @ b = first snapshot`` in the least-squares sense by default;
    ``amplitudes="lstsq"`` refines them against every snapshot of a single
    trajectory.
    """
    if pairs.n_pairs < 1:
        raise EmptyData("need at least one snapshot pair")
    U, s, Vh = np.linalg.svd(pairs.X, full_matrices=False)
    r = _truncation_rank(s, rank)
    Ur = U[:, :r]
    Vr = Vh[:r].conj().T
    core = (pairs.Xp @ Vr) / s[:r]
    Atilde = Ur.conj().T @ core
    evals, W = np.linalg.eig(Atilde)
    Phi = core @ W
    return _finish(
        "exact", evals, Phi, pairs, r, _condition_number(Atilde), amplitudes
    )


def _projected_operators(pairs: SnapshotPairs, rank: Optional[int]):
    # Shared projection basis from the union of snapshots, so forward and
    # backward operators act on the same coordinates.
    C = np.hstack([pairs.X, pairs.Xp])
    U, s, _ = np.linalg.svd(C, full_matrices=False)
    r = _truncation_rank(s, rank)
    Ur = U[:, :r]
    Xt = Ur.T @ pairs.X
    Xpt = Ur.T @ pairs.Xp
    return Ur, Xt, Xpt, r


def _lstsq_operator(X: np.ndarray, Xp: np.ndarray) -> np.ndarray:
    # Solves min_F ||F X - Xp||_F, i.e. F = Xp X^+.
    Ft, *_ = np.linalg.lstsq(X.T, Xp.T, rcond=None)
    return Ft.T


def fb_dmd(pairs: SnapshotPairs, rank: Optional[int] = None) -> DmdModel:
    """Forward-backward averaged fit.

    The backward operator is fitted with the roles of X and X' swapped; the
    combined operator is the principal matrix square root of
    ``forward @ inv(backward)``.  If that product has an eigenvalue on the
    closed negative real axis the principal branch does not exist and
    :class:`SquareRootBranchFailure` is raised for the caller to discard the
    trial.
    """
    if pairs.n_pairs < 1:
        raise EmptyData("need at least one snapshot pair")
    Ur, Xt, Xpt, r = _projected_operators(pairs, rank)
    forward = _lstsq_operator(Xt, Xpt)
    backward = _lstsq_operator(Xpt, Xt)
    sv = np.linalg.svd(backward, compute_uv=False)
    if sv[0] == 0.0 or sv[0] / max(sv[-1], np.finfo(float).tiny) > _COND_LIMIT:
        raise SingularBackwardOperator(
            "backward operator is singular to working precision"
        )
    product = forward @ np.linalg.inv(backward)
    pe = np.linalg.eigvals(product)
    scale = max(float(np.max(np.abs(pe))), np.finfo(float).tiny)
    for mu in pe:
        if abs(mu.imag) <= 1e-12 * scale and mu.real <= 1e-12 * scale:
            raise SquareRootBranchFailure(
                f"product eigenvalue {mu:.6g} lies on the closed negative real axis"
            )
    combined = scipy.linalg.sqrtm(product)
    evals, W = np.linalg.eig(combined)
    Phi = Ur @ W
    return _finish(
        "fb", evals, Phi, pairs, r, _condition_number(combined), "first"
    )


def tls_dmd(pairs: SnapshotPairs, rank: Optional[int] = None) -> DmdModel:
    """Total-least-squares fit.

    Snapshots are first projected onto the leading-r subspace of the combined
    snapshot collection (standard debiasing practice), the projected X and X'
    are stacked, and the operator is read off the leading 2r-by-r block
    structure of the stacked matrix's left singular vectors as
    ``lower_block @ pinv(upper_block)``.
    """
    if pairs.n_pairs < 1:
        raise EmptyData("need at least one snapshot pair")
    Ur, Xt, Xpt, r = _projected_operators(pairs, rank)
    if pairs.n_pairs < r:
        raise RankDeficient(
            f"{pairs.n_pairs} pairs cannot determine a rank-{r} operator"
        )
    Z = np.vstack([Xt, Xpt])
    Uz, _, _ = np.linalg.svd(Z, full_matrices=False)
    if Uz.shape[1] < r:
        raise RankDeficient("stacked snapshot matrix has insufficient rank")
    lead = Uz[:, :r]
    upper = lead[:r]
    lower = lead[r:]
    su = np.linalg.svd(upper, compute_uv=False)
    if su[0] == 0.0 or su[0] / max(su[-1], np.finfo(float).tiny) > _COND_LIMIT:
        raise IllConditionedBlock(
            "upper block of the stacked basis is singular to working precision"
        )
    operator = lower @ np.linalg.pinv(upper)
    evals, W = np.linalg.eig(operator)
    Phi = Ur @ W
    return _finish(
        "tls", evals, Phi, pairs, r, _condition_number(operator), "first"
    )


def _vandermonde(evals: np.ndarray, m: int) -> np.ndarray:
    return evals[:, None] ** np.arange(m)[None, :]


def _projected_residual(u: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, float]:
    r = u.size // 2
    evals = u[:r] + 1j * u[r:]
    T = _vandermonde(evals, Y.shape[1])
    coefH, *_ = np.linalg.lstsq(T.conj().T, Y.conj().T.astype(complex), rcond=None)
    R = Y - coefH.conj().T @ T
    res = np.concatenate([R.real.ravel(), R.imag.ravel()])
    return res, float(res @ res)


def opt_dmd(
    data: TrajectorySet,
    rank: Optional[int] = None,
    init: Optional[Sequence[complex]] = None,
    lifting=None,
    max_iter: int = 200,
    init_damping: float = 1e-2,
    damping_factor: float = 2.0,
    rtol: float = 1e-8,
    gtol: float = 1e-8,
) -> DmdModel:
    """Variable-projection fit over eigenvalues and combined mode amplitudes.

    Only a single trajectory is supported.  For fixed eigenvalues the
    combined modes solve a linear least-squares problem against the discrete
    Vandermonde ``T[j, k] = lambda_j**k``; the eigenvalues are then updated by
    a Levenberg-Marquardt loop on the projected residual (damping starts at
    ``init_damping`` and moves by ``damping_factor``), initialized from the
    plain fit unless ``init`` is given.  Non-convergence is reported through
    ``diagnostics["converged"]``, not raised.
    """
    if data.n_traj != 1:
        raise ValueError(
            f"variable-projection fit takes exactly one trajectory, got {data.n_traj}"
        )
    indices = _resolve_lifting(lifting, data.obs_dim)
    Y = data.observations[0]
    if indices is not None:
        Y = lift(indices, Y)
    Ymat = Y.T  # (dim, length)
    m = Ymat.shape[1]

    if rank is not None and rank > m:
        raise RankExceedsData(
            f"rank {rank} exceeds the {m} snapshots of the trajectory"
        )
    s = np.linalg.svd(Ymat, compute_uv=False)
    r = _truncation_rank(s, rank)

    if init is not None:
        evals0 = np.asarray([complex(v) for v in init])
        if evals0.size != r:
            raise ValueError(f"init supplies {evals0.size} eigenvalues, rank is {r}")
    else:
        seed_pairs = SnapshotPairs(X=Ymat[:, :-1], Xp=Ymat[:, 1:])
        evals0 = np.asarray(exact_dmd(seed_pairs, rank=r).eigenvalues)

    u = np.concatenate([evals0.real, evals0.imag])
    res, f = _projected_residual(u, Ymat)
    history = [f]
    mu = init_damping
    iterations = 0
    converged = False
    reason = "max_iter"

    def jacobian(u0: np.ndarray, res0: np.ndarray) -> np.ndarray:
        J = np.empty((res0.size, u0.size))
        for j in range(u0.size):
            h = 1e-7 * (1.0 + abs(u0[j]))
            up = u0.copy()
            up[j] += h
            rj, _ = _projected_residual(up, Ymat)
            J[:, j] = (rj - res0) / h
        return J

    for _ in range(max_iter):
        J = jacobian(u, res)
        g = J.T @ res
        if np.max(np.abs(g)) < gtol:
            converged = True
            reason = "gradient"
            break
        JtJ = J.T @ J
        accepted = False
        while mu < 1e12:
            try:
                step = np.linalg.solve(JtJ + mu * np.eye(u.size), -g)
            except np.linalg.LinAlgError:
                mu *= damping_factor
                continue
            u_try = u + step
            res_try, f_try = _projected_residual(u_try, Ymat)
            if f_try < f:
                accepted = True
                break
            mu *= damping_factor
        if not accepted:
            reason = "stalled"
            break
        drop = f - f_try
        u, res, f = u_try, res_try, f_try
        history.append(f)
        iterations += 1
        mu = max(mu / damping_factor, 1e-14)
        if drop <= rtol * max(f, np.finfo(float).tiny):
            converged = True
            reason = "ftol"
            break

    evals = u[:r] + 1j * u[r:]
    T = _vandermonde(evals, m)
    coefH, *_ = np.linalg.lstsq(T.conj().T, Ymat.conj().T.astype(complex), rcond=None)
    Phi_b = coefH.conj().T
    scales = np.linalg.norm(Phi_b, axis=0)
    b = scales.astype(complex)
    Phi = Phi_b / np.where(scales == 0.0, 1.0, scales)

    evals_sorted, Phi, b2d = _sort_spectral(evals, Phi, b[None, :])
    b = b2d[0]
    evolution = Phi @ np.diag(evals_sorted) @ np.linalg.pinv(Phi)
    sv = np.linalg.svd(evolution, compute_uv=False)
    nonzero = sv[sv > max(sv[0], np.finfo(float).tiny) * 1e-14]
    kappa_est = (
        float(nonzero[0] / nonzero[min(r, nonzero.size) - 1])
        if nonzero.size
        else math.inf
    )
    return DmdModel(
        eigenvalues=tuple(evals_sorted),
        modes=Phi,
        amplitudes=b,
        rank=r,
        algorithm="opt",
        kappa_est=kappa_est,
        conjugate_closed=conjugate_closed(evals_sorted),
        diagnostics={
            "converged": converged,
            "reason": reason,
            "iterations": iterations,
            "objective_history": history,
        },
    )


def reconstruct(model: DmdModel, steps: int) -> np.ndarray:
    """Mode expansion of the fitted evolution: column k is
    ``modes @ diag(eigenvalues**k) @ amplitudes`` for k = 0..steps-1.

    Returns the real part; a warning reports any imaginary residue above
    1e-8 relative.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    lam = np.asarray(model.eigenvalues)
    powers = lam[:, None] ** np.arange(steps)[None, :]
    Xc = model.modes @ (powers * model.amplitudes[:, None])
    scale = max(1.0, float(np.linalg.norm(Xc.real)))
    residue = float(np.linalg.norm(Xc.imag))
    if residue > 1e-8 * scale:
        warnings.warn(
            f"reconstruction carries imaginary residue {residue:.3e}", stacklevel=2
        )
    return Xc.real


def model_to_dict(model: DmdModel) -> dict:
    def c2p(z: complex) -> list[float]:
        return [z.real, z.imag]

    diagnostics = {
        k: v for k, v in model.diagnostics.items() if k != "objective_history"
    }
    return {
        "eigenvalues": [c2p(z) for z in model.eigenvalues],
        "modes": [[c2p(z) for z in model.modes[:, j]] for j in range(model.rank)],
        "amplitudes": [c2p(z) for z in model.amplitudes],
        "rank": model.rank,
        "algorithm": model.algorithm,
        "kappa_est": model.kappa_est,
        "conjugate_closed": model.conjugate_closed,
        "diagnostics": diagnostics,
    }


def model_from_dict(payload: dict) -> DmdModel:
    evals = tuple(complex(re, im) for re, im in payload["eigenvalues"])
    modes = np.array(
        [[complex(re, im) for re, im in col] for col in payload["modes"]]
    ).T
    amps = np.array([complex(re, im) for re, im in payload["amplitudes"]])
    return DmdModel(
        eigenvalues=evals,
        modes=modes,
        amplitudes=amps,
        rank=int(payload["rank"]),
        algorithm=payload["algorithm"],
        kappa_est=float(payload["kappa_est"]),
        conjugate_closed=bool(payload["conjugate_closed"]),
        diagnostics=dict(payload.get("diagnostics", {})),
    )


def save_model(model: DmdModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2, sort_keys=True))


def load_model(path) -> DmdModel:
    return model_from_dict(json.loads(Path(path).read_text()))
