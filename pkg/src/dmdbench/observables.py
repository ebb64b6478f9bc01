"""Multinomial observables and monomial lifting of observation vectors."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np

Term = tuple[float, tuple[int, ...]]


class DimensionMismatch(ValueError):
    """Input vector dimension does not match the map."""


def _expand(alpha: tuple[int, ...]) -> tuple[int, ...]:
    """Coordinate indices of a monomial repeated per exponent: (2,0,1) -> (0,0,2)."""
    out: list[int] = []
    for i, k in enumerate(alpha):
        out.extend([i] * k)
    return tuple(out)


def _monomial(x: np.ndarray, alpha: tuple[int, ...]) -> np.ndarray:
    # Repeated multiplication, left to right, so scalar re-evaluation of the
    # same term is bit-identical.
    idx = _expand(alpha)
    acc = x[..., idx[0]]
    for i in idx[1:]:
        acc = acc * x[..., i]
    return acc


def multi_indices(dim: int, order: int) -> tuple[tuple[int, ...], ...]:
    """All exponent vectors alpha with 1 <= |alpha|_1 <= order.

    Ordering is graded lexicographic and frozen: ascending total degree,
    descending lexicographic within each degree, so for dim=3, order=2 the
    ladder starts (1,0,0), (0,1,0), (0,0,1), (2,0,0), (1,1,0), ...
    """
    if dim < 1:
        raise ValueError(f"dim must be positive, got {dim}")
    if order < 1:
        raise ValueError(f"order must be positive, got {order}")
    alphas = [
        a
        for a in itertools.product(range(order + 1), repeat=dim)
        if 1 <= sum(a) <= order
    ]
    alphas.sort(key=lambda a: (sum(a), tuple(-k for k in a)))
    return tuple(alphas)


@dataclass(frozen=True)
class ObservableMap:
    """Polynomial measurement map: output j is sum_k coeff_jk * x**alpha_jk.

    Constant terms are not allowed: every multi-index has 1-norm between 1
    and ``order``.
    """

    terms: tuple[tuple[Term, ...], ...]
    in_dim: int
    order: int
    tag: str = "custom"

    def __post_init__(self) -> None:
        frozen = tuple(
            tuple((float(c), tuple(int(k) for k in a)) for c, a in row)
            for row in self.terms
        )
        object.__setattr__(self, "terms", frozen)
        if self.in_dim < 1:
            raise ValueError(f"in_dim must be positive, got {self.in_dim}")
        for j, row in enumerate(frozen):
            for coeff, alpha in row:
                if len(alpha) != self.in_dim:
                    raise ValueError(
                        f"output {j}: multi-index {alpha} has length "
                        f"{len(alpha)}, expected {self.in_dim}"
                    )
                if any(k < 0 for k in alpha):
                    raise ValueError(f"output {j}: negative exponent in {alpha}")
                deg = sum(alpha)
                if deg < 1 or deg > self.order:
                    raise ValueError(
                        f"output {j}: term degree {deg} outside [1, {self.order}]"
                    )
                if not np.isfinite(coeff):
                    raise ValueError(f"output {j}: non-finite coefficient")

    @property
    def out_dim(self) -> int:
        return len(self.terms)


def observe(omap: ObservableMap, x: np.ndarray) -> np.ndarray:
    """Evaluate the measurement map; the last axis holds state coordinates."""
    x = np.asarray(x)
    if x.ndim < 1 or x.shape[-1] != omap.in_dim:
        raise DimensionMismatch(
            f"expected state dimension {omap.in_dim}, got shape {x.shape}"
        )
    dtype = np.result_type(x.dtype, np.float64)
    y = np.zeros(x.shape[:-1] + (omap.out_dim,), dtype=dtype)
    for j, row in enumerate(omap.terms):
        for coeff, alpha in row:
            y[..., j] += coeff * _monomial(x, alpha)
    return y


def linear_observable(dim: int) -> ObservableMap:
    """Identity observation y = x."""
    rows = []
    for i in range(dim):
        alpha = tuple(1 if j == i else 0 for j in range(dim))
        rows.append(((1.0, alpha),))
    return ObservableMap(tuple(rows), in_dim=dim, order=1, tag="linear")


def coupled_quadratic_observable(coupling: float = 0.1) -> ObservableMap:
    """Mildly nonlinear 3D map: each coordinate plus ``coupling`` times its
    own square plus the product of the other two coordinates.

    With the default coupling the map is strictly monotone per coordinate on
    the unit ball, so observations identify states.
    """
    rows = []
    for i in range(3):
        j, k = (m for m in range(3) if m != i)
        own = [0, 0, 0]
        own[i] = 1
        square = [0, 0, 0]
        square[i] = 2
        cross = [0, 0, 0]
        cross[j] = 1
        cross[k] = 1
        rows.append(
            ((1.0, tuple(own)), (coupling, tuple(square)), (coupling, tuple(cross)))
        )
    return ObservableMap(tuple(rows), in_dim=3, order=2, tag="coupled-quadratic")


def monomial_observable(dim: int, order: int) -> ObservableMap:
    """Observe every monomial of the state up to the given order."""
    rows = tuple(((1.0, alpha),) for alpha in multi_indices(dim, order))
    return ObservableMap(rows, in_dim=dim, order=order, tag=f"monomial-order-{order}")


@dataclass(frozen=True)
class MonomialBasis:
    """Monomial feature ladder over a base spectrum.

    ``lattice`` holds the additive combinations sum_i alpha_i*lambda_i of the
    base values (the generator form); ``multipliers`` holds the per-step
    growth factors prod_i lambda_i**alpha_i that the same monomials acquire
    under one application of a diagonal map with the base values on its
    diagonal.  For step-indexed data the identifiable lifted spectrum is
    ``multipliers``.
    """

    order: int
    in_dim: int
    multi_indices: tuple[tuple[int, ...], ...]
    spectrum: tuple[complex, ...]
    lattice: tuple[complex, ...]
    multipliers: tuple[complex, ...]
    resonant: bool

    @property
    def size(self) -> int:
        return len(self.multi_indices)


def _has_collisions(values: list[complex], rtol: float = 1e-12) -> bool:
    scale = max(1.0, max(abs(v) for v in values))
    for i in range(len(values)):
        for j in range(i + 1, len(values)):
            if abs(values[i] - values[j]) <= rtol * scale:
                return True
    return False


def build_basis(spectrum, order: int) -> MonomialBasis:
    """Enumerate the monomial ladder of a spectrum up to ``order``.

    Repeated base eigenvalues (or coincidences among the lifted values) are
    accepted but flagged as resonant, since colliding lifted eigenvalues are
    not separately identifiable.
    """
    spec = tuple(complex(v) for v in spectrum)
    if not spec:
        raise ValueError("spectrum must be nonempty")
    alphas = multi_indices(len(spec), order)
    lattice: list[complex] = []
    multipliers: list[complex] = []
    for alpha in alphas:
        total = 0j
        prod = complex(1.0)
        for lam, k in zip(spec, alpha):
            for _ in range(k):
                total += lam
                prod *= lam
        lattice.append(total)
        multipliers.append(prod)
    resonant = _has_collisions(multipliers)
    if resonant:
        warnings.warn(
            "lifted spectrum contains repeated values (resonant base spectrum); "
            "colliding modes are not separately identifiable",
            stacklevel=2,
        )
    return MonomialBasis(
        order=order,
        in_dim=len(spec),
        multi_indices=alphas,
        spectrum=spec,
        lattice=tuple(lattice),
        multipliers=tuple(multipliers),
        resonant=resonant,
    )


def lift(basis, y: np.ndarray) -> np.ndarray:
    """Monomial features of y; component i is y**multi_indices[i].

    ``basis`` may be a :class:`MonomialBasis` or a bare multi-index tuple.
    """
    indices = basis.multi_indices if isinstance(basis, MonomialBasis) else tuple(basis)
    in_dim = len(indices[0])
    y = np.asarray(y)
    if y.ndim < 1 or y.shape[-1] != in_dim:
        raise DimensionMismatch(
            f"expected vector dimension {in_dim}, got shape {y.shape}"
        )
    dtype = np.result_type(y.dtype, np.float64)
    out = np.empty(y.shape[:-1] + (len(indices),), dtype=dtype)
    for i, alpha in enumerate(indices):
        out[..., i] = _monomial(y, alpha)
    return out
