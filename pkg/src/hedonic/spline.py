"""Univariate B-spline bases with discrete difference penalties (P-splines).

A smooth term is represented as ``f(x) = B(x) @ c`` where ``B`` holds the
B-spline basis functions and roughness is controlled by the
quadratic form ``c' D'D c`` with ``D`` a finite-difference operator.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


class SplineError(ValueError):
    """Raised when a basis cannot be built for the supplied values."""


def difference_matrix(k_basis: int, order: int) -> np.ndarray:
    """Return the ``(k_basis - order) x k_basis`` difference operator."""
    return np.diff(np.eye(k_basis), n=order, axis=0)


@dataclass(frozen=True)
class SplineBasis:
    """B-spline basis for one factor.

    Parameters
    ----------
    degree : int
        Polynomial degree of the pieces (3 for cubic).
    k_basis : int
        Number of basis functions.
    knots : numpy.ndarray
        Full knot vector of length ``k_basis + degree + 1``.
    domain : tuple of float
        ``(min, max)`` of the data used to build the basis.
    penalty_order : int
        Order of the difference penalty.
    penalty : numpy.ndarray
        ``D'D`` for the order-``penalty_order`` difference matrix ``D``.
    """

    degree: int
    k_basis: int
    knots: np.ndarray
    domain: tuple[float, float]
    penalty_order: int
    penalty: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "k_basis": self.k_basis,
            "knots": [float(k) for k in self.knots],
            "domain": [float(self.domain[0]), float(self.domain[1])],
            "penalty_order": self.penalty_order,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplineBasis":
        k, order = int(d["k_basis"]), int(d["penalty_order"])
        dmat = difference_matrix(k, order)
        return cls(
            degree=int(d["degree"]),
            k_basis=k,
            knots=_frozen(np.asarray(d["knots"], dtype=float)),
            domain=(float(d["domain"][0]), float(d["domain"][1])),
            penalty_order=order,
            penalty=_frozen(dmat.T @ dmat),
        )


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def make_basis(values, k_basis: int = 10, degree: int = 3, penalty_order: int = 2,
               knot_placement: str = "uniform") -> SplineBasis:
    """Build a cubic (by default) P-spline basis over the range of `values`.

    ``knot_placement="uniform"`` gives the classic P-spline layout: equally
    spaced knots that continue ``degree`` steps past each end of the data
    range. Affine coefficient sequences then map to functions that are
    exactly linear in x, so a heavy order-2 penalty shrinks a smooth to a
    straight line.

    ``knot_placement="quantile"`` clamps the basis (boundary knots repeated
    ``degree + 1`` times) and puts interior knots at data quantiles. The
    difference penalty is then only approximately a roughness penalty near
    the boundaries.

    Raises
    ------
    SplineError
        If there are fewer distinct values than basis functions, or the
        degree/order arguments are inconsistent.
    """
    x = np.asarray(values, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise SplineError("basis values must be finite")
    if k_basis <= degree:
        raise SplineError(f"k_basis={k_basis} must exceed degree={degree}")
    if not 0 < penalty_order < k_basis:
        raise SplineError(f"penalty_order={penalty_order} must be in [1, k_basis)")
    distinct = np.unique(x)
    if distinct.size < k_basis:
        raise SplineError(
            f"only {distinct.size} distinct values for k_basis={k_basis}; "
            "treat this factor as linear or lower k_basis"
        )

    lo, hi = float(distinct[0]), float(distinct[-1])
    if knot_placement == "uniform":
        n_spans = k_basis - degree
        h = (hi - lo) / n_spans
        knots = lo + h * np.arange(-degree, n_spans + degree + 1)
        # pin the domain ends exactly so clamping and span lookup agree
        knots[degree], knots[n_spans + degree] = lo, hi
    elif knot_placement == "quantile":
        n_inner = k_basis - degree - 1
        probs = np.arange(1, n_inner + 1) / (n_inner + 1)
        inner = np.quantile(x, probs)
        if not _strictly_inside(inner, lo, hi):
            # heavy ties: fall back to quantiles of the distinct values
            inner = np.quantile(distinct, probs)
        if not _strictly_inside(inner, lo, hi):
            inner = lo + probs * (hi - lo)
        knots = np.concatenate([np.full(degree + 1, lo), inner, np.full(degree + 1, hi)])
    else:
        raise SplineError(f"unknown knot placement {knot_placement!r}")

    dmat = difference_matrix(k_basis, penalty_order)
    return SplineBasis(
        degree=degree,
        k_basis=k_basis,
        knots=_frozen(knots),
        domain=(lo, hi),
        penalty_order=penalty_order,
        penalty=_frozen(dmat.T @ dmat),
    )


def _strictly_inside(inner: np.ndarray, lo: float, hi: float) -> bool:
    if inner.size == 0:
        return True
    return bool(inner[0] > lo and inner[-1] < hi and np.all(np.diff(inner) > 0))


def clamp_to_domain(basis: SplineBasis, x) -> np.ndarray:
    """Clip `x` into the basis domain, warning when anything moved."""
    x = np.asarray(x, dtype=float).ravel()
    lo, hi = basis.domain
    outside = (x < lo) | (x > hi)
    if np.any(outside):
        warnings.warn(
            f"{int(outside.sum())} value(s) outside spline domain [{lo:g}, {hi:g}] clamped",
            RuntimeWarning,
            stacklevel=3,
        )
        x = np.clip(x, lo, hi)
    return x


def evaluate_basis(basis: SplineBasis, x) -> np.ndarray:
    """Evaluate every basis function at `x` (Cox-de Boor recurrence).

    Returns a ``(len(x), k_basis)`` matrix whose rows sum to one. Inputs
    outside the domain are clamped to it.
    """
    x = clamp_to_domain(basis, x)
    t = basis.knots
    p = basis.degree
    k = basis.k_basis
    n = x.size

    # span index s with t[s] <= x < t[s+1], restricted to the non-degenerate spans
    span = np.searchsorted(t, x, side="right") - 1
    span = np.clip(span, p, k - 1)

    # triangular scheme on the p+1 nonzero functions of each span
    vals = np.zeros((n, p + 1))
    vals[:, 0] = 1.0
    left = np.empty((n, p + 1))
    right = np.empty((n, p + 1))
    for j in range(1, p + 1):
        left[:, j] = x - t[span + 1 - j]
        right[:, j] = t[span + j] - x
        saved = np.zeros(n)
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            temp = vals[:, r] / denom
            vals[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        vals[:, j] = saved

    out = np.zeros((n, k))
    rows = np.arange(n)[:, None]
    cols = span[:, None] - p + np.arange(p + 1)[None, :]
    out[rows, cols] = vals
    return out


@dataclass(frozen=True)
class CenteredBasis:
    """A basis reparameterized so the smooth sums to zero over the data.

    ``matrix = raw @ transform`` and ``penalty = transform' P transform``;
    unconstrained coefficients are recovered as ``transform @ coef``.
    """

    matrix: np.ndarray
    transform: np.ndarray
    penalty: np.ndarray | None = None


def center_constraint(basis_matrix, penalty=None) -> CenteredBasis:
    """Absorb the sum-to-zero identifiability constraint into the basis.

    With ``C = 1' B`` the null space of ``C`` is spanned by the last
    ``k - 1`` columns of the complete ``Q`` from a QR factorization of
    ``C'``; that block is the returned transform.
    """
    bmat = np.asarray(basis_matrix, dtype=float)
    constraint = bmat.sum(axis=0)[:, None]
    q, _ = np.linalg.qr(constraint, mode="complete")
    z = q[:, 1:]
    pen = None if penalty is None else z.T @ np.asarray(penalty) @ z
    if pen is not None:
        pen = 0.5 * (pen + pen.T)
    return CenteredBasis(matrix=bmat @ z, transform=z, penalty=pen)
