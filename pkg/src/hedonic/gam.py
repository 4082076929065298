"""Gaussian identity-link additive models with P-spline smooths.

The model is ``y = b0 + sum_j f_j(x_j) + parametric part + noise``. Each
smooth is a centered B-spline block with a difference penalty, and all
blocks are estimated jointly by penalized least squares::

    minimize ||y - X b||^2 + sum_j lambda_j b_j' P_j b_j

Smoothing parameters are chosen by minimizing GCV. Solves go through a QR
factorization of the design followed by a QR of the small augmented system
``[R; sqrt(S)]``, so the n-row design is factorized once per fit.
"""

from __future__ import annotations

import dataclasses
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import linalg, stats

from .dataset import Encoder, ListingRecord, ModelDataset, RESPONSE_DEFINITION
from .spline import SplineBasis, SplineError, center_constraint, evaluate_basis, make_basis

LOG10_LAMBDA_RANGE = (-6.0, 6.0)
GRID_POINTS = 25
GOLDEN_TOL = 1e-5
SWEEP_RTOL = 1e-7
MAX_SWEEPS = 50


class GamError(ValueError):
    pass


@dataclass(frozen=True)
class SmoothTerm:
    factor: str
    k_basis: int = 10
    degree: int = 3
    penalty_order: int = 2
    knots: str = "uniform"


@dataclass(frozen=True)
class GamSpec:
    """Term layout; the link is identity and the family Gaussian, always."""

    smooth_terms: tuple[SmoothTerm, ...]
    parametric_terms: tuple[str, ...] = ()
    link: str = "identity"
    family: str = "gaussian"

    def __post_init__(self):
        smooth = [t.factor for t in self.smooth_terms]
        if not smooth and not self.parametric_terms:
            raise GamError("GAM needs at least one term")
        both = set(smooth) & set(self.parametric_terms)
        if both:
            raise GamError(f"factor(s) both smooth and parametric: {sorted(both)}")
        if len(set(smooth)) != len(smooth):
            raise GamError("duplicate smooth term")
        if self.link != "identity" or self.family != "gaussian":
            raise GamError("only the Gaussian family with identity link is supported")

    def to_dict(self) -> dict:
        return {
            "smooth_terms": [dataclasses.asdict(t) for t in self.smooth_terms],
            "parametric_terms": list(self.parametric_terms),
            "link": self.link,
            "family": self.family,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GamSpec":
        return cls(
            smooth_terms=tuple(SmoothTerm(**t) for t in d["smooth_terms"]),
            parametric_terms=tuple(d["parametric_terms"]),
            link=d.get("link", "identity"),
            family=d.get("family", "gaussian"),
        )


def default_spec(dataset: ModelDataset, k_basis: int = 10, force_linear: Sequence[str] = ()) -> GamSpec:
    """Smooths for continuous factors with enough distinct values, else linear.

    Categorical dummies and 0/1 flags are always parametric.
    """
    smooth, parametric = [], []
    for factor in dataset.factor_names:
        idx = dataset.factor_columns(factor)
        col = dataset.columns[idx[0]]
        if (len(idx) == 1 and col.kind == "continuous" and factor not in force_linear
                and np.unique(dataset.X[:, idx[0]]).size >= k_basis):
            smooth.append(SmoothTerm(factor, k_basis=k_basis))
        else:
            parametric.append(factor)
    if not smooth and not parametric:
        raise GamError("dataset has no factors")
    return GamSpec(tuple(smooth), tuple(parametric))


@dataclass(frozen=True)
class Block:
    """A contiguous group of design columns belonging to one term."""

    name: str
    kind: str  # "intercept" | "parametric" | "smooth"
    start: int
    stop: int

    @property
    def slice(self) -> slice:
        return slice(self.start, self.stop)

    @property
    def size(self) -> int:
        return self.stop - self.start


class GamDesign:
    """Blocked design matrix plus the factorizations reused across lambdas."""

    def __init__(self, dataset: ModelDataset, spec: GamSpec):
        if not spec.smooth_terms and not spec.parametric_terms:
            raise GamError("GAM needs at least one term")
        self.spec = spec
        self.encoder = dataset.encoder
        self.n = dataset.n
        y = np.asarray(dataset.response, dtype=float)
        names = dataset.column_names

        parts = [np.ones((self.n, 1))]
        blocks = [Block("(Intercept)", "intercept", 0, 1)]
        pos = 1
        self.param_columns: list[int] = []
        for factor in spec.parametric_terms:
            idx = dataset.factor_columns(factor)
            if not idx:
                raise GamError(f"parametric factor {factor!r} not in dataset")
            self.param_columns.extend(idx)
            parts.append(dataset.X[:, idx])
            blocks.append(Block(factor, "parametric", pos, pos + len(idx)))
            pos += len(idx)

        self.bases: dict[str, SplineBasis] = {}
        self.transforms: dict[str, np.ndarray] = {}
        self.smooth_columns: dict[str, int] = {}
        self.penalties: dict[str, np.ndarray] = {}
        for term in spec.smooth_terms:
            idx = dataset.factor_columns(term.factor)
            if len(idx) != 1 or dataset.columns[idx[0]].kind != "continuous":
                raise GamError(f"smooth factor {term.factor!r} must be a single continuous column")
            x = dataset.X[:, idx[0]]
            try:
                basis = make_basis(x, term.k_basis, term.degree, term.penalty_order, term.knots)
            except SplineError as exc:
                raise GamError(f"{term.factor}: {exc}") from None
            cb = center_constraint(evaluate_basis(basis, x), basis.penalty)
            self.bases[term.factor] = basis
            self.transforms[term.factor] = cb.transform
            self.penalties[term.factor] = cb.penalty
            self.smooth_columns[term.factor] = idx[0]
            parts.append(cb.matrix)
            blocks.append(Block(term.factor, "smooth", pos, pos + cb.matrix.shape[1]))
            pos += cb.matrix.shape[1]

        X = np.hstack(parts)
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise GamError("design or response contains NaN/Inf")
        self.X = X
        self.y = y
        self.blocks = tuple(blocks)
        self.p = X.shape[1]
        self.smooth_blocks = tuple(b for b in blocks if b.kind == "smooth")
        self.column_names = names

        q0, r0 = np.linalg.qr(X)
        f = q0.T @ y
        self.rss_outside = float(np.sum((y - q0 @ f) ** 2))
        if self.n < self.p:
            # wide design: pad to a square factor so the penalized stack stays aligned
            r0 = np.vstack([r0, np.zeros((self.p - self.n, self.p))])
            f = np.concatenate([f, np.zeros(self.p - self.n)])
        self.r0 = r0
        self.f = f
        self.xtx = r0.T @ r0

        # square roots of the block penalties, embedded in full width
        self.roots: list[np.ndarray] = []
        for b in self.smooth_blocks:
            w, v = np.linalg.eigh(self.penalties[b.name])
            keep = w > w.max() * 1e-12
            root = np.zeros((int(keep.sum()), self.p))
            root[:, b.slice] = (np.sqrt(w[keep])[:, None] * v[:, keep].T)
            self.roots.append(root)

    def penalty_matrix(self, lambdas) -> np.ndarray:
        S = np.zeros((self.p, self.p))
        for lam, b in zip(lambdas, self.smooth_blocks):
            S[b.slice, b.slice] += lam * self.penalties[b.name]
        return S

    def _solve(self, lambdas):
        lambdas = np.asarray(lambdas, dtype=float)
        if lambdas.shape != (len(self.smooth_blocks),):
            raise GamError(f"expected {len(self.smooth_blocks)} lambdas, got {lambdas.shape}")
        if np.any(lambdas < 0) or not np.all(np.isfinite(lambdas)):
            raise GamError("lambdas must be finite and >= 0")
        rows = [self.r0] + [math.sqrt(lam) * root for lam, root in zip(lambdas, self.roots) if lam > 0]
        q, r = np.linalg.qr(np.vstack(rows))
        diag = np.abs(np.diag(r))
        tol = diag.max() * self.p * np.finfo(float).eps * 10
        bad = np.flatnonzero(diag <= tol)
        if bad.size:
            block = next(b for b in self.blocks if b.start <= bad[0] < b.stop)
            raise GamError(f"penalized normal system is singular in block {block.name!r}")
        q1 = q[: self.p]
        beta = linalg.solve_triangular(r, q1.T @ self.f)
        rss = self.rss_outside + float(np.sum((self.f - self.r0 @ beta) ** 2))
        edf = float(np.sum(q1 * q1))
        return beta, r, rss, edf

    def gcv(self, lambdas) -> float:
        """``n * RSS / (n - tr(H))**2`` at the given smoothing parameters."""
        _, _, rss, edf = self._solve(lambdas)
        if edf >= self.n:
            raise GamError("model saturates data (tr(H) >= n)")
        return self.n * rss / (self.n - edf) ** 2

    def rss(self, lambdas) -> float:
        return self._solve(lambdas)[2]


@dataclass(frozen=True)
class TermTest:
    term: str
    kind: str
    statistic: float
    df: float
    p_value: float
    edf: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class GamFit:
    """A fitted additive model.

    ``coefficients`` is the full coefficient vector over the blocked design
    (intercept, parametric columns, centered smooth blocks); the per-term
    views are derived from it.
    """

    spec: GamSpec
    encoder: Encoder
    blocks: tuple[Block, ...]
    bases: dict
    transforms: dict
    smooth_columns: dict
    param_columns: tuple[int, ...]
    coefficients: np.ndarray
    lambdas: np.ndarray
    edf_terms: dict
    edf: float
    fitted: np.ndarray
    residual_variance: float
    covariance: np.ndarray
    term_tests: tuple[TermTest, ...]
    gcv_score: float
    rss: float
    n: int
    selection_trace: tuple = ()
    response: str = RESPONSE_DEFINITION

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    @property
    def smooth_coefficients(self) -> dict:
        return {b.name: self.coefficients[b.slice] for b in self.blocks if b.kind == "smooth"}

    @property
    def parametric_coefficients(self) -> np.ndarray:
        return np.concatenate([self.coefficients[b.slice] for b in self.blocks if b.kind == "parametric"]
                              or [np.empty(0)])

    @property
    def term_pvalues(self) -> dict:
        return {t.term: t.p_value for t in self.term_tests}

    def to_dict(self) -> dict:
        return {
            "kind": "gam",
            "response": self.response,
            "spec": self.spec.to_dict(),
            "encoder": self.encoder.to_dict(),
            "blocks": [[b.name, b.kind, b.start, b.stop] for b in self.blocks],
            "bases": {k: v.to_dict() for k, v in self.bases.items()},
            "transforms": {k: v.tolist() for k, v in self.transforms.items()},
            "smooth_columns": dict(self.smooth_columns),
            "param_columns": list(self.param_columns),
            "coefficients": self.coefficients.tolist(),
            "lambdas": self.lambdas.tolist(),
            "edf_terms": dict(self.edf_terms),
            "edf": self.edf,
            "fitted": self.fitted.tolist(),
            "residual_variance": self.residual_variance,
            "covariance": self.covariance.tolist(),
            "term_tests": [t.to_dict() for t in self.term_tests],
            "gcv_score": self.gcv_score,
            "rss": self.rss,
            "n": self.n,
            "selection_trace": list(self.selection_trace),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GamFit":
        if d.get("kind") != "gam":
            raise GamError("not a GAM model file")
        return cls(
            spec=GamSpec.from_dict(d["spec"]),
            encoder=Encoder.from_dict(d["encoder"]),
            blocks=tuple(Block(*b) for b in d["blocks"]),
            bases={k: SplineBasis.from_dict(v) for k, v in d["bases"].items()},
            transforms={k: np.asarray(v, dtype=float) for k, v in d["transforms"].items()},
            smooth_columns={k: int(v) for k, v in d["smooth_columns"].items()},
            param_columns=tuple(d["param_columns"]),
            coefficients=np.asarray(d["coefficients"], dtype=float),
            lambdas=np.asarray(d["lambdas"], dtype=float),
            edf_terms=dict(d["edf_terms"]),
            edf=float(d["edf"]),
            fitted=np.asarray(d["fitted"], dtype=float),
            residual_variance=float(d["residual_variance"]),
            covariance=np.asarray(d["covariance"], dtype=float),
            term_tests=tuple(TermTest(**t) for t in d["term_tests"]),
            gcv_score=float(d["gcv_score"]),
            rss=float(d["rss"]),
            n=int(d["n"]),
            selection_trace=tuple(d.get("selection_trace", ())),
            response=d.get("response", RESPONSE_DEFINITION),
        )


def _finish(design: GamDesign, lambdas: np.ndarray, trace=()) -> GamFit:
    beta, r, rss, edf = design._solve(lambdas)
    n = design.n
    if edf >= n:
        raise GamError("model saturates data (tr(H) >= n)")
    rinv = linalg.solve_triangular(r, np.eye(design.p))
    a_inv = rinv @ rinv.T
    # F = (X'X + S)^-1 X'X; its diagonal splits tr(H) across coefficients
    edf_coef = np.einsum("ij,ji->i", a_inv, design.xtx)
    edf_terms = {b.name: float(edf_coef[b.slice].sum()) for b in design.blocks}
    sigma2 = rss / (n - edf)
    cov = sigma2 * a_inv
    cov = 0.5 * (cov + cov.T)
    fitted = design.X @ beta

    tests = []
    df_resid = n - edf
    for b in design.blocks:
        if b.kind == "intercept":
            continue
        bb = beta[b.slice]
        vb = cov[b.slice, b.slice]
        if b.kind == "parametric":
            tests.append(_parametric_test(b.name, bb, vb, df_resid))
        else:
            xb = design.X[:, b.slice]
            tests.append(_smooth_test(b.name, xb, bb, vb, edf_terms[b.name]))
    gcv = n * rss / (n - edf) ** 2
    return GamFit(
        spec=design.spec,
        encoder=design.encoder,
        blocks=design.blocks,
        bases=dict(design.bases),
        transforms=dict(design.transforms),
        smooth_columns=dict(design.smooth_columns),
        param_columns=tuple(design.param_columns),
        coefficients=beta,
        lambdas=np.asarray(lambdas, dtype=float),
        edf_terms=edf_terms,
        edf=edf,
        fitted=fitted,
        residual_variance=sigma2,
        covariance=cov,
        term_tests=tuple(tests),
        gcv_score=gcv,
        rss=rss,
        n=n,
        selection_trace=tuple(trace),
    )


def _parametric_test(name, beta, cov, df_resid) -> TermTest:
    k = beta.size
    if k == 1:
        se = math.sqrt(cov[0, 0])
        t = float(beta[0] / se)
        p = float(2.0 * stats.t.sf(abs(t), df_resid))
        return TermTest(name, "parametric", t, 1.0, p, 1.0)
    stat = float(beta @ np.linalg.solve(cov, beta)) / k
    p = float(stats.f.sf(stat, k, df_resid))
    return TermTest(name, "parametric", stat, float(k), p, float(k))


def _smooth_test(name, xb, beta, cov, edf) -> TermTest:
    """Wald test of ``f = X_j b_j`` using a rank-``round(edf)`` pseudo-inverse.

    With ``X_j = QR`` the quadratic form ``f' V_f^- f`` reduces to the small
    ``(R b)' (R V R')^- (R b)``.
    """
    rank = int(round(edf))
    if rank < 1:
        warnings.warn(f"smooth {name!r} has rank 0; p-value set to 1", RuntimeWarning, stacklevel=3)
        return TermTest(name, "smooth", 0.0, 0.0, 1.0, edf)
    r = np.linalg.qr(xb, mode="r")
    rb = r @ beta
    vf = r @ cov @ r.T
    w, v = np.linalg.eigh(0.5 * (vf + vf.T))
    order = np.argsort(w)[::-1][:rank]
    w, v = w[order], v[:, order]
    keep = w > 0
    proj = v[:, keep].T @ rb
    stat = float(np.sum(proj ** 2 / w[keep]))
    p = float(stats.chi2.sf(stat, rank))
    return TermTest(name, "smooth", stat, float(rank), p, edf)


def fit_penalized(dataset: ModelDataset, spec: GamSpec, lambdas) -> GamFit:
    """Fit at fixed smoothing parameters (one per smooth term, in spec order)."""
    design = GamDesign(dataset, spec)
    return _finish(design, np.asarray(lambdas, dtype=float))


def _golden(fun, a: float, b: float, tol: float = GOLDEN_TOL) -> tuple[float, float]:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    return (c, fc) if fc <= fd else (d, fd)


def select_lambdas(dataset: ModelDataset, spec: GamSpec) -> GamFit:
    """Choose smoothing parameters by minimizing GCV.

    Cyclic coordinate descent over ``log10(lambda_j)`` in ``[-6, 6]``: each
    coordinate is scanned on a 25-point grid and the best grid cell is
    refined by golden-section search. Sweeps stop when GCV improves by less
    than 1e-7 relative, or after 50 sweeps.
    """
    design = GamDesign(dataset, spec)
    n_unpen = sum(b.size for b in design.blocks if b.kind != "smooth") + len(design.smooth_blocks)
    if dataset.n <= n_unpen + 5:
        raise GamError(f"too few rows ({dataset.n}) for {n_unpen} unpenalized columns")
    k = len(design.smooth_blocks)
    if k == 0:
        return _finish(design, np.empty(0), ({"sweep": 0, "log10_lambdas": [], "gcv": design.gcv([])},))

    lo, hi = LOG10_LAMBDA_RANGE
    grid = np.linspace(lo, hi, GRID_POINTS)
    rho = np.zeros(k)

    def score(r):
        return design.gcv(10.0 ** r)

    best = score(rho)
    trace = [{"sweep": 0, "log10_lambdas": rho.tolist(), "gcv": best}]
    for sweep in range(1, MAX_SWEEPS + 1):
        start = best
        for j in range(k):
            def along(t, j=j):
                r = rho.copy()
                r[j] = t
                return score(r)

            vals = np.array([along(t) for t in grid])
            i = int(np.argmin(vals))
            cand_t, cand_v = float(grid[i]), float(vals[i])
            a, b = grid[max(i - 1, 0)], grid[min(i + 1, GRID_POINTS - 1)]
            t_g, v_g = _golden(along, float(a), float(b))
            if v_g < cand_v:
                cand_t, cand_v = t_g, v_g
            if cand_v < best:
                rho[j], best = cand_t, cand_v
        trace.append({"sweep": sweep, "log10_lambdas": rho.tolist(), "gcv": best})
        if start - best <= SWEEP_RTOL * abs(start):
            break
    return _finish(design, 10.0 ** rho, trace)


def term_significance(fit: GamFit) -> list[tuple[str, float]]:
    """(term, p-value) pairs in model order."""
    return [(t.term, t.p_value) for t in fit.term_tests]


def factor_significance(fit: GamFit) -> dict:
    return {t.term: t.p_value for t in fit.term_tests}


def design_rows(fit: GamFit, X) -> np.ndarray:
    """Blocked design for encoded rows ``X`` (dataset column order)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    parts = [np.ones((X.shape[0], 1))]
    if fit.param_columns:
        parts.append(X[:, list(fit.param_columns)])
    for term in fit.spec.smooth_terms:
        basis = fit.bases[term.factor]
        bm = evaluate_basis(basis, X[:, fit.smooth_columns[term.factor]])
        parts.append(bm @ fit.transforms[term.factor])
    return np.hstack(parts)


def predict(fit: GamFit, X) -> np.ndarray:
    """Predicted log-price for encoded factor rows (identity link)."""
    return design_rows(fit, X) @ fit.coefficients


def predict_records(fit: GamFit, records: Sequence[ListingRecord]) -> np.ndarray:
    return predict(fit, fit.encoder.transform(records))


def save_model(fit: GamFit, path) -> None:
    Path(path).write_text(json.dumps(fit.to_dict(), sort_keys=True) + "\n", encoding="utf-8")


def load_model(path) -> GamFit:
    return GamFit.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
