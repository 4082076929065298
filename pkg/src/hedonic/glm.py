"""Gaussian identity-link linear models over polynomial term expansions.

Five candidate families are supported, from purely linear (``GLM_L``) up to
the full cubic polynomial (``GLM_P``). The richer families are fit by
forward stepwise selection starting from the intercept-only model.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import linalg, stats

from .dataset import Encoder, ModelDataset, RESPONSE_DEFINITION

# variant -> (pairs, squares, cubic terms)
VARIANTS = {
    "GLM_L": (False, False, False),
    "GLM_LM": (True, False, False),
    "GLM_LQ": (False, True, False),
    "GLM_LMQ": (True, True, False),
    "GLM_P": (True, True, True),
}

DISPLAY_NAMES = {
    "GLM_L": "GLM-l",
    "GLM_LM": "GLM-lm",
    "GLM_LQ": "GLM-lq",
    "GLM_LMQ": "GLM-lmq",
    "GLM_P": "GLM-p",
}


class GlmError(ValueError):
    pass


class RankDeficientError(GlmError):
    def __init__(self, message: str, columns: Sequence[str]):
        super().__init__(message)
        self.columns = tuple(columns)


@dataclass(frozen=True)
class Term:
    """A monomial over design columns; ``idx`` lists factors with multiplicity."""

    kind: str  # linear | pair | square | triple | mixed_cubic | cube
    idx: tuple[int, ...]

    def values(self, X: np.ndarray) -> np.ndarray:
        out = np.array(X[:, self.idx[0]], dtype=float)
        for i in self.idx[1:]:
            out = out * X[:, i]
        return out

    def label(self, names: Sequence[str]) -> str:
        parts = []
        for i in sorted(set(self.idx), key=self.idx.index):
            power = self.idx.count(i)
            parts.append(names[i] if power == 1 else f"{names[i]}^{power}")
        return "*".join(parts)

    def to_list(self) -> list:
        return [self.kind, list(self.idx)]


@dataclass(frozen=True)
class TermSet:
    variant: str
    terms: tuple[Term, ...]
    column_names: tuple[str, ...] = ()

    @property
    def candidate_count(self) -> int:
        return len(self.terms)

    def labels(self) -> list[str]:
        names = self.column_names or tuple(f"x{i + 1}" for i in range(self._m()))
        return [t.label(names) for t in self.terms]

    def _m(self) -> int:
        return 1 + max((max(t.idx) for t in self.terms), default=-1)


def expand_terms(variant: str, m: int, kinds: Sequence[str] | None = None,
                 groups: Sequence[str] | None = None,
                 names: Sequence[str] | None = None) -> TermSet:
    """Enumerate the candidate terms of a model family.

    Ordering is deterministic: linear terms, pairs, squares, triples, mixed
    cubics (``x_i^2 x_j`` then ``x_i x_j^2`` for each pair), cubes.

    `kinds` marks each column ``"continuous"`` or ``"binary"``; a binary
    column equals its own square, so it never appears raised to a power.
    `groups` names the source factor of each column; products of two dummy
    columns from the same factor are identically zero and are skipped.
    """
    if variant not in VARIANTS:
        raise GlmError(f"unknown variant {variant!r}")
    if m < 1:
        raise GlmError("need at least one factor")
    kinds = list(kinds) if kinds is not None else ["continuous"] * m
    groups = list(groups) if groups is not None else [str(i) for i in range(m)]
    if len(kinds) != m or len(groups) != m:
        raise GlmError("kinds/groups must have one entry per factor")
    cont = [k == "continuous" for k in kinds]

    def distinct(*ix):
        gs = [groups[i] for i in ix]
        return len(set(gs)) == len(gs)

    pairs_on, squares_on, cubic_on = VARIANTS[variant]
    terms = [Term("linear", (i,)) for i in range(m)]
    if pairs_on:
        terms += [Term("pair", (i, j)) for i, j in combinations(range(m), 2) if distinct(i, j)]
    if squares_on:
        terms += [Term("square", (i, i)) for i in range(m) if cont[i]]
    if cubic_on:
        terms += [Term("triple", (i, j, k)) for i, j, k in combinations(range(m), 3) if distinct(i, j, k)]
        for i, j in combinations(range(m), 2):
            if not distinct(i, j):
                continue
            if cont[i]:
                terms.append(Term("mixed_cubic", (i, i, j)))
            if cont[j]:
                terms.append(Term("mixed_cubic", (i, j, j)))
        terms += [Term("cube", (i, i, i)) for i in range(m) if cont[i]]
    return TermSet(variant, tuple(terms), tuple(names or ()))


def termset_for(dataset: ModelDataset, variant: str) -> TermSet:
    cols = dataset.columns
    return expand_terms(variant, len(cols), [c.kind for c in cols], [c.factor for c in cols],
                        [c.name for c in cols])


@dataclass(frozen=True)
class GlmFit:
    """Least-squares fit; ``beta[0]`` is the intercept, then ``terms`` order."""

    variant: str
    terms: tuple[Term, ...]
    column_names: tuple[str, ...]
    column_factors: tuple[str, ...]
    beta: np.ndarray
    dispersion: float
    covariance: np.ndarray
    pvalues: np.ndarray
    deviance: float
    fitted: np.ndarray
    n: int
    candidate_count: int = 0
    selection_trace: tuple = ()
    encoder: Encoder | None = None
    response: str = RESPONSE_DEFINITION

    @property
    def p(self) -> int:
        return int(self.beta.size)

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def labels(self) -> list[str]:
        return ["(Intercept)"] + [t.label(self.column_names) for t in self.terms]

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return _design(X, self.terms) @ self.beta

    def to_dict(self) -> dict:
        return {
            "kind": "glm",
            "response": self.response,
            "variant": self.variant,
            "terms": [t.to_list() for t in self.terms],
            "labels": self.labels(),
            "column_names": list(self.column_names),
            "column_factors": list(self.column_factors),
            "beta": self.beta.tolist(),
            "dispersion": self.dispersion,
            "covariance": self.covariance.tolist(),
            "pvalues": self.pvalues.tolist(),
            "deviance": self.deviance,
            "fitted": self.fitted.tolist(),
            "n": self.n,
            "candidate_count": self.candidate_count,
            "selection_trace": list(self.selection_trace),
            "encoder": self.encoder.to_dict() if self.encoder else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GlmFit":
        if d.get("kind") != "glm":
            raise GlmError("not a GLM model file")
        return cls(
            variant=d["variant"],
            terms=tuple(Term(k, tuple(ix)) for k, ix in d["terms"]),
            column_names=tuple(d["column_names"]),
            column_factors=tuple(d["column_factors"]),
            beta=np.asarray(d["beta"], dtype=float),
            dispersion=float(d["dispersion"]),
            covariance=np.asarray(d["covariance"], dtype=float),
            pvalues=np.asarray(d["pvalues"], dtype=float),
            deviance=float(d["deviance"]),
            fitted=np.asarray(d["fitted"], dtype=float),
            n=int(d["n"]),
            candidate_count=int(d.get("candidate_count", 0)),
            selection_trace=tuple(d.get("selection_trace", ())),
            encoder=Encoder.from_dict(d["encoder"]) if d.get("encoder") else None,
            response=d.get("response", RESPONSE_DEFINITION),
        )


def _design(X: np.ndarray, terms: Sequence[Term]) -> np.ndarray:
    cols = [np.ones(X.shape[0])] + [t.values(X) for t in terms]
    return np.column_stack(cols)


def _dependent_set(design: np.ndarray, piv: np.ndarray, rank: int, labels: list[str]) -> list[str]:
    bad = piv[rank]
    basis = piv[:rank]
    coef, *_ = np.linalg.lstsq(design[:, basis], design[:, bad], rcond=None)
    scale = np.abs(coef).max() if coef.size else 0.0
    involved = [labels[basis[i]] for i in np.flatnonzero(np.abs(coef) > 1e-8 * max(scale, 1.0))]
    return sorted(involved) + [labels[bad]]


def fit_ols(dataset: ModelDataset, termset: TermSet, terms: Sequence[Term] | None = None) -> GlmFit:
    """Ordinary least squares on the intercept plus `terms` (default: all).

    Uses a column-pivoted QR factorization. p-values are two-sided t-tests
    with ``n - p`` residual degrees of freedom.

    Raises
    ------
    RankDeficientError
        The design is not of full column rank; the error lists a dependent
        set of columns.
    """
    terms = tuple(termset.terms if terms is None else terms)
    X = np.asarray(dataset.X, dtype=float)
    y = np.asarray(dataset.response, dtype=float)
    n = y.size
    design = _design(X, terms)
    p = design.shape[1]
    if p > n:
        raise GlmError(f"more coefficients ({p}) than rows ({n})")
    names = dataset.column_names
    labels = ["(Intercept)"] + [t.label(names) for t in terms]

    q, r, piv = linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag[0] * max(n, p) * np.finfo(float).eps * 10
    rank = int(np.sum(diag > tol))
    if rank < p:
        dep = _dependent_set(design, piv, rank, labels)
        raise RankDeficientError(f"design is rank deficient; dependent columns: {', '.join(dep)}", dep)

    qty = q.T @ y
    coef_p = linalg.solve_triangular(r, qty)
    beta = np.empty(p)
    beta[piv] = coef_p
    fitted = design @ beta
    resid = y - fitted
    rss = float(resid @ resid)
    df = n - p
    dispersion = rss / df if df > 0 else float("nan")
    rinv = linalg.solve_triangular(r, np.eye(p))
    cov_p = rinv @ rinv.T
    cov = np.empty((p, p))
    cov[np.ix_(piv, piv)] = cov_p
    cov = dispersion * 0.5 * (cov + cov.T)
    se = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        tstat = beta / se
    pvals = 2.0 * stats.t.sf(np.abs(tstat), df) if df > 0 else np.full(p, np.nan)

    return GlmFit(
        variant=termset.variant,
        terms=terms,
        column_names=tuple(names),
        column_factors=tuple(c.factor for c in dataset.columns),
        beta=beta,
        dispersion=dispersion,
        covariance=cov,
        pvalues=np.asarray(pvals, dtype=float),
        deviance=rss,
        fitted=fitted,
        n=n,
        candidate_count=termset.candidate_count,
        encoder=dataset.encoder if dataset.records else None,
    )


def stepwise_fit(dataset: ModelDataset, termset: TermSet, alpha_enter: float = 0.05,
                 max_terms: int | None = None) -> GlmFit:
    """Forward selection by significance of the deviance reduction.

    Starting from the intercept, each round tries every remaining candidate
    and computes the F statistic ``delta / (rss_new / (n - p_new))`` on
    ``(1, n - p_new)`` degrees of freedom. The best candidate enters if its
    p-value is at most `alpha_enter`; selection stops otherwise, or when the
    model reaches ``n - 2`` coefficients.

    Candidate columns are kept orthogonalized against the current model
    (Gram-Schmidt), so a round costs one pass over the candidate matrix.
    """
    if not 0.0 < alpha_enter <= 1.0:
        raise GlmError("alpha_enter must be in (0, 1]")
    X = np.asarray(dataset.X, dtype=float)
    y = np.asarray(dataset.response, dtype=float)
    n = y.size
    names = dataset.column_names
    cands = termset.terms
    K = len(cands)
    limit = n - 2 if max_terms is None else min(n - 2, max_terms + 1)

    C = np.column_stack([t.values(X) for t in cands]) if K else np.empty((n, 0))
    orig_norm2 = np.sum(C * C, axis=0)
    # orthogonalize against the intercept
    C = C - C.mean(axis=0)
    e = y - y.mean()
    rss = float(e @ e)
    active = np.ones(K, dtype=bool)
    selected: list[int] = []
    trace = []
    rnd = 0
    while active.any() and 1 + len(selected) < limit:
        rnd += 1
        norm2 = np.sum(C * C, axis=0)
        usable = active & (norm2 > 1e-10 * np.maximum(orig_norm2, 1e-300))
        active &= usable
        if not usable.any():
            break
        proj = C.T @ e
        with np.errstate(divide="ignore", invalid="ignore"):
            delta = np.where(usable, proj ** 2 / np.where(usable, norm2, 1.0), -np.inf)
        p_new = len(selected) + 2
        df = n - p_new
        rss_new = np.maximum(rss - delta, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            fstat = np.where(usable, delta / (rss_new / df), -np.inf)
        fstat = np.where(np.isnan(fstat), np.inf, fstat)
        # all candidates share df, so the smallest p-value is the largest F;
        # argmax keeps the first index on ties and dodges p-value underflow
        k = int(np.argmax(fstat))
        pval = float(stats.f.sf(fstat[k], 1, df)) if np.isfinite(fstat[k]) else 0.0
        entry = {
            "round": rnd,
            "candidate": cands[k].label(names),
            "deviance_before": rss,
            "deviance_after": float(rss_new[k]),
            "p_enter": pval,
        }
        if pval > alpha_enter:
            entry["decision"] = "stop"
            trace.append(entry)
            break
        entry["decision"] = "add"
        trace.append(entry)
        qk = C[:, k] / math.sqrt(norm2[k])
        e = e - qk * (qk @ e)
        rss = float(rss_new[k])
        C = C - np.outer(qk, qk @ C)
        active[k] = False
        selected.append(k)

    chosen = tuple(cands[k] for k in selected)
    fit = fit_ols(dataset, termset, chosen)
    return dataclasses.replace(fit, selection_trace=tuple(trace))


def factor_significance(fit: GlmFit, factors: Sequence[str] | None = None) -> dict:
    """Joint Wald F-test p-value per factor over every term that involves it.

    Factors with no selected term are omitted.
    """
    factors = factors or list(dict.fromkeys(fit.column_factors))
    df = fit.n - fit.p
    out = {}
    for factor in factors:
        cols = {i for i, f in enumerate(fit.column_factors) if f == factor}
        idx = [j + 1 for j, t in enumerate(fit.terms) if cols & set(t.idx)]
        if not idx:
            continue
        b = fit.beta[idx]
        v = fit.covariance[np.ix_(idx, idx)]
        fstat = float(b @ np.linalg.solve(v, b)) / len(idx)
        out[factor] = float(stats.f.sf(fstat, len(idx), df))
    return out


def write_trace(fit: GlmFit, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for entry in fit.selection_trace:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def save_model(fit: GlmFit, path) -> None:
    Path(path).write_text(json.dumps(fit.to_dict(), sort_keys=True) + "\n", encoding="utf-8")


def load_model(path) -> GlmFit:
    return GlmFit.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
