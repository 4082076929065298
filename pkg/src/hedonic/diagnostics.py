"""Goodness-of-fit statistics and cross-model comparison tables."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import DISPLAY_NAMES, SCHEMA_ORDER

BIC_DEFINITION = (
    "BIC = n*ln(2*pi*RSS/n) + n + (df_model + 1)*ln(n); "
    "df_model excludes the intercept (GLM: coefficients - 1, GAM: total EDF - 1)"
)
PVALUE_FLOOR = 2e-16
NOT_INCLUDED = "NI"

# True when larger is better
STAT_DIRECTIONS = {"adj_r2": True, "mse": False, "mare": False, "bic": False}
STAT_LABELS = {"adj_r2": "Adj. R^2", "mse": "MSE", "mare": "MARE", "bic": "BIC"}


class DiagnosticsError(ValueError):
    pass


@dataclass(frozen=True)
class FitStats:
    adj_r2: float
    mse: float
    mare: float
    bic: float
    n: int
    df_model: float
    rss: float = 0.0
    tss: float = 0.0

    def to_dict(self) -> dict:
        return {
            "adj_r2": self.adj_r2, "mse": self.mse, "mare": self.mare,
            "bic": _json_float(self.bic), "n": self.n, "df_model": self.df_model,
            "rss": self.rss, "tss": self.tss,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitStats":
        d = dict(d)
        if d["bic"] == "-inf":
            d["bic"] = -math.inf
        return cls(**d)


def _json_float(v: float):
    return "-inf" if v == -math.inf else v


def adjusted_r2(rss: float, tss: float, n: int, df_model: float) -> float:
    return 1.0 - (rss / (n - df_model - 1)) / (tss / (n - 1))


def gaussian_bic(rss: float, n: int, df_model: float) -> float:
    if rss <= 0.0:
        warnings.warn("RSS is zero; BIC reported as -inf", RuntimeWarning, stacklevel=2)
        return -math.inf
    return n * math.log(2.0 * math.pi * rss / n) + n + (df_model + 1.0) * math.log(n)


def fit_stats(y, yhat, df_model: float) -> FitStats:
    """Adjusted R^2, MSE, MARE and BIC of fitted values on the response scale.

    `df_model` counts model degrees of freedom beyond the intercept and may
    be fractional (effective degrees of freedom of a penalized fit).
    """
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise DiagnosticsError("y and yhat differ in length")
    n = y.size
    if n <= df_model + 1:
        raise DiagnosticsError(f"n={n} must exceed df_model + 1 = {df_model + 1}")
    resid = y - yhat
    rss = float(resid @ resid)
    tss = float(np.sum((y - y.mean()) ** 2))
    return FitStats(
        adj_r2=adjusted_r2(rss, tss, n, df_model),
        mse=rss / n,
        mare=float(np.mean(np.abs(resid) / np.abs(y))),
        bic=gaussian_bic(rss, n, df_model),
        n=n,
        df_model=float(df_model),
        rss=rss,
        tss=tss,
    )


def format_pvalue(p: float | None) -> str:
    """Render a p-value the way the significance tables do."""
    if p is None:
        return NOT_INCLUDED
    if p < PVALUE_FLOOR:
        return "< 2e-16"
    if p >= 0.001:
        return f"{p:.3g}"
    return f"{p:.2e}"


@dataclass(frozen=True)
class ModelSummary:
    name: str
    stats: FitStats
    significance: dict  # factor -> p-value (absent => not included)
    response: str = "ln(price)"


@dataclass(frozen=True)
class ComparisonReport:
    models: tuple[str, ...]
    stats: dict  # model -> FitStats
    factors: tuple[str, ...]
    pvalues: dict  # factor -> {model: p or None}
    rankings: dict = field(default_factory=dict)  # statistic -> [models best-first]

    def to_dict(self) -> dict:
        return {
            "bic_definition": BIC_DEFINITION,
            "models": list(self.models),
            "factors": list(self.factors),
            "fit_statistics": {m: self.stats[m].to_dict() for m in self.models},
            "significance": {
                f: {m: self.pvalues[f][m] for m in self.models} for f in self.factors
            },
            "significance_display": {
                f: {m: format_pvalue(self.pvalues[f][m]) for m in self.models} for f in self.factors
            },
            "rankings": {k: list(v) for k, v in self.rankings.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_text(self) -> str:
        return render_text(self)


def compare_models(fits: Sequence[ModelSummary], factor_order: Sequence[str] = SCHEMA_ORDER) -> ComparisonReport:
    """Assemble the model x statistic and factor x model tables.

    Factors missing from a model show as not included. Rankings (best
    first, ties broken by name) are only produced for two or more models.
    """
    if not fits:
        raise DiagnosticsError("no models to compare")
    names = [f.name for f in fits]
    if len(set(names)) != len(names):
        raise DiagnosticsError("duplicate model names")
    responses = {f.response for f in fits}
    if len(responses) > 1:
        raise DiagnosticsError(f"models use different response definitions: {sorted(responses)}")

    universe = set()
    for f in fits:
        universe |= set(f.significance)
    factors = [f for f in factor_order if f in universe] + sorted(universe - set(factor_order))
    pvalues = {fac: {f.name: f.significance.get(fac) for f in fits} for fac in factors}
    stats = {f.name: f.stats for f in fits}

    rankings = {}
    if len(fits) > 1:
        for key, higher in STAT_DIRECTIONS.items():
            def sort_key(name, key=key, higher=higher):
                v = getattr(stats[name], key)
                return (-v if higher else v, name)
            rankings[key] = sorted(names, key=sort_key)
    return ComparisonReport(tuple(names), stats, tuple(factors), pvalues, rankings)


def _table(header: list[str], rows: list[list[str]]) -> list[str]:
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    fmt = lambda r: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
    lines = [fmt(header), "  ".join("-" * w for w in widths)]
    lines += [fmt(r) for r in rows]
    return lines


def render_text(report: ComparisonReport) -> str:
    out = ["Significance (p-value) of the factors", ""]
    rows = [[DISPLAY_NAMES.get(f, f)] + [format_pvalue(report.pvalues[f][m]) for m in report.models]
            for f in report.factors]
    rows.append(["Adj. R^2"] + [f"{report.stats[m].adj_r2:.4f}" for m in report.models])
    out += _table(["Factor"] + list(report.models), rows)
    out += ["", "< 2e-16: p-value below 2e-16. NI = not included in model.", ""]

    out += ["Summary fit statistics", ""]
    rows = []
    for m in report.models:
        s = report.stats[m]
        bic = "-inf" if s.bic == -math.inf else f"{s.bic:.1f}"
        rows.append([m, f"{s.adj_r2:.4f}", f"{s.mse:.4f}", f"{s.mare:.5f}", bic, f"{s.df_model:.2f}", str(s.n)])
    out += _table(["Model", "Adj. R^2", "MSE", "MARE", "BIC", "df", "n"], rows)
    out += ["", BIC_DEFINITION, "MARE is taken on the log-price response."]

    if report.rankings:
        out += ["", "Rankings (best first)", ""]
        for key, order in report.rankings.items():
            out.append(f"{STAT_LABELS[key]:<9} " + " > ".join(order))
    return "\n".join(out) + "\n"
