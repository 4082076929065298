"""Normal and normal-inverse Gaussian fits to the log-price distribution.

The NIG density is

    f(x) = alpha * delta * K1(alpha * q) / (pi * q) * exp(delta * gamma + beta * (x - mu))

with ``q = sqrt(delta^2 + (x - mu)^2)`` and ``gamma = sqrt(alpha^2 - beta^2)``.
K1 is evaluated here in exponentially scaled form so log-densities stay
finite far into the tails.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

EULER_GAMMA = 0.57721566490153286061

_SERIES_MAX = 2.0
_ASYMPTOTIC_MIN = 20.0
_SERIES_TERMS = 30
_ASYMPTOTIC_TERMS = 30
_TRAPEZOID_NODES = 48


class DistFitError(ValueError):
    pass


class ConvergenceError(DistFitError):
    """Optimizer gave up; ``best`` holds the best parameters found."""

    def __init__(self, message, best=None, loglik=None):
        super().__init__(message)
        self.best = best
        self.loglik = loglik


# --------------------------------------------------------------------------
# Modified Bessel function of the second kind, order one
# --------------------------------------------------------------------------

def _k1_series(x: np.ndarray) -> np.ndarray:
    # K1(x) = 1/x + ln(x/2) I1(x) - x/4 sum_k (psi(k+1) + psi(k+2)) (x^2/4)^k / (k! (k+1)!)
    z = 0.25 * x * x
    term = np.ones_like(x)
    i1_sum = np.zeros_like(x)
    psi_sum = np.zeros_like(x)
    harmonic = 0.0
    for k in range(_SERIES_TERMS):
        if k > 0:
            term = term * z / (k * (k + 1))
            harmonic += 1.0 / k
        psi_k1 = -EULER_GAMMA + harmonic
        psi_k2 = psi_k1 + 1.0 / (k + 1)
        i1_sum += term
        psi_sum += (psi_k1 + psi_k2) * term
    i1 = 0.5 * x * i1_sum
    return 1.0 / x + np.log(0.5 * x) * i1 - 0.25 * x * psi_sum


def _k1e_trapezoid(x: np.ndarray) -> np.ndarray:
    # K1(x) e^x = int_0^inf exp(-x (cosh t - 1)) cosh t dt; the trapezoid rule
    # converges geometrically for this analytic, rapidly decaying integrand
    upper = np.arccosh(1.0 + 50.0 / x)
    h = upper / _TRAPEZOID_NODES
    t = np.arange(_TRAPEZOID_NODES + 1)[:, None] * h[None, :]
    ch = np.cosh(t)
    f = np.exp(-x[None, :] * (ch - 1.0)) * ch
    return h * (f.sum(axis=0) - 0.5 * f[0])


def _k1e_asymptotic(x: np.ndarray) -> np.ndarray:
    total = np.ones_like(x)
    term = np.ones_like(x)
    for k in range(1, _ASYMPTOTIC_TERMS + 1):
        term = term * (4.0 - (2 * k - 1) ** 2) / (8.0 * k * x)
        total += term
    return np.sqrt(np.pi / (2.0 * x)) * total


def bessel_k1e(x) -> np.ndarray:
    """Exponentially scaled ``K1(x) * exp(x)`` for ``x > 0``.

    Power series below 2, trapezoid quadrature of the integral
    representation on [2, 20), asymptotic expansion from 20 up.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0) or not np.all(np.isfinite(x)):
        raise DistFitError("K1 requires finite x > 0")
    flat = x.ravel()
    out = np.empty_like(flat)
    small = flat <= _SERIES_MAX
    large = flat >= _ASYMPTOTIC_MIN
    mid = ~(small | large)
    if small.any():
        out[small] = _k1_series(flat[small]) * np.exp(flat[small])
    if mid.any():
        out[mid] = _k1e_trapezoid(flat[mid])
    if large.any():
        out[large] = _k1e_asymptotic(flat[large])
    return out.reshape(x.shape)


def bessel_k1(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return bessel_k1e(x) * np.exp(-x)


def log_bessel_k1(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.log(bessel_k1e(x)) - x


# --------------------------------------------------------------------------
# Distributions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NigParams:
    alpha: float
    beta: float
    delta: float
    mu: float

    def __post_init__(self):
        if not (self.delta > 0 and self.alpha > abs(self.beta)):
            raise DistFitError(f"invalid NIG parameters {self}")

    @property
    def gamma(self) -> float:
        return math.sqrt(self.alpha ** 2 - self.beta ** 2)

    def moments(self) -> tuple[float, float, float, float]:
        """Mean, variance, skewness, excess kurtosis."""
        a, b, d, g = self.alpha, self.beta, self.delta, self.gamma
        mean = self.mu + d * b / g
        var = d * a * a / g ** 3
        skew = 3.0 * b / (a * math.sqrt(d * g))
        kurt = 3.0 * (1.0 + 4.0 * b * b / (a * a)) / (d * g)
        return mean, var, skew, kurt

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "delta": self.delta, "mu": self.mu}


@dataclass(frozen=True)
class NormalParams:
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise DistFitError("sigma must be positive")

    def to_dict(self) -> dict:
        return {"mu": self.mu, "sigma": self.sigma}


def nig_logpdf(params: NigParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    a, b, d = params.alpha, params.beta, params.delta
    g = params.gamma
    dx = x - params.mu
    q = np.hypot(d, dx)
    z = a * q
    # delta*gamma - alpha*q rewritten without cancellation
    expo = d * (-(b * b) / (g + a)) + a * (-(dx * dx) / (d + q))
    return (math.log(a * d / math.pi) + np.log(bessel_k1e(z)) - np.log(q) + expo + b * dx)


def nig_pdf(params: NigParams, x) -> np.ndarray:
    return np.exp(nig_logpdf(params, x))


def normal_logpdf(params: NormalParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    s = params.sigma
    return -0.5 * ((x - params.mu) / s) ** 2 - math.log(s) - 0.5 * math.log(2.0 * math.pi)


def nig_sample(params: NigParams, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw via the normal variance-mean mixture with inverse-Gaussian mixing."""
    g = params.gamma
    v = rng.wald(params.delta / g, params.delta ** 2, size)
    return params.mu + params.beta * v + np.sqrt(v) * rng.standard_normal(size)


def nig_from_moments(mean: float, var: float, skew: float, kurt: float) -> NigParams:
    """Method-of-moments NIG, with skew/kurtosis nudged into the valid region."""
    kurt = max(kurt, 0.1)
    ratio = min(skew * skew / kurt, 0.5)
    rho2 = ratio / (3.0 - 4.0 * ratio)
    dg = 3.0 * (1.0 + 4.0 * rho2) / kurt
    alpha = math.sqrt(dg / (var * (1.0 - rho2) ** 2))
    beta = math.copysign(math.sqrt(rho2), skew) * alpha
    gamma = math.sqrt(alpha ** 2 - beta ** 2)
    delta = dg / gamma
    return NigParams(alpha, beta, delta, mean - delta * beta / gamma)


@dataclass(frozen=True)
class DistFit:
    family: str
    params: object
    loglik: float
    n: int
    iterations: int = 0

    def logpdf(self, x) -> np.ndarray:
        if self.family == "nig":
            return nig_logpdf(self.params, x)
        return normal_logpdf(self.params, x)

    def to_dict(self) -> dict:
        return {"family": self.family, "params": self.params.to_dict(), "loglik": self.loglik,
                "n": self.n, "iterations": self.iterations}


def _unpack(theta) -> NigParams:
    beta = float(theta[1])
    return NigParams(math.exp(theta[0]) + abs(beta), beta, math.exp(theta[2]), float(theta[3]))


def fit_mle(sample, family: str = "nig", max_iter: int = 2000) -> DistFit:
    """Maximum-likelihood fit of ``"normal"`` or ``"nig"``.

    The NIG fit runs Nelder-Mead over ``(log(alpha - |beta|), beta,
    log(delta), mu)`` from a method-of-moments start with a fixed initial
    simplex, so repeated calls give identical results.
    """
    x = np.asarray(sample, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise DistFitError("sample contains NaN/Inf")
    family = family.lower()
    n = x.size
    if family == "normal":
        if n < 2:
            raise DistFitError("normal fit needs at least 2 points")
        mu = float(x.mean())
        sigma = float(np.sqrt(np.mean((x - mu) ** 2)))
        if sigma == 0:
            raise DistFitError("degenerate sample (zero variance)")
        params = NormalParams(mu, sigma)
        return DistFit("normal", params, float(normal_logpdf(params, x).sum()), n)
    if family != "nig":
        raise DistFitError(f"unknown family {family!r}")
    if n < 50:
        raise DistFitError("NIG fit needs at least 50 points")
    mean, var = float(x.mean()), float(x.var())
    if var == 0:
        raise DistFitError("degenerate sample (zero variance)")
    sd = math.sqrt(var)
    z = (x - mean) / sd
    skew, kurt = float(np.mean(z ** 3)), float(np.mean(z ** 4) - 3.0)
    start = nig_from_moments(mean, var, skew, kurt)
    theta0 = np.array([math.log(start.alpha - abs(start.beta)), start.beta,
                       math.log(start.delta), start.mu])

    def nll(theta):
        try:
            p = _unpack(theta)
        except (DistFitError, OverflowError):
            return np.inf
        val = -float(np.sum(nig_logpdf(p, x)))
        return val if math.isfinite(val) else np.inf

    steps = np.array([0.25, 0.25 * max(abs(start.beta), start.alpha / 4), 0.25, 0.25 * sd])
    simplex = np.vstack([theta0] + [theta0 + np.eye(4)[i] * steps[i] for i in range(4)])
    res = optimize.minimize(nll, theta0, method="Nelder-Mead",
                            options={"initial_simplex": simplex, "maxiter": max_iter,
                                     "maxfev": 4 * max_iter, "xatol": 1e-7, "fatol": 1e-9})
    if not res.success:
        best = _unpack(res.x)
        raise ConvergenceError(f"NIG fit did not converge after {res.nit} iterations",
                               best=best, loglik=-float(res.fun))
    return DistFit("nig", _unpack(res.x), -float(res.fun), n, int(res.nit))


# --------------------------------------------------------------------------
# Histogram + density curves
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class HistogramReport:
    bins: list = field(default_factory=list)
    curves: list = field(default_factory=list)
    loglik: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"bins": self.bins, "curves": self.curves, "loglik": self.loglik}


def density_report(sample, fits, grid_points: int = 512) -> HistogramReport:
    """Freedman-Diaconis density histogram plus fitted curves on a grid.

    The grid spans the sample range padded by 5% on each side.
    """
    x = np.asarray(sample, dtype=float).ravel()
    if x.size == 0:
        raise DistFitError("empty sample")
    dens, edges = np.histogram(x, bins="fd", density=True)
    bins = [{"left": float(edges[i]), "right": float(edges[i + 1]), "density": float(dens[i])}
            for i in range(dens.size)]
    lo, hi = float(x.min()), float(x.max())
    pad = 0.05 * (hi - lo)
    grid = np.linspace(lo - pad, hi + pad, grid_points)
    curves = []
    loglik = {}
    for fit in fits:
        curves.append({
            "family": fit.family,
            "params": fit.params.to_dict(),
            "grid": grid.tolist(),
            "density": np.exp(fit.logpdf(grid)).tolist(),
        })
        loglik[fit.family] = fit.loglik
    return HistogramReport(bins, curves, loglik)
