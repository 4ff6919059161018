"""Gradient distribution models.

Fits Normal, Laplace, and generalized-normal (GenNorm) families to gradient
samples, scores them with the one-dimensional Wasserstein-2 distance, and
turns a fitted model into per-quantization-cell probabilities for codebook
construction.

The GenNorm density is ``beta / (2 alpha Gamma(1/beta)) * exp(-(|x-mu|/alpha)^beta)``;
``beta=2`` is Normal (variance ``alpha^2/2``), ``beta=1`` is Laplace with
diversity ``alpha``. The CDF needs the regularized lower incomplete gamma
function, implemented here with the classic series / continued-fraction split
at ``x = s + 1`` so the core library stays numpy-only.
"""

import math
from dataclasses import dataclass

import numpy as np

from ._minimize import golden_section

BETA_SEARCH_RANGE = (0.1, 5.0)
MIN_FIT_SAMPLES = 100
CELL_PROB_FLOOR = 1e-12
W2_MAX_QUANTILES = 4096


class DegenerateSampleError(ValueError):
    """Sample has no spread; no scale family can be fitted."""


class InsufficientDataError(ValueError):
    """Too few samples for a stable fit."""


@dataclass(frozen=True)
class GenNormParams:
    """Shape ``beta``, location ``mu``, scale ``alpha`` of a generalized normal."""

    beta: float
    mu: float
    alpha: float

    def __post_init__(self):
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be positive and finite, got {self.beta}")
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha}")
        if not math.isfinite(self.mu):
            raise ValueError(f"mu must be finite, got {self.mu}")

    @property
    def variance(self):
        return self.alpha**2 * math.exp(
            math.lgamma(3.0 / self.beta) - math.lgamma(1.0 / self.beta)
        )

    @property
    def sigma(self):
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class FitReport:
    """One fitted family and its Wasserstein-2 distance to the sample."""

    family: str  # "normal" | "laplace" | "gennorm"
    beta: float
    mu: float
    scale: float  # family-native scale: stdev / diversity / alpha
    w2: float

    def as_gennorm(self):
        if self.family == "normal":
            return GenNormParams(2.0, self.mu, self.scale * math.sqrt(2.0))
        if self.family == "laplace":
            return GenNormParams(1.0, self.mu, self.scale)
        return GenNormParams(self.beta, self.mu, self.scale)


# ----------------------------------------------------------------------
# regularized lower incomplete gamma, vectorized over x for scalar s

_TINY = 1e-300
_CONV_EPS = 1e-15


def _gamma_series(s, x, max_iter=600):
    # P(s, x) by power series; valid for x < s + 1
    out = np.zeros_like(x)
    pos = x > 0
    xv = x[pos]
    if xv.size:
        term = np.full_like(xv, 1.0 / s)
        total = term.copy()
        ap = s
        for _ in range(max_iter):
            ap += 1.0
            term = term * xv / ap
            total += term
            if np.all(np.abs(term) <= np.abs(total) * _CONV_EPS):
                break
        else:
            raise FloatingPointError("incomplete gamma series did not converge")
        out[pos] = total * np.exp(-xv + s * np.log(xv) - math.lgamma(s))
    return out


def _gamma_cf(s, x, max_iter=600):
    # Q(s, x) by modified Lentz continued fraction; valid for x >= s + 1
    if x.size == 0:
        return x.copy()
    b = x + 1.0 - s
    c = np.full_like(x, 1.0 / _TINY)
    d = 1.0 / b
    h = d.copy()
    for i in range(1, max_iter + 1):
        an = -i * (i - s)
        b = b + 2.0
        d = an * d + b
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = b + an / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        delta = d * c
        h = h * delta
        if np.all(np.abs(delta - 1.0) < _CONV_EPS):
            break
    else:
        raise FloatingPointError("incomplete gamma continued fraction did not converge")
    return h * np.exp(-x + s * np.log(x) - math.lgamma(s))


def lower_gamma_reg(s, x):
    """Regularized lower incomplete gamma P(s, x) for scalar s > 0, array x >= 0."""
    if not s > 0:
        raise ValueError(f"s must be positive, got {s}")
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    if np.any(x < 0):
        raise ValueError("x must be non-negative")
    out = np.empty_like(x)
    small = x < s + 1.0
    out[small] = _gamma_series(s, x[small])
    out[~small] = 1.0 - _gamma_cf(s, x[~small])
    return float(out[0]) if scalar else out


# ----------------------------------------------------------------------
# GenNorm density / CDF / quantiles


def gennorm_logpdf(x, params):
    x = np.asarray(x, dtype=np.float64)
    b, a = params.beta, params.alpha
    lognorm = math.log(b) - math.log(2.0 * a) - math.lgamma(1.0 / b)
    return lognorm - (np.abs(x - params.mu) / a) ** b


def gennorm_pdf(x, params):
    return np.exp(gennorm_logpdf(x, params))


def gennorm_cdf(x, params):
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    z = (np.abs(x - params.mu) / params.alpha) ** params.beta
    p = lower_gamma_reg(1.0 / params.beta, z)
    out = 0.5 + 0.5 * np.sign(x - params.mu) * p
    return float(out[0]) if scalar else out


def gennorm_ppf(q, params, rtol=1e-10, max_iter=200):
    """Quantiles by bisection of the CDF to the given relative interval width."""
    q = np.asarray(q, dtype=np.float64)
    scalar = q.ndim == 0
    q = np.atleast_1d(q)
    if np.any((q <= 0) | (q >= 1)):
        raise ValueError("quantile levels must lie strictly inside (0, 1)")
    w = params.alpha
    for _ in range(200):
        if (
            gennorm_cdf(params.mu + w, params) >= q.max()
            and gennorm_cdf(params.mu - w, params) <= q.min()
        ):
            break
        w *= 2.0
    else:
        raise FloatingPointError("failed to bracket the requested quantiles")
    lo = np.full_like(q, params.mu - w)
    hi = np.full_like(q, params.mu + w)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        below = gennorm_cdf(mid, params) < q
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        tol = rtol * np.maximum(1.0, np.maximum(np.abs(lo), np.abs(hi)))
        if np.all(hi - lo <= tol):
            break
    out = 0.5 * (lo + hi)
    return float(out[0]) if scalar else out


def sample_gennorm(params, size, rng):
    """Draw i.i.d. GenNorm variates: alpha * sign * Gamma(1/beta)^(1/beta) + mu."""
    g = rng.gamma(shape=1.0 / params.beta, scale=1.0, size=size)
    sign = rng.integers(0, 2, size=size) * 2 - 1
    return params.mu + params.alpha * sign * g ** (1.0 / params.beta)


# ----------------------------------------------------------------------
# fitting


def _check_sample(samples):
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < MIN_FIT_SAMPLES:
        raise InsufficientDataError(
            f"need at least {MIN_FIT_SAMPLES} samples, got {x.size}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("samples contain non-finite values")
    if np.min(x) == np.max(x):
        raise DegenerateSampleError("all samples are equal; no scale to fit")
    return x


def fit_normal(samples):
    """MLE Normal fit: (mean, population stdev)."""
    x = _check_sample(samples)
    return float(np.mean(x)), float(np.std(x))


def fit_laplace(samples):
    """MLE Laplace fit: (median, mean absolute deviation from the median)."""
    x = _check_sample(samples)
    med = float(np.median(x))
    return med, float(np.mean(np.abs(x - med)))


def profile_alpha(beta, deviations):
    """Closed-form scale MLE given beta: (beta * mean|x-mu|^beta)^(1/beta)."""
    return float((beta * np.mean(deviations**beta)) ** (1.0 / beta))


def fit_gennorm(samples):
    """GenNorm MLE with mu pinned to the sample mean and alpha profiled out.

    The shape parameter comes from a bounded 1-D search of the profile
    log-likelihood over ``beta in [0.1, 5]`` (coarse grid plus golden-section
    refinement), which keeps the fit deterministic for a fixed input.
    """
    x = _check_sample(samples)
    mu = float(np.mean(x))
    dev = np.abs(x - mu)

    def neg_profile_loglik(beta):
        alpha = profile_alpha(beta, dev)
        # per-sample profile log-likelihood: ln b - ln 2 - ln a - lgamma(1/b) - 1/b
        return -(
            math.log(beta)
            - math.log(2.0)
            - math.log(alpha)
            - math.lgamma(1.0 / beta)
            - 1.0 / beta
        )

    lo, hi = BETA_SEARCH_RANGE
    # geometric coarse grid: the likelihood varies on a log scale in beta
    grid = np.geomspace(lo, hi, 61)
    vals = [neg_profile_loglik(b) for b in grid]
    i = int(np.argmin(vals))
    a = grid[max(0, i - 1)]
    b = grid[min(len(grid) - 1, i + 1)]
    beta = golden_section(neg_profile_loglik, a, b, tol=1e-7)
    return GenNormParams(beta, mu, profile_alpha(beta, dev))


# ----------------------------------------------------------------------
# goodness of fit and codebook probabilities


def w2_distance(samples, model):
    """Wasserstein-2 distance via quantile coupling on a capped interior grid."""
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    n = x.size
    if n == 0:
        raise ValueError("empty sample")
    k = min(n, W2_MAX_QUANTILES)
    q = (np.arange(1, k + 1) - 0.5) / k
    emp = x[np.ceil(q * n).astype(np.int64) - 1]  # type-1 empirical quantiles
    mod = gennorm_ppf(q, model)
    return float(np.sqrt(np.mean((emp - mod) ** 2)))


def fit_all(samples):
    """Fit all three families and score each with W2; order: normal, laplace, gennorm."""
    reports = []
    mean, sd = fit_normal(samples)
    if sd == 0.0:
        raise DegenerateSampleError("zero standard deviation")
    reports.append(
        FitReport("normal", 2.0, mean, sd, w2_distance(samples, GenNormParams(2.0, mean, sd * math.sqrt(2.0))))
    )
    med, div = fit_laplace(samples)
    if div == 0.0:
        raise DegenerateSampleError("zero mean absolute deviation")
    reports.append(
        FitReport("laplace", 1.0, med, div, w2_distance(samples, GenNormParams(1.0, med, div)))
    )
    gn = fit_gennorm(samples)
    reports.append(FitReport("gennorm", gn.beta, gn.mu, gn.alpha, w2_distance(samples, gn)))
    return reports


def cell_probabilities(dist, fmt):
    """Probability mass of each nearest-neighbor quantization cell under ``dist``.

    Cell boundaries sit at midpoints between adjacent levels; the outermost
    cells extend to +-infinity so saturated mass is absorbed. Every level gets
    at least the floor probability (added, then renormalized) so all symbols
    stay encodable.
    """
    from .fpq import enumerate_levels

    levels = enumerate_levels(fmt)
    mids = 0.5 * (levels[:-1] + levels[1:])
    cdf = gennorm_cdf(mids, dist)
    p = np.diff(np.concatenate(([0.0], cdf, [1.0])))
    p = p + CELL_PROB_FLOOR
    return p / p.sum()
