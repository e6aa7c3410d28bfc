"""Generalized extreme value fits by the method of L-moments.

Shape convention: ``shape > 0`` is the heavy (Frechet) tail, ``shape < 0``
has the finite upper endpoint ``loc - scale / shape``.  Note that
``scipy.stats.genextreme`` uses ``c = -shape``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln

__all__ = ["GEV", "GevFit", "sample_lmoments", "maxima_lmoments", "gev_from_lmoments", "fit_gev", "block_maxima"]


@dataclass(frozen=True)
class GEV:
    loc: float
    scale: float
    shape: float

    def cdf(self, x):
        z = (np.asarray(x, dtype=float) - self.loc) / self.scale
        if abs(self.shape) < 1e-12:
            return np.exp(-np.exp(-z))
        t = 1.0 + self.shape * z
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.exp(-np.power(np.where(t > 0, t, np.nan), -1.0 / self.shape))
        if self.shape < 0:
            return np.where(t > 0, out, 1.0)
        return np.where(t > 0, out, 0.0)

    def ppf(self, p):
        p = np.asarray(p, dtype=float)
        y = -np.log(p)
        if abs(self.shape) < 1e-12:
            return self.loc - self.scale * np.log(y)
        return self.loc + self.scale * np.expm1(-self.shape * np.log(y)) / self.shape

    @property
    def upper_endpoint(self) -> float:
        return self.loc - self.scale / self.shape if self.shape < 0 else math.inf


def sample_lmoments(x) -> tuple[float, float, float]:
    """Unbiased sample L-moments ``(l1, l2, t3)`` from probability-weighted moments."""
    x = np.sort(np.asarray(x, dtype=float))
    n = x.size
    if n < 3:
        raise ValueError("need at least 3 samples")
    i = np.arange(n)
    b0 = x.mean()
    b1 = np.sum(i * x) / (n * (n - 1))
    b2 = np.sum(i * (i - 1) * x) / (n * (n - 1) * (n - 2))
    l1 = b0
    l2 = 2 * b1 - b0
    l3 = 6 * b2 - 6 * b1 + b0
    if not l2 > 0:
        raise ValueError("degenerate samples (zero spread)")
    return l1, l2, l3 / l2


def _tau3(k: float) -> float:
    # GEV L-skewness for Hosking's k = -shape
    if abs(k) < 1e-9:
        return 2 * math.log(3) / math.log(2) - 3
    return 2 * (-math.expm1(-k * math.log(3))) / (-math.expm1(-k * math.log(2))) - 3


def gev_from_lmoments(l1: float, l2: float, t3: float) -> GEV:
    """GEV parameters matching the first three L-moments.

    The shape solves the L-skewness equation exactly (Brent), seeded from
    Hosking's rational approximation.
    """
    if not -1.0 < t3 < 1.0:
        raise ValueError(f"L-skewness {t3} outside (-1, 1)")
    z = 2.0 / (3.0 + t3) - math.log(2) / math.log(3)
    k0 = 7.8590 * z + 2.9554 * z * z
    lo, hi = min(k0 - 0.5, -0.999), max(k0 + 0.5, 0.5)
    while _tau3(hi) > t3 and hi < 1e3:
        hi *= 2
    k = brentq(lambda k: _tau3(k) - t3, lo, hi, xtol=1e-14)
    if abs(k) < 1e-9:
        scale = l2 / math.log(2)
        loc = l1 - 0.5772156649015329 * scale
    else:
        g = math.gamma(1 + k)
        scale = l2 * k / ((-math.expm1(-k * math.log(2))) * g)
        loc = l1 - scale * (1 - g) / k
    return GEV(loc, scale, -k)


def block_maxima(x, block: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    nb = x.size // block
    return x[: nb * block].reshape(nb, block).max(axis=1)


def _expected_max(xs: np.ndarray, m: int) -> float:
    """Unbiased U-statistic for ``E[max of m draws]`` from sorted samples."""
    n = xs.size
    i = np.arange(m, n + 1)
    logw = gammaln(i) - gammaln(m) - gammaln(i - m + 1) - (gammaln(n + 1) - gammaln(m + 1) - gammaln(n - m + 1))
    return float(np.sum(np.exp(logw) * xs[m - 1 :]))


def maxima_lmoments(x, block: int) -> tuple[float, float, float]:
    """``(l1, l2, t3)`` of the distribution of the maximum of ``block`` draws.

    Uses every sample: the probability-weighted moment ``b_r`` of ``F**block``
    is ``E[max of (r+1)*block draws] / (r+1)``.  ``block=1`` gives the
    usual unbiased sample L-moments.
    """
    xs = np.sort(np.asarray(x, dtype=float))
    if xs.size < 3 * block:
        raise ValueError("too few samples for the block size")
    b0, b1, b2 = (_expected_max(xs, (r + 1) * block) / (r + 1) for r in range(3))
    l2 = 2 * b1 - b0
    if not l2 > 0:
        raise ValueError("degenerate samples (zero spread)")
    return b0, l2, (6 * b2 - 6 * b1 + b0) / l2


@dataclass(frozen=True)
class GevFit:
    """Fitted parent GEV and the derived empirical-maximum estimate."""

    gev: GEV
    elt_star: float
    block: int
    p_star: float

    @property
    def loc(self):
        return self.gev.loc

    @property
    def scale(self):
        return self.gev.scale

    @property
    def shape(self):
        return self.gev.shape

    @property
    def upper_endpoint(self):
        return self.gev.upper_endpoint


def fit_gev(samples, block: int = 10, p_star: float = 0.999) -> GevFit:
    """Fit a GEV to ``samples`` and estimate their empirical maximum.

    The L-moment fit is made to the distribution of the maximum of
    ``block`` draws (estimated from all samples, see :func:`maxima_lmoments`)
    and mapped back to the per-sample parent with max-stability
    (``F_parent = F_block ** (1/block)``); the shape and the upper endpoint
    are unchanged by that map.  ``block=1`` fits the raw samples.
    ``elt_star`` is the parent ``p_star`` quantile.
    """
    x = np.asarray(samples, dtype=float)
    if x.size < 100:
        raise ValueError("need at least 100 samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite samples")
    if np.ptp(x) == 0.0:
        raise ValueError("degenerate samples (zero variance)")
    if block < 1 or x.size // block < 10:
        raise ValueError("block size leaves fewer than 10 block maxima")
    bm = gev_from_lmoments(*maxima_lmoments(x, block))
    xi = bm.shape
    if block == 1:
        parent = bm
    else:
        scale = bm.scale * block ** (-xi)
        shift = scale * (math.log(block) if abs(xi) < 1e-12 else math.expm1(xi * math.log(block)) / xi)
        parent = GEV(bm.loc - shift, scale, xi)
    return GevFit(parent, float(parent.ppf(p_star)), block, p_star)
