"""Hidden-layer size bounds from matched equilibrium learnability traces.

Closed-form bounds balance the parameter-count trace of a one-layer
network, ``(2n+1) h + n``, against the polynomial target ``eta^2 n C(n+d, d)``.
The Monte Carlo path samples random tanh networks, fits a GEV to their
traces, calibrates the attenuation constant ``c`` and inverts the resulting
degree distribution with Bayes' rule.
"""

from __future__ import annotations

import itertools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from math import comb

import numpy as np

from .compiler import polynet_size
from .gev import GevFit, fit_gev

__all__ = [
    "h_cn_lower",
    "h_sc_lower",
    "elt_target",
    "ln_reference",
    "cn_jacobian",
    "SimConfig",
    "EltDistribution",
    "simulate_elt",
    "calibrate_c",
    "equivalent_degree",
    "DegreePosterior",
    "run_spectra",
    "bayes_size_bound",
    "SizingReport",
    "sizing_report",
]


def _check(n, d, eta):
    if n < 1 or d < 0:
        raise ValueError("need n >= 1 and d >= 0")
    if not eta >= 1:
        raise ValueError("eta must be >= 1")


def _ceil_ratio(eta, num: int, den: int) -> int:
    # exact rational ceiling so e.g. 3*9/7 does not pick up roundoff
    e = Fraction(eta)
    return max(0, math.ceil(e * e * num / den))


def h_cn_lower(n: int, d: int, eta: float = 1.0) -> int:
    """Smallest ``h`` with ``(2n+1) h + n >= eta^2 n C(n+d, d)``."""
    _check(n, d, eta)
    return _ceil_ratio(eta, n * (comb(n + d, d) - 1), 2 * n + 1)


def h_sc_lower(n: int, d: int, eta: float = 1.0) -> int:
    """As :func:`h_cn_lower` with ``n^2`` skip weights absorbing the linear terms."""
    _check(n, d, eta)
    return _ceil_ratio(eta, n * (comb(n + d, d) - n - 1), 2 * n + 1)


def elt_target(n: int, d: int, eta: float = 1.0) -> float:
    return float(eta) ** 2 * n * comb(n + d, d)


def ln_reference(n: int, h: int) -> int:
    """Trace reached by the identity-activation network at a corner: its parameter count."""
    return (2 * n + 1) * h + n


def cn_jacobian(W1, b1, W2, X, activation: str = "tanh", with_skip: bool = False) -> np.ndarray:
    """Parameter Jacobians of a stack of one-layer networks.

    Shapes: ``W1 (T,h,n)``, ``b1 (T,h)``, ``W2 (T,n,h)``, ``X (S,n)``.
    Returns ``(T, S, n, P)`` with columns ordered as in
    :func:`polysize.circuit.make_cn`: W1, W2, skip, b1, b2.
    """
    W1, b1, W2, X = (np.asarray(a, dtype=float) for a in (W1, b1, W2, X))
    T, h, n = W1.shape
    S = X.shape[0]
    a = np.einsum("thk,sk->tsh", W1, X) + b1[:, None, :]
    if activation == "tanh":
        g = np.tanh(a)
        gp = 1.0 - g * g
    elif activation == "identity":
        g, gp = a, np.ones_like(a)
    else:
        raise ValueError(f"unknown activation {activation!r}")
    eye = np.eye(n)
    dW1 = np.einsum("tij,tsj,sk->tsijk", W2, gp, X).reshape(T, S, n, h * n)
    dW2 = np.einsum("ia,tsj->tsiaj", eye, g).reshape(T, S, n, n * h)
    db1 = np.einsum("tij,tsj->tsij", W2, gp)
    db2 = np.broadcast_to(eye, (T, S, n, n))
    blocks = [dW1, dW2]
    if with_skip:
        blocks.append(np.broadcast_to(np.einsum("ia,sk->siak", eye, X).reshape(S, n, n * n), (T, S, n, n * n)))
    blocks += [db1, db2]
    return np.concatenate(blocks, axis=-1)


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo settings for the random-network spectra.

    ``h_max=None`` extends the grid to ``max(20, 3 * h_cn_lower)`` for the
    target degree.  ``normalize="output"`` rescales each trial's output
    weights to unit max-abs; ``"none"`` keeps raw standard-normal draws.
    """

    trials: int = 2000
    input_samples: int = 64
    h_max: int | None = None
    p0: float = 0.99
    seed: int = 42
    activation: str = "tanh"
    aggregate: str = "max"
    interior: bool = False
    normalize: str = "output"
    block: int = 10
    p_star: float = 0.999
    posterior: str = "size"
    threads: int | None = None

    def __post_init__(self):
        if self.trials < 100:
            raise ValueError("need at least 100 trials")
        if self.input_samples < 1:
            raise ValueError("input_samples must be >= 1")
        if self.aggregate not in ("max", "mean"):
            raise ValueError("aggregate must be 'max' or 'mean'")
        if self.normalize not in ("output", "none"):
            raise ValueError("normalize must be 'output' or 'none'")
        if self.posterior not in ("size", "degree"):
            raise ValueError("posterior must be 'size' or 'degree'")
        if not 0 < self.p0 < 1:
            raise ValueError("p0 must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("threads")
        return d


@dataclass(frozen=True, eq=False)
class EltDistribution:
    n: int
    h: int
    activation: str
    samples: np.ndarray
    fit: GevFit | None

    @property
    def gev(self):
        f = self.fit
        return None if f is None else (f.loc, f.scale, f.shape)

    @property
    def elt_star(self) -> float:
        return float(self.samples.max()) if self.fit is None else self.fit.elt_star


def _inputs(n, count, rng, interior):
    if 2**n <= count:
        X = np.array(list(itertools.product((-1.0, 1.0), repeat=n)))
    else:
        X = rng.choice((-1.0, 1.0), size=(count, n))
    if interior:
        X = np.vstack([X, rng.uniform(-1.0, 1.0, size=(count, n))])
    return X


def _trial_elt(n, h, trial, seed, cfg: SimConfig) -> float:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(n, h, trial)))
    W1 = rng.standard_normal((h, n))
    b1 = rng.standard_normal(h)
    W2 = rng.standard_normal((n, h))
    rng.standard_normal(n)  # output biases do not enter the Jacobian
    if cfg.normalize == "output" and h:
        W2 = W2 / np.abs(W2).max()
    X = _inputs(n, cfg.input_samples, rng, cfg.interior)
    J = cn_jacobian(W1[None], b1[None], W2[None], X, cfg.activation)[0]
    per_input = np.einsum("sip,sip->s", J, J)
    return float(per_input.max() if cfg.aggregate == "max" else per_input.mean())


def simulate_elt(n: int, h: int, config: SimConfig | None = None, *, fit: bool = True) -> EltDistribution:
    """Per-trial traces of random one-layer networks with ``h`` hidden nodes.

    Each trial has its own RNG stream keyed by ``(seed, n, h, trial)``, so
    the samples do not depend on evaluation order or thread count.
    """
    cfg = config or SimConfig()
    if n < 1 or h < 0:
        raise ValueError("need n >= 1 and h >= 0")
    samples = np.array([_trial_elt(n, h, t, cfg.seed, cfg) for t in range(cfg.trials)])
    if not np.all(np.isfinite(samples)) or samples.min() < 0:
        raise FloatingPointError("invalid trace samples")
    gev = None
    if fit and np.ptp(samples) > 0:
        gev = fit_gev(samples, block=cfg.block, p_star=cfg.p_star)
    return EltDistribution(n, h, cfg.activation, samples, gev)


def calibrate_c(elt_star: float, n: int, h: int) -> float:
    """``c = elt_star / ((2n+1) h + n)``; warns when ``c > 1``."""
    if not elt_star > 0:
        raise ValueError("elt_star must be positive")
    c = elt_star / ln_reference(n, h)
    if c > 1:
        warnings.warn(f"calibrated c = {c:.4g} > 1 at n={n}, h={h}", RuntimeWarning, stacklevel=2)
    return c


def equivalent_degree(elt_sample, c: float, n: int, d_max: int, eta: float = 1.0):
    """Largest ``d <= d_max`` with ``eta^2 n C(n+d, d) <= elt / c`` (0 if none)."""
    if not c > 0:
        raise ValueError("c must be positive")
    table = np.array([elt_target(n, d, eta) for d in range(d_max + 1)])
    x = np.asarray(elt_sample, dtype=float) / c
    d = np.searchsorted(table, x, side="right") - 1
    d = np.maximum(d, 0)
    return int(d) if d.ndim == 0 else d


@dataclass(frozen=True, eq=False)
class DegreePosterior:
    """Degree CDFs per size and the Bayes-inverted size posteriors per degree.

    Rows index ``h_grid``; columns index degrees ``0..d_max``.
    """

    h_grid: np.ndarray
    d_max: int
    F_d_given_h: np.ndarray
    P_h_given_d: np.ndarray
    F_h_given_d: np.ndarray

    def h_star(self, d: int, p0: float) -> int:
        if d == 0:
            return int(self.h_grid[0])
        F = self.F_h_given_d[:, d]
        if not np.isfinite(F).all():
            raise ValueError(f"degree {d} is never supported on h <= {int(self.h_grid[-1])}; enlarge the h grid")
        below = self.h_grid[F < p0]
        return int(below.max()) + 1 if below.size else int(self.h_grid[0])


def _posterior(h_grid, F_dh, mode):
    H, D1 = F_dh.shape
    if mode == "degree":
        # P_{d|h} by differencing the degree CDF
        lik = np.diff(F_dh, axis=1, prepend=0.0)
    else:
        # survival of degree d along h, made monotone and differenced in h
        S = np.ones_like(F_dh)
        S[:, 1:] = 1.0 - F_dh[:, :-1]
        S = np.maximum.accumulate(S, axis=0)
        lik = np.diff(S, axis=0, prepend=0.0)
    tot = lik.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        P = np.where(tot > 0, lik / tot, np.nan)
    F = np.cumsum(P, axis=0)
    F[-1][np.isfinite(F[-1])] = 1.0
    return P, F


def _grid_max(n, d_target, cfg):
    need = 3 * h_cn_lower(n, d_target)
    h_max = cfg.h_max if cfg.h_max is not None else max(20, need)
    if h_max < need:
        raise ValueError(f"h grid must reach 3*h_cn_lower = {need} (got {h_max})")
    return h_max


def run_spectra(n: int, h_max: int, config: SimConfig | None = None, eta: float = 1.0):
    """Simulate every grid cell ``h = 1..h_max`` and build the posterior tables.

    Returns ``(distributions, posterior)``.
    """
    cfg = config or SimConfig()
    h_grid = np.arange(1, h_max + 1)
    # degrees well beyond anything the largest network can cover
    d_max = 0
    while elt_target(n, d_max, eta) <= 2 * ln_reference(n, h_max):
        d_max += 1
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        dists = list(pool.map(lambda h: simulate_elt(n, int(h), cfg), h_grid))
    F_dh = np.empty((h_grid.size, d_max + 1))
    for r, dist in enumerate(dists):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            c = calibrate_c(dist.elt_star, n, dist.h)
        deg = equivalent_degree(dist.samples, c, n, d_max, eta)
        F_dh[r] = np.cumsum(np.bincount(deg, minlength=d_max + 1)) / deg.size
    P, F = _posterior(h_grid, F_dh, cfg.posterior)
    return dists, DegreePosterior(h_grid, d_max, F_dh, P, F)


def bayes_size_bound(n: int, d_target: int, config: SimConfig | None = None, eta: float = 1.0):
    """Bayesian lower bound ``h*`` for degree ``d_target``; returns ``(h*, posterior)``."""
    cfg = config or SimConfig()
    _check(n, d_target, eta)
    h_max = _grid_max(n, d_target, cfg)
    if d_target == 0:
        return 1, None
    _, post = run_spectra(n, h_max, cfg, eta)
    if d_target > post.d_max:
        raise ValueError(f"degree {d_target} is never supported on h <= {h_max}; enlarge the h grid")
    return post.h_star(d_target, cfg.p0), post


@dataclass(frozen=True)
class SizingReport:
    n: int
    d: int
    eta: float
    elt_target: float
    h_polynet: int
    h_cn_lower: int
    h_sc_lower: int
    h_bayes: int | None = None
    bayes: dict | None = None
    posterior: DegreePosterior | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        keys = ["n", "d", "eta", "elt_target", "h_polynet", "h_cn_lower", "h_sc_lower"]
        if self.h_bayes is not None:
            keys += ["h_bayes", "bayes"]
        return {k: getattr(self, k) for k in keys}


def sizing_report(n: int, d: int, eta: float = 1.0, with_bayes: bool = False, config: SimConfig | None = None) -> SizingReport:
    _check(n, d, eta)
    hb, extra, post = None, None, None
    if with_bayes:
        cfg = config or SimConfig()
        hb, post = bayes_size_bound(n, d, cfg, eta)
        extra = dict(cfg.to_dict(), h_max=_grid_max(n, d, cfg))
    return SizingReport(
        n=n,
        d=d,
        eta=float(eta),
        elt_target=elt_target(n, d, eta),
        h_polynet=polynet_size(n, d),
        h_cn_lower=h_cn_lower(n, d, eta),
        h_sc_lower=h_sc_lower(n, d, eta),
        h_bayes=hb,
        bayes=extra,
        posterior=post,
    )
