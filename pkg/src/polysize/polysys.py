"""Polynomial dynamical systems with optional parameter tying.

A system of dimension ``n`` and degree ``d`` carries ``m = C(n+d, d)``
monomials in graded lexicographic order (constant, then the ``n`` linear
terms in input order, then higher degrees) and an ``n x m`` coefficient
matrix ``alpha``.  Untied systems treat every coefficient as a free
parameter.  Tied systems expose a short vector ``theta`` and a sparse map
``alpha[i, k] = multiplier * theta[q]``; every other coefficient is a
fixed constant.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from pathlib import Path

import numpy as np

__all__ = [
    "Tie",
    "PolynomialSystem",
    "enumerate_monomials",
    "monomial_values",
    "evaluate",
    "parameter_jacobian",
    "elt_bound",
    "l63_system",
    "l63_rhs",
    "random_system",
]


def enumerate_monomials(n: int, d: int) -> list[tuple[int, ...]]:
    """Exponent vectors of all monomials in ``n`` inputs up to degree ``d``.

    Graded lexicographic order: the constant first, then each degree in
    turn, with the combinations of input indices in lexicographic order
    (so for ``n=3, d=2``: 1, x1, x2, x3, x1^2, x1x2, x1x3, x2^2, x2x3, x3^2).
    """
    if n < 1 or d < 0:
        raise ValueError(f"need n >= 1 and d >= 0, got n={n}, d={d}")
    out = []
    for degree in range(d + 1):
        for combo in itertools.combinations_with_replacement(range(n), degree):
            e = [0] * n
            for k in combo:
                e[k] += 1
            out.append(tuple(e))
    return out


@dataclass(frozen=True)
class Tie:
    """``alpha[output, monomial] = multiplier * theta[param]``."""

    param: int
    output: int
    monomial: int
    multiplier: float = 1.0


@dataclass(frozen=True, eq=False)
class PolynomialSystem:
    """Autonomous polynomial ODE ``xdot = f(x; alpha)``.

    Parameters
    ----------
    n, d : int
        State dimension and maximum degree.
    alpha : ndarray, shape (n, m)
        Coefficients; for tied entries this must equal ``multiplier * theta``.
    ties : tuple of Tie or None
        ``None`` means untied (all ``n*m`` coefficients are free).
    param_names : tuple of str
        Names of the tied free parameters.
    theta : ndarray or None
        Values of the tied free parameters.
    """

    n: int
    d: int
    alpha: np.ndarray
    ties: tuple[Tie, ...] | None = None
    param_names: tuple[str, ...] = ()
    theta: np.ndarray | None = None
    monomials: tuple[tuple[int, ...], ...] = field(init=False)

    def __post_init__(self):
        mons = tuple(enumerate_monomials(self.n, self.d))
        object.__setattr__(self, "monomials", mons)
        alpha = np.array(self.alpha, dtype=float)
        if alpha.shape != (self.n, len(mons)):
            raise ValueError(f"alpha must have shape {(self.n, len(mons))}, got {alpha.shape}")
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        if self.ties is None:
            return
        theta = np.array(self.theta if self.theta is not None else [], dtype=float)
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        if len(self.param_names) != theta.size:
            raise ValueError("param_names and theta differ in length")
        seen = set()
        for t in self.ties:
            if not 0 <= t.param < theta.size:
                raise ValueError(f"tie references unknown parameter {t.param}")
            key = (t.output, t.monomial)
            if key in seen:
                raise ValueError(f"coefficient {key} tied more than once")
            seen.add(key)
            if alpha[key] != t.multiplier * theta[t.param]:
                raise ValueError(f"alpha{key} inconsistent with its tie")
        if np.linalg.matrix_rank(self.tying_matrix()) < theta.size:
            raise ValueError("tying map columns are not linearly independent")

    @property
    def m(self) -> int:
        return len(self.monomials)

    @property
    def tied(self) -> bool:
        return self.ties is not None

    @property
    def n_params(self) -> int:
        return self.n * self.m if self.ties is None else len(self.param_names)

    @property
    def exponents(self) -> np.ndarray:
        return np.array(self.monomials, dtype=int).reshape(self.m, self.n)

    def params(self) -> np.ndarray:
        """Free parameter vector (flattened alpha if untied, else theta)."""
        return self.alpha.ravel().copy() if self.ties is None else self.theta.copy()

    def with_params(self, values) -> "PolynomialSystem":
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {values.shape}")
        if self.ties is None:
            return PolynomialSystem(self.n, self.d, values.reshape(self.n, self.m))
        alpha = np.array(self.alpha)
        for t in self.ties:
            alpha[t.output, t.monomial] = t.multiplier * values[t.param]
        return PolynomialSystem(self.n, self.d, alpha, self.ties, self.param_names, values)

    def tying_matrix(self) -> np.ndarray:
        """Matrix ``T`` with ``d alpha.ravel() / d params = T``, shape (n*m, p)."""
        if self.ties is None:
            return np.eye(self.n * self.m)
        T = np.zeros((self.n * self.m, len(self.param_names)))
        for t in self.ties:
            T[t.output * self.m + t.monomial, t.param] = t.multiplier
        return T

    def constant_mask(self) -> np.ndarray:
        """True where a coefficient is a fixed constant (not a free parameter)."""
        mask = np.zeros((self.n, self.m), dtype=bool)
        if self.ties is not None:
            mask[:] = True
            for t in self.ties:
                mask[t.output, t.monomial] = False
        return mask

    # serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        coefficients = []
        tie_at = {(t.output, t.monomial): t for t in self.ties or ()}
        for i in range(self.n):
            for k, e in enumerate(self.monomials):
                t = tie_at.get((i, k))
                if t is not None:
                    coefficients.append(
                        {
                            "output": i,
                            "exponents": list(e),
                            "param": self.param_names[t.param],
                            "multiplier": _num_str(t.multiplier),
                        }
                    )
                elif self.alpha[i, k] != 0.0:
                    coefficients.append(
                        {"output": i, "exponents": list(e), "value": _num_str(self.alpha[i, k])}
                    )
        doc = {"n": self.n, "d": self.d}
        if self.ties is not None:
            doc["params"] = {name: _num_str(v) for name, v in zip(self.param_names, self.theta)}
        doc["coefficients"] = coefficients
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "PolynomialSystem":
        n, d = int(doc["n"]), int(doc["d"])
        mons = enumerate_monomials(n, d)
        index = {e: k for k, e in enumerate(mons)}
        alpha = np.zeros((n, len(mons)))
        params = doc.get("params")
        names = tuple(params) if params is not None else ()
        theta = np.array([_parse_num(params[k]) for k in names]) if params is not None else None
        ties = []
        for c in doc.get("coefficients", []):
            i = int(c["output"])
            e = tuple(int(v) for v in c["exponents"])
            if len(e) != n or e not in index or not 0 <= i < n:
                raise ValueError(f"invalid coefficient entry {c}")
            k = index[e]
            if "param" in c:
                if params is None:
                    raise ValueError("coefficient references a parameter but no 'params' block given")
                q = names.index(c["param"])
                mult = _parse_num(c.get("multiplier", 1))
                ties.append(Tie(q, i, k, mult))
                alpha[i, k] = mult * theta[q]
            else:
                alpha[i, k] = _parse_num(c["value"])
        if params is None:
            return cls(n, d, alpha)
        return cls(n, d, alpha, tuple(ties), names, theta)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "PolynomialSystem":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _num_str(v: float) -> str:
    # repr of a float round-trips exactly
    return repr(float(v))


def _parse_num(v) -> float:
    if isinstance(v, str):
        return float(Fraction(v.strip())) if "/" in v else float(v)
    return float(v)


def _as_points(system: PolynomialSystem, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[-1] != system.n:
        raise ValueError(f"expected points of dimension {system.n}, got {x.shape[-1]}")
    return x, single


def monomial_values(system: PolynomialSystem, x) -> np.ndarray:
    """Values of every monomial at ``x`` (shape (..., m)).

    Each monomial is an ordered product over inputs; powers are repeated
    multiplication so a compiled product node reproduces it bit for bit.
    """
    x, single = _as_points(system, x)
    z = np.empty(x.shape[:-1] + (system.m,))
    for k, e in enumerate(system.monomials):
        acc = None
        for j, p in enumerate(e):
            for _ in range(p):
                acc = x[..., j] if acc is None else acc * x[..., j]
        z[..., k] = 1.0 if acc is None else acc
    return z[0] if single else z


def evaluate(system: PolynomialSystem, x) -> np.ndarray:
    """Rates ``xdot_i = sum_k alpha[i, k] * z_k(x)``, accumulated in monomial order."""
    x, single = _as_points(system, x)
    z = monomial_values(system, x)
    out = np.empty_like(x)
    for i in range(system.n):
        acc = system.alpha[i, 0] * z[..., 0]
        for k in range(1, system.m):
            a = system.alpha[i, k]
            if a != 0.0:
                acc = acc + a * z[..., k]
        out[..., i] = acc
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite rate")
    return out[0] if single else out


def parameter_jacobian(system: PolynomialSystem, x) -> np.ndarray:
    """d xdot / d params at ``x``; shape (n, p), or (S, n, p) for a batch."""
    x, single = _as_points(system, x)
    z = monomial_values(system, x)
    n, m = system.n, system.m
    J = np.zeros(x.shape[:-1] + (n, n * m))
    for i in range(n):
        J[..., i, i * m : (i + 1) * m] = z
    if system.ties is not None:
        J = J @ system.tying_matrix()
    return J[0] if single else J


def elt_bound(system: PolynomialSystem) -> float:
    """Upper bound of the squared Frobenius norm of the parameter Jacobian on [-1, 1]^n.

    Every monomial is bounded by 1 in magnitude on the unit hypercube, so the
    gradient with respect to one free parameter is bounded by the l1 norm of
    the coefficients it feeds.
    """
    T = system.tying_matrix()
    return float(np.sum(np.abs(T).sum(axis=0) ** 2))


def l63_system(sigma: float = 10.0, rho: float = 28.0, beta: float = 8.0 / 3.0) -> PolynomialSystem:
    """Lorenz-63 as a tied (3, 2) system with free parameters (sigma, rho, beta)."""
    mons = enumerate_monomials(3, 2)
    k = {e: i for i, e in enumerate(mons)}
    X, Y, Z = (1, 0, 0), (0, 1, 0), (0, 0, 1)
    XY, XZ = (1, 1, 0), (1, 0, 1)
    theta = np.array([sigma, rho, beta], dtype=float)
    ties = (
        Tie(0, 0, k[X], -1.0),
        Tie(0, 0, k[Y], 1.0),
        Tie(1, 1, k[X], 1.0),
        Tie(2, 2, k[Z], -1.0),
    )
    alpha = np.zeros((3, len(mons)))
    for t in ties:
        alpha[t.output, t.monomial] = t.multiplier * theta[t.param]
    alpha[1, k[Y]] = -1.0
    alpha[1, k[XZ]] = -1.0
    alpha[2, k[XY]] = 1.0
    return PolynomialSystem(3, 2, alpha, ties, ("sigma", "rho", "beta"), theta)


def l63_rhs(x, sigma: float = 10.0, rho: float = 28.0, beta: float = 8.0 / 3.0) -> np.ndarray:
    """Closed-form Lorenz-63 right-hand side (vectorized over leading axes)."""
    x = np.asarray(x, dtype=float)
    X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
    return np.stack([sigma * (Y - X), rho * X - Y - X * Z, X * Y - beta * Z], axis=-1)


def random_system(n: int, d: int, rng: np.random.Generator, scale: float = 2.0, density: float = 1.0):
    """Untied system with coefficients uniform in [-scale, scale]; ``density`` < 1 zeroes some."""
    m = comb(n + d, d)
    alpha = rng.uniform(-scale, scale, size=(n, m))
    if density < 1.0:
        alpha[rng.uniform(size=alpha.shape) >= density] = 0.0
    return PolynomialSystem(n, d, alpha)


def rescale(system: PolynomialSystem, lo, hi) -> PolynomialSystem:
    """Untied system in unit-hypercube coordinates ``u`` with ``x = c + w*u``.

    Box ``[lo, hi]`` maps to ``[-1, 1]^n``; the rates are divided by ``w`` so
    ``u`` obeys the same dynamics.  Tied systems are expanded to untied.
    """
    lo, hi = np.broadcast_to(np.asarray(lo, float), (system.n,)), np.broadcast_to(np.asarray(hi, float), (system.n,))
    c, w = (hi + lo) / 2.0, (hi - lo) / 2.0
    if np.any(w <= 0):
        raise ValueError("hi must exceed lo in every coordinate")
    index = {e: k for k, e in enumerate(system.monomials)}
    new = np.zeros_like(system.alpha)
    for k, e in enumerate(system.monomials):
        # prod_j (c_j + w_j u_j)^e_j expanded binomially
        for split in itertools.product(*[range(p + 1) for p in e]):
            coef = 1.0
            for j, (p, q) in enumerate(zip(e, split)):
                coef *= comb(p, q) * w[j] ** q * c[j] ** (p - q)
            new[:, index[tuple(split)]] += system.alpha[:, k] * coef
    return PolynomialSystem(system.n, system.d, new / w[:, None])
