"""Learnability metric ``G = J J^T`` and its spectral features."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import polysys
from .circuit import NeuralCircuit, forward, parameter_jacobian as circuit_jacobian

__all__ = [
    "jacobi_eigh",
    "LearnabilityMetric",
    "metric",
    "elt",
    "spectral_norm",
    "error_circle_map",
    "circle_residual",
    "contraction_factor",
    "simulate_gd",
    "system_metric",
]


def jacobi_eigh(A, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps until the off-diagonal Frobenius norm drops below
    ``tol * ||A||_F``.  Returns eigenvalues sorted in descending order and
    the matching orthonormal eigenvectors as columns.
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max(initial=0.0))):
        raise ValueError("matrix must be symmetric")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    scale = np.linalg.norm(A)
    offdiag = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(A[offdiag] ** 2))
        if off <= tol * scale or scale == 0.0:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                diff = A[q, q] - A[p, p]
                if abs(diff) + 1e8 * abs(apq) == abs(diff):
                    # tiny rotation; avoids overflow in theta**2
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    if theta < 0:
                        t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # rotate rows/columns p and q
                Ap, Aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * Ap - s * Aq
                A[:, q] = s * Ap + c * Aq
                Ap, Aq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * Ap - s * Aq
                A[q, :] = s * Ap + c * Aq
                A[p, q] = A[q, p] = 0.0
                Vp, Vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * Vp - s * Vq
                V[:, q] = s * Vp + c * Vq
    else:
        raise RuntimeError("Jacobi iteration did not converge")
    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    w, V = w[order], V[:, order]
    # sign convention: largest-magnitude component of each eigenvector positive
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(n)])
    signs[signs == 0] = 1.0
    return w, V * signs


@dataclass(frozen=True, eq=False)
class LearnabilityMetric:
    """Symmetric PSD metric with its eigendecomposition ``G = U diag(eigvals) U^T``."""

    G: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray

    @property
    def n(self) -> int:
        return self.G.shape[0]

    def to_dict(self) -> dict:
        return {
            "G": self.G.tolist(),
            "eigvals": self.eigvals.tolist(),
            "eigvecs": self.eigvecs.tolist(),
            "elt": elt(self),
            "spectral_norm": spectral_norm(self),
        }


def _from_G(G) -> LearnabilityMetric:
    G = np.asarray(G, dtype=float)
    if not np.all(np.isfinite(G)):
        raise ValueError("non-finite metric")
    w, U = jacobi_eigh(G)
    if w.size and w.min() < -1e-12 * max(1.0, abs(w[0])):
        raise ValueError(f"metric is not positive semi-definite (eigenvalue {w.min():.3g})")
    w = np.clip(w, 0.0, None)
    return LearnabilityMetric(G, w, U)


def metric(J) -> LearnabilityMetric:
    """Learnability metric of an ``n x p`` parameter Jacobian."""
    J = np.asarray(J, dtype=float)
    if J.ndim != 2:
        raise ValueError("Jacobian must be a 2-D array")
    if not np.all(np.isfinite(J)):
        raise ValueError("non-finite Jacobian")
    return _from_G(J @ J.T)


def metric_from_G(G) -> LearnabilityMetric:
    return _from_G(G)


def elt(m: LearnabilityMetric) -> float:
    """Equilibrium Learnability Trace: ``tr G`` (squared Frobenius norm of J)."""
    return float(np.trace(m.G))


def spectral_norm(m: LearnabilityMetric) -> float:
    """Leading eigenvalue of ``G``."""
    return float(m.eigvals[0]) if m.eigvals.size else 0.0


def error_circle_map(m: LearnabilityMetric, nu) -> np.ndarray:
    """Map a unit vector (or rows of unit vectors) to the error ellipse: ``U Sigma nu``."""
    nu = np.asarray(nu, dtype=float)
    norms = np.linalg.norm(nu, axis=-1)
    if not np.allclose(norms, 1.0, atol=1e-9):
        raise ValueError("nu must have unit norm")
    return (nu * np.sqrt(m.eigvals)) @ m.eigvecs.T


def circle_residual(m: LearnabilityMetric, eps, rtol: float = 1e-12) -> np.ndarray:
    """``eps^T G^+ eps`` restricted to the positive-spectrum subspace (1 on the ellipse)."""
    eps = np.asarray(eps, dtype=float)
    keep = m.eigvals > rtol * max(spectral_norm(m), 1e-300)
    c = eps @ m.eigvecs[:, keep]
    return np.sum(c * c / m.eigvals[keep], axis=-1)


def contraction_factor(m: LearnabilityMetric, beta: float) -> float:
    """Tight one-step bound ``max_k |1 - beta * lambda_k|`` for ``eps <- (I - beta G) eps``."""
    if not beta > 0:
        raise ValueError("learning rate must be positive")
    return float(np.max(np.abs(1.0 - beta * m.eigvals)))


def simulate_gd(model: NeuralCircuit, X, Y, beta: float, iterations: int, w0=None, blowup: float = 1e6):
    """Full-batch gradient descent on ``(1/2S) sum_s |y_s - f(x_s; w)|^2``.

    Returns ``(norms, weights)`` where ``norms[j]`` is the norm of the
    batch-mean error before iteration ``j`` (length ``iterations + 1``).
    Raises ``FloatingPointError`` when the error norm exceeds ``blowup``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    S = X.shape[0]
    w = np.array(model.params if w0 is None else w0, dtype=float)
    norms = []
    for j in range(iterations + 1):
        pred = forward(model, X, params=w)[0]
        E = Y - pred
        eps = E.mean(axis=0)
        norms.append(float(np.linalg.norm(eps)))
        if norms[-1] > blowup or not np.isfinite(norms[-1]):
            raise FloatingPointError(f"gradient descent diverged at iteration {j}")
        if j == iterations:
            break
        J = circuit_jacobian(model, X, params=w)
        w = w + (beta / S) * np.einsum("sip,si->p", J, E)
    return np.array(norms), w


def system_metric(system: polysys.PolynomialSystem, samples: int | None = None, seed: int = 0) -> LearnabilityMetric:
    """Learnability metric of a polynomial system on the unit hypercube.

    With ``samples=None`` the metric of the Jacobian at the corner of
    ``{-1, 1}^n`` with the largest Frobenius norm is returned (bound reading);
    otherwise the sample mean of ``J_s J_s^T`` over uniform points in
    ``[-1, 1]^n``.
    """
    if samples is None:
        corners = np.array(list(itertools.product((-1.0, 1.0), repeat=system.n)))
        J = polysys.parameter_jacobian(system, corners)
        fro = np.sum(J * J, axis=(1, 2))
        return metric(J[int(np.argmax(fro))])
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1.0, 1.0, size=(samples, system.n))
    J = polysys.parameter_jacobian(system, pts)
    return _from_G(np.einsum("sip,sjp->ij", J, J) / samples)
