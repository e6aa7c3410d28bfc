"""Discrete-time steppers as plain loops and as neural circuits.

The reference steps and the circuits built by :func:`build_stepper_circuit`
perform the same floating-point operations in the same order, so a stepper
circuit wrapped around a PolyNet tracks the reference loop exactly even on
chaotic trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .circuit import Edge, NeuralCircuit, Node, forward, relabel

__all__ = [
    "DivergenceError",
    "rk4_step",
    "abm2_step",
    "StepperCircuit",
    "build_stepper_circuit",
    "simulate",
]

SCHEMES = ("rk4", "abm2")


class DivergenceError(ArithmeticError):
    """Raised when a trajectory leaves the finite numbers."""

    def __init__(self, step: int, message: str = "non-finite state"):
        super().__init__(f"{message} at step {step}")
        self.step = step


def _checked(v):
    if not np.all(np.isfinite(v)):
        raise FloatingPointError("non-finite rate")
    return v


def rk4_step(f: Callable, h: float, x):
    """One classical fourth-order Runge-Kutta step."""
    if not h > 0:
        raise ValueError("step size must be positive")
    x = np.asarray(x, dtype=float)
    k1 = h * _checked(f(x))
    k2 = h * _checked(f(x + 0.5 * k1))
    k3 = h * _checked(f(x + 0.5 * k2))
    k4 = h * _checked(f(x + k3))
    return x + (1.0 / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def abm2_step(f: Callable, h: float, x, state):
    """Two-step Adams-Bashforth predictor with a trapezoidal Adams-Moulton corrector.

    ``state`` holds ``-(h/2) f(x_{n-1})``; the returned state holds
    ``-(h/2) f(x_n)`` for the next call.
    """
    if not h > 0:
        raise ValueError("step size must be positive")
    x = np.asarray(x, dtype=float)
    f1 = _checked(f(x))
    p = x + (1.5 * h) * f1 + state
    f2 = _checked(f(p))
    return x + (0.5 * h) * (f2 + f1), (-0.5 * h) * f1


@dataclass(frozen=True)
class StepperCircuit:
    """A rate function (callable or continuous-time circuit) under a fixed-step scheme."""

    inner: Callable | NeuralCircuit
    scheme: str
    h: float

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.h > 0:
            raise ValueError("step size must be positive")

    def rate(self, x):
        if isinstance(self.inner, NeuralCircuit):
            return forward(self.inner, x)[0]
        return self.inner(x)

    def circuit(self) -> NeuralCircuit:
        if not isinstance(self.inner, NeuralCircuit):
            raise TypeError("only circuit-backed steppers can be compiled to a circuit")
        return build_stepper_circuit(self.inner, self.scheme, self.h)


class _Builder:
    def __init__(self, n):
        self.nodes = [Node(k, "input") for k in range(n)]
        self.edges = []
        self.next_id = n

    def sums(self, count):
        ids = list(range(self.next_id, self.next_id + count))
        self.next_id += count
        self.nodes += [Node(i, "sum") for i in ids]
        return ids

    def link(self, srcs, dsts, weight, delayed=False):
        for s, t in zip(srcs, dsts):
            self.edges.append(Edge(s, t, float(weight), delayed=delayed))

    def instance(self, inner: NeuralCircuit, feed):
        """Splice a copy of ``inner`` whose inputs read from ``feed``; return its output ids."""
        offset = self.next_id
        nodes, edges = relabel(inner, offset)
        self.next_id = offset + max(nd.id for nd in inner.nodes) + 1
        inputs = {i + offset for i in inner.inputs}
        for nd in nodes:
            if nd.kind == "input" or nd.kind == "output":
                # stage inputs become pass-through sums; outputs are interior here
                nd = Node(nd.id, "sum", nd.activation, nd.bias, nd.bias_param, nd.bias_multiplier)
            self.nodes.append(nd)
        self.edges += edges
        self.link(feed, [i + offset for i in inner.inputs], 1.0)
        assert len(inputs) == len(feed)
        return [o + offset for o in inner.outputs]


def build_stepper_circuit(inner: NeuralCircuit, scheme: str, h: float) -> NeuralCircuit:
    """Embed ``inner`` (a continuous-time rate circuit) in an RK4 or ABM2 circuit.

    The result maps ``x_n`` to ``x_{n+1}``.  For ``abm2`` it has one group of
    delayed edges whose sources hold ``-(h/2) f(x_n)``; pass the previous
    value as ``prev_state`` to :func:`forward`.  Scheme weights are fixed and
    the parameter registry is that of ``inner`` (shared by all copies).
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if not h > 0:
        raise ValueError("step size must be positive")
    if inner.has_delays:
        raise ValueError("inner circuit must be a single-pass map")
    n = inner.n_in
    if inner.n_out != n:
        raise ValueError(f"inner circuit maps {n} inputs to {inner.n_out} outputs")
    b = _Builder(n)
    x = list(range(n))
    if scheme == "rk4":
        F1 = b.instance(inner, x)
        K1 = b.sums(n); b.link(F1, K1, h)
        S2 = b.sums(n); b.link(x, S2, 1.0); b.link(K1, S2, 0.5)
        F2 = b.instance(inner, S2)
        K2 = b.sums(n); b.link(F2, K2, h)
        S3 = b.sums(n); b.link(x, S3, 1.0); b.link(K2, S3, 0.5)
        F3 = b.instance(inner, S3)
        K3 = b.sums(n); b.link(F3, K3, h)
        S4 = b.sums(n); b.link(x, S4, 1.0); b.link(K3, S4, 1.0)
        F4 = b.instance(inner, S4)
        K4 = b.sums(n); b.link(F4, K4, h)
        A = b.sums(n)
        b.link(K1, A, 1.0); b.link(K2, A, 2.0); b.link(K3, A, 2.0); b.link(K4, A, 1.0)
        out = b.sums(n); b.link(x, out, 1.0); b.link(A, out, 1.0 / 6.0)
    else:
        F1 = b.instance(inner, x)
        R = b.sums(n); b.link(F1, R, -0.5 * h)
        P = b.sums(n)
        b.link(x, P, 1.0); b.link(F1, P, 1.5 * h); b.link(R, P, 1.0, delayed=True)
        F2 = b.instance(inner, P)
        A = b.sums(n); b.link(F2, A, 1.0); b.link(F1, A, 1.0)
        out = b.sums(n); b.link(x, out, 1.0); b.link(A, out, 0.5 * h)
    nodes = [Node(nd.id, "output") if nd.id in set(out) else nd for nd in b.nodes]
    return NeuralCircuit(nodes, b.edges, x, out, inner.params, inner.param_names)


def simulate(stepper: StepperCircuit, x0, steps: int, use_circuit: bool = False) -> np.ndarray:
    """Trajectory of ``steps`` fixed steps from ``x0``; shape (steps+1, ..., n).

    ABM2 is primed with one RK4 step, after which its recurrent state is
    initialised from ``f(x0)``.  With ``use_circuit`` the steps run through
    the compiled stepper circuit instead of the reference loop.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    x = np.array(x0, dtype=float)
    traj = np.empty((steps + 1,) + x.shape)
    traj[0] = x
    if steps == 0:
        return traj
    f, h = stepper.rate, stepper.h
    circ = stepper.circuit() if use_circuit else None
    state = None
    k = 0
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(1, steps + 1):
                if stepper.scheme == "rk4":
                    x = forward(circ, x)[0] if circ is not None else rk4_step(f, h, x)
                elif k == 1:
                    x_prev = x
                    x = rk4_step(f, h, x)
                    state = (-0.5 * h) * f(x_prev)
                elif circ is not None:
                    x, state = forward(circ, x, state)
                else:
                    x, state = abm2_step(f, h, x, state)
                if not np.all(np.isfinite(x)):
                    raise DivergenceError(k)
                traj[k] = x
    except FloatingPointError as exc:
        raise DivergenceError(k, str(exc)) from exc
    return traj
