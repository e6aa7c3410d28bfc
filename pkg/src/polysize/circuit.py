"""Neural-circuit intermediate representation.

A circuit is a graph of input, sum, product and output nodes.  Sum and
output nodes compute ``activation(bias + sum_e w_e * src_e)``; product nodes
compute ``prod_e (w_e * src_e) ** multiplicity_e``.  Edges may be *delayed*,
in which case they read the value their source held on the previous
discrete step.  Trainable scalars live in a flat parameter vector; an edge
or bias refers to a parameter by index with a fixed multiplier, so a single
parameter may feed several edges (tying).

Evaluation is batched: every node value is an array over the leading batch
axis, and sums are accumulated in edge order so that circuits built to
mirror a numerical scheme reproduce it bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "Node",
    "Edge",
    "NeuralCircuit",
    "CircuitError",
    "forward",
    "vjp",
    "parameter_jacobian",
    "count_parameters",
    "make_cn",
]

KINDS = ("input", "sum", "product", "output")
ACTIVATIONS = ("identity", "tanh")


class CircuitError(ValueError):
    """Structural problem with a circuit or a call against it."""


@dataclass(frozen=True)
class Node:
    id: int
    kind: str
    activation: str = "identity"
    bias: float | None = None
    bias_param: int | None = None
    bias_multiplier: float = 1.0

    @property
    def has_bias(self) -> bool:
        return self.bias is not None or self.bias_param is not None


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    weight: float = 1.0
    param: int | None = None
    multiplier: float = 1.0
    delayed: bool = False
    multiplicity: int = 1

    @property
    def trainable(self) -> bool:
        return self.param is not None


class NeuralCircuit:
    """Immutable circuit with a registry of trainable parameters.

    Parameters
    ----------
    nodes, edges : sequences of Node and Edge
    inputs, outputs : sequences of node ids
    params : array_like
        Current values of the trainable scalars, indexed by ``Edge.param``
        and ``Node.bias_param``.
    param_names : sequence of str, optional
    """

    def __init__(self, nodes, edges, inputs, outputs, params=(), param_names=None):
        self.nodes = tuple(nodes)
        self.edges = tuple(edges)
        self.inputs = tuple(int(i) for i in inputs)
        self.outputs = tuple(int(o) for o in outputs)
        p = np.array(params, dtype=float).ravel()
        p.setflags(write=False)
        self.params = p
        if param_names is None:
            param_names = tuple(f"p{q}" for q in range(p.size))
        self.param_names = tuple(param_names)
        self._validate()

    # structure ----------------------------------------------------------

    def _validate(self):
        ids = [nd.id for nd in self.nodes]
        if len(set(ids)) != len(ids):
            raise CircuitError("duplicate node ids")
        byid = {nd.id: nd for nd in self.nodes}
        P = self.params.size
        if len(self.param_names) != P:
            raise CircuitError("param_names length differs from params")
        used = np.zeros(P, dtype=bool)
        for nd in self.nodes:
            if nd.kind not in KINDS:
                raise CircuitError(f"unknown node kind {nd.kind!r}")
            if nd.activation not in ACTIVATIONS:
                raise CircuitError(f"unknown activation {nd.activation!r}")
            if nd.kind in ("input", "product"):
                if nd.has_bias:
                    raise CircuitError(f"{nd.kind} node {nd.id} cannot carry a bias")
                if nd.activation != "identity":
                    raise CircuitError(f"{nd.kind} node {nd.id} must use identity activation")
            if nd.bias_param is not None:
                if not 0 <= nd.bias_param < P:
                    raise CircuitError(f"node {nd.id} references missing parameter")
                used[nd.bias_param] = True
        for e in self.edges:
            if e.src not in byid or e.dst not in byid:
                raise CircuitError(f"edge {e.src}->{e.dst} references a missing node")
            if byid[e.dst].kind == "input":
                raise CircuitError(f"input node {e.dst} has an incoming edge")
            if e.multiplicity < 1:
                raise CircuitError("edge multiplicity must be >= 1")
            if e.param is not None:
                if not 0 <= e.param < P:
                    raise CircuitError(f"edge {e.src}->{e.dst} references missing parameter")
                used[e.param] = True
        if not used.all():
            raise CircuitError(f"parameters {np.flatnonzero(~used).tolist()} are never used")
        for i in self.inputs:
            if byid.get(i) is None or byid[i].kind != "input":
                raise CircuitError(f"input id {i} is not an input node")
        for o in self.outputs:
            if o not in byid:
                raise CircuitError(f"output id {o} missing")
        self._plan  # raises on cycles

    @cached_property
    def _plan(self):
        byid = {nd.id: nd for nd in self.nodes}
        incoming = {nd.id: [] for nd in self.nodes}
        indeg = {nd.id: 0 for nd in self.nodes}
        for k, e in enumerate(self.edges):
            incoming[e.dst].append(k)
            if not e.delayed:
                indeg[e.dst] += 1
        children = {nd.id: [] for nd in self.nodes}
        for e in self.edges:
            if not e.delayed:
                children[e.src].append(e.dst)
        # Kahn's algorithm, smallest id first for a deterministic order
        import heapq

        ready = [i for i, k in indeg.items() if k == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            i = heapq.heappop(ready)
            order.append(i)
            for c in children[i]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    heapq.heappush(ready, c)
        if len(order) != len(self.nodes):
            raise CircuitError("non-delayed edges contain a cycle")
        delayed_sources = tuple(sorted({e.src for e in self.edges if e.delayed}))
        return {
            "byid": byid,
            "order": tuple(order),
            "incoming": {k: tuple(v) for k, v in incoming.items()},
            "delayed_sources": delayed_sources,
        }

    @property
    def n_in(self) -> int:
        return len(self.inputs)

    @property
    def n_out(self) -> int:
        return len(self.outputs)

    @property
    def delayed_sources(self) -> tuple[int, ...]:
        return self._plan["delayed_sources"]

    @property
    def has_delays(self) -> bool:
        return bool(self.delayed_sources)

    def node(self, i: int) -> Node:
        return self._plan["byid"][i]

    def with_params(self, params) -> "NeuralCircuit":
        params = np.asarray(params, dtype=float)
        if params.shape != self.params.shape:
            raise CircuitError(f"expected {self.params.size} parameters, got {params.shape}")
        return NeuralCircuit(self.nodes, self.edges, self.inputs, self.outputs, params, self.param_names)

    def effective_weights(self, params=None) -> np.ndarray:
        p = self.params if params is None else np.asarray(params, dtype=float)
        return np.array(
            [e.multiplier * p[e.param] if e.param is not None else e.weight for e in self.edges]
        )

    def effective_biases(self, params=None) -> dict[int, float]:
        p = self.params if params is None else np.asarray(params, dtype=float)
        out = {}
        for nd in self.nodes:
            if nd.bias_param is not None:
                out[nd.id] = nd.bias_multiplier * p[nd.bias_param]
            elif nd.bias is not None:
                out[nd.id] = nd.bias
        return out

    # serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {
                    "id": nd.id,
                    "kind": nd.kind,
                    "activation": nd.activation,
                    "bias": nd.bias,
                    "bias_param": nd.bias_param,
                    "bias_multiplier": nd.bias_multiplier,
                }
                for nd in self.nodes
            ],
            "edges": [
                {
                    "from": e.src,
                    "to": e.dst,
                    "weight": e.weight,
                    "trainable": e.trainable,
                    "param": e.param,
                    "multiplier": e.multiplier,
                    "delayed": e.delayed,
                    "multiplicity": e.multiplicity,
                }
                for e in self.edges
            ],
            "inputs": list(self.inputs),
            "outputs": list(self.outputs),
            "params": [float(v) for v in self.params],
            "param_names": list(self.param_names),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NeuralCircuit":
        nodes = [
            Node(
                int(d["id"]),
                d["kind"],
                d.get("activation", "identity"),
                None if d.get("bias") is None else float(d["bias"]),
                d.get("bias_param"),
                float(d.get("bias_multiplier", 1.0)),
            )
            for d in doc["nodes"]
        ]
        edges = []
        for d in doc["edges"]:
            param = d.get("param")
            if d.get("trainable", param is not None) and param is None:
                raise CircuitError("trainable edge without a parameter index")
            edges.append(
                Edge(
                    int(d["from"]),
                    int(d["to"]),
                    float(d.get("weight", 1.0)),
                    param,
                    float(d.get("multiplier", 1.0)),
                    bool(d.get("delayed", False)),
                    int(d.get("multiplicity", 1)),
                )
            )
        return cls(nodes, edges, doc["inputs"], doc["outputs"], doc.get("params", ()), doc.get("param_names"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "NeuralCircuit":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def __repr__(self):
        return (
            f"NeuralCircuit(nodes={len(self.nodes)}, edges={len(self.edges)}, "
            f"n_in={self.n_in}, n_out={self.n_out}, P={self.params.size})"
        )


def count_parameters(circuit: NeuralCircuit) -> int:
    return int(circuit.params.size)


# evaluation -------------------------------------------------------------


def _run(circuit: NeuralCircuit, x, state, params):
    plan = circuit._plan
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[-1] != circuit.n_in:
        raise CircuitError(f"expected {circuit.n_in} inputs, got {X.shape[-1]}")
    batch = X.shape[:-1]
    w = circuit.effective_weights(params)
    b = circuit.effective_biases(params)
    prev = {}
    if plan["delayed_sources"]:
        if state is None:
            raise CircuitError("circuit has delayed edges; prev_state is required")
        S = np.broadcast_to(np.asarray(state, dtype=float), batch + (len(plan["delayed_sources"]),))
        prev = {src: S[..., j] for j, src in enumerate(plan["delayed_sources"])}
    values, pre = {}, {}
    col = {i: j for j, i in enumerate(circuit.inputs)}
    for i in plan["order"]:
        nd = plan["byid"][i]
        if nd.kind == "input":
            values[i] = X[..., col[i]] if i in col else np.zeros(batch)
            continue
        acc = b.get(i)
        if nd.kind == "product":
            acc = None
            for k in plan["incoming"][i]:
                e = circuit.edges[k]
                u = w[k] * (prev[e.src] if e.delayed else values[e.src])
                for _ in range(e.multiplicity):
                    acc = u if acc is None else acc * u
            values[i] = np.ones(batch) if acc is None else np.broadcast_to(acc, batch)
            continue
        for k in plan["incoming"][i]:
            e = circuit.edges[k]
            term = w[k] * (prev[e.src] if e.delayed else values[e.src])
            acc = term if acc is None else acc + term
        a = np.zeros(batch) + (0.0 if acc is None else acc)
        pre[i] = a
        values[i] = np.tanh(a) if nd.activation == "tanh" else a
    return X, single, w, values, pre


def forward(circuit: NeuralCircuit, x, prev_state=None, params=None):
    """Evaluate the circuit.

    Parameters
    ----------
    x : array_like, shape (n_in,) or (S, n_in)
    prev_state : array_like, optional
        Previous values of the delayed-edge sources (``circuit.delayed_sources``
        order); required iff the circuit has delayed edges.
    params : array_like, optional
        Parameter vector overriding ``circuit.params``.

    Returns
    -------
    y : ndarray, shape (n_out,) or (S, n_out)
    new_state : ndarray or None
        Current values of the delayed-edge sources.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        X, single, _, values, _ = _run(circuit, x, prev_state, params)
    y = np.stack([values[o] for o in circuit.outputs], axis=-1)
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("non-finite value in circuit evaluation")
    new_state = None
    if circuit.has_delays:
        new_state = np.stack([values[s] for s in circuit.delayed_sources], axis=-1)
        if single:
            new_state = new_state[0]
    return (y[0] if single else y), new_state


def _backward(circuit, X, w, values, pre, cot):
    """Adjoint accumulation; returns per-sample parameter gradients, shape (S, P)."""
    plan = circuit._plan
    S = X.shape[0]
    adj = {i: np.zeros(S) for i in plan["order"]}
    for j, o in enumerate(circuit.outputs):
        adj[o] = adj[o] + cot[:, j]
    grad = np.zeros((S, circuit.params.size))
    for i in reversed(plan["order"]):
        nd = plan["byid"][i]
        if nd.kind == "input":
            continue
        a_out = adj[i]
        if nd.kind == "product":
            ks = plan["incoming"][i]
            us = [w[k] * values[circuit.edges[k].src] for k in ks]
            for t, k in enumerate(ks):
                e = circuit.edges[k]
                # analytic derivative of u^m times the other factors, no division
                rest = e.multiplicity * (us[t] ** (e.multiplicity - 1) if e.multiplicity > 1 else 1.0)
                for s, kk in enumerate(ks):
                    if s != t:
                        rest = rest * us[s] ** circuit.edges[kk].multiplicity
                g = a_out * rest
                if e.param is not None:
                    grad[:, e.param] += g * values[e.src] * e.multiplier
                adj[e.src] = adj[e.src] + g * w[k]
            continue
        if nd.activation == "tanh":
            v = values[i]
            a_pre = a_out * (1.0 - v * v)
        else:
            a_pre = a_out
        if nd.bias_param is not None:
            grad[:, nd.bias_param] += a_pre * nd.bias_multiplier
        for k in plan["incoming"][i]:
            e = circuit.edges[k]
            if e.param is not None:
                grad[:, e.param] += a_pre * values[e.src] * e.multiplier
            adj[e.src] = adj[e.src] + a_pre * w[k]
    return grad


def vjp(circuit: NeuralCircuit, x, cotangent, params=None) -> np.ndarray:
    """Batch-summed ``sum_s cot_s^T dy_s/dparams``, shape (P,)."""
    if circuit.has_delays:
        raise CircuitError("reverse mode requires a circuit without delayed edges")
    X, _, w, values, pre = _run(circuit, x, None, params)
    cot = np.asarray(cotangent, dtype=float).reshape(X.shape[0], circuit.n_out)
    return _backward(circuit, X, w, values, pre, cot).sum(axis=0)


def parameter_jacobian(circuit: NeuralCircuit, x, params=None) -> np.ndarray:
    """Reverse-mode ``dy/dparams``; shape (n_out, P), or (S, n_out, P) for a batch."""
    if circuit.has_delays:
        raise CircuitError("reverse mode requires a circuit without delayed edges")
    X, single, w, values, pre = _run(circuit, x, None, params)
    S = X.shape[0]
    J = np.empty((S, circuit.n_out, circuit.params.size))
    for j in range(circuit.n_out):
        cot = np.zeros((S, circuit.n_out))
        cot[:, j] = 1.0
        J[:, j, :] = _backward(circuit, X, w, values, pre, cot)
    return J[0] if single else J


# constructors -----------------------------------------------------------


def make_cn(n: int, h: int, activation: str = "tanh", with_skip: bool = False, params=None) -> NeuralCircuit:
    """Classical one-hidden-layer network (CN; LN when activation is identity; SC with skips).

    Node ids: inputs ``0..n-1``, hidden ``n..n+h-1``, outputs ``n+h..n+h+n-1``.
    Parameter order: W1 (h x n, row-major), W2 (n x h), skip (n x n, if any),
    then hidden biases b1 and output biases b2.  Parameters default to zero.
    """
    if n < 1 or h < 0:
        raise ValueError("need n >= 1 and h >= 0")
    hid = list(range(n, n + h))
    out = list(range(n + h, n + h + n))
    names = []
    edges = []

    def new(name):
        names.append(name)
        return len(names) - 1

    for j in range(h):
        for k in range(n):
            edges.append(Edge(k, hid[j], param=new(f"W1[{j},{k}]")))
    for i in range(n):
        for j in range(h):
            edges.append(Edge(hid[j], out[i], param=new(f"W2[{i},{j}]")))
    if with_skip:
        for i in range(n):
            for k in range(n):
                edges.append(Edge(k, out[i], param=new(f"S[{i},{k}]")))
    nodes = [Node(k, "input") for k in range(n)]
    nodes += [Node(hid[j], "sum", activation, bias_param=new(f"b1[{j}]")) for j in range(h)]
    nodes += [Node(out[i], "output", "identity", bias_param=new(f"b2[{i}]")) for i in range(n)]
    # edges were created before the bias params, so edge order stays row-major
    values = np.zeros(len(names)) if params is None else np.asarray(params, dtype=float)
    return NeuralCircuit(nodes, edges, range(n), out, values, names)


def cn_unpack(circuit: NeuralCircuit, n: int, h: int, with_skip: bool = False):
    """Split a ``make_cn`` parameter vector into (W1, W2, S, b1, b2)."""
    p = circuit.params
    i = 0
    W1 = p[i : i + h * n].reshape(h, n); i += h * n
    W2 = p[i : i + n * h].reshape(n, h); i += n * h
    Sk = None
    if with_skip:
        Sk = p[i : i + n * n].reshape(n, n); i += n * n
    b1 = p[i : i + h]; i += h
    b2 = p[i : i + n]
    return W1, W2, Sk, b1, b2


def cn_pack(W1, W2, b1, b2, S=None) -> np.ndarray:
    parts = [np.ravel(W1), np.ravel(W2)]
    if S is not None:
        parts.append(np.ravel(S))
    parts += [np.ravel(b1), np.ravel(b2)]
    return np.concatenate(parts)


def relabel(circuit: NeuralCircuit, offset: int):
    """Nodes and edges with every id shifted by ``offset``."""
    nodes = [replace(nd, id=nd.id + offset) for nd in circuit.nodes]
    edges = [replace(e, src=e.src + offset, dst=e.dst + offset) for e in circuit.edges]
    return nodes, edges
