"""Compile polynomial systems into exact PolyNet circuits."""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .circuit import Edge, NeuralCircuit, Node
from .polysys import PolynomialSystem

__all__ = ["PolyNet", "compile_polynet", "polynet_size"]


@dataclass(frozen=True)
class PolyNet:
    """A compiled PolyNet.

    ``alpha_index[q]`` is the index of the source system's free parameter
    carried by circuit parameter ``q`` (identity for tied systems and for
    full untied compilation).
    """

    circuit: NeuralCircuit
    source: PolynomialSystem
    hidden_count: int
    hidden_monomials: tuple[int, ...]
    alpha_index: tuple[int, ...]


def polynet_size(n: int, d: int) -> int:
    """Hidden product nodes of the full PolyNet: ``max(0, C(n+d, d) - n - 1)``."""
    if n < 1 or d < 0:
        raise ValueError("need n >= 1 and d >= 0")
    return max(0, comb(n + d, d) - n - 1)


def compile_polynet(system: PolynomialSystem, full: bool = False) -> PolyNet:
    """Build the PolyNet whose forward pass equals ``evaluate(system, x)``.

    Constant terms become output biases, linear terms direct input->output
    edges, and every monomial of degree >= 2 a product node fed by unit
    fixed edges (multiplicity = exponent).  With ``full=False`` only
    monomials carrying a nonzero (or tied) coefficient get a hidden node.

    Untied systems compile every coefficient of the retained monomials as a
    trainable weight; tied systems carry ``theta`` as the parameter registry,
    and fixed coefficients become fixed edges or biases.
    """
    n, m = system.n, system.m
    tie_at = {(t.output, t.monomial): t for t in system.ties or ()}
    active = np.array(system.alpha != 0.0)
    for key in tie_at:
        active[key] = True
    used = active.any(axis=0)

    if full:
        hidden = [k for k in range(n + 1, m)]
    else:
        hidden = [k for k in range(n + 1, m) if used[k]]
    hid_id = {k: n + j for j, k in enumerate(hidden)}
    out_ids = [n + len(hidden) + i for i in range(n)]

    nodes = [Node(k, "input") for k in range(n)]
    edges = []
    for k in hidden:
        for j, p in enumerate(system.monomials[k]):
            if p:
                edges.append(Edge(j, hid_id[k], 1.0, multiplicity=p))
        nodes.append(Node(hid_id[k], "product"))

    # which coefficient columns feed output i, in monomial order
    cols = [k for k in range(1, min(n, m - 1) + 1)] + hidden
    src_of = {k: k - 1 for k in range(1, min(n, m - 1) + 1)}
    src_of.update(hid_id)

    if system.ties is None:
        params, names, alpha_index = [], [], []
        out_nodes = []
        for i in range(n):
            bias_q = len(params)
            params.append(system.alpha[i, 0])
            names.append(f"alpha[{i},0]")
            alpha_index.append(i * m)
            for k in cols:
                q = len(params)
                params.append(system.alpha[i, k])
                names.append(f"alpha[{i},{k}]")
                alpha_index.append(i * m + k)
                edges.append(Edge(src_of[k], out_ids[i], param=q))
            out_nodes.append(Node(out_ids[i], "output", bias_param=bias_q))
        nodes += out_nodes
        circuit = NeuralCircuit(nodes, edges, range(n), out_ids, params, names)
        return PolyNet(circuit, system, len(hidden), tuple(hidden), tuple(alpha_index))

    out_nodes = []
    for i in range(n):
        t = tie_at.get((i, 0))
        if t is not None:
            out_nodes.append(Node(out_ids[i], "output", bias_param=t.param, bias_multiplier=t.multiplier))
        elif system.alpha[i, 0] != 0.0:
            out_nodes.append(Node(out_ids[i], "output", bias=float(system.alpha[i, 0])))
        else:
            out_nodes.append(Node(out_ids[i], "output"))
        for k in cols:
            t = tie_at.get((i, k))
            if t is not None:
                edges.append(Edge(src_of[k], out_ids[i], param=t.param, multiplier=t.multiplier))
            elif system.alpha[i, k] != 0.0:
                edges.append(Edge(src_of[k], out_ids[i], float(system.alpha[i, k])))
    nodes += out_nodes
    circuit = NeuralCircuit(nodes, edges, range(n), out_ids, system.theta, system.param_names)
    return PolyNet(circuit, system, len(hidden), tuple(hidden), tuple(range(system.n_params)))
