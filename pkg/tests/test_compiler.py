from math import comb

import numpy as np
import pytest

from polysize import circuit as C
from polysize import polysys
from polysize.compiler import compile_polynet, polynet_size


def test_polynet_sizes():
    assert polynet_size(3, 2) == 6
    assert polynet_size(3, 3) == 16
    assert polynet_size(4, 0) == 0
    assert polynet_size(5, 1) == 0


def test_full_3_2_hidden_and_parameters():
    s = polysys.random_system(3, 2, np.random.default_rng(0))
    pn = compile_polynet(s, full=True)
    assert pn.hidden_count == 6
    assert C.count_parameters(pn.circuit) == 3 * 6 + 9 + 3


def test_l63_sparse_has_two_product_nodes():
    pn = compile_polynet(polysys.l63_system())
    assert pn.hidden_count == 2
    mons = [pn.source.monomials[k] for k in pn.hidden_monomials]
    assert sorted(mons) == sorted([(1, 1, 0), (1, 0, 1)])
    assert C.count_parameters(pn.circuit) == 3
    kinds = [nd.kind for nd in pn.circuit.nodes]
    assert kinds.count("product") == 2


@pytest.mark.parametrize("n", [1, 2, 4])
def test_linear_systems_need_no_hidden_nodes(n):
    s = polysys.random_system(n, 1, np.random.default_rng(n))
    assert compile_polynet(s, full=True).hidden_count == 0
    assert compile_polynet(s).hidden_count == 0


def test_constant_system_compiles():
    s = polysys.PolynomialSystem(2, 0, np.array([[1.5], [-2.0]]))
    pn = compile_polynet(s, full=True)
    np.testing.assert_array_equal(C.forward(pn.circuit, [0.3, 0.7])[0], [1.5, -2.0])


def test_input_hidden_edges_fixed_unit():
    pn = compile_polynet(polysys.random_system(3, 3, np.random.default_rng(1)), full=True)
    hidden = {nd.id for nd in pn.circuit.nodes if nd.kind == "product"}
    for e in pn.circuit.edges:
        if e.dst in hidden:
            assert e.weight == 1.0 and not e.trainable


@pytest.mark.parametrize("n,d", [(n, d) for n in range(1, 5) for d in range(0, 4)])
def test_elt_consistency_with_parameter_count(n, d):
    s = polysys.random_system(n, d, np.random.default_rng(10 * n + d))
    pn = compile_polynet(s, full=True)
    assert C.count_parameters(pn.circuit) == polysys.elt_bound(s) == n * comb(n + d, d)


def test_sparse_untied_drops_unused_monomials():
    rng = np.random.default_rng(2)
    s = polysys.random_system(3, 3, rng, density=0.3)
    pn = compile_polynet(s)
    used = (s.alpha != 0).any(axis=0)
    assert pn.hidden_count == int(used[4:].sum())
    x = rng.uniform(-3, 3, (50, 3))
    ref = polysys.evaluate(s, x)
    assert np.all(np.abs(C.forward(pn.circuit, x)[0] - ref) <= 1e-12 * (1 + np.abs(ref)))


def test_l63_tied_jacobian_via_circuit():
    pn = compile_polynet(polysys.l63_system())
    x = np.random.default_rng(3).uniform(-20, 20, size=(100, 3))
    J = C.parameter_jacobian(pn.circuit, x)
    for xs, Js in zip(x, J):
        X, Y, Z = xs
        np.testing.assert_allclose(Js, np.diag([Y - X, X, -Z]), rtol=0, atol=1e-13)


def test_untied_circuit_jacobian_matches_system():
    rng = np.random.default_rng(4)
    s = polysys.random_system(2, 3, rng)
    pn = compile_polynet(s, full=True)
    x = rng.uniform(-1, 1, (10, 2))
    Jc = C.parameter_jacobian(pn.circuit, x)
    Js = polysys.parameter_jacobian(s, x)[..., list(pn.alpha_index)]
    np.testing.assert_allclose(Jc, Js, rtol=0, atol=1e-14)
