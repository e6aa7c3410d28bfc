import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polysize import learnability as L
from polysize import polysys
from polysize.circuit import Edge, NeuralCircuit, Node, forward, parameter_jacobian

from _models import linear_model


def random_spd(rng, n):
    A = rng.normal(size=(n, n))
    return A @ A.T + 1e-3 * np.eye(n)


def test_jacobi_matches_numpy():
    rng = np.random.default_rng(0)
    for n in range(1, 7):
        G = random_spd(rng, n)
        w, U = L.jacobi_eigh(G)
        np.testing.assert_allclose(w, np.linalg.eigvalsh(G)[::-1], rtol=1e-11, atol=1e-12)
        np.testing.assert_allclose(U.T @ U, np.eye(n), atol=1e-12)


def test_eigen_residual_random_spd():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(1, 7))
        G = random_spd(rng, n)
        m = L.metric_from_G(G)
        assert np.linalg.norm(G @ m.eigvecs - m.eigvecs * m.eigvals) <= 1e-10 * np.linalg.norm(G)
        np.testing.assert_allclose(m.eigvecs @ np.diag(m.eigvals) @ m.eigvecs.T, G, atol=1e-10 * np.abs(G).max())
        assert np.all(np.diff(m.eigvals) <= 0)
        assert np.trace(G) == pytest.approx(m.eigvals.sum(), rel=1e-12)


def test_sign_convention():
    m = L.metric(np.random.default_rng(2).normal(size=(4, 9)))
    idx = np.argmax(np.abs(m.eigvecs), axis=0)
    assert np.all(m.eigvecs[idx, np.arange(4)] > 0)


def test_metric_examples():
    m = L.metric(np.eye(3))
    np.testing.assert_array_equal(m.G, np.eye(3))
    np.testing.assert_allclose(m.eigvals, [1, 1, 1])
    m = L.metric(np.diag([2.0, 1.0, 1.0]))
    np.testing.assert_allclose(m.eigvals, [4, 1, 1])
    assert L.elt(m) == 6.0 and L.spectral_norm(m) == 4.0
    J = np.random.default_rng(3).normal(size=(3, 30))
    assert L.elt(L.metric(J)) == pytest.approx(sum(J[i, j] ** 2 for i in range(3) for j in range(30)), rel=1e-10)


def test_metric_rejects_non_finite():
    with pytest.raises(ValueError):
        L.metric(np.array([[np.nan, 0.0]]))
    with pytest.raises(ValueError):
        L.metric_from_G(np.diag([1.0, -1.0]))


def test_elt_examples():
    assert L.elt(L.system_metric(polysys.l63_system())) == 6.0
    s = polysys.random_system(3, 2, np.random.default_rng(4))
    assert L.elt(L.system_metric(s)) == 30.0
    assert L.elt(L.metric(np.zeros((3, 5)))) == 0.0


def test_rank_one_spectrum():
    rng = np.random.default_rng(5)
    u, v = rng.normal(size=3), rng.normal(size=7)
    m = L.metric(np.outer(u, v))
    assert L.spectral_norm(m) == pytest.approx(np.dot(u, u) * np.dot(v, v), rel=1e-12)
    assert L.spectral_norm(L.metric(np.eye(2))) == 1.0


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 5), p=st.integers(1, 12))
def test_trace_invariant_under_rotation(seed, n, p):
    rng = np.random.default_rng(seed)
    J = rng.normal(size=(n, p))
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    assert L.elt(L.metric(Q @ J)) == pytest.approx(L.elt(L.metric(J)), rel=1e-10)


def test_circle_map_examples():
    m = L.metric(np.eye(3))
    nu = np.array([0.6, 0.0, 0.8])
    np.testing.assert_allclose(L.error_circle_map(m, nu), nu, atol=1e-15)
    m = L.metric(np.diag([2.0, 1.0, 1.0]))
    np.testing.assert_allclose(L.error_circle_map(m, [1.0, 0.0, 0.0]), [2.0, 0.0, 0.0], atol=1e-15)
    with pytest.raises(ValueError):
        L.error_circle_map(m, [1.0, 1.0, 0.0])


def test_circle_maps_onto_ellipse():
    rng = np.random.default_rng(6)
    m = L.metric_from_G(random_spd(rng, 3))
    nu = rng.normal(size=(100, 3))
    nu /= np.linalg.norm(nu, axis=1, keepdims=True)
    eps = L.error_circle_map(m, nu)
    r = np.einsum("si,ij,sj->s", eps, np.linalg.inv(m.G), eps)
    np.testing.assert_allclose(r, 1.0, atol=1e-8)
    np.testing.assert_allclose(L.circle_residual(m, eps), 1.0, atol=1e-8)


def test_circle_residual_singular_metric():
    m = L.metric(np.array([[1.0, 0.0], [0.0, 0.0]]))
    eps = L.error_circle_map(m, [np.sqrt(0.5), np.sqrt(0.5)])
    assert L.circle_residual(m, eps) == pytest.approx(0.5)


def test_ellipse_semi_axis():
    m = L.metric(np.random.default_rng(7).normal(size=(2, 4)))
    t = np.linspace(0, 2 * np.pi, 200_001)
    eps = L.error_circle_map(m, np.stack([np.cos(t), np.sin(t)], axis=1))
    assert np.linalg.norm(eps, axis=1).max() == pytest.approx(np.sqrt(m.eigvals[0]), abs=1e-6)


@pytest.mark.parametrize(
    "G,beta,expect",
    [(np.eye(3), 1.0, 0.0), (np.diag([4.0, 1.0, 1.0]), 0.1, 0.9), (np.diag([4.0, 1.0, 1.0]), 0.6, 1.4)],
)
def test_contraction_examples(G, beta, expect):
    assert L.contraction_factor(L.metric_from_G(G), beta) == pytest.approx(expect, abs=1e-15)


def test_contraction_needs_positive_rate():
    with pytest.raises(ValueError):
        L.contraction_factor(L.metric(np.eye(2)), 0.0)


def one_param_model():
    return NeuralCircuit([Node(0, "input"), Node(1, "output")], [Edge(0, 1, param=0)], [0], [1], [0.0])


def test_gd_one_step_convergence():
    norms, w = L.simulate_gd(one_param_model(), [[1.0]], [[1.0]], 1.0, 3)
    assert norms[0] == 1.0 and np.all(norms[1:] == 0.0)
    assert w[0] == 1.0


def test_gd_at_equilibrium_stays_zero():
    model = linear_model(np.random.default_rng(8), n_in=3, n_out=2)
    X = np.random.default_rng(9).uniform(-1, 1, (5, 3))
    Y = forward(model, X)[0]
    norms, _ = L.simulate_gd(model, X, Y, 0.1, 10)
    assert np.all(norms == 0.0)


def test_gd_divergence_flagged():
    with pytest.raises(FloatingPointError):
        L.simulate_gd(one_param_model(), [[1.0]], [[1.0]], 3.0, 200)


def test_gd_noiseless_monotone_when_stable():
    rng = np.random.default_rng(10)
    for _ in range(20):
        model = linear_model(rng)
        x = rng.uniform(-1, 1, model.n_in)
        w_true = rng.normal(size=model.params.size)
        X = np.tile(x, (4, 1))
        Y = forward(model, X, params=w_true)[0]
        m = L.metric(parameter_jacobian(model, x))
        beta = 0.9 / max(L.spectral_norm(m), 1e-12)
        norms, _ = L.simulate_gd(model, X, Y, beta, 30)
        assert np.all(np.diff(norms) <= 1e-12 * norms[0])


def test_system_metric_sampled_mean():
    s = polysys.l63_system()
    m = L.system_metric(s, samples=20000, seed=1)
    # E[(Y-X)^2] = 2/3, E[X^2] = E[Z^2] = 1/3 on the uniform cube
    np.testing.assert_allclose(np.diag(m.G), [2 / 3, 1 / 3, 1 / 3], rtol=0.03)
