import numpy as np
import pytest

from polysize import circuit as C
from polysize import harness, polysys, steppers
from polysize.harness import MapDataset


@pytest.fixture(scope="module")
def small():
    return harness.generate_dataset(**harness.DESK, seed=0)


def test_desk_dataset_size(small):
    assert len(small) == 1000
    assert small.provenance["excluded"] == 0


def test_pairs_are_rk4_steps(small):
    step = harness.l63_map(small.dt)
    np.testing.assert_array_equal(step(small.X), small.Y)


def test_normalized_within_box(small):
    for Z in (small.Xn, small.Yn):
        assert np.abs(Z).max() <= 1.01
    np.testing.assert_allclose(small.denormalize(small.Xn), small.X, rtol=1e-14, atol=1e-13)


def test_dataset_reproducible(small):
    again = harness.generate_dataset(**harness.DESK, seed=0)
    assert again.X.tobytes() == small.X.tobytes() and again.Y.tobytes() == small.Y.tobytes()
    other = harness.generate_dataset(**harness.DESK, seed=1)
    assert not np.array_equal(other.X, small.X)


def test_empty_and_invalid_datasets():
    assert len(harness.generate_dataset(n_traj=3, total_steps=10, discard=5, keep=0)) == 0
    with pytest.raises(ValueError):
        harness.generate_dataset(n_traj=3, total_steps=10, discard=8, keep=5)


def test_subsample_region(small):
    sub = harness.subsample_region(small, lambda X: X[:, 0] > -5, 100, seed=3)
    assert len(sub) == 100 and np.all(sub.X[:, 0] > -5)
    full = harness.subsample_region(small, lambda X: np.ones(len(X), bool))
    assert full.X.tobytes() == small.X.tobytes()
    with pytest.raises(ValueError):
        harness.subsample_region(small, lambda X: X[:, 0] > 1e9, 1)


def test_csv_export(small, tmp_path):
    path = tmp_path / "d.csv"
    small.take(slice(0, 5)).to_csv(path, normalized=True)
    lines = path.read_text().splitlines()
    assert lines[0] == "# normalized=true" and lines[1] == "x,y,z,x',y',z'" and len(lines) == 7


def test_strong_regularization_drives_weights_to_zero(small):
    run = harness.train(C.make_cn(3, 4), small, lr=1e-7, epochs=100, lam=1e6, seed=0)
    assert np.abs(run.circuit.params).max() < 1e-6
    rms = np.sqrt(np.mean(small.Yn**2))
    assert run.rmse_train == pytest.approx(rms, rel=1e-4)


def _linear_ds(rng, S=200):
    X = rng.uniform(-1, 1, (S, 3))
    A, b = rng.uniform(-0.5, 0.5, (3, 3)), rng.uniform(-0.2, 0.2, 3)
    return MapDataset(X, X @ A.T + b, 0.01, -np.ones(3), np.ones(3))


def test_identity_network_fits_linear_map():
    ds = _linear_ds(np.random.default_rng(0))
    run = harness.train(C.make_cn(3, 3, "identity"), ds, lr=0.2, epochs=3000, lam=0.0, seed=1)
    assert run.rmse_train < 1e-8


def test_loss_non_increasing_for_small_rate():
    from polysize import learnability as L

    ds = _linear_ds(np.random.default_rng(1))
    model = C.make_cn(3, 0, "identity", with_skip=True)
    J = C.parameter_jacobian(model, ds.Xn)
    # per-sample-averaged metric of the least-squares Hessian
    sigma11 = L.spectral_norm(L.metric_from_G(np.einsum("sip,siq->pq", J, J) / len(ds)))
    run = harness.train(model, ds, lr=0.9 / (2 * sigma11), epochs=300, lam=0.0, seed=2)
    assert np.all(np.diff(run.loss) <= 1e-15)


def test_training_rejects_bad_circuits(small):
    with pytest.raises(ValueError):
        harness.train(C.make_cn(2, 3), small)
    with pytest.raises(steppers.DivergenceError):
        harness.train(C.make_cn(3, 4), small, lr=1e4, epochs=50, seed=0)


def test_free_run_of_zero_network(small):
    traj = harness.free_run(C.make_cn(3, 5), [3.0, -4.0, 10.0], 10, small)
    np.testing.assert_allclose(traj[1:], np.tile([0.0, 0.0, 25.0], (10, 1)))


def test_free_run_reference_matches_simulate():
    x0 = [1.0, 1.0, 1.0]
    a = harness.free_run(harness.l63_map(0.01), x0, 500)
    b = steppers.simulate(steppers.StepperCircuit(polysys.l63_rhs, "rk4", 0.01), x0, 500)
    assert a.tobytes() == b.tobytes()


def test_lyapunov_linear_maps():
    assert harness.largest_lyapunov(lambda x: 0.5 * x, [1.0, 2.0], 50) == pytest.approx(np.log(0.5), abs=1e-6)
    assert harness.largest_lyapunov(lambda x: 2.0 * x, [0.3], 40) == pytest.approx(np.log(2.0), abs=1e-6)
    # renormalizing every few steps gives the same rate
    assert harness.largest_lyapunov(lambda x: 0.5 * x, [1.0], 60, renorm=5) == pytest.approx(np.log(0.5), abs=1e-6)


def test_lyapunov_l63_positive_and_consistent():
    f = harness.l63_map(0.01)
    x0 = np.array([1.0, 1.0, 1.0])
    a = harness.largest_lyapunov(f, x0, 100_000, dt=0.01, seed=0, transient=1000)
    b = harness.largest_lyapunov(f, x0, 100_000, dt=0.01, seed=1, transient=1000)
    assert a > 0 and b > 0
    assert abs(a - b) <= 0.1 * max(a, b)
