import numpy as np
import pytest

from polysize import circuit as C
from polysize import polysys, steppers
from polysize.circuit import Edge, NeuralCircuit, Node
from polysize.compiler import compile_polynet
from polysize.steppers import DivergenceError, StepperCircuit, abm2_step, build_stepper_circuit, rk4_step, simulate


def decay_circuit(rate=-1.0):
    return NeuralCircuit([Node(0, "input"), Node(1, "output")], [Edge(0, 1, rate)], [0], [1])


def test_rk4_decay_example():
    assert rk4_step(lambda x: -x, 0.1, 1.0) == pytest.approx(0.9048375, abs=1e-15)


def test_rk4_trivial_fields():
    assert rk4_step(lambda x: 0 * x, 0.3, np.array([2.5]))[0] == 2.5
    np.testing.assert_allclose(rk4_step(lambda x: np.ones_like(x), 0.25, np.array([1.0])), [1.25], rtol=1e-15)


def test_abm2_decay_example():
    x2, s = abm2_step(lambda x: -x, 0.1, np.array([0.9048375]), np.array([0.05]))
    assert x2[0] == pytest.approx(0.81864003, abs=1e-8)
    assert s[0] == pytest.approx(0.05 * 0.9048375, rel=1e-15)


def test_abm2_constant_fields():
    x, s = abm2_step(lambda x: 0 * x, 0.1, np.array([3.0]), np.array([0.7]))
    assert x[0] == 3.0 and s[0] == 0.0
    c, h = 1.75, 0.125
    x, _ = abm2_step(lambda x: np.full_like(x, c), h, np.array([2.0]), np.array([-0.5 * h * c]))
    assert x[0] == 2.0 + c * h


def test_non_finite_rate_raises():
    with pytest.raises(FloatingPointError):
        rk4_step(lambda x: x * np.inf, 0.1, np.array([1.0]))
    with pytest.raises(ValueError):
        rk4_step(lambda x: x, 0.0, np.array([1.0]))


def test_l63_one_step_matches_reference():
    pn = compile_polynet(polysys.l63_system())
    step = build_stepper_circuit(pn.circuit, "rk4", 0.01)
    x = np.array([1.0, 1.0, 1.0])
    ref = rk4_step(lambda v: polysys.evaluate(pn.source, v), 0.01, x)
    assert np.abs(C.forward(step, x)[0] - ref).max() <= 1e-14


def test_zero_inner_circuit_is_identity():
    inner = C.make_cn(3, 2)
    x = np.array([0.3, -2.0, 5.0])
    for scheme in steppers.SCHEMES:
        circ = build_stepper_circuit(inner, scheme, 0.1)
        state = np.zeros(3) if circ.has_delays else None
        np.testing.assert_array_equal(C.forward(circ, x, state)[0], x)


def test_stepper_parameters_shared_with_inner():
    pn = compile_polynet(polysys.l63_system())
    for scheme, copies in (("rk4", 4), ("abm2", 2)):
        circ = build_stepper_circuit(pn.circuit, scheme, 0.01)
        assert C.count_parameters(circ) == 3
        assert sum(nd.kind == "product" for nd in circ.nodes) == 2 * copies
    assert sum(e.delayed for e in build_stepper_circuit(pn.circuit, "abm2", 0.01).edges) == 3


def test_long_l63_equivalence():
    pn = compile_polynet(polysys.l63_system())
    st = StepperCircuit(pn.circuit, "rk4", 0.01)
    a = simulate(st, [1.0, 1.0, 1.0], 10_000)
    b = simulate(st, [1.0, 1.0, 1.0], 10_000, use_circuit=True)
    assert np.abs(a - b).max() <= 1e-10


@pytest.mark.parametrize("scheme", steppers.SCHEMES)
def test_random_inner_circuits_equivalent(scheme):
    rng = np.random.default_rng(0 if scheme == "rk4" else 1)
    for trial in range(6):
        n = int(rng.integers(1, 4))
        h = int(rng.integers(0, 7))
        act = ["tanh", "identity"][trial % 2]
        proto = C.make_cn(n, h, act)
        inner = C.make_cn(n, h, act, params=rng.normal(0, 0.5, proto.params.size))
        st = StepperCircuit(inner, scheme, 0.05)
        x0 = rng.uniform(-1, 1, n)
        a = simulate(st, x0, 1000)
        b = simulate(st, x0, 1000, use_circuit=True)
        assert np.abs(a - b).max() <= 1e-13


def test_stepper_dimension_mismatch():
    with pytest.raises(ValueError):
        build_stepper_circuit(NeuralCircuit([Node(0, "input"), Node(1, "output"), Node(2, "output")], [Edge(0, 1), Edge(0, 2)], [0], [1, 2]), "rk4", 0.1)
    with pytest.raises(ValueError):
        build_stepper_circuit(decay_circuit(), "euler", 0.1)


def test_simulate_zero_steps():
    traj = simulate(StepperCircuit(lambda x: -x, "rk4", 0.1), [2.0, 3.0], 0)
    np.testing.assert_array_equal(traj, [[2.0, 3.0]])


def test_decay_hundred_rk4_steps():
    traj = simulate(StepperCircuit(decay_circuit(), "rk4", 0.1), [1.0], 100)
    assert abs(traj[-1, 0] - np.exp(-10.0)) <= 1e-6


def test_l63_trajectory_stays_on_attractor():
    traj = simulate(StepperCircuit(polysys.l63_rhs, "rk4", 0.01), [1.0, 1.0, 1.0], 2500)
    tail = traj[500:]
    assert np.abs(tail[:, :2]).max() <= 25.0
    assert tail[:, 2].min() >= 0.0 and tail[:, 2].max() <= 50.0


def _global_error(scheme, h):
    steps = int(round(1.0 / h))
    traj = simulate(StepperCircuit(decay_circuit(), scheme, h), [1.0], steps, use_circuit=True)
    return abs(traj[-1, 0] - np.exp(-1.0))


def test_rk4_order():
    errs = [_global_error("rk4", h) for h in (0.1, 0.05, 0.025)]
    assert errs[0] / errs[1] >= 14 and errs[1] / errs[2] >= 14


def test_abm2_order():
    errs = [_global_error("abm2", h) for h in (0.1, 0.05, 0.025)]
    assert errs[0] / errs[1] >= 3.5 and errs[1] / errs[2] >= 3.5


def test_divergence_reports_step():
    with pytest.raises(DivergenceError) as info:
        simulate(StepperCircuit(lambda x: x * x, "rk4", 0.5), [10.0], 50)
    assert 1 <= info.value.step <= 50
