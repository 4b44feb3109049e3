import numpy as np
import pytest

import roqj
from roqj.analysis import (
    Observable,
    ensemble_average,
    observable_mean_stderr,
    trace_distance,
)
from roqj.engines import Ensemble, TrajectoryClass


def test_ensemble_average_single_class():
    psi = np.array([1.0, 0.0], dtype=complex)
    ens = Ensemble([TrajectoryClass(psi, 5)], total=5)
    assert np.allclose(ensemble_average(ens), np.outer(psi, psi.conj()))


def test_ensemble_average_equal_counts_maximally_mixed():
    e0 = np.array([1.0, 0.0], dtype=complex)
    e1 = np.array([0.0, 1.0], dtype=complex)
    ens = Ensemble([TrajectoryClass(e0, 4), TrajectoryClass(e1, 4)], total=8)
    assert np.allclose(ensemble_average(ens), np.eye(2) / 2)


def test_ensemble_average_weighted():
    e0 = np.array([1.0, 0.0], dtype=complex)
    plus = np.array([1.0, 1.0], dtype=complex) / np.sqrt(2)
    ens = Ensemble([TrajectoryClass(e0, 3), TrajectoryClass(plus, 1)], total=4)
    want = np.array([[0.875, 0.125], [0.125, 0.125]], dtype=complex)
    assert np.allclose(ensemble_average(ens), want, atol=1e-15)


def test_ensemble_average_empty_raises():
    with pytest.raises(ValueError):
        ensemble_average(Ensemble([], total=0))


def test_ensemble_average_commutes_with_merging():
    psi = np.array([0.6, 0.8], dtype=complex)
    ens_split = Ensemble([TrajectoryClass(psi, 2), TrajectoryClass(psi.copy(), 3)], total=5)
    ens_merged = Ensemble([TrajectoryClass(psi, 5)], total=5)
    assert np.max(np.abs(ensemble_average(ens_split) - ensemble_average(ens_merged))) < 1e-12


def test_observable_mean_stderr_constant():
    mean, se = observable_mean_stderr(np.full(50, 0.3))
    assert mean == pytest.approx(0.3)
    assert se == pytest.approx(0.0, abs=1e-12)


def test_observable_mean_stderr_binomial():
    n = 100
    samples = np.array([0.0, 1.0] * (n // 2))
    mean, se = observable_mean_stderr(samples)
    assert mean == pytest.approx(0.5)
    assert se == pytest.approx(0.5 / np.sqrt(n), abs=1e-15)


def test_observable_stderr_scaling():
    rng = np.random.default_rng(0)
    base = rng.normal(size=200)
    _, se1 = observable_mean_stderr(base)
    _, se4 = observable_mean_stderr(np.tile(base, 4))
    assert se4 == pytest.approx(se1 / 2.0, rel=1e-12)
    with pytest.raises(ValueError):
        observable_mean_stderr([1.0])


def test_trace_distance_basics():
    e0 = np.diag([1.0, 0.0]).astype(complex)
    e1 = np.diag([0.0, 1.0]).astype(complex)
    assert trace_distance(e0, e0) == 0.0
    assert trace_distance(e0, e1) == pytest.approx(1.0)
    assert trace_distance(e0, np.eye(2) / 2) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        trace_distance(e0, np.eye(3) / 3)


def test_trace_distance_metric_properties():
    rng = np.random.default_rng(4)

    def random_rho():
        a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        r = a @ a.conj().T
        return r / np.trace(r).real

    for _ in range(20):
        a, b, c = random_rho(), random_rho(), random_rho()
        assert trace_distance(a, b) == pytest.approx(trace_distance(b, a), abs=1e-12)
        assert trace_distance(a, c) <= trace_distance(a, b) + trace_distance(b, c) + 1e-12
        assert 0.0 <= trace_distance(a, b) <= 1.0 + 1e-12


def test_observable_matrix_functional():
    obs = Observable("re_rho_0_1", np.array([[0, 0], [1.0, 0]]), "re")
    rho = np.array([[0.5, 0.3 + 0.1j], [0.3 - 0.1j, 0.5]])
    assert obs.of_rho(rho) == pytest.approx(0.3)
    states = np.array([[1.0, 0.0], [np.sqrt(0.5), np.sqrt(0.5)]], dtype=complex)
    vals = obs.of_states(states)
    assert vals[0] == pytest.approx(0.0)
    assert vals[1] == pytest.approx(0.5)
