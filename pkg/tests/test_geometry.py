import numpy as np
import pytest
from scipy import integrate

from lpvccm.geometry import Metric, MetricError, path_energy, riemann_energy, solve_geodesic

SCALAR = Metric([["1 + 3*x1^2"]], ["x1"])


def _oracle_energy(a, b):
    length, _ = integrate.quad(lambda x: np.sqrt(1 + 3 * x * x), a, b, epsabs=1e-13)
    return length ** 2


def test_scalar_benchmark_energy():
    oracle = _oracle_energy(0.0, 1.0)
    assert oracle == pytest.approx(1.9048775, abs=1e-7)
    path = solve_geodesic(SCALAR, [0.0], [1.0])
    assert path.converged
    assert abs(path.energy - oracle) <= 1e-3
    assert path.length == pytest.approx(np.sqrt(oracle), abs=1e-3)


def test_discretization_error_shrinks():
    e = {N: solve_geodesic(SCALAR, [0.0], [1.0], N=N).energy for N in (25, 50, 100, 200, 400)}
    gaps = [abs(e[N] - e[2 * N]) for N in (25, 50, 100, 200)]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    # second-order: each halving shrinks the gap roughly fourfold
    assert gaps[-1] < gaps[0] / 30


def test_constant_metric_paths_are_straight():
    rng = np.random.default_rng(0)
    M = np.array([[2.0, 0.3], [0.3, 1.0]])
    metric = Metric(M, ["a", "b"])
    for _ in range(10):
        x0, x1 = rng.normal(size=2), rng.normal(size=2)
        path = solve_geodesic(metric, x0, x1)
        chord = x0 + np.outer(path.s, x1 - x0)
        assert np.max(np.abs(path.nodes - chord)) <= 1e-8
        d = x1 - x0
        assert path.energy == pytest.approx(d @ M @ d, rel=1e-12)


def test_nonconstant_metric_started_off_chord_still_lands_on_geodesic():
    metric = Metric([["1 + x1^2", "0"], ["0", "1"]], ["x1", "x2"])
    x0, x1 = np.array([-1.0, 0.0]), np.array([1.0, 0.5])
    ref = solve_geodesic(metric, x0, x1, N=40)
    bent = ref.nodes + 0.2 * np.sin(np.pi * ref.s)[:, None]
    warm = solve_geodesic(metric, x0, x1, N=40, init=bent)
    assert warm.converged and ref.converged
    assert warm.energy == pytest.approx(ref.energy, rel=1e-8)


def test_symmetry():
    rng = np.random.default_rng(1)
    metrics = [SCALAR, Metric([["2"]], ["x1"])]
    for metric in metrics:
        for _ in range(10):
            a, b = rng.uniform(-2, 2, 2)
            e_ab = riemann_energy(metric, [a], [b])
            e_ba = riemann_energy(metric, [b], [a])
            assert abs(e_ab - e_ba) <= 1e-6 * (1 + e_ab)


def test_bounds_sandwich():
    metric = Metric([["2 + sin(x1)", "0"], ["0", "2 + cos(x2)"]], ["x1", "x2"], bounds=(1.0, 3.0))
    rng = np.random.default_rng(2)
    for _ in range(10):
        x0, x1 = rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 2)
        e = riemann_energy(metric, x0, x1)
        d2 = float(np.sum((x1 - x0) ** 2))
        assert 1.0 * d2 - 1e-9 <= e <= 3.0 * d2 + 1e-9


def test_minimality_against_perturbed_paths():
    path = solve_geodesic(SCALAR, [-0.5], [1.5])
    rng = np.random.default_rng(3)
    for _ in range(100):
        trial = path.nodes.copy()
        trial[1:-1] += rng.normal(scale=0.05, size=trial[1:-1].shape)
        assert path.energy <= path_energy(SCALAR, trial)


def test_endpoints_pinned_and_energy_below_chord():
    metric = Metric([["1 + x2^2", "0.1"], ["0.1", "1 + x1^2"]], ["x1", "x2"])
    x0, x1 = np.array([-1.0, 2.0]), np.array([1.5, -1.0])
    path = solve_geodesic(metric, x0, x1)
    np.testing.assert_array_equal(path.start, x0)
    np.testing.assert_array_equal(path.end, x1)
    chord = x0 + np.outer(path.s, x1 - x0)
    assert path.energy <= path_energy(metric, chord)


def test_metric_validation():
    with pytest.raises(MetricError):
        Metric([["1", "0"], ["0", "1"]], ["x1"])
    with pytest.raises(MetricError):
        Metric([["1"]], ["x1"], bounds=(2.0, 1.0))
    m = Metric([["1 - x1^2"]], ["x1"])
    with pytest.raises(MetricError):
        m.check([[2.0]])
