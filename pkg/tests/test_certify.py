import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg

from lpvccm import casestudy
from lpvccm.certify import (CERTIFIED, METRIC_INVALID, VIOLATED, BracketError, Grid,
                            NotSymmetricError, SymbolicMatrixFn, best_of, bisect, check_ccm,
                            check_performance_lmi, check_stability_lmi, eig_sym, he)
from lpvccm.model import cubic_decay, rugh1991

ACL = np.array([[-1.0, -1.0], [1.0, -3.0]])


def _companion_roots(S):
    """Oracle: eigenvalues as roots of the characteristic polynomial (Faddeev-LeVerrier)."""
    n = len(S)
    coeffs = [1.0]
    Mk = np.zeros_like(S)
    for k in range(1, n + 1):
        Mk = S @ Mk + coeffs[-1] * np.eye(n)
        coeffs.append(-np.trace(S @ Mk) / k)
    comp = np.zeros((n, n))
    comp[0] = -np.array(coeffs[1:])
    comp[1:, :-1] = np.eye(n - 1)
    return np.sort(np.linalg.eigvals(comp).real)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_jacobi_matches_characteristic_polynomial(seed):
    rng = np.random.default_rng(seed)
    B = rng.uniform(-1, 1, (5, 5))
    S = B + B.T
    np.testing.assert_allclose(np.sort(eig_sym(S)), _companion_roots(S), atol=1e-8)


def test_jacobi_rejects_asymmetric():
    with pytest.raises(NotSymmetricError):
        eig_sym(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_identity_metric_threshold():
    grid = Grid({})
    assert check_stability_lmi(np.eye(2), ACL, 0.9, grid).verdict == CERTIFIED
    assert check_stability_lmi(np.eye(2), ACL, 1.1, grid).verdict == VIOLATED
    lam, rep = bisect(lambda v: check_stability_lmi(np.eye(2), ACL, v, grid), (0.5, 1.5), tol=1e-4)
    assert abs(lam - 1.0) <= 0.01 and rep.certified


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_identity_metric_reduces_to_symmetric_part(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(3, 3))
    rep = check_stability_lmi(np.eye(3), A, 0.0, Grid({}))
    direct = np.max(np.linalg.eigvalsh(A + A.T)) < -1e-9
    assert (rep.verdict == CERTIFIED) == direct


def test_decay_monotone_on_random_certified_instances():
    rng = np.random.default_rng(3)
    found = 0
    while found < 10:
        A = rng.normal(size=(2, 2)) - 2 * np.eye(2)
        B = rng.normal(size=(2, 2))
        M = B @ B.T + 0.5 * np.eye(2)
        lam1 = rng.uniform(0.1, 1.0)
        if not check_stability_lmi(M, A, lam1, Grid({})).certified:
            continue
        found += 1
        for lam2 in rng.uniform(0, lam1, 3):
            assert check_stability_lmi(M, A, lam2, Grid({})).certified


def test_rate_vertices_bound_interior_rates():
    M = SymbolicMatrixFn([["2 + sin(s)", "0.3*s"], ["0.3*s", "1 + s^2"]], ["s"])
    fam_A = lambda p: np.array([[-1.0, -1.0], [1.0, -3.0 - p[0]]])  # noqa: E731
    rng = np.random.default_rng(5)
    for s in np.linspace(-1, 1, 5):
        grid = Grid({"s": float(s)})
        worst_vertex = check_stability_lmi(M, fam_A, 0.3, grid, rate_bounds=[1.0]).worst_eig
        Ms, dM = M([s]), M.partial("s")([s])
        base = he(Ms @ fam_A([s])) + 0.6 * Ms
        interior = max(np.max(np.linalg.eigvalsh(base + r * dM)) for r in rng.uniform(-1, 1, 50))
        assert worst_vertex >= interior - 1e-12


def test_grid_refinement_monotone():
    fam = casestudy.family()
    ctrl = casestudy.gsc1(fam)
    from lpvccm.lpv import lpv_closed_loop
    cl = lpv_closed_loop(casestudy.plant(), fam, ctrl.K)
    M = SymbolicMatrixFn([["1 + 0.1*s^2", "0.2"], ["0.2", "1"]], ["s"])
    coarse = Grid({"s": (-3.0, 3.0, 5)})
    fine = coarse.refined()
    a = check_stability_lmi(M, lambda p: cl(p)[0], 0.5, coarse).worst_eig
    b = check_stability_lmi(M, lambda p: cl(p)[0], 0.5, fine).worst_eig
    assert b >= a


def test_indefinite_metric_is_invalid():
    rep = check_stability_lmi(np.diag([1.0, -1.0]), ACL, 0.1, Grid({}))
    assert rep.verdict == METRIC_INVALID


def test_scalar_ccm_example():
    rep = check_ccm([["1 + 3*x^2"]], cubic_decay(), None, 0.5, Grid({"x": (-3.0, 3.0, 61)}))
    assert rep.verdict == CERTIFIED


def test_case_study_ccm_metric_margin():
    grid = Grid({"x1": (-3.0, 3.0, 5), "x2": (-3.0, 3.0, 7), "w": (-2.0, 2.0, 3)})
    rep = check_ccm(casestudy.CCM_METRIC, rugh1991(), casestudy.CCM_GAIN, 1.9, grid)
    assert rep.certified
    assert rep.worst_eig == pytest.approx(-0.2, abs=1e-9)
    # identity metric cannot certify 1.9 for the same loop
    rep_i = check_ccm(np.eye(2), rugh1991(), casestudy.CCM_GAIN, 1.9, grid)
    assert rep_i.verdict == VIOLATED


def _hinf_frequency_sweep(A, B, C, D):
    n = len(A)
    peak = 0.0
    for w in np.concatenate([[0.0], np.logspace(-4, 4, 4001)]):
        H = C @ linalg.solve(1j * w * np.eye(n) - A, B) + D
        peak = max(peak, float(linalg.svdvals(H)[0]))
    return peak


def test_performance_bisection_against_frequency_sweep():
    A, B, C, D = (np.array([[v]]) for v in (-1.0, 1.0, 1.0, 0.0))
    oracle = _hinf_frequency_sweep(A, B, C, D)
    assert oracle == pytest.approx(1.0, abs=1e-6)

    def best(alpha):
        reps = [check_performance_lmi([[m]], lambda p: (A, B, C, D), alpha, Grid({}))
                for m in np.linspace(0.2, 3.0, 57)]
        return best_of(reps)

    alpha, rep = bisect(best, (0.5, 3.0), tol=1e-4, maximize=False)
    assert rep.certified
    assert abs(alpha - oracle) <= 0.02 * oracle


def test_bisect_rejects_bad_bracket():
    with pytest.raises(BracketError):
        bisect(lambda v: check_stability_lmi(np.eye(2), ACL, v, Grid({})), (1.2, 1.5))
    with pytest.raises(BracketError):
        bisect(lambda v: check_stability_lmi(np.eye(2), ACL, v, Grid({})), (1.5, 0.5))
