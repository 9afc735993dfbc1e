import numpy as np
import pytest

from lpvccm import casestudy
from lpvccm.lpv import (GainScheduledController, OutOfDomainError, closed_loop_eigs, gs_control,
                        hidden_coupling, lpv_closed_loop_symbolic, lpv_linearize,
                        pole_placement_check, residual_term, rugh1991_family_exp,
                        rugh1991_family_w)
from lpvccm.model import rugh1991
from lpvccm.sim import FamilyTarget, ReferenceSignal, simulate


def _fd_jacobian(fn, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def test_linearization_in_exponential_parameterization():
    m, fam = rugh1991(), rugh1991_family_exp()
    for s in np.linspace(*fam.bounds[0], 9):
        J = lpv_linearize(m, fam, [s])
        np.testing.assert_allclose(J.A, [[-1, -1], [0, s]], rtol=1e-14, atol=1e-14)
        np.testing.assert_array_equal(J.B_u, [[0], [1]])


def test_exact_closed_form_eigs():
    ev = closed_loop_eigs([[-1.0, -1.0], [1.0, 0.0]])
    np.testing.assert_allclose(sorted(ev, key=lambda z: z.imag),
                               [-0.5 - np.sqrt(3) / 2 * 1j, -0.5 + np.sqrt(3) / 2 * 1j], atol=1e-15)
    rng = np.random.default_rng(1)
    for _ in range(20):
        A = rng.normal(size=(2, 2))
        np.testing.assert_allclose(np.sort_complex(closed_loop_eigs(A)),
                                   np.sort_complex(np.linalg.eigvals(A)), atol=1e-12)


def test_pole_placement_numeric_and_symbolic():
    m, fam = rugh1991(), rugh1991_family_exp()
    Acl = lpv_closed_loop_symbolic(m, fam, [["1", "-3 - s"]])
    assert Acl.is_constant
    np.testing.assert_array_equal(Acl(1.0), [[-1, -1], [1, -3]])
    J = lpv_linearize(m, fam, [1.0])
    assert pole_placement_check(J.A, J.B_u, [[1, -4]], [-2, -2]) <= 1e-9
    # a wrong gain is detected
    assert pole_placement_check(J.A, J.B_u, [[1, -3]], [-2, -2]) > 0.1


def test_realization_consistency_on_grid():
    fam = rugh1991_family_w()
    for ctrl in (casestudy.gsc1(fam), casestudy.gsc2(fam)):
        for s in fam.grid(21):
            x_e, u_e, _ = fam.equilibrium(s)
            out = gs_control(ctrl, x_e, s if ctrl.mode == "reference" else None)
            np.testing.assert_allclose(out.u, u_e, atol=1e-10)
            assert out.in_domain


def test_reference_mode_linearizes_to_design_gain():
    fam = rugh1991_family_w()
    ctrl = casestudy.gsc1(fam)
    for s in fam.grid(11):
        x_e = fam.x_e(*s)
        J = _fd_jacobian(lambda x: ctrl.control(x, s).u, x_e)
        np.testing.assert_allclose(J, ctrl.K(*s), atol=1e-6)


def test_state_mode_jacobian_includes_hidden_coupling():
    fam = rugh1991_family_w()
    ctrl = casestudy.gsc2(fam)
    for s in fam.grid(11):
        x_e = fam.x_e(*s)
        J = _fd_jacobian(lambda x: ctrl.control(x).u, x_e)
        dg = np.array([[0.0, 1.0]])
        expect = ctrl.K(*s) + hidden_coupling(ctrl, s) @ dg
        np.testing.assert_allclose(J, expect, atol=1e-6)


def test_hidden_coupling_values():
    fam = rugh1991_family_w()
    for s in (-2.0, 0.0, 1.5):
        np.testing.assert_allclose(hidden_coupling(casestudy.gsc2(fam), [s]), [[3.0]], atol=1e-12)
        np.testing.assert_allclose(hidden_coupling(casestudy.gsc2(fam), [s], method="fd"), [[3.0]],
                                   atol=1e-6)
        np.testing.assert_allclose(hidden_coupling(casestudy.gsc1(fam), [s]), [[0.0]], atol=1e-12)
    # the value depends on the parameterization: with s = exp(-w) it is rescaled by dw/ds = -1/s
    fe = rugh1991_family_exp()
    g2 = GainScheduledController(fe, [["1", "-3 - s"]], mode="state")
    np.testing.assert_allclose(hidden_coupling(g2, [2.0]), [[-3.0 / 2.0]], atol=1e-12)


def test_out_of_domain_is_reported_not_raised():
    fam = rugh1991_family_w()
    out = casestudy.gsc2(fam).control([0.0, 5.0])
    assert not out.in_domain
    with pytest.raises(OutOfDomainError):
        hidden_coupling(casestudy.gsc2(fam), [5.0])


def test_residual_term_predicts_slow_forced_response():
    # GSC2 tracking a slow sinusoid: quasi-static error x - x* = A_cl^{-1} E(s) s_dot
    m, fam = rugh1991(), rugh1991_family_w()
    ref = ReferenceSignal.sinusoid(amplitude=1.0, frequency=0.01)
    target = FamilyTarget(m, fam, ref)
    res = simulate(m, casestudy.gsc2(fam), target, [0.0, 0.0], t_end=30.0, dt=0.01)
    A_cl = np.array([[-1.0, -1.0], [1.0, 0.0]])
    for t in (20.0, 25.0, 30.0):
        k = int(round(t / 0.01))
        s, sd = ref.value(t), ref.rate(t)
        assert abs(sd[0]) <= 0.01
        predicted = np.linalg.solve(A_cl, residual_term(fam, s, sd))
        err = res.x[k] - res.trajectory.x_ref[k]
        assert np.linalg.norm(err - predicted) <= 0.1 * np.linalg.norm(predicted)
