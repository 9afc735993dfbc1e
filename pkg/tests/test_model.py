import numpy as np
import pytest

from lpvccm.exprlang import ExprError
from lpvccm.lpv import get_family, FAMILIES
from lpvccm.model import REGISTRY, SystemModel, Trajectory, get_model, rugh1991


@pytest.mark.parametrize("name", sorted(REGISTRY))
def test_fd_check_on_registered_models(name):
    model = get_model(name)
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        x = rng.uniform(-2, 2, model.n_x)
        u = rng.uniform(-2, 2, model.n_u)
        w = rng.uniform(-2, 2, model.n_w)
        worst = max(worst, model.fd_check(x, u, w))
    assert worst <= 1e-5


@pytest.mark.parametrize("name", sorted(FAMILIES))
def test_family_equilibria_are_rest_points(name):
    model = rugh1991()
    fam = get_family(name)
    for s in fam.grid(21):
        x, u, w = fam.equilibrium(s)
        assert np.linalg.norm(model.eval_dynamics(x, u, w)) <= 1e-9


def test_case_study_dynamics_and_output():
    m = rugh1991()
    x, u, w = np.array([0.4, -0.3]), np.array([0.2]), np.array([0.1])
    np.testing.assert_allclose(m.eval_dynamics(x, u, w), [-0.4 + 0.3 + 0.1, 1 - np.exp(0.3) + 0.2])
    np.testing.assert_allclose(m.eval_output(x, u, w), [0.4, -0.4])
    J = m.jacobians(x, u, w)
    np.testing.assert_allclose(J.A, [[-1, -1], [0, np.exp(0.3)]])
    np.testing.assert_allclose(J.B_u, [[0], [1]])
    np.testing.assert_allclose(J.B_w, [[1], [0]])
    np.testing.assert_allclose(J.C, np.eye(2))
    np.testing.assert_allclose(J.D_w, [[0], [-1]])


def test_model_rejects_bad_definitions():
    with pytest.raises(ExprError):
        SystemModel(["x"], [], [], f=["x", "x"])
    with pytest.raises(ExprError):
        SystemModel(["x"], [], [], f=["x + t"])
    with pytest.raises(KeyError):
        get_model("nope")


def test_trajectory_validation():
    t = np.arange(4) * 0.1
    z = np.zeros((4, 1))
    Trajectory(t, z, z, z, z)
    with pytest.raises(ValueError):
        Trajectory(t, np.zeros((3, 1)), z, z, z)
    with pytest.raises(ValueError):
        Trajectory(np.array([0, 0.1, 0.3, 0.4]), z, z, z, z)
