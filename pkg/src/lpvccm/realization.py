"""Path-integral realization of a differential feedback gain along a geodesic."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .exprlang import ExprArray
from .geometry import GeodesicConvergenceWarning, GeodesicPath, Metric, shift_path, solve_geodesic
from .lpv import EquilibriumFamily, hidden_coupling_fd
from .model import SystemModel


class CCMResult(NamedTuple):
    u: np.ndarray
    path: GeodesicPath
    kappa: np.ndarray


@dataclass
class GeodesicSettings:
    nodes: int = 50
    tol: float = 1e-8
    max_iter: int = 500

    def __post_init__(self):
        if self.nodes < 2 or self.tol <= 0 or self.max_iter < 1:
            raise ValueError("geodesic settings must be positive (nodes >= 2)")


class CCMController:
    """Control obtained by integrating ``K(x, u)`` from the reference to the state.

    ``K`` is an ``n_u x n_x`` expression matrix over ``states + inputs``.
    """

    def __init__(self, model: SystemModel, K, metric: Metric,
                 geodesic: GeodesicSettings | None = None, substeps: int = 4, name: str = "ccm"):
        self.model = model
        self.name = name
        variables = model.states + model.inputs
        self.K = K if isinstance(K, ExprArray) else ExprArray(K, variables)
        if self.K.variables != variables:
            self.K = ExprArray(self.K.to_strings(), variables, shape=self.K.shape)
        if self.K.shape != (model.n_u, model.n_x):
            raise ValueError(f"gain has shape {self.K.shape}, expected {(model.n_u, model.n_x)}")
        if metric.states != model.states:
            raise ValueError("metric must be defined over the model states")
        self.metric = metric
        self.geodesic = geodesic or GeodesicSettings()
        if substeps < 1:
            raise ValueError("substeps must be positive")
        self.substeps = int(substeps)
        self._u_dependent = self.K.depends_on(model.inputs)

    def gain(self, x, u) -> np.ndarray:
        return self.K(*np.asarray(x, dtype=float), *np.asarray(u, dtype=float))

    def solve_path(self, x_ref, x, init: GeodesicPath | None = None) -> GeodesicPath:
        g = self.geodesic
        nodes = None if init is None else shift_path(init, x_ref, x)
        return solve_geodesic(self.metric, x_ref, x, N=g.nodes, max_iter=g.max_iter, tol=g.tol,
                              init=nodes)


    def integrate_gain(self, path: GeodesicPath, u_ref, substeps: int | None = None) -> np.ndarray:
        return integrate_gain(self.K, path, u_ref, substeps or self.substeps,
                              u_dependent=self._u_dependent)

    def evaluate(self, x, x_ref, u_ref, init: GeodesicPath | None = None) -> CCMResult:
        x = np.asarray(x, dtype=float)
        x_ref = np.asarray(x_ref, dtype=float)
        u_ref = np.asarray(u_ref, dtype=float)
        path = self.solve_path(x_ref, x, init)
        if np.array_equal(x, x_ref):
            return CCMResult(u_ref.copy(), path, np.tile(u_ref, (len(path.nodes), 1)))
        kappa = self.integrate_gain(path, u_ref)
        return CCMResult(kappa[-1], path, kappa)

    def __call__(self, x, x_ref, u_ref) -> np.ndarray:
        return ccm_control(self, x, x_ref, u_ref)


@lru_cache(maxsize=32)
def _hermite_operators(N: int, s: tuple) -> tuple[np.ndarray, np.ndarray]:
    """Linear maps from nodes to Hermite-interpolated positions and velocities at ``s``."""
    eye = np.eye(N + 1)
    slopes = np.gradient(eye, 1.0 / N, axis=0, edge_order=1)
    s = np.asarray(s)
    h = 1.0 / N
    j = np.clip(np.floor(s * N).astype(int), 0, N - 1)
    t = ((s - j * h) / h)[:, None]
    t2, t3 = t * t, t * t * t
    p0, p1 = eye[j], eye[j + 1]
    m0, m1 = slopes[j] * h, slopes[j + 1] * h
    pos = (2 * t3 - 3 * t2 + 1) * p0 + (t3 - 2 * t2 + t) * m0 + (-2 * t3 + 3 * t2) * p1 + (t3 - t2) * m1
    vel = ((6 * t2 - 6 * t) * p0 + (3 * t2 - 4 * t + 1) * m0 + (-6 * t2 + 6 * t) * p1
           + (3 * t2 - 2 * t) * m1) / h
    return pos, vel


def _hermite(path: GeodesicPath, s) -> tuple[np.ndarray, np.ndarray]:
    """Cubic Hermite interpolant of the nodes (node slopes from :meth:`GeodesicPath.tangents`)."""
    P, V = _hermite_operators(path.N, tuple(np.atleast_1d(s).tolist()))
    return P @ path.nodes, V @ path.nodes


@lru_cache(maxsize=32)
def _stage_operators(N: int, substeps: int):
    """Stage interpolation maps plus the RK4 quadrature map from stage rates to node values.

    Rows of the interpolation maps are ordered: all step starts, all
    midpoints, all step ends.
    """
    n_steps = N * substeps
    h = 1.0 / n_steps
    s0 = np.arange(n_steps) * h
    s_all = np.minimum(np.concatenate([s0, s0 + 0.5 * h, s0 + h]), 1.0)
    P, V = _hermite_operators(N, tuple(s_all.tolist()))
    step = np.hstack([np.eye(n_steps), 4.0 * np.eye(n_steps), np.eye(n_steps)]) * (h / 6.0)
    cum = np.vstack([np.zeros(3 * n_steps), np.cumsum(step, axis=0)])
    return P, V, cum[::substeps]


def integrate_gain(K: ExprArray, path: GeodesicPath, u_ref, substeps: int = 4,
                   u_dependent: bool | None = None) -> np.ndarray:
    """Solve ``d kappa/ds = K(c(s), kappa(s)) c_s(s)``, ``kappa(0) = u_ref``, by RK4.

    The path is interpolated with cubic Hermite segments through the nodes
    using centred-difference slopes.  Returns ``kappa`` at every node.
    """
    u_ref = np.asarray(u_ref, dtype=float)
    N = path.N
    n_steps = N * substeps
    h = 1.0 / n_steps
    n_x = path.nodes.shape[1]
    if u_dependent is None:
        u_dependent = len(K.variables) > n_x and K.depends_on(K.variables[n_x:])
    P, V, Q = _stage_operators(N, substeps)
    pos, vel = P @ path.nodes, V @ path.nodes
    if not u_dependent:
        # kappa does not feed back into K: evaluate every stage in one batch
        zeros = np.zeros((len(u_ref), len(P)))
        Ks = K(*pos.T, *zeros) if len(u_ref) else np.zeros((0, n_x, len(P)))
        rates = np.einsum("ijk,kj->ki", Ks, vel)
        return u_ref + Q @ rates
    out = [u_ref.copy()]
    kap = u_ref.copy()

    def rhs(row, kap):
        return K(*pos[row], *kap) @ vel[row]

    for i in range(n_steps):
        mid, end = n_steps + i, 2 * n_steps + i
        k1 = rhs(i, kap)
        k2 = rhs(mid, kap + 0.5 * h * k1)
        k3 = rhs(mid, kap + 0.5 * h * k2)
        k4 = rhs(end, kap + h * k3)
        kap = kap + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if (i + 1) % substeps == 0:
            out.append(kap.copy())
    return np.array(out)


def ccm_control(controller: CCMController, x, x_ref, u_ref) -> np.ndarray:
    """Applied control ``kappa(1)``; equals ``u_ref`` when ``x == x_ref``."""
    res = controller.evaluate(x, x_ref, u_ref)
    if not res.path.converged:
        warnings.warn(f"geodesic solver stopped at gradient norm {res.path.grad_norm:.3e}",
                      GeodesicConvergenceWarning, stacklevel=2)
    return res.u


def exactness_check(law: Callable, gain: Callable, family: EquilibriumFamily,
                    sigmas: Sequence, h: float = 1e-6) -> float:
    """Largest hidden-coupling norm of ``law(x, x_ref, u_ref)`` over ``sigmas``.

    The reference is placed on the equilibrium family, ``x_ref = x_e(s)``,
    ``u_ref = u_e(s)``; ``gain(x, u)`` is the differential gain that the
    law is supposed to realize.
    """
    worst = 0.0
    for s in sigmas:
        s = np.atleast_1d(np.asarray(s, dtype=float))

        def kappa(x, sig):
            x_e, u_e, _ = family.equilibrium(sig)
            return law(x, x_e, u_e)

        x_e, u_e, _ = family.equilibrium(s)
        K = np.asarray(gain(x_e, u_e))
        Kh = hidden_coupling_fd(kappa, family, lambda _s: K, s, h)
        worst = max(worst, float(np.linalg.norm(Kh, 2)))
    return worst


def write_kappa_csv(path_out, path: GeodesicPath, kappa: np.ndarray) -> None:
    with open(path_out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s"] + [f"u{i + 1}" for i in range(kappa.shape[1])])
        for s, row in zip(path.s, kappa):
            w.writerow([repr(float(s))] + [repr(float(v)) for v in row])
