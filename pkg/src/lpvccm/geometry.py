"""Riemannian metrics on R^n and discretized minimum-energy paths."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .certify import as_matrix_fn, max_eig_sym


class GeodesicConvergenceWarning(RuntimeWarning):
    pass


class MetricError(ValueError):
    pass


class Metric:
    """Smooth metric ``M(x) > 0`` given as a symmetric expression matrix over state names.

    ``bounds=(a1, a2)`` declares uniform bounds ``a1 I <= M(x) <= a2 I``;
    :meth:`check` verifies positivity (and the bounds) at given points.
    """

    def __init__(self, M, states: Sequence[str], bounds: tuple[float, float] | None = None):
        self.states = tuple(states)
        self.M = as_matrix_fn(M, self.states)
        if self.M.shape != (len(self.states), len(self.states)):
            raise MetricError(f"metric shape {self.M.shape} does not match {len(self.states)} states")
        if bounds is not None:
            a1, a2 = map(float, bounds)
            if not 0 < a1 <= a2:
                raise MetricError("metric bounds need 0 < a1 <= a2")
            bounds = (a1, a2)
        self.bounds = bounds
        self._partials = [self.M.partial(v) for v in self.states]
        self._const = self.M(np.zeros(len(self.states))) if self.M.is_constant else None

    @classmethod
    def identity(cls, states: Sequence[str], scale: float = 1.0) -> "Metric":
        n = len(states)
        return cls(scale * np.eye(n), states, bounds=(scale, scale))

    @property
    def n(self) -> int:
        return len(self.states)

    @property
    def is_constant(self) -> bool:
        return self._const is not None

    def __call__(self, x) -> np.ndarray:
        return self.M(x)

    def batch(self, points) -> np.ndarray:
        if self._const is not None:
            return np.broadcast_to(self._const, (len(points),) + self._const.shape)
        return self.M.batch(points)

    def partials_batch(self, points) -> np.ndarray:
        """``dM/dx_i`` at each point, shape ``(n, K, n, n)``."""
        if self._const is not None:
            return np.zeros((self.n, len(points), self.n, self.n))
        return np.stack([P.batch(points) for P in self._partials])

    def check(self, points, tol: float = 1e-12) -> None:
        for Mk in self.batch(np.atleast_2d(points)):
            lo = -max_eig_sym(-Mk)
            hi = max_eig_sym(Mk)
            if lo <= 0:
                raise MetricError(f"metric not positive definite (min eigenvalue {lo})")
            if self.bounds and (lo < self.bounds[0] - tol or hi > self.bounds[1] + tol):
                raise MetricError(f"metric eigenvalues [{lo}, {hi}] outside declared bounds {self.bounds}")


@dataclass
class GeodesicPath:
    """Nodes ``c(s_j)`` at ``s_j = j/N`` with pinned endpoints."""

    nodes: np.ndarray
    energy: float
    length: float
    iterations: int
    converged: bool
    grad_norm: float = 0.0

    @property
    def N(self) -> int:
        return len(self.nodes) - 1

    @property
    def s(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, len(self.nodes))

    @property
    def start(self) -> np.ndarray:
        return self.nodes[0]

    @property
    def end(self) -> np.ndarray:
        return self.nodes[-1]

    def tangents(self) -> np.ndarray:
        """``c_s`` at the nodes: centred differences inside, one-sided at the ends."""
        return np.gradient(self.nodes, 1.0 / self.N, axis=0, edge_order=1)


def _segment_forms(metric: Metric, nodes: np.ndarray):
    d = np.diff(nodes, axis=0)
    mids = 0.5 * (nodes[1:] + nodes[:-1])
    Ms = metric.batch(mids)
    q = np.einsum("ki,kij,kj->k", d, Ms, d)
    return d, mids, Ms, q


def path_energy(metric: Metric, nodes) -> float:
    """Midpoint-rule energy ``sum_j N d_j' M(m_j) d_j`` of a polygonal path."""
    nodes = np.asarray(nodes, dtype=float)
    if len(nodes) < 2:
        raise ValueError("a path needs at least two nodes")
    N = len(nodes) - 1
    return float(N * np.sum(_segment_forms(metric, nodes)[3]))


def path_length(metric: Metric, nodes) -> float:
    nodes = np.asarray(nodes, dtype=float)
    if len(nodes) < 2:
        raise ValueError("a path needs at least two nodes")
    q = _segment_forms(metric, nodes)[3]
    return float(np.sum(np.sqrt(np.maximum(q, 0.0))))


def _energy_and_grad(metric: Metric, nodes: np.ndarray):
    N = len(nodes) - 1
    d, mids, Ms, q = _segment_forms(metric, nodes)
    energy = N * float(np.sum(q))
    Md = np.einsum("kij,kj->ki", Ms, d)
    dM = metric.partials_batch(mids)
    curv = np.einsum("ki,lkij,kj->kl", d, dM, d) if not metric.is_constant else 0.0
    # segment j touches nodes j (d -> -) and j+1 (d -> +); midpoint derivative 1/2 each
    seg_lo = N * (-2.0 * Md + 0.5 * curv)
    seg_hi = N * (2.0 * Md + 0.5 * curv)
    grad = seg_hi[:-1] + seg_lo[1:]
    return energy, grad, Ms


def _precondition(Ms: np.ndarray, grad: np.ndarray, N: int) -> np.ndarray:
    """Solve with the frozen-metric Hessian (block tridiagonal, SPD)."""
    n_int, n = grad.shape
    H = np.zeros((n_int * n, n_int * n))
    for j in range(n_int):
        blk = 2.0 * N * (Ms[j] + Ms[j + 1])
        H[j * n:(j + 1) * n, j * n:(j + 1) * n] = blk
        if j + 1 < n_int:
            off = -2.0 * N * Ms[j + 1]
            H[j * n:(j + 1) * n, (j + 1) * n:(j + 2) * n] = off
            H[(j + 1) * n:(j + 2) * n, j * n:(j + 1) * n] = off
    return np.linalg.solve(H, grad.ravel()).reshape(n_int, n)


@lru_cache(maxsize=16)
def _unit_grid(N: int) -> np.ndarray:
    g = np.linspace(0.0, 1.0, N + 1)[:, None]
    g.flags.writeable = False
    return g


def solve_geodesic(metric: Metric, x0, x1, N: int = 50, max_iter: int = 500, tol: float = 1e-8,
                   backtrack: float = 0.5, init=None) -> GeodesicPath:
    """Minimize the discretized energy over interior nodes, endpoints fixed.

    Descent directions are gradients preconditioned by the frozen-metric
    Hessian; steps follow an Armijo backtracking line search.  Iteration
    stops when the gradient infinity-norm is at most ``tol``.  ``init`` may
    provide starting nodes (its endpoints are overwritten); otherwise the
    straight chord is used.
    """
    if N < 2:
        raise ValueError("need N >= 2 segments")
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    s = _unit_grid(N)
    chord = (1.0 - s) * x0 + s * x1
    nodes = chord.copy() if init is None else np.array(init, dtype=float)
    if nodes.shape != chord.shape:
        nodes = chord.copy()
    nodes[0], nodes[-1] = x0, x1

    if np.array_equal(x0, x1) and init is None:
        return GeodesicPath(nodes, 0.0, 0.0, 0, True)
    if metric.is_constant:
        # straight lines are exact geodesics of a constant metric
        d = x1 - x0
        energy = float(d @ metric._const @ d)
        return GeodesicPath(chord, energy, float(np.sqrt(energy)), 0, True)

    energy, grad, Ms = _energy_and_grad(metric, nodes)
    if init is not None:
        chord_energy = path_energy(metric, chord)
        if chord_energy < energy:
            nodes = chord
            energy, grad, Ms = _energy_and_grad(metric, nodes)
    it = 0
    gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
    while gnorm > tol and it < max_iter:
        direction = _precondition(Ms, grad, N)
        slope = float(np.sum(grad * direction))
        if slope <= 0:
            direction, slope = grad, float(np.sum(grad * grad))
        step = 1.0
        while True:
            trial = nodes.copy()
            trial[1:-1] -= step * direction
            e_trial = path_energy(metric, trial)
            if e_trial <= energy - 1e-4 * step * slope or step < 1e-12:
                break
            step *= backtrack
        if e_trial > energy:
            break
        nodes = trial
        energy, grad, Ms = _energy_and_grad(metric, nodes)
        gnorm = float(np.max(np.abs(grad)))
        it += 1
    converged = gnorm <= tol
    return GeodesicPath(nodes, energy, path_length(metric, nodes), it, converged, gnorm)


def riemann_energy(metric: Metric, x0, x1, N: int = 50, max_iter: int = 500,
                   tol: float = 1e-8) -> float:
    """Energy of the computed geodesic; warns when the solver did not converge."""
    if np.array_equal(np.asarray(x0, dtype=float), np.asarray(x1, dtype=float)):
        return 0.0
    path = solve_geodesic(metric, x0, x1, N=N, max_iter=max_iter, tol=tol)
    if not path.converged:
        warnings.warn(f"geodesic solver stopped at gradient norm {path.grad_norm:.3e}",
                      GeodesicConvergenceWarning, stacklevel=2)
    return path.energy


def shift_path(path: GeodesicPath, x0, x1) -> np.ndarray:
    """Warm-start nodes: previous path moved so its ends sit at the new endpoints."""
    s = path.s[:, None]
    return path.nodes + (1.0 - s) * (np.asarray(x0) - path.start) + s * (np.asarray(x1) - path.end)
