"""Gridded certification of parameter-dependent matrix inequalities.

Every condition has the form ``S(p, rho) < 0`` for all grid points ``p``
(and all vertices ``rho`` of a rate box, where the condition is affine in
``rho``).  Negative definiteness is decided on the largest eigenvalue,
computed with a cyclic Jacobi iteration.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .exprlang import ExprArray
from .model import SystemModel

TOL_PD = 1e-9
SYMMETRY_TOL = 1e-12

CERTIFIED = "certified"
VIOLATED = "violated"
METRIC_INVALID = "metric invalid"


class NotSymmetricError(ValueError):
    pass


class BracketError(ValueError):
    def __init__(self, message, reports=()):
        super().__init__(message)
        self.reports = tuple(reports)


# ---------------------------------------------------------------------------
# Eigenvalues

def eig_sym(S, tol: float = 1e-12, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations.

    Sweeps stop once the off-diagonal Frobenius norm is at most
    ``tol * max(1, ||S||_F)``.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    n = S.shape[0]
    if n == 0:
        return np.empty(0)
    scale = max(1.0, float(np.max(np.abs(S))))
    if np.max(np.abs(S - S.T)) > SYMMETRY_TOL * scale:
        raise NotSymmetricError("matrix is not symmetric")
    a = (0.5 * (S + S.T)).tolist()
    thresh = tol * max(1.0, math.sqrt(sum(v * v for row in a for v in row)))
    for _ in range(max_sweeps):
        off = 0.0
        for p in range(n - 1):
            row = a[p]
            for q in range(p + 1, n):
                off += row[q] * row[q]
        if math.sqrt(2.0 * off) <= thresh:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p][q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q][q] - a[p][p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(1.0 + theta * theta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                for k in range(n):
                    if k == p or k == q:
                        continue
                    akp = a[k][p]
                    akq = a[k][q]
                    a[k][p] = a[p][k] = c * akp - s * akq
                    a[k][q] = a[q][k] = s * akp + c * akq
                a[p][p] -= t * apq
                a[q][q] += t * apq
                a[p][q] = a[q][p] = 0.0
    return np.array([a[i][i] for i in range(n)])


def max_eig_sym(S) -> float:
    """Largest eigenvalue of a symmetric matrix."""
    return float(np.max(eig_sym(S)))


def he(A: np.ndarray) -> np.ndarray:
    return A + A.T


# ---------------------------------------------------------------------------
# Matrix functions and grids

class SymbolicMatrixFn:
    """Square (or rectangular) expression matrix over named parameters."""

    def __init__(self, entries, params: Sequence[str], symmetric: bool = True):
        self.params = tuple(params)
        self.expr = entries if isinstance(entries, ExprArray) else ExprArray(entries, self.params)
        if self.expr.variables != self.params:
            self.expr = ExprArray(self.expr.to_strings(), self.params, shape=self.expr.shape)
        if len(self.expr.shape) != 2:
            raise ValueError(f"matrix function needs 2-D entries, got shape {self.expr.shape}")
        self.symmetric = symmetric
        if symmetric and self.expr.shape[0] != self.expr.shape[1]:
            raise ValueError("symmetric matrix function must be square")

    @classmethod
    def constant(cls, matrix, params: Sequence[str] = (), symmetric: bool = True):
        return cls(ExprArray.from_array(matrix, params), params, symmetric)

    @property
    def shape(self):
        return self.expr.shape

    @property
    def is_constant(self) -> bool:
        return self.expr.is_constant

    def _check(self, val: np.ndarray) -> np.ndarray:
        if self.symmetric:
            asym = val - np.swapaxes(val, 0, 1)
            if asym.size and np.max(np.abs(asym)) > SYMMETRY_TOL * max(1.0, float(np.max(np.abs(val)))):
                raise NotSymmetricError("symmetric-flagged matrix function evaluated non-symmetric")
        return val

    def __call__(self, point=()) -> np.ndarray:
        return self._check(self.expr(*np.atleast_1d(np.asarray(point, dtype=float))[: len(self.params)]))

    def batch(self, points) -> np.ndarray:
        """Evaluate at ``points`` of shape ``(K, n_params)``; returns ``(K, n, m)``."""
        pts = np.asarray(points, dtype=float)
        pts = pts.reshape(pts.shape[0] if pts.ndim else 1, len(self.params))
        val = self.expr(*pts.T) if self.params else self.expr()
        if val.ndim == 2:
            val = np.broadcast_to(val[..., None], val.shape + (len(pts),))
        return np.moveaxis(self._check(val), -1, 0)

    def partial(self, name: str) -> "SymbolicMatrixFn":
        return SymbolicMatrixFn(self.expr.diff(name), self.params, self.symmetric)


def as_matrix_fn(M, params: Sequence[str], symmetric: bool = True) -> SymbolicMatrixFn:
    if isinstance(M, SymbolicMatrixFn):
        return M
    if isinstance(M, ExprArray):
        return SymbolicMatrixFn(M, params, symmetric)
    arr = np.asarray(M)
    if arr.dtype.kind in "fiu":
        return SymbolicMatrixFn.constant(arr, params, symmetric)
    return SymbolicMatrixFn(arr.tolist(), params, symmetric)


@dataclass
class Grid:
    """Tensor grid; ``axes`` maps a variable name to ``(lo, hi, count)`` or a fixed value.

    Variables not listed are held at zero.
    """

    axes: dict

    def axis_values(self, name: str) -> np.ndarray:
        spec = self.axes.get(name, 0.0)
        if np.ndim(spec) == 0:
            return np.array([float(spec)])
        lo, hi, count = spec
        return np.linspace(float(lo), float(hi), int(count))

    def points(self, variables: Sequence[str]) -> np.ndarray:
        unknown = set(self.axes) - set(variables)
        if unknown:
            raise ValueError(f"grid axes {sorted(unknown)} are not variables of the condition")
        axes = [self.axis_values(v) for v in variables]
        if not variables:
            return np.zeros((1, 0))
        return np.array(list(itertools.product(*axes)), dtype=float)

    def refined(self) -> "Grid":
        """Grid with each axis interval halved; contains every point of ``self``."""
        return Grid({k: v if np.ndim(v) == 0 else (v[0], v[1], 2 * int(v[2]) - 1)
                     for k, v in self.axes.items()})

    def describe(self) -> dict:
        return {k: (float(v) if np.ndim(v) == 0 else [float(v[0]), float(v[1]), int(v[2])])
                for k, v in self.axes.items()}


def rate_vertices(rate_bounds: Sequence[float] | None, n: int) -> list[np.ndarray]:
    if rate_bounds is None:
        return [np.zeros(n)]
    if len(rate_bounds) != n:
        raise ValueError(f"{len(rate_bounds)} rate bounds for {n} parameters")
    choices = [(-float(b), float(b)) if b else (0.0,) for b in rate_bounds]
    return [np.array(v) for v in itertools.product(*choices)]


@dataclass
class CertReport:
    condition: str
    grid: dict
    worst_eig: float
    argmax_point: dict
    verdict: str
    certified_scalar: float | None = None
    gains: list | None = field(default=None, repr=False)

    @property
    def certified(self) -> bool:
        return self.verdict == CERTIFIED

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "grid": self.grid,
            "worst_eig": self.worst_eig,
            "argmax_point": self.argmax_point,
            "verdict": self.verdict,
            "certified_scalar": self.certified_scalar,
        }


def _verdict(worst: float, tol_pd: float) -> str:
    return CERTIFIED if worst <= -tol_pd else VIOLATED


def _metric_report(condition, grid, names, pts, metric_batch, tol_pd):
    """Return a 'metric invalid' report if the metric is not positive definite somewhere."""
    for k, Mk in enumerate(metric_batch):
        lam_min = -max_eig_sym(-Mk)
        if not lam_min > tol_pd:
            return CertReport(condition, grid.describe(), float(lam_min),
                              dict(zip(names, map(float, pts[k]))), METRIC_INVALID)
    return None


def _run(condition, grid, names, pts, matrices, tol_pd) -> CertReport:
    worst = -math.inf
    arg = None
    for k, mats in enumerate(matrices):
        for rho, S in mats:
            e = max_eig_sym(S)
            if e > worst:
                worst = e
                arg = dict(zip(names, map(float, pts[k])))
                if rho is not None and len(rho):
                    arg["rate"] = [float(r) for r in rho]
    return CertReport(condition, grid.describe(), float(worst), arg or {}, _verdict(worst, tol_pd))


def _as_point_fn(F):
    if isinstance(F, SymbolicMatrixFn):
        return F
    if isinstance(F, ExprArray):
        return lambda p: F(*np.atleast_1d(p))
    if callable(F):
        return F
    arr = np.asarray(F, dtype=float)
    return lambda p: arr


# ---------------------------------------------------------------------------
# Frozen-parameter (LPV) conditions

def check_stability_lmi(M, Acl, lam: float, grid: Grid, rate_bounds=None, params=None,
                        tol_pd: float = TOL_PD) -> CertReport:
    """``He{M A} + 2 lam M + sum_i rho_i dM/ds_i < 0`` on grid x rate-box vertices.

    ``M`` is a symmetric matrix function of the parameters; ``Acl`` a matrix
    function (or callable ``Acl(point)``) of the same parameters.
    """
    if lam < 0:
        raise ValueError("decay rate must be non-negative")
    M = as_matrix_fn(M, params if params is not None else getattr(M, "params", ()))
    names = M.params
    Acl = _as_point_fn(Acl)
    pts = grid.points(names)
    Ms = M.batch(pts)
    bad = _metric_report("stability", grid, names, pts, Ms, tol_pd)
    if bad:
        return bad
    dMs = [M.partial(v).batch(pts) for v in names]
    verts = rate_vertices(rate_bounds, len(names)) if rate_bounds is not None else [np.zeros(len(names))]

    def mats():
        for k, p in enumerate(pts):
            A = np.asarray(Acl(p), dtype=float)
            base = he(Ms[k] @ A) + 2 * lam * Ms[k]
            yield [(rho, base + sum(r * dM[k] for r, dM in zip(rho, dMs))) for rho in verts]

    return _run("stability", grid, names, pts, mats(), tol_pd)


def check_convex_synthesis(W, L, A, B_u, lam: float, grid: Grid, rate_bounds=None,
                           params=None, tol_pd: float = TOL_PD) -> CertReport:
    """``He{A W + B_u L} + 2 lam W - sum_i rho_i dW/ds_i < 0``; gains ``K = L W^-1``
    are reconstructed at every grid point and returned in ``report.gains``."""
    W = as_matrix_fn(W, params if params is not None else getattr(W, "params", ()))
    names = W.params
    L = as_matrix_fn(L, names, symmetric=False)
    A = _as_point_fn(A)
    B_u = _as_point_fn(B_u)
    pts = grid.points(names)
    Ws = W.batch(pts)
    bad = _metric_report("convex_synthesis", grid, names, pts, Ws, tol_pd)
    if bad:
        return bad
    Ls = L.batch(pts)
    dWs = [W.partial(v).batch(pts) for v in names]
    verts = rate_vertices(rate_bounds, len(names)) if rate_bounds is not None else [np.zeros(len(names))]
    gains = [np.linalg.solve(Ws[k].T, Ls[k].T).T for k in range(len(pts))]

    def mats():
        for k, p in enumerate(pts):
            base = he(np.asarray(A(p)) @ Ws[k] + np.asarray(B_u(p)) @ Ls[k]) + 2 * lam * Ws[k]
            yield [(rho, base - sum(r * dW[k] for r, dW in zip(rho, dWs))) for rho in verts]

    report = _run("convex_synthesis", grid, names, pts, mats(), tol_pd)
    report.gains = gains
    return report


def performance_block(M, A, B, C, D, alpha: float, rate_term=None) -> np.ndarray:
    """Block matrix of the L2-gain condition; ``rate_term`` is added to ``He{M A}``."""
    n, nw, nz = A.shape[0], B.shape[1], C.shape[0]
    top = he(M @ A) + (0 if rate_term is None else rate_term)
    blk = np.zeros((n + nw + nz, n + nw + nz))
    blk[:n, :n] = top
    blk[:n, n:n + nw] = M @ B
    blk[n:n + nw, :n] = (M @ B).T
    blk[:n, n + nw:] = C.T / alpha
    blk[n + nw:, :n] = C / alpha
    blk[n:n + nw, n:n + nw] = -np.eye(nw)
    blk[n:n + nw, n + nw:] = D.T / alpha
    blk[n + nw:, n:n + nw] = D / alpha
    blk[n + nw:, n + nw:] = -np.eye(nz)
    return blk


def check_performance_lmi(M, closed_loop, alpha: float, grid: Grid, rate_bounds=None,
                          params=None, tol_pd: float = TOL_PD) -> CertReport:
    """L2-gain condition with ``closed_loop(point) -> (A, B, C, D)``."""
    if not alpha > 0:
        raise ValueError("gain bound must be positive")
    M = as_matrix_fn(M, params if params is not None else getattr(M, "params", ()))
    names = M.params
    pts = grid.points(names)
    Ms = M.batch(pts)
    bad = _metric_report("performance", grid, names, pts, Ms, tol_pd)
    if bad:
        return bad
    dMs = [M.partial(v).batch(pts) for v in names]
    verts = rate_vertices(rate_bounds, len(names)) if rate_bounds is not None else [np.zeros(len(names))]

    def mats():
        for k, p in enumerate(pts):
            A, B, C, D = (np.atleast_2d(np.asarray(m, dtype=float)) for m in closed_loop(p))
            out = []
            for rho in verts:
                rate = sum((r * dM[k] for r, dM in zip(rho, dMs)), np.zeros_like(Ms[k]))
                out.append((rho, performance_block(Ms[k], A, B, C, D, alpha, rate)))
            yield out

    return _run("performance", grid, names, pts, mats(), tol_pd)


# ---------------------------------------------------------------------------
# Contraction-metric conditions (rate term driven by the model)

def _ccm_pieces(M, model: SystemModel, K, grid: Grid):
    M = as_matrix_fn(M, model.states)
    if M.params != model.states:
        raise ValueError(f"metric must be a function of the states {model.states}")
    if K is None:
        K = ExprArray([], model.states + model.inputs, shape=(model.n_u, model.n_x))
    elif not isinstance(K, ExprArray):
        K = ExprArray(K, model.states + model.inputs)
    if K.shape != (model.n_u, model.n_x):
        raise ValueError(f"gain has shape {K.shape}, expected {(model.n_u, model.n_x)}")
    names = model.variables
    pts = grid.points(names)
    nx, nu = model.n_x, model.n_u
    Ms = M.batch(pts[:, :nx])
    dMs = [M.partial(v).batch(pts[:, :nx]) for v in model.states]
    return M, K, names, pts, Ms, dMs, nx, nu


def check_ccm(M, model: SystemModel, K, lam: float, grid: Grid,
              tol_pd: float = TOL_PD) -> CertReport:
    """``He{M(x) (A + B_u K)} + 2 lam M(x) + sum_i f_i dM/dx_i < 0`` on an (x, u, w) box."""
    if lam < 0:
        raise ValueError("decay rate must be non-negative")
    M, K, names, pts, Ms, dMs, nx, nu = _ccm_pieces(M, model, K, grid)
    bad = _metric_report("ccm", grid, names, pts, Ms, tol_pd)
    if bad:
        return bad

    def mats():
        for k, p in enumerate(pts):
            x, u, w = p[:nx], p[nx:nx + nu], p[nx + nu:]
            J = model.jacobians(x, u, w)
            Acl = J.A + J.B_u @ K(*x, *u)
            f = model.eval_dynamics(x, u, w)
            S = he(Ms[k] @ Acl) + 2 * lam * Ms[k] + sum(fi * dM[k] for fi, dM in zip(f, dMs))
            yield [(None, S)]

    return _run("ccm", grid, names, pts, mats(), tol_pd)


def check_ccm_performance(M, model: SystemModel, K, alpha: float, grid: Grid,
                          tol_pd: float = TOL_PD) -> CertReport:
    """L2-gain block condition along the model flow, on an (x, u, w) box."""
    if not alpha > 0:
        raise ValueError("gain bound must be positive")
    M, K, names, pts, Ms, dMs, nx, nu = _ccm_pieces(M, model, K, grid)
    bad = _metric_report("ccm_performance", grid, names, pts, Ms, tol_pd)
    if bad:
        return bad

    def mats():
        for k, p in enumerate(pts):
            x, u, w = p[:nx], p[nx:nx + nu], p[nx + nu:]
            J = model.jacobians(x, u, w)
            Kx = K(*x, *u)
            f = model.eval_dynamics(x, u, w)
            rate = sum((fi * dM[k] for fi, dM in zip(f, dMs)), np.zeros_like(Ms[k]))
            blk = performance_block(Ms[k], J.A + J.B_u @ Kx, J.B_w, J.C + J.D_u @ Kx, J.D_w,
                                    alpha, rate)
            yield [(None, blk)]

    return _run("ccm_performance", grid, names, pts, mats(), tol_pd)


# ---------------------------------------------------------------------------
# Scalar search

def best_of(reports: Sequence[CertReport]) -> CertReport:
    """Report with the smallest worst-case eigenvalue among valid candidates."""
    valid = [r for r in reports if r.verdict != METRIC_INVALID]
    pool = valid or list(reports)
    return min(pool, key=lambda r: r.worst_eig)


def bisect(check: Callable[[float], CertReport], bracket: tuple[float, float], tol: float = 1e-3,
           maximize: bool = True) -> tuple[float, CertReport]:
    """Bisect a scalar (decay rate when ``maximize``, gain bound otherwise).

    ``check(value)`` must certify at one end of ``bracket`` and fail at the
    other: the lower end certifies when maximizing, the upper end when
    minimizing.  Returns the last certified value and its report.
    """
    lo, hi = map(float, bracket)
    if not lo < hi:
        raise BracketError(f"bracket {bracket} is not increasing")
    r_lo, r_hi = check(lo), check(hi)
    good, bad, rep = (lo, hi, r_lo) if maximize else (hi, lo, r_hi)
    if not rep.certified or (r_hi if maximize else r_lo).certified:
        raise BracketError(
            f"bracket {bracket} does not straddle the certification boundary "
            f"({r_lo.verdict} at {lo}, {r_hi.verdict} at {hi})", (r_lo, r_hi))
    while abs(good - bad) > tol:
        mid = 0.5 * (good + bad)
        r = check(mid)
        if r.certified:
            good, rep = mid, r
        else:
            bad = mid
    return good, replace(rep, certified_scalar=good)
