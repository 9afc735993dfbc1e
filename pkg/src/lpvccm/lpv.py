"""Equilibrium families, LPV linearization and gain-scheduled realizations."""

from __future__ import annotations

import itertools
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .exprlang import ExprArray, ExprError, Var, add, mul, substitute
from .model import Jacobians, SystemModel


class OutOfDomainError(ValueError):
    """Scheduling parameter (or its rate) outside the declared box."""


def _as_bounds(bounds) -> tuple[tuple[float, float], ...]:
    out = []
    for b in bounds:
        if np.ndim(b) == 0:
            out.append((-float(b), float(b)))
        else:
            lo, hi = (float(v) for v in b)
            if lo > hi:
                raise ValueError(f"empty interval [{lo}, {hi}]")
            out.append((lo, hi))
    return tuple(out)


class EquilibriumFamily:
    """Map from scheduling parameters to plant equilibria.

    ``x_e``, ``u_e``, ``w_e`` (and optionally ``z_e``) are expressions over
    ``params``.  ``g`` is the scheduling map, an expression vector over
    ``g_variables`` (state names, optionally followed by measured
    disturbance names).  ``bounds`` gives the parameter box, one
    ``(lo, hi)`` pair or symmetric bound per parameter, and ``rate_bounds``
    the symmetric rate box.
    """

    def __init__(self, params: Sequence[str], x_e: Sequence, u_e: Sequence, w_e: Sequence,
                 g: Sequence, g_variables: Sequence[str], bounds, rate_bounds=None,
                 z_e: Sequence | None = None, name: str = "family"):
        self.name = name
        self.params = tuple(params)
        n = len(self.params)
        self.x_e = ExprArray(list(x_e), self.params, shape=(len(x_e),))
        self.u_e = ExprArray(list(u_e), self.params, shape=(len(u_e),))
        self.w_e = ExprArray(list(w_e), self.params, shape=(len(w_e),))
        self.z_e = None if z_e is None else ExprArray(list(z_e), self.params, shape=(len(z_e),))
        self.g_variables = tuple(g_variables)
        self.g = ExprArray(list(g), self.g_variables, shape=(len(g),))
        if self.g.shape[0] != n:
            raise ExprError(f"scheduling map has {self.g.shape[0]} entries for {n} parameters")
        self.bounds = _as_bounds(bounds)
        if len(self.bounds) != n:
            raise ValueError(f"{len(self.bounds)} bounds for {n} parameters")
        rate_bounds = [np.inf] * n if rate_bounds is None else [float(r) for r in rate_bounds]
        if len(rate_bounds) != n or any(r < 0 for r in rate_bounds):
            raise ValueError("rate bounds must be one non-negative value per parameter")
        self.rate_bounds = tuple(rate_bounds)
        self.dx_e = self.x_e.jacobian(self.params)
        self.du_e = self.u_e.jacobian(self.params)
        self.dw_e = self.w_e.jacobian(self.params)

    @property
    def n_sigma(self) -> int:
        return len(self.params)

    def __repr__(self):
        return f"EquilibriumFamily({self.name!r}, params={self.params})"

    def _sigma(self, sigma) -> np.ndarray:
        s = np.atleast_1d(np.asarray(sigma, dtype=float))
        if s.shape[0] != self.n_sigma:
            raise ValueError(f"sigma has {s.shape[0]} components, expected {self.n_sigma}")
        return s

    def contains(self, sigma, tol: float = 1e-12) -> bool:
        s = self._sigma(sigma)
        return all(lo - tol <= v <= hi + tol for v, (lo, hi) in zip(s, self.bounds))

    def rate_ok(self, rate, tol: float = 1e-12) -> bool:
        r = self._sigma(rate)
        return all(abs(v) <= b + tol for v, b in zip(r, self.rate_bounds))

    def require(self, sigma) -> np.ndarray:
        s = self._sigma(sigma)
        if not self.contains(s):
            raise OutOfDomainError(f"sigma={s.tolist()} outside parameter box {self.bounds}")
        return s

    def equilibrium(self, sigma) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        s = self._sigma(sigma)
        return self.x_e(*s), self.u_e(*s), self.w_e(*s)

    def schedule(self, x, w=None) -> np.ndarray:
        """Evaluate the scheduling map ``g`` at a state (and measured disturbance)."""
        args = list(np.asarray(x, dtype=float))
        if len(self.g_variables) > len(args):
            if w is None:
                raise ValueError("scheduling map depends on the disturbance; pass w")
            args += list(np.asarray(w, dtype=float))
        return self.g(*args[: len(self.g_variables)])

    def rate_vertices(self) -> list[np.ndarray]:
        finite = [b if np.isfinite(b) else 0.0 for b in self.rate_bounds]
        return [np.array(v) for v in itertools.product(*[(-b, b) if b else (0.0,) for b in finite])]

    def grid(self, count: int = 21) -> np.ndarray:
        axes = [np.linspace(lo, hi, count) for lo, hi in self.bounds]
        return np.array(list(itertools.product(*axes)))

    def verify(self, model: SystemModel, count: int = 21) -> dict:
        """Equilibrium and scheduling-consistency residuals over a parameter grid."""
        eq_res = 0.0
        g_res = 0.0
        for s in self.grid(count):
            x, u, w = self.equilibrium(s)
            eq_res = max(eq_res, float(np.linalg.norm(model.eval_dynamics(x, u, w))))
            g_res = max(g_res, float(np.linalg.norm(self.schedule(x, w) - s)))
        return {"equilibrium": eq_res, "scheduling": g_res}


def lpv_linearize(model: SystemModel, family: EquilibriumFamily, sigma) -> Jacobians:
    """Coefficient matrices of the frozen-parameter linearization at ``sigma``."""
    s = family.require(sigma)
    return model.jacobians(*family.equilibrium(s))


def lpv_closed_loop(model: SystemModel, family: EquilibriumFamily, K: ExprArray):
    """Closed-loop LPV matrices ``(A + B_u K, B_w, C + D_u K, D_w)`` as a function of sigma."""

    def matrices(sigma):
        J = lpv_linearize(model, family, sigma)
        Ks = K(*np.atleast_1d(sigma))
        return J.A + J.B_u @ Ks, J.B_w, J.C + J.D_u @ Ks, J.D_w

    return matrices


def lpv_closed_loop_symbolic(model: SystemModel, family: EquilibriumFamily, K) -> ExprArray:
    """``A(s) + B_u(s) K(s)`` as simplified expressions over the parameters.

    Cancellation happens before evaluation, so a design that places the
    poles exactly yields an exactly representable matrix.
    """
    K = K if isinstance(K, ExprArray) else ExprArray(K, family.params)
    mapping = {}
    for names, arr in ((model.states, family.x_e), (model.inputs, family.u_e),
                       (model.disturbances, family.w_e)):
        mapping.update({v: arr.entries[i] for i, v in enumerate(names)})
    A = model.f.jacobian(model.states).substitute(mapping, family.params)
    B = model.f.jacobian(model.inputs).substitute(mapping, family.params)
    n_x, n_u = model.n_x, model.n_u
    rows = []
    for i in range(n_x):
        for j in range(n_x):
            e = A.entries[i, j]
            for k in range(n_u):
                e = add(e, mul(B.entries[i, k], K.entries[k, j]))
            rows.append(e)
    return ExprArray(rows, family.params, shape=(n_x, n_x)).simplified()


class ScheduledControl(NamedTuple):
    u: np.ndarray
    sigma: np.ndarray
    in_domain: bool


class GainScheduledController:
    """Gain-scheduled realization ``u = u_e(s) + K(s) (x - x_e(s))``.

    ``mode="reference"`` takes the scheduling value from outside (the
    exogenous reference); ``mode="state"`` substitutes ``s = g(x)``.
    """

    MODES = ("reference", "state")

    def __init__(self, family: EquilibriumFamily, K, mode: str = "reference", name: str = "gsc"):
        if mode not in self.MODES:
            raise ValueError(f"mode must be one of {self.MODES}, got {mode!r}")
        self.family = family
        self.name = name
        self.mode = mode
        self.K = K if isinstance(K, ExprArray) else ExprArray(K, family.params)
        if self.K.variables != family.params:
            self.K = ExprArray(self.K.to_strings(), family.params, shape=self.K.shape)
        n_u = family.u_e.shape[0]
        n_x = family.x_e.shape[0]
        if self.K.shape != (n_u, n_x):
            raise ExprError(f"gain has shape {self.K.shape}, expected {(n_u, n_x)}")
        self._law = self._symbolic_law()

    def _symbolic_law(self) -> ExprArray:
        fam = self.family
        xs = fam.g_variables[: fam.x_e.shape[0]]
        variables = tuple(fam.g_variables) + fam.params
        rows = []
        for i in range(fam.u_e.shape[0]):
            e = fam.u_e.entries[i]
            for j, xj in enumerate(xs):
                e = e + self.K.entries[i, j] * (Var(xj) - fam.x_e.entries[j])
            rows.append(e)
        if self.mode == "state":
            mapping = {p: fam.g.entries[k] for k, p in enumerate(fam.params)}
            rows = [substitute(e, mapping) for e in rows]
        return ExprArray(rows, variables, shape=(len(rows),))

    @property
    def law(self) -> ExprArray:
        """Realized law as expressions over ``g_variables + params``.

        In state mode the parameters no longer appear explicitly.
        """
        return self._law

    def sigma(self, x, sigma_input=None, w=None) -> np.ndarray:
        if self.mode == "state":
            return self.family.schedule(x, w)
        if sigma_input is None:
            raise ValueError("reference-scheduled controller needs sigma_input")
        return np.atleast_1d(np.asarray(sigma_input, dtype=float))

    def realized(self, x, sigma, w=None) -> np.ndarray:
        """Evaluate the realized law at state ``x`` and explicit parameter ``sigma``."""
        fam = self.family
        args = list(np.asarray(x, dtype=float))
        n_extra = len(fam.g_variables) - len(args)
        if n_extra:
            args += list(np.zeros(n_extra) if w is None else np.asarray(w, dtype=float))
        return self._law(*args, *np.atleast_1d(sigma))

    def control(self, x, sigma_input=None, w=None) -> ScheduledControl:
        s = self.sigma(x, sigma_input, w)
        return ScheduledControl(self.realized(x, s, w), s, self.family.contains(s))


def gs_control(controller: GainScheduledController, x, sigma_input=None, w=None) -> ScheduledControl:
    return controller.control(x, sigma_input, w)


def hidden_coupling_fd(law: Callable, family: EquilibriumFamily, gain: Callable, sigma,
                       h: float = 1e-6) -> np.ndarray:
    """Hidden-coupling matrix by central differences.

    ``law(x, s)`` is the realized control as a function of state and the
    explicit parameter; ``gain(s)`` the designed LPV gain.  Returns
    ``du_e/ds - K(s) dx_e/ds - d/ds law(x_e(s0), s)`` at ``s0 = sigma``.
    """
    s0 = family.require(sigma)
    x0 = family.x_e(*s0)
    n_u = family.u_e.shape[0]
    out = np.empty((n_u, family.n_sigma))
    K = np.asarray(gain(s0), dtype=float).reshape(n_u, -1)
    for k in range(family.n_sigma):
        e = np.zeros_like(s0)
        e[k] = h
        du = (family.u_e(*(s0 + e)) - family.u_e(*(s0 - e))) / (2 * h)
        dx = (family.x_e(*(s0 + e)) - family.x_e(*(s0 - e))) / (2 * h)
        dk = (np.asarray(law(x0, s0 + e)) - np.asarray(law(x0, s0 - e))) / (2 * h)
        out[:, k] = du - K @ dx - dk
    return out


def hidden_coupling(controller: GainScheduledController, sigma, kappa=None,
                    method: str = "symbolic", h: float = 1e-6) -> np.ndarray:
    """Hidden-coupling matrix ``K_h(sigma)`` (shape ``n_u x n_sigma``).

    ``kappa`` defaults to the controller's realized law.  It may be an
    :class:`ExprArray` over ``g_variables + params`` (symbolic or FD) or a
    callable ``kappa(x, sigma)`` (FD only).  A zero matrix means the
    realization linearizes to the designed gain at this parameter.
    """
    fam = controller.family
    s = fam.require(sigma)
    kappa = controller.law if kappa is None else kappa
    x_e, _, w_e = fam.equilibrium(s)
    n_extra = len(fam.g_variables) - len(x_e)
    point = list(x_e) + list(w_e[:n_extra])
    if method == "symbolic":
        if not isinstance(kappa, ExprArray):
            raise TypeError("symbolic hidden coupling needs an expression law")
        dk = kappa.jacobian(fam.params)(*point, *s)
        return fam.du_e(*s) - controller.K(*s) @ fam.dx_e(*s) - dk
    if method == "fd":
        if isinstance(kappa, ExprArray):
            law = lambda x, sig: kappa(*x, *point[len(x):], *sig)  # noqa: E731
        else:
            law = kappa
        return hidden_coupling_fd(law, fam, lambda sig: controller.K(*sig), s, h)
    raise ValueError(f"unknown method {method!r}")


def closed_loop_eigs(A) -> np.ndarray:
    """Eigenvalues, exact-form for 2x2 so repeated poles keep full precision."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape == (2, 2):
        tr = A[0, 0] + A[1, 1]
        half_gap = 0.5 * (A[0, 0] - A[1, 1])
        disc = complex(half_gap * half_gap + A[0, 1] * A[1, 0])
        r = disc ** 0.5
        return np.array([0.5 * tr + r, 0.5 * tr - r])
    return np.linalg.eigvals(A)


def pole_placement_check(A, B, K, poles) -> float:
    """Largest distance between the eigenvalues of ``A + B K`` and ``poles``.

    Both spectra are sorted by (real, imag) before pairing.
    """
    Acl = np.atleast_2d(A) + np.atleast_2d(B) @ np.atleast_2d(K)
    got = sorted(closed_loop_eigs(Acl), key=lambda z: (z.real, z.imag))
    want = sorted(np.asarray(poles, dtype=complex), key=lambda z: (z.real, z.imag))
    if len(got) != len(want):
        raise ValueError(f"{len(want)} target poles for a {len(got)}-state loop")
    return float(max(abs(g - w) for g, w in zip(got, want)))


def residual_term(family: EquilibriumFamily, sigma, sigma_rate) -> np.ndarray:
    """Forcing ``E(s) s_dot`` with ``E = dx_e/ds``, left over when the scheduled
    reference moves along the equilibrium manifold."""
    s = family.require(sigma)
    r = np.atleast_1d(np.asarray(sigma_rate, dtype=float))
    if not family.rate_ok(r):
        raise OutOfDomainError(f"rate {r.tolist()} outside rate box {family.rate_bounds}")
    return family.dx_e(*s) @ r


# ---------------------------------------------------------------------------
# Built-in families for the benchmark plant

def rugh1991_family_w(bound: float = 3.0, rate: float = 1.0) -> EquilibriumFamily:
    """Equilibria parameterized directly by the setpoint, ``s = w = x2``."""
    return EquilibriumFamily(
        ["s"], x_e=["0", "s"], u_e=["exp(-s) - 1"], w_e=["s"], z_e=["0", "0"],
        g=["x2"], g_variables=["x1", "x2"], bounds=[bound], rate_bounds=[rate],
        name="rugh1991_w",
    )


def rugh1991_family_exp(w_bound: float = 3.0, rate: float = 1.0) -> EquilibriumFamily:
    """Equilibria parameterized by ``s = exp(-w)``, the frozen A(2,2) entry."""
    lo, hi = float(np.exp(-w_bound)), float(np.exp(w_bound))
    return EquilibriumFamily(
        ["s"], x_e=["0", "-ln(s)"], u_e=["s - 1"], w_e=["-ln(s)"], z_e=["0", "0"],
        g=["exp(-x2)"], g_variables=["x1", "x2"], bounds=[(lo, hi)], rate_bounds=[rate * hi],
        name="rugh1991_exp",
    )


FAMILIES = {"rugh1991_w": rugh1991_family_w, "rugh1991_exp": rugh1991_family_exp}


def get_family(name: str) -> EquilibriumFamily:
    try:
        return FAMILIES[name]()
    except KeyError:
        raise KeyError(f"unknown family {name!r}; registered: {sorted(FAMILIES)}") from None

