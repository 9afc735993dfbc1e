"""Nonlinear plant models ``xdot = f(x, u, w)``, ``z = h(x, u, w)``."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .exprlang import ExprArray, ExprError


class Jacobians(NamedTuple):
    A: np.ndarray
    B_u: np.ndarray
    B_w: np.ndarray
    C: np.ndarray
    D_u: np.ndarray
    D_w: np.ndarray


class SystemModel:
    """Plant defined by expression strings over named states, inputs, disturbances.

    Parameters
    ----------
    states, inputs, disturbances : sequences of variable names
        ``inputs`` and ``disturbances`` may be empty.
    f : expressions, one per state
    h : expressions for the performance output; defaults to ``z = x``.
    """

    def __init__(self, states: Sequence[str], inputs: Sequence[str], disturbances: Sequence[str],
                 f: Sequence, h: Sequence | None = None, name: str = "model"):
        self.name = name
        self.states = tuple(states)
        self.inputs = tuple(inputs)
        self.disturbances = tuple(disturbances)
        self.variables = self.states + self.inputs + self.disturbances
        if len(f) != len(self.states):
            raise ExprError(f"f has {len(f)} entries for {len(self.states)} states")
        self.f = ExprArray(list(f), self.variables, shape=(len(f),))
        if h is None:
            h = list(self.states)
        self.h = ExprArray(list(h), self.variables, shape=(len(h),))
        x, u, w = self.states, self.inputs, self.disturbances
        self._jac = (self.f.jacobian(x), self.f.jacobian(u), self.f.jacobian(w),
                     self.h.jacobian(x), self.h.jacobian(u), self.h.jacobian(w))

    @property
    def n_x(self) -> int:
        return len(self.states)

    @property
    def n_u(self) -> int:
        return len(self.inputs)

    @property
    def n_w(self) -> int:
        return len(self.disturbances)

    @property
    def n_z(self) -> int:
        return self.h.shape[0]

    def __repr__(self):
        return (f"SystemModel({self.name!r}, states={self.states}, inputs={self.inputs}, "
                f"disturbances={self.disturbances})")

    def _args(self, x, u, w):
        if (type(x) is np.ndarray and x.shape == (self.n_x,) and type(u) is np.ndarray
                and u.shape == (self.n_u,) and type(w) is np.ndarray and w.shape == (self.n_w,)):
            return (*x.tolist(), *u.tolist(), *w.tolist())
        x = np.asarray(x, dtype=float)
        u = np.zeros(self.n_u) if u is None else np.asarray(u, dtype=float)
        w = np.zeros(self.n_w) if w is None else np.asarray(w, dtype=float)
        for name, v, n in (("x", x, self.n_x), ("u", u, self.n_u), ("w", w, self.n_w)):
            if v.shape[:1] != (n,):
                raise ValueError(f"{name} has shape {v.shape}, expected leading dimension {n}")
        return (*x, *u, *w)

    def eval_dynamics(self, x, u=None, w=None) -> np.ndarray:
        """``f(x, u, w)``; leading axis of each argument indexes components."""
        return self.f(*self._args(x, u, w))

    def eval_output(self, x, u=None, w=None) -> np.ndarray:
        return self.h(*self._args(x, u, w))

    def jacobians(self, x, u=None, w=None) -> Jacobians:
        args = self._args(x, u, w)
        return Jacobians(*(J(*args) for J in self._jac))

    def input_jacobian(self, x, u=None, w=None) -> np.ndarray:
        """``df/du`` alone, cheaper than :meth:`jacobians`."""
        return self._jac[1](*self._args(x, u, w))

    def fd_check(self, x, u=None, w=None, h: float = 1e-5) -> float:
        """Largest relative gap between symbolic and central-difference Jacobians.

        The gap of each entry is scaled by ``max(1, |symbolic entry|)``.
        """
        if not h > 0:
            raise ValueError("finite-difference step must be positive")
        point = np.array(self._args(x, u, w), dtype=float)
        full_f = self.f.jacobian(self.variables).at(point)
        full_h = self.h.jacobian(self.variables).at(point)
        fd_f = np.empty_like(full_f)
        fd_h = np.empty_like(full_h)
        for j in range(point.size):
            step = np.zeros_like(point)
            step[j] = h
            fd_f[:, j] = (self.f.at(point + step) - self.f.at(point - step)) / (2 * h)
            fd_h[:, j] = (self.h.at(point + step) - self.h.at(point - step)) / (2 * h)
        err = 0.0
        for sym, fd in ((full_f, fd_f), (full_h, fd_h)):
            if sym.size:
                err = max(err, float(np.max(np.abs(sym - fd) / np.maximum(1.0, np.abs(sym)))))
        return err


@dataclass
class Trajectory:
    """Sampled closed-loop signals on a uniform time grid.

    ``x`` has shape ``(len(t), n_x)``, likewise ``u``, ``w``, ``z``; the
    optional reference arrays ``x_ref``/``u_ref`` match ``x``/``u``.
    """

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    w: np.ndarray
    z: np.ndarray
    x_ref: np.ndarray | None = None
    u_ref: np.ndarray | None = None
    w_ref: np.ndarray | None = None
    z_ref: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.t)
        for name in ("x", "u", "w", "z", "x_ref", "u_ref", "w_ref", "z_ref"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise ValueError(f"{name} has {len(arr)} samples, time grid has {n}")
        if n > 2:
            dt = np.diff(self.t)
            if np.any(dt <= 0) or np.ptp(dt) > 1e-9 * max(1.0, abs(self.t[-1])):
                raise ValueError("time grid must be strictly increasing with constant step")

    def __len__(self):
        return len(self.t)

    @property
    def error(self) -> np.ndarray:
        if self.x_ref is None:
            raise ValueError("trajectory has no reference")
        return self.x - self.x_ref


# ---------------------------------------------------------------------------
# Registry of built-in plants

def rugh1991() -> SystemModel:
    """Two-state benchmark plant; ``z`` is the tracking error to ``x* = (0, w)``."""
    return SystemModel(
        ["x1", "x2"], ["u"], ["w"],
        f=["-x1 - x2 + w", "1 - exp(-x2) + u"],
        h=["x1", "x2 - w"],
        name="rugh1991",
    )


def cubic_decay() -> SystemModel:
    return SystemModel(["x"], [], [], f=["-x - x^3"], name="cubic_decay")


def first_order() -> SystemModel:
    return SystemModel(["x"], [], ["w"], f=["-x + w"], h=["x"], name="first_order")


def linear_example() -> SystemModel:
    return SystemModel(["x1", "x2"], ["u"], ["w"],
                       f=["-x1 - x2 + w", "x1 - 3*x2 + u"], h=["x1", "x2"],
                       name="linear_example")


REGISTRY = {
    "rugh1991": rugh1991,
    "cubic_decay": cubic_decay,
    "first_order": first_order,
    "linear_example": linear_example,
}


def get_model(name: str) -> SystemModel:
    try:
        return REGISTRY[name]()
    except KeyError:
        raise KeyError(f"unknown model {name!r}; registered: {sorted(REGISTRY)}") from None
