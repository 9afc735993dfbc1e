"""Closed-loop simulation, reference generation and tracking diagnostics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .exprlang import ExprArray, ExprDomainError
from .geometry import Metric, shift_path, solve_geodesic
from .lpv import EquilibriumFamily, GainScheduledController
from .model import SystemModel, Trajectory
from .realization import CCMController

DIVERGENCE_LIMIT = 1e6
ADMISSIBILITY_TOL = 1e-8
TOL_DECAY = 0.02
ENERGY_FLOOR = 1e-18


class TargetError(ValueError):
    """The requested target trajectory is not a solution of the plant."""


# ---------------------------------------------------------------------------
# Reference signals

class ReferenceSignal:
    """Scalar or vector signal with an exact analytic derivative.

    Build with :meth:`constant`, :meth:`piecewise` or :meth:`sinusoid`.
    """

    KINDS = ("constant", "piecewise", "sinusoid")

    def __init__(self, kind: str, **params):
        if kind not in self.KINDS:
            raise ValueError(f"unknown reference kind {kind!r}")
        self.kind = kind
        self.params = params
        if kind == "constant":
            self._level = np.atleast_1d(np.asarray(params["level"], dtype=float))
        elif kind == "piecewise":
            bps = np.asarray(params["breakpoints"], dtype=float)
            levels = [np.atleast_1d(np.asarray(v, dtype=float)) for v in params["levels"]]
            if len(bps) != len(levels) or len(bps) == 0:
                raise ValueError("piecewise reference needs one level per breakpoint")
            if np.any(np.diff(bps) <= 0):
                raise ValueError("breakpoints must be strictly increasing")
            self._bps = bps
            self._levels = np.array(levels)
        else:
            self._amp = np.atleast_1d(np.asarray(params.get("amplitude", 1.0), dtype=float))
            self._freq = float(params.get("frequency", 1.0))
            self._offset = np.atleast_1d(np.asarray(params.get("offset", 0.0), dtype=float))
            self._phase = float(params.get("phase", 0.0))

    @classmethod
    def constant(cls, level) -> "ReferenceSignal":
        return cls("constant", level=level)

    @classmethod
    def piecewise(cls, breakpoints, levels) -> "ReferenceSignal":
        """Level ``levels[k]`` holds on ``[breakpoints[k], breakpoints[k+1])``."""
        return cls("piecewise", breakpoints=list(breakpoints), levels=list(levels))

    @classmethod
    def sinusoid(cls, amplitude=1.0, frequency=1.0, offset=0.0, phase=0.0) -> "ReferenceSignal":
        """``offset + amplitude * sin(frequency * t + phase)``, frequency in rad/s."""
        return cls("sinusoid", amplitude=amplitude, frequency=frequency, offset=offset, phase=phase)

    def value(self, t: float) -> np.ndarray:
        if self.kind == "constant":
            return self._level.copy()
        if self.kind == "piecewise":
            k = max(int(np.searchsorted(self._bps, t, side="right")) - 1, 0)
            return self._levels[k].copy()
        return self._offset + self._amp * np.sin(self._freq * t + self._phase)

    def rate(self, t: float) -> np.ndarray:
        if self.kind == "constant":
            return np.zeros_like(self._level)
        if self.kind == "piecewise":
            return np.zeros(self._levels.shape[1])
        return self._amp * self._freq * np.cos(self._freq * t + self._phase)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **{k: np.asarray(v).tolist() for k, v in self.params.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "ReferenceSignal":
        d = dict(d)
        return cls(d.pop("kind"), **d)


# ---------------------------------------------------------------------------
# Targets

class TargetPoint(NamedTuple):
    t: float
    x: np.ndarray
    u: np.ndarray
    w: np.ndarray
    x_dot: np.ndarray
    sigma: np.ndarray | None = None
    sigma_dot: np.ndarray | None = None


def _solve_input(model: SystemModel, x, w, x_dot, u0, iters: int = 20):
    """Gauss-Newton for ``f(x, u, w) = x_dot`` in ``u``; returns ``u`` and the residual."""
    u = np.array(u0, dtype=float)
    scale = 1e-15 * max(1.0, float(np.max(np.abs(x_dot), initial=0.0)))
    for _ in range(iters):
        r = model.eval_dynamics(x, u, w) - x_dot
        if model.n_u == 0 or max(map(abs, r.tolist())) <= scale:
            return u, r
        B = model.input_jacobian(x, u, w)
        G = B.T @ B
        if G.shape == (1, 1) and G[0, 0] > 0:
            step = (B.T @ r) / G[0, 0]
        else:
            try:
                step = np.linalg.solve(G, B.T @ r)
            except np.linalg.LinAlgError:
                step, *_ = np.linalg.lstsq(B, r, rcond=None)
        u = u - step
    return u, model.eval_dynamics(x, u, w) - x_dot


class Target:
    """Admissible target ``(x*, u*, w*)(t)``.

    Subclasses provide ``_raw(t) -> (TargetPoint, residual)``; the residual
    ``f(x*, u*, w*) - x*_dot`` must stay below ``ADMISSIBILITY_TOL``.
    """

    model: SystemModel

    def _raw(self, t: float):
        raise NotImplementedError

    def __call__(self, t: float) -> TargetPoint:
        cache = self.__dict__.setdefault("_cache", {})
        if t in cache:
            return cache[t]
        p, res = self._raw(t)
        if np.max(np.abs(res), initial=0.0) > ADMISSIBILITY_TOL:
            raise TargetError(f"target violates the dynamics at t={t}: residual {res.tolist()}")
        # RK4 revisits the midpoint and the step end; keep only a few recent times
        if len(cache) >= 4:
            cache.pop(next(iter(cache)))
        cache[t] = p
        return p


class FamilyTarget(Target):
    """Target sliding along an equilibrium family, ``x* = x_e(s(t))``.

    ``x*_dot = dx_e/ds s_dot``, ``w* = w_e(s)`` and ``u*`` solves the
    dynamics at that velocity, so any feedforward in ``s_dot`` is included.
    """

    def __init__(self, model: SystemModel, family: EquilibriumFamily, sigma: ReferenceSignal):
        self.model = model
        self.family = family
        self.sigma = sigma
        fam = family
        self._n = (fam.x_e.shape[0], fam.u_e.shape[0], fam.w_e.shape[0])
        flat = [e for arr in (fam.x_e, fam.u_e, fam.w_e, fam.dx_e) for e in arr.entries.ravel()]
        self._all = ExprArray(flat, fam.params, shape=(len(flat),))

    def _raw(self, t):
        s = self.sigma.value(t)
        sd = self.sigma.rate(t)
        n_x, n_u, n_w = self._n
        v = self._all(*s.tolist())
        x, u_e, w = v[:n_x], v[n_x:n_x + n_u], v[n_x + n_u:n_x + n_u + n_w]
        x_dot = v[n_x + n_u + n_w:].reshape(n_x, -1) @ sd
        u, res = _solve_input(self.model, x, w, x_dot, u_e)
        return TargetPoint(t, x, u, w, x_dot, s, sd), res


class ExpressionTarget(Target):
    """Target given by expressions in ``t``; ``u`` is solved for when omitted."""

    def __init__(self, model: SystemModel, x: Sequence, w: Sequence = (), u: Sequence | None = None):
        self.model = model
        self.x = ExprArray(list(x), ("t",), shape=(len(x),))
        self.x_dot = self.x.diff("t")
        self.w = ExprArray(list(w), ("t",), shape=(len(w),))
        self.u = None if u is None else ExprArray(list(u), ("t",), shape=(len(u),))

    def _raw(self, t):
        x = self.x(t)
        w = self.w(t)
        x_dot = self.x_dot(t)
        if self.u is None:
            u, res = _solve_input(self.model, x, w, x_dot, np.zeros(self.model.n_u))
        else:
            u = self.u(t)
            res = self.model.eval_dynamics(x, u, w) - x_dot
        return TargetPoint(t, x, u, w, x_dot), res


# ---------------------------------------------------------------------------
# Controller adapters: (t, x, target point, measured w) -> (u, flags, energy)

class ControlOutput(NamedTuple):
    u: np.ndarray
    flags: frozenset
    energy: float | None = None


class OpenLoop:
    name = "open_loop"

    def __init__(self, n_u: int = 0):
        self.n_u = n_u

    def reset(self):
        pass

    def __call__(self, t, x, ref, w):
        return ControlOutput(np.asarray(ref.u, dtype=float) if len(ref.u) else np.zeros(self.n_u),
                             frozenset())


class GainScheduledAdapter:
    def __init__(self, controller: GainScheduledController):
        self.controller = controller
        self.name = controller.name

    def reset(self):
        pass

    def __call__(self, t, x, ref, w):
        sig = None
        if self.controller.mode == "reference":
            sig = ref.sigma if ref.sigma is not None else self.controller.family.schedule(ref.x, ref.w)
        sc = self.controller.control(x, sig, w)
        return ControlOutput(sc.u, frozenset() if sc.in_domain else frozenset({"sigma_out_of_domain"}))


class CCMAdapter:
    """Applies the path-integral control, warm-starting each geodesic from the last."""

    def __init__(self, controller: CCMController, warm_start: bool = True):
        self.controller = controller
        self.name = controller.name
        self.warm_start = warm_start
        self._last = None

    def reset(self):
        self._last = None

    def __call__(self, t, x, ref, w):
        warm = self.warm_start and not self.controller.metric.is_constant
        res = self.controller.evaluate(x, ref.x, ref.u, init=self._last if warm else None)
        if warm:
            self._last = res.path
        flags = frozenset() if res.path.converged else frozenset({"geodesic_not_converged"})
        return ControlOutput(res.u, flags, res.path.energy)


class LawAdapter:
    """Static feedback ``u = k(x, w, t)`` given as expressions."""

    def __init__(self, model: SystemModel, law: Sequence, name: str = "custom"):
        self.name = name
        variables = model.states + model.disturbances + ("t",)
        self.law = ExprArray(list(law), variables, shape=(len(law),))
        if self.law.shape[0] != model.n_u:
            raise ValueError(f"law has {self.law.shape[0]} entries for {model.n_u} inputs")

    def reset(self):
        pass

    def __call__(self, t, x, ref, w):
        return ControlOutput(self.law(*x, *w, t), frozenset())


def as_adapter(controller, model: SystemModel | None = None):
    if isinstance(controller, GainScheduledController):
        return GainScheduledAdapter(controller)
    if isinstance(controller, CCMController):
        return CCMAdapter(controller)
    if controller is None:
        return OpenLoop(0 if model is None else model.n_u)
    return controller


# ---------------------------------------------------------------------------
# Simulation

@dataclass
class SimResult:
    trajectory: Trajectory
    err_norm: np.ndarray
    energy: np.ndarray
    flags: list
    diverged: bool = False
    domain_error: str | None = None
    controller: str = ""
    scenario: str = ""
    summary: dict = field(default_factory=dict)

    @property
    def t(self):
        return self.trajectory.t

    @property
    def x(self):
        return self.trajectory.x

    @property
    def warnings(self) -> dict:
        """Per-kind count and first occurrence time of every step flag."""
        out: dict = {}
        for tk, fl in zip(self.trajectory.t, self.flags):
            for f in sorted(fl):
                entry = out.setdefault(f, {"count": 0, "first_t": float(tk)})
                entry["count"] += 1
        return out

    @property
    def truncated(self) -> bool:
        return self.diverged or self.domain_error is not None


def simulate(model: SystemModel, controller, target: Target, x0, t_end: float = 20.0,
             dt: float = 1e-3, perturbation: Callable | None = None, metric: Metric | None = None,
             scenario: str = "") -> SimResult:
    """Fixed-step RK4 closed-loop run, calling the controller at every stage.

    The plant sees ``w = w*(t) + perturbation(t)``.  A state leaving the
    ball of radius 1e6, going non-finite, or hitting an expression domain
    error truncates the run with a flag instead of raising.  ``metric``
    adds the Riemannian energy to the diagnostics when the controller
    does not supply it.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if t_end < dt:
        raise ValueError("t_end must be at least dt")
    ctrl = as_adapter(controller, model)
    ctrl.reset()
    n_steps = int(round(t_end / dt))

    def plant_w(t, ref):
        w = np.asarray(ref.w, dtype=float)
        if perturbation is not None:
            w = w + np.atleast_1d(np.asarray(perturbation(t), dtype=float))
        return w

    def stage(t, x):
        ref = target(t)
        w = plant_w(t, ref)
        out = ctrl(t, x, ref, w)
        return model.eval_dynamics(x, out.u, w), out, ref, w

    ts, xs, us, ws, zs = [], [], [], [], []
    xr, ur, wr, zr, flags, energy = [], [], [], [], [], []
    x = np.array(x0, dtype=float)
    diverged = False
    domain_error = None
    path_cache = None
    for k in range(n_steps + 1):
        t = k * dt
        try:
            with np.errstate(over="raise", invalid="raise"):
                k1, out, ref, w = stage(t, x)
                z = model.eval_output(x, out.u, w)
                ts.append(t)
                xs.append(x.copy())
                us.append(np.asarray(out.u, dtype=float))
                ws.append(w)
                zs.append(z)
                xr.append(ref.x)
                ur.append(ref.u)
                wr.append(ref.w)
                zr.append(model.eval_output(ref.x, ref.u, ref.w))
                flags.append(out.flags)
                e = out.energy
                if e is None and metric is not None:
                    path_cache = solve_geodesic(metric, ref.x, x, init=None if path_cache is None
                                                else shift_path(path_cache, ref.x, x))
                    e = path_cache.energy
                energy.append(np.nan if e is None else e)
                if k == n_steps:
                    break
                # stage times from the step index so the next step start hits the target cache
                t_mid, t_next = (k + 0.5) * dt, (k + 1) * dt
                k2 = stage(t_mid, x + 0.5 * dt * k1)[0]
                k3 = stage(t_mid, x + 0.5 * dt * k2)[0]
                k4 = stage(t_next, x + dt * k3)[0]
                x_new = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        except ExprDomainError as exc:
            # overflow is the state escaping, not a modelling fault
            if exc.overflow:
                diverged = True
            else:
                domain_error = f"t={t}: {exc}"
            break
        except FloatingPointError:
            diverged = True
            break
        if not np.all(np.isfinite(x_new)) or np.linalg.norm(x_new) > DIVERGENCE_LIMIT:
            diverged = True
            break
        x = x_new
    if diverged and flags:
        flags[-1] = flags[-1] | {"diverged"}
    if domain_error and flags:
        flags[-1] = flags[-1] | {"domain_error"}

    def arr(v, width):
        return np.array(v, dtype=float).reshape(len(ts), width)

    traj = Trajectory(np.array(ts), arr(xs, model.n_x), arr(us, model.n_u), arr(ws, model.n_w),
                      arr(zs, model.n_z), x_ref=arr(xr, model.n_x), u_ref=arr(ur, model.n_u),
                      w_ref=arr(wr, model.n_w), z_ref=arr(zr, model.n_z))
    err = np.linalg.norm(traj.x - traj.x_ref, axis=1)
    return SimResult(traj, err, np.array(energy, dtype=float), flags, diverged, domain_error,
                     controller=getattr(ctrl, "name", type(ctrl).__name__), scenario=scenario)


# ---------------------------------------------------------------------------
# Diagnostics

def trajectory_energy(metric: Metric, result: SimResult) -> tuple[np.ndarray, bool]:
    """Riemannian energy between target and state at every sample.

    Returns the energies and whether every geodesic solve converged.
    """
    traj = result.trajectory
    if metric.is_constant:
        e = traj.x - traj.x_ref
        return np.einsum("ki,ij,kj->k", e, metric._const, e), True
    out = np.empty(len(traj))
    ok = True
    prev = None
    for k in range(len(traj)):
        path = solve_geodesic(metric, traj.x_ref[k], traj.x[k],
                              init=None if prev is None else shift_path(prev, traj.x_ref[k], traj.x[k]))
        ok &= path.converged
        out[k] = path.energy
        prev = path
    return out, ok


class DecayCheck(NamedTuple):
    satisfied: bool
    margin: float
    valid: bool


def energy_decay(metric: Metric, result: SimResult, lam: float, tol: float = TOL_DECAY,
                 floor: float = ENERGY_FLOOR) -> DecayCheck:
    """Check ``e(t_k) <= e(t_0) exp(-2 lam (t_k - t_0)) (1 + tol) + floor`` at every sample.

    ``margin`` is the smallest slack ``bound - e`` (negative means
    violated).  ``floor`` is an absolute allowance for rounding once the
    energy has decayed to machine level.  A geodesic failure anywhere
    makes the check invalid and unsatisfied.
    """
    e, ok = trajectory_energy(metric, result)
    t = result.trajectory.t
    bound = e[0] * np.exp(-2.0 * lam * (t - t[0])) * (1.0 + tol) + floor
    slack = bound - e
    margin = float(np.min(slack))
    return DecayCheck(bool(ok and margin >= 0), margin, bool(ok))


def _sq_integral(t, v) -> float:
    return float(np.trapezoid(np.sum(v * v, axis=1), t)) if hasattr(np, "trapezoid") else float(
        np.trapz(np.sum(v * v, axis=1), t))


def l2_gain_estimate(nominal: SimResult, perturbed: SimResult) -> float:
    """``||z - z*|| / ||w - w*||`` over the common horizon, trapezoidal in time.

    ``nominal`` supplies ``z*``/``w*`` (run without perturbation, started
    on the target so the initial-condition offset vanishes).
    """
    a, b = nominal.trajectory, perturbed.trajectory
    if len(a) != len(b) or not np.allclose(a.t, b.t):
        raise ValueError("runs must share a time grid")
    den = _sq_integral(a.t, b.w - a.w)
    if den <= 0.0:
        raise ValueError("disturbance equals the target disturbance; gain undefined")
    return float(np.sqrt(_sq_integral(a.t, b.z - a.z) / den))


def overshoot_fit(result: SimResult, window: tuple[float, float] | None = None,
                  threshold: float = 1e-9) -> tuple[float, float]:
    """Fit ``|e(t)| <= R exp(-lam (t - t0)) |e(t0)|`` on a window.

    ``lam`` is the least-squares slope of ``log|e|``; ``R`` is then the
    smallest constant making the bound hold at every sample used.
    """
    if result.truncated:
        raise ValueError("cannot fit a truncated run")
    t = result.trajectory.t
    err = result.err_norm
    sel = np.ones_like(t, dtype=bool) if window is None else (t >= window[0]) & (t < window[1])
    if not np.any(sel) or err[sel][0] <= threshold:
        raise ValueError("fit window is empty or already at the reference")
    t0, e0 = t[sel][0], err[sel][0]
    sel &= err > threshold
    tt, ee = t[sel] - t0, err[sel]
    if len(tt) < 2:
        raise ValueError("fit window is empty or already at the reference")
    slope, _ = np.polyfit(tt, np.log(ee), 1)
    lam = -float(slope)
    R = float(np.max(ee * np.exp(lam * tt)) / e0)
    return R, lam


def steady_error(result: SimResult, after: float, component: int | None = None) -> float:
    """Largest tracking error (norm, or one state component) for ``t >= after``."""
    traj = result.trajectory
    sel = traj.t >= after
    if not np.any(sel):
        raise ValueError("no samples after the requested time")
    e = traj.x[sel] - traj.x_ref[sel]
    return float(np.max(np.abs(e[:, component]) if component is not None else np.linalg.norm(e, axis=1)))


# ---------------------------------------------------------------------------
# Output

def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(result: SimResult, path) -> None:
    traj = result.trajectory
    n_x, n_u, n_w = traj.x.shape[1], traj.u.shape[1], traj.w.shape[1]
    header = (["t"] + [f"x{i + 1}" for i in range(n_x)] + [f"u{i + 1}" for i in range(n_u)]
              + [f"w{i + 1}" for i in range(n_w)] + ["err_norm", "energy", "flags"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(len(traj)):
            w.writerow([_fmt(traj.t[k])] + [_fmt(v) for v in traj.x[k]] + [_fmt(v) for v in traj.u[k]]
                       + [_fmt(v) for v in traj.w[k]]
                       + [_fmt(result.err_norm[k]), _fmt(result.energy[k]), "|".join(sorted(result.flags[k]))])


def summary(result: SimResult, window: tuple[float, float] | None = None, **extra) -> dict:
    out = {"scenario": result.scenario, "controller": result.controller,
           "lambda_fit": None, "R": None, "diverged": result.diverged,
           "domain_error": result.domain_error, "warnings": result.warnings}
    if not result.truncated:
        try:
            out["R"], out["lambda_fit"] = overshoot_fit(result, window)
        except ValueError:
            pass
    out.update(extra)
    return out


def write_summary(data, path) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, allow_nan=False, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")
