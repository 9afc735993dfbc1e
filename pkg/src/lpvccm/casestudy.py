"""The two-state benchmark: plant, equilibrium family, three controllers, two scenarios.

Plant ``x1' = -x1 - x2 + w``, ``x2' = 1 - exp(-x2) + u`` with setpoint ``w``
for ``x2``.  The LPV design places both frozen closed-loop poles at -2.
"""

from __future__ import annotations

import copy

import numpy as np

from .geometry import Metric
from .lpv import EquilibriumFamily, GainScheduledController, rugh1991_family_w
from .model import SystemModel, rugh1991
from .realization import CCMController, GeodesicSettings
from .sim import FamilyTarget, ReferenceSignal, SimResult, simulate

# gain in the setpoint parameterization s = w; with s = exp(-w) it reads [1, -3 - s]
LPV_GAIN = [["1", "-3 - exp(-s)"]]
# differential gain of the contraction design; closed loop [[-1, -1], [1, -3]]
CCM_GAIN = [["1", "-3 - exp(-x2)"]]
# solves He{M (A_cl + 1.9 I)} = -I/5 exactly, so the rate 1.9 certifies with margin 0.2
CCM_METRIC = [[111.0, -100.0], [-100.0, 91.0]]

X0 = (1.0, 1.0)
SCENARIOS = {
    "step": {"reference": {"kind": "piecewise", "breakpoints": [0.0, 7.0, 14.0],
                           "levels": [0.0, 1.0, -2.0]},
             "t_end": 21.0, "fit_window": [0.0, 7.0]},
    "sine": {"reference": {"kind": "sinusoid", "amplitude": 0.5, "frequency": 1.0,
                           "offset": 0.0, "phase": 0.0},
             "t_end": 20.0, "fit_window": [0.0, 10.0]},
}
CONTROLLERS = ("gsc1", "gsc2", "ccm")


def plant() -> SystemModel:
    return rugh1991()


def family() -> EquilibriumFamily:
    return rugh1991_family_w(bound=3.0, rate=1.0)


def gsc1(fam: EquilibriumFamily | None = None) -> GainScheduledController:
    """Scheduled on the reference: ``u = e^{-w} - 1 + x1 - (3 + e^{-w})(x2 - w)``."""
    return GainScheduledController(fam or family(), LPV_GAIN, mode="reference", name="gsc1")


def gsc2(fam: EquilibriumFamily | None = None) -> GainScheduledController:
    """Scheduled on the state ``s = x2``, which collapses to ``u = x1 + e^{-x2} - 1``."""
    return GainScheduledController(fam or family(), LPV_GAIN, mode="state", name="gsc2")


def ccm(model: SystemModel | None = None, nodes: int = 50, substeps: int = 4) -> CCMController:
    model = model or plant()
    return CCMController(model, CCM_GAIN, Metric(CCM_METRIC, model.states),
                         geodesic=GeodesicSettings(nodes=nodes), substeps=substeps, name="ccm")


def controller(name: str):
    builders = {"gsc1": gsc1, "gsc2": gsc2, "ccm": ccm}
    try:
        return builders[name]()
    except KeyError:
        raise KeyError(f"unknown controller {name!r}; choose from {CONTROLLERS}") from None


def ccm_closed_form(x, w, w_dot=0.0) -> float:
    """Applied contraction control written out by hand."""
    return x[0] + np.exp(-x[1]) - 1.0 - 3.0 * (x[1] - w) + w_dot


def run(scenario: str, controller_name: str, dt: float = 1e-3, x0=X0,
        t_end: float | None = None) -> SimResult:
    if scenario not in SCENARIOS:
        raise KeyError(f"unknown scenario {scenario!r}; choose from {sorted(SCENARIOS)}")
    spec = SCENARIOS[scenario]
    model = plant()
    target = FamilyTarget(model, family(), ReferenceSignal.from_dict(spec["reference"]))
    return simulate(model, controller(controller_name), target, x0,
                    t_end=spec["t_end"] if t_end is None else t_end, dt=dt, scenario=scenario)


def builtin_config(output: str = "casestudy_out") -> dict:
    """Configuration reproducing every scenario/controller pair plus certificates."""
    expect = {
        "step": {"gsc1": {"diverged": False},
                 "gsc2": {"diverged": False, "lambda_fit_min": 0.4, "lambda_fit_max": 0.6},
                 "ccm": {"diverged": False, "lambda_fit_min": 1.9}},
        "sine": {"gsc1": {"diverged": False},
                 "gsc2": {"diverged": False, "steady_error_min": 0.1},
                 "ccm": {"diverged": False, "steady_error_max": 1e-3}},
    }
    scenarios = []
    for name, spec in SCENARIOS.items():
        scenarios.append({
            "name": name,
            "reference": copy.deepcopy(spec["reference"]),
            "x0": list(X0),
            "t_end": spec["t_end"],
            "dt": 1e-3,
            "fit_window": spec["fit_window"],
            "steady_after": 10.0,
            "steady_component": 1,
            "expect": expect[name],
        })
    return {
        "model": "rugh1991",
        "family": "rugh1991_w",
        "controllers": [
            {"name": "gsc1", "type": "gsc1", "K": LPV_GAIN},
            {"name": "gsc2", "type": "gsc2", "K": LPV_GAIN},
            {"name": "ccm", "type": "ccm", "K": CCM_GAIN, "metric": CCM_METRIC,
             "nodes": 50, "substeps": 4},
        ],
        "scenarios": scenarios,
        "certifications": [
            {"name": "lpv_decay_identity_metric", "condition": "stability", "controller": "gsc1",
             "metric": [["1", "0"], ["0", "1"]], "grid": {"s": [-3.0, 3.0, 13]},
             "bracket": [0.5, 1.5], "tol": 1e-3,
             "expect": {"min": 0.99, "max": 1.01}},
            {"name": "ccm_decay", "condition": "ccm", "controller": "ccm",
             "grid": {"x1": [-3.0, 3.0, 7], "x2": [-3.0, 3.0, 7], "w": [-2.0, 2.0, 3]},
             "value": 1.9, "expect": {"verdict": "certified"}},
        ],
        "output": output,
    }
