"""Gain-scheduled and contraction-metric tracking controllers: design checks, realization, simulation."""

from .certify import CertReport, Grid, bisect, check_ccm, check_ccm_performance, check_convex_synthesis, \
    check_performance_lmi, check_stability_lmi, eig_sym
from .exprlang import ExprArray, ExprDomainError, ExprError, ExprSyntaxError, parse
from .geometry import GeodesicPath, Metric, riemann_energy, solve_geodesic
from .lpv import EquilibriumFamily, GainScheduledController, hidden_coupling, lpv_closed_loop_symbolic, \
    lpv_linearize, pole_placement_check, residual_term
from .model import SystemModel, Trajectory, get_model
from .realization import CCMController, ccm_control, exactness_check, integrate_gain
from .sim import ReferenceSignal, SimResult, energy_decay, l2_gain_estimate, overshoot_fit, simulate

__version__ = "0.1.0"
