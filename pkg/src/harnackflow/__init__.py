"""Geometric flows coupled to the porous medium equation, with Harnack estimate checks."""

from .flow import (
    AlphaTable,
    FlowState,
    HarmonicScalar,
    ListExtended,
    Ricci,
    ScaledIdentity,
    Static,
    step,
)
from .harnack import HarnackConfig, action_gamma, check_differential_harnack, check_integrated_harnack
from .manifold import Circle1D, ConformalTorus2D, GridSpec, RoundSphere
from .pme import PMEState, pme_step, simulate, to_pressure

__all__ = [
    "AlphaTable",
    "Circle1D",
    "ConformalTorus2D",
    "FlowState",
    "GridSpec",
    "HarmonicScalar",
    "HarnackConfig",
    "ListExtended",
    "PMEState",
    "Ricci",
    "RoundSphere",
    "ScaledIdentity",
    "Static",
    "action_gamma",
    "check_differential_harnack",
    "check_integrated_harnack",
    "pme_step",
    "simulate",
    "step",
    "to_pressure",
]
