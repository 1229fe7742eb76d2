"""The geometric flow ``d/dt g_ij = -2 S_ij`` for a family of choices of ``S_ij``."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from . import manifold as mf
from .manifold import Circle1D, ConformalTorus2D, Geometry, RoundSphere

log = logging.getLogger(__name__)

# Heun's method is stable for dt * (largest diffusion eigenvalue) <= 2; in 2D that is
# dt <= h^2 / (4 D). The safety factor below keeps a margin in both 1D and 2D.
CFL_SAFETY = 0.2
MAX_HALVINGS = 20


class ConfigurationError(ValueError):
    """Incompatible flow kind, backend or parameters."""


class MetricExtinction(RuntimeError):
    """The metric degenerated (``phi**2 <= 0`` or ``r2 <= 0``) during a step."""

    def __init__(self, t: float, detail: str = ""):
        self.t = t
        super().__init__(f"metric extinct at t={t!r}" + (f": {detail}" if detail else ""))


@dataclass(frozen=True)
class AlphaTable:
    """Positive non-increasing coupling ``alpha(t)``, linearly interpolated."""

    times: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        a = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != a.shape or t.size == 0:
            raise ConfigurationError("alpha table needs matching, non-empty times and values")
        if np.any(np.diff(t) <= 0):
            raise ConfigurationError("alpha table times must be strictly increasing")
        if np.any(a <= 0):
            raise ConfigurationError("alpha(t) must be positive")
        if np.any(np.diff(a) > 0):
            raise ConfigurationError("alpha(t) must be non-increasing")
        object.__setattr__(self, "times", tuple(t))
        object.__setattr__(self, "values", tuple(a))

    @classmethod
    def constant(cls, value: float) -> AlphaTable:
        return cls((0.0,), (value,))

    def __call__(self, t: float) -> float:
        return float(np.interp(t, self.times, self.values))

    def derivative(self, t: float) -> float:
        """Slope of the interpolant (zero outside the table)."""
        times = self.times
        if len(times) == 1 or t < times[0] or t >= times[-1]:
            return 0.0
        k = int(np.searchsorted(times, t, side="right")) - 1
        return (self.values[k + 1] - self.values[k]) / (times[k + 1] - times[k])


@dataclass(frozen=True)
class Static:
    name = "static"


@dataclass(frozen=True)
class Ricci:
    name = "ricci"


@dataclass(frozen=True)
class ScaledIdentity:
    """``S_ij = lam(t) g_ij``; ``lam`` is a constant or a callable of time."""

    lam: Union[float, Callable[[float], float]] = 1.0
    name = "scaled"

    def lam_at(self, t: float) -> float:
        return float(self.lam(t)) if callable(self.lam) else float(self.lam)


@dataclass(frozen=True)
class HarmonicScalar:
    """Ricci flow coupled to a scalar heat flow: ``S_ij = R_ij - alpha(t) df df``."""

    alpha: AlphaTable = field(default_factory=lambda: AlphaTable.constant(1.0))
    name = "harmonic"


@dataclass(frozen=True)
class ListExtended(HarmonicScalar):
    """List's extended Ricci flow, the harmonic coupling with ``alpha = 2``."""

    alpha: AlphaTable = field(default_factory=lambda: AlphaTable.constant(2.0))
    name = "list"

    def __post_init__(self):
        if self.alpha.values != (2.0,):
            raise ConfigurationError("ListExtended fixes alpha = 2")


FlowKind = Union[Static, Ricci, ScaledIdentity, HarmonicScalar]


def needs_scalar_map(kind: FlowKind) -> bool:
    return isinstance(kind, HarmonicScalar)


@dataclass(frozen=True, eq=False)
class FlowState:
    t: float
    geom: Geometry
    f: np.ndarray | None = None

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("time must be >= 0")
        if self.f is not None:
            f = np.array(self.f, dtype=float)
            if f.shape != self.geom.shape:
                raise ValueError(f"scalar map has shape {f.shape}, geometry {self.geom.shape}")
            f.setflags(write=False)
            object.__setattr__(self, "f", f)


def check_compatible(geom: Geometry, kind: FlowKind) -> None:
    backend = type(geom).__name__
    kname = type(kind).__name__
    if isinstance(kind, HarmonicScalar) and not isinstance(geom, Circle1D):
        raise ConfigurationError(f"{kname} flow is only supported on Circle1D, not {backend}")
    if isinstance(kind, Ricci) and isinstance(geom, Circle1D):
        raise ConfigurationError(f"{kname} flow needs ConformalTorus2D or RoundSphere, not {backend}")


def _check_state(state: FlowState, kind: FlowKind) -> None:
    check_compatible(state.geom, kind)
    if needs_scalar_map(kind) and state.f is None:
        raise ConfigurationError(f"{type(kind).__name__} needs a scalar map f")
    if not needs_scalar_map(kind) and state.f is not None:
        raise ConfigurationError(f"{type(kind).__name__} takes no scalar map f")


def s_tensor(state: FlowState, kind: FlowKind) -> mf.SymTensorField:
    _check_state(state, kind)
    geom = state.geom
    if isinstance(kind, Static):
        return np.zeros((geom.dim, geom.dim) + geom.shape)
    if isinstance(kind, Ricci):
        return mf.ricci(geom)
    if isinstance(kind, ScaledIdentity):
        return kind.lam_at(state.t) * geom.metric()
    df = mf.partials(geom, state.f)
    return mf.ricci(geom) - kind.alpha(state.t) * np.einsum("i...,j...->ij...", df, df)


def s_trace(state: FlowState, kind: FlowKind) -> mf.ScalarField:
    return mf.trace(state.geom, s_tensor(state, kind))


def _conformal_ratio(geom: Geometry, S: np.ndarray) -> np.ndarray:
    """``sigma`` with ``S = sigma g``; raises if ``S`` is not pointwise conformal."""
    g = geom.metric()
    sigma = S[0, 0] / g[0, 0]
    resid = S - sigma * g
    scale = max(1.0, float(np.max(np.abs(S))))
    if np.max(np.abs(resid)) > 1e-10 * scale:
        raise ConfigurationError(f"S_ij is not conformal to g on {type(geom).__name__}")
    return sigma


@dataclass(frozen=True)
class FlowRates:
    metric: np.ndarray
    f: np.ndarray | None


def flow_rates(state: FlowState, kind: FlowKind) -> FlowRates:
    """Time derivatives of the metric degree of freedom and of the scalar map."""
    geom = state.geom
    if isinstance(kind, Static):
        _check_state(state, kind)
        dmetric = np.zeros(geom.dof.shape)
        df = mf.laplace_beltrami(geom, state.f) if state.f is not None else None
        return FlowRates(dmetric, df)
    S = s_tensor(state, kind)
    if isinstance(geom, ConformalTorus2D):
        dmetric = -_conformal_ratio(geom, S)
    elif isinstance(geom, Circle1D):
        dmetric = -2 * S[0, 0]
    else:
        dmetric = -2 * _conformal_ratio(geom, S) * geom.r2
    df = mf.laplace_beltrami(geom, state.f) if state.f is not None else None
    return FlowRates(np.asarray(dmetric, dtype=float), df)


def advance(state: FlowState, metric_dof, f, t: float) -> FlowState:
    try:
        geom = state.geom.with_dof(metric_dof)
    except mf.MetricDegeneracy as exc:
        raise MetricExtinction(t, str(exc)) from None
    return FlowState(t, geom, f)


def stability_limit(state: FlowState, kind: FlowKind) -> float:
    """Largest stable explicit step for the diffusive part of the flow."""
    geom = state.geom
    if not mf.is_grid(geom):
        return math.inf
    h2 = min(geom.grid.spacing) ** 2
    if isinstance(kind, Ricci) and isinstance(geom, ConformalTorus2D):
        return CFL_SAFETY * h2 * float(np.min(np.exp(2 * geom.w)))
    if needs_scalar_map(kind):
        return CFL_SAFETY * h2 * float(np.min(geom.phi**2))
    return math.inf


def substeps_for(dt: float, limit: float) -> int:
    """Number of equal substeps (a power of two) keeping each substep within ``limit``."""
    n = 1
    while dt / n > limit:
        n *= 2
        if n > 2**MAX_HALVINGS:
            raise ConfigurationError(f"dt={dt} needs more than {MAX_HALVINGS} halvings")
    if n > 1:
        log.info("dt=%g exceeds stability limit %g; using %d substeps", dt, limit, n)
    return n


def _heun(state: FlowState, kind: FlowKind, dt: float) -> FlowState:
    k0 = flow_rates(state, kind)
    y0 = state.geom.dof
    f0 = state.f
    mid = advance(
        state,
        y0 + dt * k0.metric,
        None if f0 is None else f0 + dt * k0.f,
        state.t + dt,
    )
    k1 = flow_rates(mid, kind)
    return advance(
        state,
        y0 + 0.5 * dt * (k0.metric + k1.metric),
        None if f0 is None else f0 + 0.5 * dt * (k0.f + k1.f),
        state.t + dt,
    )


def step(state: FlowState, kind: FlowKind, dt: float) -> FlowState:
    """Advance the flow by ``dt`` with Heun's method (RK2).

    If ``dt`` violates the stability limit it is split into ``2**k`` equal substeps.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    _check_state(state, kind)
    n = substeps_for(dt, stability_limit(state, kind))
    for _ in range(n):
        state = _heun(state, kind, dt / n)
    return state


def _same_grid(a: FlowState, b: FlowState) -> None:
    ga, gb = a.geom, b.geom
    if type(ga) is not type(gb) or ga.shape != gb.shape:
        raise ValueError("snapshots live on different grids")
    if mf.is_grid(ga) and ga.grid != gb.grid:
        raise ValueError("snapshots live on different grids")


def s_time_derivative(prev: FlowState, nxt: FlowState, kind: FlowKind) -> mf.ScalarField:
    """Centered difference of the trace ``S`` between two snapshots."""
    _same_grid(prev, nxt)
    return (s_trace(nxt, kind) - s_trace(prev, kind)) / (nxt.t - prev.t)


def minimal_bounds(state: FlowState, kind: FlowKind) -> tuple[float, float, float]:
    """Smallest ``k1, k2, k3 >= 0`` with ``Ric >= -(n-1) k1 g`` and ``-k2 g <= S <= k3 g``."""
    geom = state.geom
    n = geom.dim
    ric = mf.relative_eigenvalues(geom, mf.ricci(geom))
    k1 = max(0.0, -float(np.min(ric)) / (n - 1)) if n > 1 else 0.0
    lam = mf.relative_eigenvalues(geom, s_tensor(state, kind))
    k2 = max(0.0, -float(np.min(lam)))
    k3 = max(0.0, float(np.max(lam)))
    return k1, k2, k3
