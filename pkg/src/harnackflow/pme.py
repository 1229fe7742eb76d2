"""Porous medium equation with potential, ``u_t = Laplacian(u^p) + S u``, on an evolving metric.

The metric and ``u`` are advanced together with the same Heun (RK2) stages, so the
density always sees the metric at the matching stage time.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import flow as fl
from . import manifold as mf
from .flow import FlowKind, FlowState

log = logging.getLogger(__name__)

DEFAULT_FLOOR = 0.1


class PositivityError(RuntimeError):
    """The density stopped being strictly positive."""

    def __init__(self, node, t: float, value: float):
        self.node, self.t, self.value = node, t, value
        super().__init__(f"u={value!r} <= 0 at node {node} at t={t!r}")


def _check_positive(u: np.ndarray, t: float) -> None:
    if not np.all(u > 0):
        bad = np.nonzero(~(u > 0))
        node = tuple(int(i[0]) for i in bad)
        raise PositivityError(node, t, float(u[node]))


def to_pressure(u, p: float) -> np.ndarray:
    """Pressure ``v = p/(p-1) u^(p-1)``."""
    if not p > 1:
        raise ValueError(f"pressure needs p > 1, got {p}")
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        node = np.unravel_index(int(np.argmin(u)), u.shape)
        raise PositivityError(tuple(int(i) for i in node), math.nan, float(np.min(u)))
    return p / (p - 1) * u ** (p - 1)


@dataclass(frozen=True, eq=False)
class Snapshot:
    t: float
    u: np.ndarray
    flow: FlowState


@dataclass(frozen=True, eq=False)
class PMEState:
    u: np.ndarray
    p: float
    flow: FlowState
    ring: tuple[Snapshot, ...] = ()

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        if u.shape != self.flow.geom.shape:
            raise ValueError(f"u has shape {u.shape}, geometry {self.flow.geom.shape}")
        if not self.p > 1:
            raise ValueError(f"PMEState needs p > 1, got {self.p}")
        _check_positive(u, self.flow.t)
        u.setflags(write=False)
        object.__setattr__(self, "u", u)
        if not self.ring:
            object.__setattr__(self, "ring", (Snapshot(self.flow.t, u, self.flow),))

    @property
    def t(self) -> float:
        return self.flow.t

    @property
    def geom(self) -> mf.Geometry:
        return self.flow.geom

    @property
    def v(self) -> np.ndarray:
        return to_pressure(self.u, self.p)


def pme_rate(u: np.ndarray, state: FlowState, kind: FlowKind, p: float) -> np.ndarray:
    if isinstance(kind, fl.Static):
        return mf.laplace_beltrami(state.geom, u**p)
    return mf.laplace_beltrami(state.geom, u**p) + fl.s_trace(state, kind) * u


def stability_limit(u: np.ndarray, state: FlowState, kind: FlowKind, p: float) -> float:
    """Explicit step bound for the coupled system (degenerate diffusion plus flow)."""
    geom = state.geom
    limit = fl.stability_limit(state, kind)
    if mf.is_grid(geom):
        h2 = min(geom.grid.spacing) ** 2
        inv_metric_max = float(np.max(geom.inverse_metric()[0, 0]))
        diffusivity = p * float(np.max(u)) ** (p - 1) * inv_metric_max
        limit = min(limit, fl.CFL_SAFETY * h2 / diffusivity)
    return limit


def _coupled_heun(u, state: FlowState, kind: FlowKind, p: float, dt: float, rate):
    k0 = fl.flow_rates(state, kind)
    ku0 = rate(u, state, kind, p)
    t1 = state.t + dt
    u1 = u + dt * ku0
    _check_positive(u1, t1)
    mid = fl.advance(
        state,
        state.geom.dof + dt * k0.metric,
        None if state.f is None else state.f + dt * k0.f,
        t1,
    )
    k1 = fl.flow_rates(mid, kind)
    ku1 = rate(u1, mid, kind, p)
    new_flow = fl.advance(
        state,
        state.geom.dof + 0.5 * dt * (k0.metric + k1.metric),
        None if state.f is None else state.f + 0.5 * dt * (k0.f + k1.f),
        t1,
    )
    u_new = u + 0.5 * dt * (ku0 + ku1)
    _check_positive(u_new, t1)
    return u_new, new_flow


def pme_step(state: PMEState, kind: FlowKind, dt: float) -> PMEState:
    """Advance density and metric together by ``dt``.

    A ``dt`` above the stability bound is split into ``2**k`` substeps (logged).
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    fl.check_compatible(state.geom, kind)
    n = fl.substeps_for(dt, stability_limit(state.u, state.flow, kind, state.p))
    u, flow_state = state.u, state.flow
    for _ in range(n):
        u, flow_state = _coupled_heun(u, flow_state, kind, state.p, dt / n, pme_rate)
    ring = (state.ring + (Snapshot(flow_state.t, u, flow_state),))[-3:]
    return PMEState(u, state.p, flow_state, ring)


def _linear_rate(u, state, kind, p):
    return mf.laplace_beltrami(state.geom, u) + fl.s_trace(state, kind) * u


def linear_step(u: np.ndarray, flow_state: FlowState, kind: FlowKind, dt: float):
    """One step of the linear equation ``u_t = Laplacian(u) + S u`` (the ``p = 1`` case).

    Returns ``(u, flow_state)``.
    """
    n = fl.substeps_for(dt, stability_limit(u, flow_state, kind, 1.0))
    for _ in range(n):
        u, flow_state = _coupled_heun(u, flow_state, kind, 1.0, dt / n, _linear_rate)
    return u, flow_state


def mass(state: PMEState) -> float:
    """``integral of u dmu`` with the current measure."""
    return mf.integrate(state.geom, state.u)


def extrema(state: PMEState) -> tuple[float, float, float, float]:
    """``(v_min, v_max, u_min, u_max)`` over the grid."""
    v = state.v
    return float(v.min()), float(v.max()), float(state.u.min()), float(state.u.max())


def _centered(ring: Sequence[Snapshot]) -> tuple[Snapshot, Snapshot, Snapshot, float]:
    if len(ring) != 3:
        raise ValueError("need a full ring of three snapshots")
    a, b, c = ring
    dt1, dt2 = b.t - a.t, c.t - b.t
    if not (dt1 > 0 and math.isclose(dt1, dt2, rel_tol=1e-9)):
        raise ValueError("snapshot times must be strictly increasing and equally spaced")
    return a, b, c, dt1


def v_form_residual(state: PMEState, kind: FlowKind) -> np.ndarray:
    """Residual of the pressure equation ``v_t = (p-1) v Lap v + |grad v|^2 + (p-1) S v``.

    Evaluated at the middle of the snapshot ring with a centered ``v_t``.
    """
    a, b, c, dt = _centered(state.ring)
    p = state.p
    geom = b.flow.geom
    v = to_pressure(b.u, p)
    v_t = (to_pressure(c.u, p) - to_pressure(a.u, p)) / (2 * dt)
    grad_sq = mf.covector_norm_sq(geom, mf.partials(geom, v))
    S = fl.s_trace(b.flow, kind)
    return v_t - (p - 1) * v * mf.laplace_beltrami(geom, v) - grad_sq - (p - 1) * S * v


# -- runs ------------------------------------------------------------------------

@dataclass
class Run:
    """Equally spaced snapshots of a coupled run."""

    kind: FlowKind
    snapshots: list[PMEState] = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    @property
    def p(self) -> float:
        return self.snapshots[0].p

    @property
    def spacing(self) -> float:
        return self.snapshots[1].t - self.snapshots[0].t

    @property
    def geom(self) -> mf.Geometry:
        return self.snapshots[0].geom

    def index_of(self, t: float) -> int:
        """Index of the snapshot nearest to ``t``."""
        return int(np.argmin(np.abs(self.times - t)))

    def __len__(self):
        return len(self.snapshots)

    def __getitem__(self, k):
        return self.snapshots[k]


def simulate(
    state: PMEState,
    kind: FlowKind,
    dt: float,
    t_end: float,
    snapshot_every: int = 1,
    callback: Callable[[PMEState], None] | None = None,
) -> Run:
    """Integrate to ``t_end`` with steps ``dt``, keeping every ``snapshot_every``-th state."""
    n_steps = int(round((t_end - state.t) / dt))
    if n_steps < 1 or not math.isclose(state.t + n_steps * dt, t_end, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError(f"(t_end - t0) = {t_end - state.t} is not a multiple of dt = {dt}")
    run = Run(kind, [state])
    if callback:
        callback(state)
    t0 = state.t
    for k in range(1, n_steps + 1):
        state = pme_step(state, kind, dt)
        # keep the clock free of accumulated round-off
        state = PMEState(state.u, state.p, FlowState(t0 + k * dt, state.geom, state.flow.f), state.ring)
        if callback:
            callback(state)
        if k % snapshot_every == 0:
            run.snapshots.append(state)
    return run


# -- initial data ----------------------------------------------------------------

def constant_data(geom: mf.Geometry, c: float = 1.0) -> np.ndarray:
    return np.full(geom.shape, float(c))


def gaussian_bump(
    geom: mf.Geometry,
    amplitude: float = 1.0,
    width: float = 0.1,
    center=None,
    floor: float = DEFAULT_FLOOR,
) -> np.ndarray:
    """``floor + amplitude * exp(-|x - c|^2 / (2 width^2))``, periodized over neighbouring cells."""
    grid = geom.grid
    coords = grid.coordinates()
    center = [L / 2 for L in grid.lengths] if center is None else list(center)
    bump = np.zeros(grid.shape)
    shifts = np.array(np.meshgrid(*[(-1, 0, 1)] * grid.dimension, indexing="ij")).reshape(grid.dimension, -1).T
    for shift in shifts:
        r2 = sum((x - c - s * L) ** 2 for x, c, s, L in zip(coords, center, shift, grid.lengths))
        bump += np.exp(-r2 / (2 * width**2))
    return floor + amplitude * bump


def band_limited(
    grid: mf.GridSpec,
    seed: int = 0,
    modes: int = 2,
    amplitude: float = 1.0,
) -> np.ndarray:
    """Seeded trigonometric polynomial with wavenumbers up to ``modes`` and ``|values| <= amplitude``.

    The coefficients do not depend on the resolution, so refining the grid samples
    the same function.
    """
    rng = np.random.default_rng(seed)
    coords = grid.coordinates()
    out = np.zeros(grid.shape)
    ks = range(-modes, modes + 1)
    total = 0.0
    for k in np.array(np.meshgrid(*[ks] * grid.dimension, indexing="ij")).reshape(grid.dimension, -1).T:
        if not any(k):
            continue
        phase = sum(2 * np.pi * kk * x / L for kk, x, L in zip(k, coords, grid.lengths))
        a, b = rng.standard_normal(2)
        out += a * np.cos(phase) + b * np.sin(phase)
        total += abs(a) + abs(b)
    return out * (amplitude / total)


def random_smooth(
    geom: mf.Geometry,
    seed: int = 0,
    modes: int = 2,
    amplitude: float = 0.5,
    floor: float = DEFAULT_FLOOR,
) -> np.ndarray:
    """Seeded band-limited positive data with values in ``[floor, floor + 2*amplitude]``."""
    return floor + amplitude + band_limited(geom.grid, seed, modes, amplitude)


# -- pressure view ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PressureView:
    """Pressure and its derivatives at one snapshot of a run."""

    t: float
    v: np.ndarray
    v_t: np.ndarray
    grad: np.ndarray  # covector d_i v
    grad_sq: np.ndarray
    laplacian: np.ndarray


def pressure_time_derivative(run: Run, k: int) -> np.ndarray:
    """``v_t`` at snapshot ``k``: centered inside the run, one-sided second order at the ends."""
    if len(run) < 3:
        raise ValueError("pressure time derivative needs at least 3 snapshots")
    times = run.times
    dts = np.diff(times)
    if not np.allclose(dts, dts[0], rtol=1e-9, atol=0):
        raise ValueError("run snapshots are not equally spaced")
    dt = dts[0]
    k = k % len(run)
    v = lambda j: run[j].v  # noqa: E731
    if k == 0:
        return (-3 * v(0) + 4 * v(1) - v(2)) / (2 * dt)
    if k == len(run) - 1:
        return (3 * v(k) - 4 * v(k - 1) + v(k - 2)) / (2 * dt)
    return (v(k + 1) - v(k - 1)) / (2 * dt)


def pressure_view(run: Run, k: int) -> PressureView:
    state = run[k]
    geom = state.geom
    v = state.v
    dv = mf.partials(geom, v)
    return PressureView(
        t=state.t,
        v=v,
        v_t=pressure_time_derivative(run, k),
        grad=dv,
        grad_sq=mf.covector_norm_sq(geom, dv),
        laplacian=mf.laplace_beltrami(geom, v),
    )
