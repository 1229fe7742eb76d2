"""Residual oracles for the evolution identities satisfied by the pressure along the flow.

Every check works on a *triple*: three consecutive solver states with equal time
spacing. Time derivatives are centered differences across the triple; all
spatial quantities are evaluated at the middle state. Each identity is written
as ``lhs = rhs`` with both sides assembled independently from the grid
primitives, and the residual ``lhs - rhs`` is what gets reported.

Operator shorthand in docstrings: ``L = d/dt - (p-1) v Lap``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from . import flow as fl
from . import manifold as mf
from . import pme
from .flow import FlowKind
from .structure import closed_forms, divergence_gap_form, quantity_D

# residuals below FLOOR_REL * (size of the terms) are round-off, not truncation error
FLOOR_REL = 1e-10
ROUTE_TOL = 1e-9
BOCHNER_GATE = 1.5
ORDER_PLAIN = 1.8
ORDER_COMPOSED = 1.5


class IdentityError(ValueError):
    pass


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("i...,i...->...", a, b)


def _christoffel(geom: mf.Geometry) -> np.ndarray:
    # The sphere is homogeneous: in normal coordinates at the node the symbols vanish
    # and a constant rescaling of the metric does not change them.
    if not mf.is_grid(geom):
        return np.zeros((geom.dim,) * 3 + geom.shape)
    return mf.christoffel(geom)


@dataclass(frozen=True, eq=False)
class Triple:
    """Three consecutive PME states ``prev, mid, next`` and the flow kind driving them."""

    prev: pme.PMEState
    mid: pme.PMEState
    next: pme.PMEState
    kind: FlowKind

    def __post_init__(self):
        dt1 = self.mid.t - self.prev.t
        dt2 = self.next.t - self.mid.t
        if not (dt1 > 0 and math.isclose(dt1, dt2, rel_tol=1e-8)):
            raise IdentityError(f"snapshot spacing mismatch: {dt1!r} vs {dt2!r}")
        if not (self.prev.p == self.mid.p == self.next.p):
            raise IdentityError("exponent p differs across the triple")

    @classmethod
    def from_ring(cls, state: pme.PMEState, kind: FlowKind) -> Triple:
        if len(state.ring) != 3:
            raise IdentityError("state ring does not hold three snapshots")
        a, b, c = (pme.PMEState(s.u, state.p, s.flow) for s in state.ring)
        return cls(a, b, c, kind)

    @property
    def states(self):
        return self.prev, self.mid, self.next

    @property
    def dt(self) -> float:
        return 0.5 * (self.next.t - self.prev.t)

    @property
    def t(self) -> float:
        return self.mid.t

    @property
    def p(self) -> float:
        return self.mid.p

    @property
    def geom(self) -> mf.Geometry:
        return self.mid.geom

    @property
    def spacing(self) -> float:
        geom = self.geom
        return min(geom.grid.spacing) if mf.is_grid(geom) else 0.0

    def ddt(self, quantity: Callable[[pme.PMEState], np.ndarray]) -> np.ndarray:
        """Centered time difference of ``quantity`` evaluated on each snapshot."""
        return (quantity(self.next) - quantity(self.prev)) / (2 * self.dt)

    # -- cached quantities at the middle time --------------------------------
    @cached_property
    def v(self):
        return self.mid.v

    @cached_property
    def v_t(self):
        return self.ddt(lambda s: s.v)

    @cached_property
    def dv(self):
        return mf.partials(self.geom, self.v)

    @cached_property
    def grad_v(self):
        return mf.raise_index(self.geom, self.dv)

    @cached_property
    def grad_sq(self):
        return mf.covector_norm_sq(self.geom, self.dv)

    @cached_property
    def lap_v(self):
        return mf.laplace_beltrami(self.geom, self.v)

    @cached_property
    def hess_v(self):
        return mf.hessian(self.geom, self.v)

    @cached_property
    def hess_sq(self):
        return mf.tensor_norm_sq(self.geom, self.hess_v)

    @cached_property
    def S_ij(self):
        return fl.s_tensor(self.mid.flow, self.kind)

    @cached_property
    def S(self):
        return fl.s_trace(self.mid.flow, self.kind)

    @cached_property
    def S_t(self):
        return fl.s_time_derivative(self.prev.flow, self.next.flow, self.kind)

    @cached_property
    def dS(self):
        return mf.partials(self.geom, self.S)

    @cached_property
    def lap_S(self):
        return mf.laplace_beltrami(self.geom, self.S)

    @cached_property
    def S_sq(self):
        return mf.tensor_norm_sq(self.geom, self.S_ij)

    @cached_property
    def ric(self):
        return mf.ricci(self.geom)

    @cached_property
    def gap(self):
        """The covector ``2 div S - dS``."""
        return divergence_gap_form(self.mid.flow, self.kind)

    @cached_property
    def D(self):
        return quantity_D(self.prev.flow, self.mid.flow, self.next.flow, self.kind)

    def S_on(self, a, b=None):
        """``S^ij a_i b_j`` for covectors ``a, b``."""
        return mf.contract(mf.raise_both(self.geom, self.S_ij), a, b)

    def ric_on(self, a, b=None):
        return mf.contract(mf.raise_both(self.geom, self.ric), a, b)

    def S_hess(self):
        """``S^ij nabla_i nabla_j v``."""
        return mf.tensor_inner(self.geom, self.S_ij, self.hess_v)

    def grad_dot_v(self, f):
        """``<grad f, grad v>``."""
        return mf.contract(self.geom.inverse_metric(), mf.partials(self.geom, f), self.dv)


def op_L(triple: Triple, quantity) -> np.ndarray:
    """``L(h) = dh/dt - (p-1) v Lap h`` at the middle snapshot.

    ``quantity`` is either a callable evaluated on each state or a sequence of
    three arrays (``h`` at the three snapshot times).
    """
    if callable(quantity):
        values = [quantity(s) for s in triple.states]
    else:
        values = [np.asarray(q, dtype=float) for q in quantity]
        if len(values) != 3:
            raise IdentityError("op_L needs the quantity at three snapshot times")
    dh = (values[2] - values[0]) / (2 * triple.dt)
    return dh - (triple.p - 1) * triple.v * mf.laplace_beltrami(triple.geom, values[1])


# -- reports ---------------------------------------------------------------------

@dataclass
class ResidualReport:
    name: str
    linf: float
    l2: float
    h: float
    dt: float
    scale: float
    order: float | None = None
    status: str = "measured"
    threshold: float | None = None
    monotone: bool | None = None
    levels: list = field(default_factory=list, repr=False)

    @property
    def at_floor(self) -> bool:
        return self.linf <= FLOOR_REL * self.scale

    @property
    def passed(self) -> bool:
        return self.status in ("pass", "exact", "floor")

    def as_row(self) -> dict:
        row = asdict(self)
        row.pop("levels")
        return row


def _norms(geom: mf.Geometry, r: np.ndarray) -> tuple[float, float]:
    r = np.asarray(r, dtype=float)
    if r.ndim > len(geom.shape):  # vector residual: pointwise Euclidean size of the components
        r = np.sqrt(np.sum(r.reshape((-1,) + geom.shape) ** 2, axis=0))
    linf = float(np.max(np.abs(r)))
    vol = mf.integrate(geom, np.ones(geom.shape))
    l2 = math.sqrt(max(mf.integrate(geom, r**2), 0.0) / vol)
    return linf, l2


def _scale(terms: Sequence[np.ndarray]) -> float:
    return float(sum(np.max(np.abs(np.asarray(t))) for t in terms))


def _report(name: str, triple: Triple, lhs_terms, rhs_terms) -> ResidualReport:
    lhs = sum(lhs_terms)
    rhs = sum(rhs_terms)
    linf, l2 = _norms(triple.geom, lhs - rhs)
    return ResidualReport(name, linf, l2, triple.spacing, triple.dt, _scale(list(lhs_terms) + list(rhs_terms)))


# -- identities ------------------------------------------------------------------

def residual_metric_evolution(triple: Triple) -> ResidualReport:
    """``dg/dt + 2 S_ij = 0``."""
    dg = triple.ddt(lambda s: s.geom.metric())
    return _report("metric", triple, [dg], [-2 * triple.S_ij])


def residual_pressure(triple: Triple) -> ResidualReport:
    """``v_t = (p-1) v Lap v + |grad v|^2 + (p-1) S v``."""
    p = triple.p
    return _report(
        "pressure",
        triple,
        [triple.v_t],
        [(p - 1) * triple.v * triple.lap_v, triple.grad_sq, (p - 1) * triple.S * triple.v],
    )


def residual_laplacian_evolution(triple: Triple) -> ResidualReport:
    """``d/dt (Lap v) = 2 S^ij v_ij + Lap(v_t) - g^ij (d/dt Gamma^k_ij) v_k``."""
    geom = triple.geom
    lhs = triple.ddt(lambda s: mf.laplace_beltrami(s.geom, s.v))
    gamma_t = triple.ddt(lambda s: _christoffel(s.geom))
    contracted = np.einsum("ij...,kij...->k...", geom.inverse_metric(), gamma_t)
    rhs = [
        2 * triple.S_hess(),
        mf.laplace_beltrami(geom, triple.v_t),
        -_dot(contracted, triple.dv),
    ]
    return _report("laplacian", triple, [lhs], rhs)


def residual_gradient_evolution(triple: Triple) -> ResidualReport:
    """``d/dt |grad v|^2 = 2 S^ij v_i v_j + 2 <grad v_t, grad v>``."""
    lhs = triple.ddt(lambda s: mf.covector_norm_sq(s.geom, mf.partials(s.geom, s.v)))
    rhs = [2 * triple.S_on(triple.dv), 2 * triple.grad_dot_v(triple.v_t)]
    return _report("gradient", triple, [lhs], rhs)


def residual_connection_evolution(triple: Triple) -> ResidualReport:
    """``g^ij d/dt Gamma^k_ij = -g^kl (2 div S - dS)_l`` (vector residual)."""
    geom = triple.geom
    gamma_t = triple.ddt(lambda s: _christoffel(s.geom))
    lhs = np.einsum("ij...,kij...->k...", geom.inverse_metric(), gamma_t)
    rhs = -mf.raise_index(geom, triple.gap)
    return _report("connection", triple, [lhs], [rhs])


# right-hand sides of the L-identities; each returns a list of terms

def rhs_L_laplacian(tr: Triple) -> list[np.ndarray]:
    q = tr.p - 1
    return [
        2 * tr.p * tr.grad_dot_v(tr.lap_v),
        2 * tr.S_hess(),
        q * tr.lap_v**2,
        2 * tr.hess_sq,
        2 * tr.ric_on(tr.dv),
        q * tr.v * tr.lap_S,
        2 * q * tr.grad_dot_v(tr.S),
        q * tr.S * tr.lap_v,
        _dot(mf.raise_index(tr.geom, tr.gap), tr.dv),
    ]


def rhs_L_gradient(tr: Triple) -> list[np.ndarray]:
    q = tr.p - 1
    return [
        2 * tr.S_on(tr.dv),
        2 * q * tr.grad_sq * tr.lap_v,
        2 * tr.grad_dot_v(tr.grad_sq),
        2 * q * tr.v * tr.grad_dot_v(tr.S),
        2 * q * tr.S * tr.grad_sq,
        -2 * q * tr.v * tr.hess_sq,
        -2 * q * tr.v * tr.ric_on(tr.dv),
    ]


def rhs_L_gradient_ratio(tr: Triple) -> list[np.ndarray]:
    q = tr.p - 1
    ratio = tr.grad_sq / tr.v
    return [
        2 * tr.p * tr.grad_dot_v(ratio),
        2 / tr.v * tr.S_on(tr.dv),
        2 * q * ratio * tr.lap_v,
        ratio**2,
        2 * q * tr.grad_dot_v(tr.S),
        q * ratio * tr.S,
        -2 * q * tr.hess_sq,
        -2 * q * tr.ric_on(tr.dv),
    ]


def rhs_L_curvature_ratio(tr: Triple) -> list[np.ndarray]:
    q = tr.p - 1
    return [
        2 * tr.p * tr.grad_dot_v(tr.S / tr.v),
        tr.grad_sq / tr.v**2 * tr.S,
        -2 / tr.v * tr.grad_dot_v(tr.S),
        tr.S_t / tr.v,
        -q * tr.S**2 / tr.v,
        -q * tr.lap_S,
    ]


def _lap(s: pme.PMEState) -> np.ndarray:
    return mf.laplace_beltrami(s.geom, s.v)


def _grad_sq(s: pme.PMEState) -> np.ndarray:
    return mf.covector_norm_sq(s.geom, mf.partials(s.geom, s.v))


def _curv_ratio(kind: FlowKind):
    return lambda s: fl.s_trace(s.flow, kind) / s.v


L_IDENTITIES = {
    "L_laplacian": (lambda tr: _lap, rhs_L_laplacian),
    "L_gradient": (lambda tr: _grad_sq, rhs_L_gradient),
    "L_gradient_ratio": (lambda tr: lambda s: _grad_sq(s) / s.v, rhs_L_gradient_ratio),
    "L_curvature_ratio": (lambda tr: _curv_ratio(tr.kind), rhs_L_curvature_ratio),
}


def residual_L_identities(triple: Triple) -> dict[str, ResidualReport]:
    """Residuals of ``L(Lap v)``, ``L(|grad v|^2)``, ``L(|grad v|^2/v)`` and ``L(S/v)``."""
    out = {}
    for name, (quantity, rhs) in L_IDENTITIES.items():
        out[name] = _report(name, triple, [op_L(triple, quantity(triple))], rhs(triple))
    return out


# -- the Harnack quantity ---------------------------------------------------------

def harnack_quantity_pde_form(state: pme.PMEState, kind: FlowKind, b: float, d: float) -> np.ndarray:
    """``F`` with ``v_t`` eliminated through the pressure equation.

    ``F = -b(p-1) Lap v + (1-b)|grad v|^2/v - b(p-1) S + (1-b) S/v - d/t``.
    """
    if state.t <= 0:
        raise IdentityError("F contains d/t and needs t > 0")
    q = state.p - 1
    v = state.v
    S = fl.s_trace(state.flow, kind)
    return (
        -b * q * _lap(state)
        + (1 - b) * _grad_sq(state) / v
        - b * q * S
        + (1 - b) * S / v
        - d / state.t
    )


def rhs_F(tr: Triple, b: float, d: float) -> list[np.ndarray]:
    """Right-hand side of the evolution of ``F`` (in its corrected form)."""
    q = tr.p - 1
    t = tr.t
    v, S, A = tr.v, tr.S, tr.grad_sq
    F = harnack_quantity_pde_form(tr.mid, tr.kind, b, d)
    completed = tr.hess_v + 0.5 * b * tr.S_ij
    source = tr.S_t - 2 * tr.grad_dot_v(S) + 2 * tr.S_on(tr.dv)
    return [
        2 * tr.p * tr.grad_dot_v(F),
        -((b - 1) / v + q) * source,
        -2 * q * mf.contract(mf.raise_both(tr.geom, tr.ric - tr.S_ij), tr.dv),
        -2 * q * mf.tensor_norm_sq(tr.geom, completed),
        0.5 * (b - 2) ** 2 * q * tr.S_sq,
        q * (1 - b) * tr.D,
        -(F**2) / b,
        -(q * S - 2 * (1 - b) / b * S / v + 2 * d / (b * t)) * F,
        -((1 - b) ** 2) / b * S**2 / v**2,
        (1 - b) * A / v**2 * S,
        (1 - b) / b * A**2 / v**2,
        np.full_like(v, -(d**2) / (b * t**2)),
        -d * q * S / t,
        2 * (1 - b) / b * d / t * S / v,
        np.full_like(v, d / t**2),
        -b * q * _dot(mf.raise_index(tr.geom, tr.gap), tr.dv),
    ]


def residual_F_evolution(triple: Triple, b: float = 2.0, d: float = 2.0) -> ResidualReport:
    """Residual of ``L(F) = ...`` with every term assembled from the grid primitives."""
    if triple.prev.t <= 0:
        raise IdentityError("F contains d/t and needs t > 0 on the whole triple")
    lhs = op_L(triple, lambda s: harnack_quantity_pde_form(s, triple.kind, b, d))
    return _report("F", triple, [lhs], rhs_F(triple, b, d))


def route_consistency(triple: Triple, b: float = 2.0, d: float = 2.0) -> tuple[float, float]:
    """Recombine the ``F`` right-hand side from the four L-identities.

    ``L(F) = (1-b) L(|grad v|^2/v) - b(p-1) L(Lap v) - b(p-1) L(S) + (1-b) L(S/v) - L(d/t)``,
    so the same combination of right-hand sides (with ``L(S) = S_t - (p-1) v Lap S`` and
    ``-L(d/t) = d/t^2``) must reproduce :func:`rhs_F` up to round-off.
    Returns ``(max difference, term scale)``.
    """
    q = triple.p - 1
    combo = (
        (1 - b) * sum(rhs_L_gradient_ratio(triple))
        - b * q * sum(rhs_L_laplacian(triple))
        - b * q * (triple.S_t - q * triple.v * triple.lap_S)
        + (1 - b) * sum(rhs_L_curvature_ratio(triple))
        + d / triple.t**2
    )
    direct = rhs_F(triple, b, d)
    return float(np.max(np.abs(combo - sum(direct)))), _scale(direct)


IDENTITY_FUNCS: dict[str, Callable[[Triple], ResidualReport]] = {
    "metric": residual_metric_evolution,
    "pressure": residual_pressure,
    "laplacian": residual_laplacian_evolution,
    "gradient": residual_gradient_evolution,
    "connection": residual_connection_evolution,
    **{name: (lambda tr, n=name: residual_L_identities(tr)[n]) for name in L_IDENTITIES},
    "F": residual_F_evolution,
}

# identities whose stencils compose three or more difference operators
THRESHOLDS = {
    "metric": ORDER_PLAIN,
    "pressure": ORDER_PLAIN,
    "laplacian": ORDER_PLAIN,
    "gradient": ORDER_PLAIN,
    "connection": ORDER_PLAIN,
    "L_laplacian": ORDER_COMPOSED,
    "L_gradient": ORDER_COMPOSED,
    "L_gradient_ratio": ORDER_COMPOSED,
    "L_curvature_ratio": ORDER_COMPOSED,
    "F": ORDER_COMPOSED,
}


def evaluate(triple: Triple, names: Sequence[str] | None = None, b: float = 2.0, d: float = 2.0):
    names = list(IDENTITY_FUNCS) if names is None else list(names)
    out = {}
    l_reports = None
    for name in names:
        if name in L_IDENTITIES:
            l_reports = l_reports or residual_L_identities(triple)
            out[name] = l_reports[name]
        elif name == "F":
            out[name] = residual_F_evolution(triple, b, d)
        elif name in IDENTITY_FUNCS:
            out[name] = IDENTITY_FUNCS[name](triple)
        else:
            raise IdentityError(f"unknown identity {name!r}; choose from {sorted(IDENTITY_FUNCS)}")
    return out


# -- scenarios and refinement ------------------------------------------------------

SCENARIOS = ("static-flat", "ricci-2d", "list-circle", "scaled-torus")
DEFAULT_LADDER = (32, 64, 128)
DT_FACTOR = 0.05
START_TIME = 0.5


def scenario_state(name: str, n: int, p: float = 2.0, seed: int = 0, t0: float = START_TIME):
    """Smooth band-limited initial state and flow kind for a named scenario."""
    if name in ("static-flat", "ricci-2d", "scaled-torus"):
        grid = mf.GridSpec.uniform(2, n)
        w = 0.1 * pme.band_limited(grid, seed + 1) if name == "ricci-2d" else np.zeros(grid.shape)
        geom = mf.ConformalTorus2D(grid, w)
        kind = {"static-flat": fl.Static(), "ricci-2d": fl.Ricci(), "scaled-torus": fl.ScaledIdentity(0.5)}[name]
        flow_state = fl.FlowState(t0, geom)
    elif name == "list-circle":
        grid = mf.GridSpec.uniform(1, n)
        geom = mf.Circle1D(grid, 1 + 0.1 * pme.band_limited(grid, seed + 1))
        kind = fl.ListExtended()
        flow_state = fl.FlowState(t0, geom, 0.5 * pme.band_limited(grid, seed + 2))
    else:
        raise IdentityError(f"unknown scenario {name!r}; choose from {SCENARIOS}")
    u = pme.random_smooth(geom, seed=seed)
    return pme.PMEState(u, p, flow_state), kind


def build_triple(name: str, n: int, p: float = 2.0, seed: int = 0, dt_factor: float = DT_FACTOR,
                 t0: float = START_TIME) -> Triple:
    """Start a scenario at ``t0`` and take two solver steps with ``dt = dt_factor * h**2``."""
    state, kind = scenario_state(name, n, p, seed, t0)
    dt = dt_factor * min(state.geom.grid.spacing) ** 2
    s1 = pme.pme_step(state, kind, dt)
    s2 = pme.pme_step(s1, kind, dt)
    return Triple(state, s1, s2, kind)


def fit_order(h: Sequence[float], err: Sequence[float]) -> float:
    """Least-squares slope of ``log err`` against ``log h``."""
    slope, _ = np.polyfit(np.log(np.asarray(h)), np.log(np.asarray(err)), 1)
    return float(slope)


def summarize(name: str, reports: Sequence[ResidualReport], threshold: float | None = None) -> ResidualReport:
    """Combine one identity's reports over a refinement ladder (coarse to fine)."""
    threshold = THRESHOLDS.get(name, ORDER_PLAIN) if threshold is None else threshold
    finest = reports[-1]
    out = ResidualReport(name, finest.linf, finest.l2, finest.h, finest.dt, finest.scale,
                         threshold=threshold, levels=list(reports))
    errs = [r.linf for r in reports]
    out.monotone = all(b <= a * (1 + 1e-6) or r.at_floor for a, b, r in zip(errs, errs[1:], reports[1:]))
    measured = [r for r in reports if not r.at_floor]
    if len(measured) < 2:
        # at most one level above round-off: the residual reaches the floor immediately
        out.status = "exact" if not measured else "floor"
        return out
    out.order = fit_order([r.h for r in measured], [r.linf for r in measured])
    out.status = "pass" if out.order >= threshold and out.monotone else "fail"
    return out


def bochner_study(ladder: Sequence[int] = DEFAULT_LADDER, seed: int = 0) -> ResidualReport:
    """Order of the Bochner residual on a curved conformal torus with band-limited data."""
    reports = []
    for n in ladder:
        grid = mf.GridSpec.uniform(2, n)
        geom = mf.ConformalTorus2D(grid, 0.2 * pme.band_limited(grid, seed + 11))
        f = pme.band_limited(grid, seed + 12)
        r = mf.bochner_residual(geom, f)
        linf, l2 = _norms(geom, r)
        df = mf.partials(geom, f)
        scale = float(np.max(np.abs(mf.tensor_norm_sq(geom, mf.hessian(geom, f))))
                      + np.max(mf.covector_norm_sq(geom, df)))
        reports.append(ResidualReport("bochner", linf, l2, min(grid.spacing), 0.0, scale))
    return summarize("bochner", reports, ORDER_PLAIN)


def convergence_study(
    identities: Sequence[str] | str | None = None,
    ladder: Sequence[int] = DEFAULT_LADDER,
    scenario: str = "static-flat",
    p: float = 2.0,
    b: float = 2.0,
    d: float = 2.0,
    seed: int = 0,
    dt_factor: float = DT_FACTOR,
    gate: ResidualReport | None = None,
) -> dict[str, ResidualReport]:
    """Fit convergence orders of the selected identities over a ladder of resolutions.

    The timestep follows ``dt = dt_factor * h**2``. Unless the Bochner gate reaches
    order 1.5 no identity is reported as passing.
    """
    if len(ladder) < 3:
        raise IdentityError("a refinement ladder needs at least 3 levels")
    names = [identities] if isinstance(identities, str) else identities
    per_level = []
    for n in ladder:
        triple = build_triple(scenario, n, p, seed, dt_factor)
        per_level.append(evaluate(triple, names, b, d))
    names = list(per_level[0])
    out = {name: summarize(name, [lvl[name] for lvl in per_level]) for name in names}
    gate = bochner_study(ladder, seed) if gate is None else gate
    if gate.order is not None and gate.order < BOCHNER_GATE:
        for rep in out.values():
            if rep.passed:
                rep.status = "gated"
    return out


CSV_COLUMNS = ("scenario", "identity", "h", "dt", "linf", "l2", "order", "status")


def reports_to_csv(results: dict[str, dict[str, ResidualReport]]) -> str:
    """One row per (scenario, identity, level); the fitted order repeats on each row."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for scenario, reports in results.items():
        for name, rep in reports.items():
            order = "" if rep.order is None else f"{rep.order:.6g}"
            for lvl in rep.levels or [rep]:
                writer.writerow([scenario, name, repr(lvl.h), repr(lvl.dt), repr(lvl.linf), repr(lvl.l2), order, rep.status])
    return buf.getvalue()


def closed_form_study(
    scenario: str = "ricci-2d",
    ladder: Sequence[int] = DEFAULT_LADDER,
    p: float = 2.0,
    seed: int = 0,
    dt_factor: float = DT_FACTOR,
) -> dict[str, ResidualReport]:
    """Convergence of the discrete structure quantities to their closed forms.

    ``X`` is a fixed band-limited vector field, so every level samples the same field.
    """
    per_level = []
    for n in ladder:
        tr = build_triple(scenario, n, p, seed, dt_factor)
        grid = tr.geom.grid
        X = np.stack([pme.band_limited(grid, seed + 20 + a) for a in range(tr.geom.dim)])
        level = {}
        for name, (discrete, target) in closed_forms(tr.prev, tr.mid, tr.next, tr.kind, X).items():
            linf, l2 = _norms(tr.geom, discrete - target)
            scale = float(np.max(np.abs(discrete)) + np.max(np.abs(target)))
            if name == "I":  # quadratic in X: measure against the size of the pieces
                scale = max(scale, float(np.max(np.abs(mf.contract(tr.ric, X)))))
            level[name] = ResidualReport(name, linf, l2, tr.spacing, tr.dt, scale)
        per_level.append(level)
    thresholds = {"E": ORDER_COMPOSED} if scenario == "list-circle" else {}
    return {
        name: summarize(name, [lvl[name] for lvl in per_level], thresholds.get(name, ORDER_PLAIN))
        for name in per_level[0]
    }
