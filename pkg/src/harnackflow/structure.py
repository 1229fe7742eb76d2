"""Structure quantities I, H, D, E, E_b of the tensor S_ij and hypothesis checks.

All quantities take a vector field ``X`` (contravariant components) and are
evaluated pointwise. Time derivatives of ``S`` come from centered differences
of neighbouring snapshots, never from per-kind formulas.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import manifold as mf
from .flow import (
    FlowKind,
    FlowState,
    HarmonicScalar,
    Ricci,
    Static,
    minimal_bounds,
    s_tensor,
    s_time_derivative,
    s_trace,
)

HYPOTHESIS_TOL = 1e-6


class DivisionByTime(ValueError):
    """A quantity containing ``1/t`` was requested at ``t = 0``."""


def _flow(s) -> FlowState:
    return getattr(s, "flow", s)


def quantity_I(state, kind: FlowKind, X: mf.VectorField) -> mf.ScalarField:
    """``(R^ij - S^ij) X_i X_j``."""
    st = _flow(state)
    return mf.contract(mf.ricci(st.geom) - s_tensor(st, kind), X)


def quantity_H(prev, state, nxt, kind: FlowKind, X: mf.VectorField, t: float | None = None):
    """``dS/dt + S/t - 2 <grad S, X> + 2 S_ij X^i X^j``."""
    prev, st, nxt = _flow(prev), _flow(state), _flow(nxt)
    t = st.t if t is None else t
    if t <= 0:
        raise DivisionByTime("H(S, X) contains S/t and needs t > 0")
    S = s_trace(st, kind)
    dS = mf.partials(st.geom, S)
    return (
        s_time_derivative(prev, nxt, kind)
        + S / t
        - 2 * np.einsum("i...,i...->...", dS, X)
        + 2 * mf.contract(s_tensor(st, kind), X)
    )


def quantity_D(prev, state, nxt, kind: FlowKind) -> mf.ScalarField:
    """``dS/dt - Laplacian(S) - 2 |S_ij|^2``."""
    prev, st, nxt = _flow(prev), _flow(state), _flow(nxt)
    return (
        s_time_derivative(prev, nxt, kind)
        - mf.laplace_beltrami(st.geom, s_trace(st, kind))
        - 2 * mf.tensor_norm_sq(st.geom, s_tensor(st, kind))
    )


def divergence_gap_form(state, kind: FlowKind) -> np.ndarray:
    """The covector ``2 nabla^i S_ij - nabla_j S``."""
    st = _flow(state)
    S_ij = s_tensor(st, kind)
    return 2 * mf.divergence(st.geom, S_ij) - mf.partials(st.geom, mf.trace(st.geom, S_ij))


def divergence_gap(state, kind: FlowKind) -> mf.VectorField:
    """``2 nabla^i S_ij - nabla_j S`` with the free index raised."""
    st = _flow(state)
    return mf.raise_index(st.geom, divergence_gap_form(st, kind))


def quantity_Eb(prev, state, nxt, kind: FlowKind, X: mf.VectorField, b: float) -> mf.ScalarField:
    """``(b-1) D(S) + 2 I(S,X) + b (2 nabla^i S_ij - nabla_j S) X^j``."""
    if b < 2:
        warnings.warn(f"E_b is used with b in [2, inf); got b={b}", stacklevel=2)
    gap = divergence_gap_form(state, kind)
    return (
        (b - 1) * quantity_D(prev, state, nxt, kind)
        + 2 * quantity_I(state, kind, X)
        + b * np.einsum("j...,j...->...", gap, X)
    )


def quantity_E(prev, state, nxt, kind: FlowKind, X: mf.VectorField) -> mf.ScalarField:
    return quantity_Eb(prev, state, nxt, kind, X, 2.0)


# -- hypothesis sampling ---------------------------------------------------------

DEFAULT_MAGNITUDES = (0.25, 1.0, 4.0)


def sample_fields(
    geom: mf.Geometry,
    seed: int = 0,
    v: mf.ScalarField | None = None,
    magnitudes: Sequence[float] = DEFAULT_MAGNITUDES,
    n_random: int = 4,
) -> list[mf.VectorField]:
    """Deterministic family of test vector fields.

    Directions: coordinate axes, ``+grad v`` and ``-grad v`` (when ``v`` is given) and
    ``n_random`` seeded random directions; each normalised to unit ``g``-length and
    scaled by every magnitude. The zero field is always included.
    """
    dim, shape = geom.dim, geom.shape
    directions = []
    for a in range(dim):
        e = np.zeros((dim,) + shape)
        e[a] = 1.0
        directions.append(e)
    if v is not None:
        gv = mf.gradient(geom, v)
        directions += [gv, -gv]
    rng = np.random.default_rng(seed)
    directions += [rng.standard_normal((dim,) + shape) for _ in range(n_random)]

    fields = [np.zeros((dim,) + shape)]
    for d in directions:
        length = np.sqrt(mf.norm_sq(geom, d))
        unit = np.divide(d, length, out=np.zeros_like(d), where=length > 0)
        fields += [m * unit for m in magnitudes]
    return fields


@dataclass
class HypothesisReport:
    """Sampled check of ``E_b >= 0``, ``H >= 0``, ``S >= 0`` and the fitted bounds."""

    min_H: float
    min_E: float
    min_S: float
    k1: float
    k2: float
    k3: float
    E_ok: bool
    H_ok: bool
    S_ok: bool
    b: float
    sample_count: int
    method: str = "sampled"

    @property
    def passed(self) -> bool:
        return self.E_ok and self.H_ok and self.S_ok

    def as_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out


def _ok(minimum: float, scale: float) -> bool:
    return minimum >= -HYPOTHESIS_TOL * max(1.0, scale)


def check_hypotheses(
    snapshots: Sequence,
    kind: FlowKind,
    b: float = 2.0,
    seed: int = 0,
    v_fields: Sequence[mf.ScalarField] | None = None,
    magnitudes: Sequence[float] = DEFAULT_MAGNITUDES,
    n_random: int = 4,
    stride: int = 1,
) -> HypothesisReport:
    """Evaluate the theorem hypotheses over a run at every interior snapshot with t > 0.

    ``snapshots`` are flow states (or objects with a ``flow`` attribute), equally
    spaced in time. ``v_fields`` optionally supplies the pressure per snapshot so
    that ``+-grad v`` join the sampled family. ``H`` and ``E_b`` are sampled on every
    ``stride``-th interior snapshot; ``S`` and the bounds use all snapshots.
    """
    states = [_flow(s) for s in snapshots]
    if len(states) < 3:
        raise ValueError("check_hypotheses needs at least 3 snapshots")
    if v_fields is None:
        v_fields = [getattr(s, "v", None) for s in snapshots]
    min_H = min_E = min_S = np.inf
    scale_H = scale_E = scale_S = 0.0
    k1 = k2 = k3 = 0.0
    count = 0
    for st in states:
        b1, b2, b3 = minimal_bounds(st, kind)
        k1, k2, k3 = max(k1, b1), max(k2, b2), max(k3, b3)
        S = s_trace(st, kind)
        min_S = min(min_S, float(np.min(S)))
        scale_S = max(scale_S, float(np.max(np.abs(S))))
    for k in range(1, len(states) - 1, stride):
        prev, st, nxt = states[k - 1], states[k], states[k + 1]
        if st.t <= 0:
            continue
        v = v_fields[k] if v_fields is not None else None
        # X-independent pieces, assembled once per snapshot
        S_t = s_time_derivative(prev, nxt, kind)
        S = s_trace(st, kind)
        dS = mf.partials(st.geom, S)
        S_ij = s_tensor(st, kind)
        curv_gap = mf.ricci(st.geom) - S_ij
        gap = divergence_gap_form(st, kind)
        D = quantity_D(prev, st, nxt, kind)
        for X in sample_fields(st.geom, seed + k, v, magnitudes, n_random):
            H = S_t + S / st.t - 2 * np.einsum("i...,i...->...", dS, X) + 2 * mf.contract(S_ij, X)
            E = (b - 1) * D + 2 * mf.contract(curv_gap, X) + b * np.einsum("j...,j...->...", gap, X)
            min_H = min(min_H, float(np.min(H)))
            min_E = min(min_E, float(np.min(E)))
            scale_H = max(scale_H, float(np.max(np.abs(H))))
            scale_E = max(scale_E, float(np.max(np.abs(E))))
            count += 1
    if b < 2:
        warnings.warn(f"E_b is used with b in [2, inf); got b={b}", stacklevel=2)
    if count == 0:
        raise ValueError("no interior snapshot with t > 0")
    return HypothesisReport(
        min_H=min_H,
        min_E=min_E,
        min_S=min_S,
        k1=k1,
        k2=k2,
        k3=k3,
        E_ok=_ok(min_E, scale_E),
        H_ok=_ok(min_H, scale_H),
        S_ok=_ok(min_S, scale_S),
        b=b,
        sample_count=count,
    )


# -- closed forms for the example flows ----------------------------------------------

def closed_forms(prev, state, nxt, kind: FlowKind, X: mf.VectorField) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Discrete quantities next to their closed forms for the example flows.

    Returns ``{name: (discrete, closed_form)}`` for ``I``, ``D``, ``E``, ``H`` (static only)
    and ``gap`` (the covector ``2 div S - dS``). ``X`` is used for ``I``, ``E`` and ``H``.
    """
    prev, st, nxt = _flow(prev), _flow(state), _flow(nxt)
    geom = st.geom
    out = {
        "I": quantity_I(st, kind, X),
        "D": quantity_D(prev, st, nxt, kind),
        "E": quantity_E(prev, st, nxt, kind, X),
        "gap": divergence_gap_form(st, kind),
    }
    zero = np.zeros(geom.shape)
    if isinstance(kind, Static):
        ric_xx = mf.contract(mf.ricci(geom), X)
        targets = {"I": ric_xx, "D": zero, "E": 2 * ric_xx, "gap": np.zeros_like(out["gap"])}
        if st.t > 0:
            out["H"] = quantity_H(prev, st, nxt, kind, X)
            targets["H"] = zero
    elif isinstance(kind, Ricci):
        targets = {"I": zero, "D": zero, "E": zero, "gap": np.zeros_like(out["gap"])}
    elif isinstance(kind, HarmonicScalar):
        alpha = kind.alpha(st.t)
        # the centered S_t sees the slope of alpha across the snapshots
        slope = (kind.alpha(nxt.t) - kind.alpha(prev.t)) / (nxt.t - prev.t)
        df = mf.partials(geom, st.f)
        lap_f = mf.laplace_beltrami(geom, st.f)
        x_f = np.einsum("i...,i...->...", df, X)
        grad_sq = mf.covector_norm_sq(geom, df)
        targets = {
            "I": alpha * x_f**2,
            "D": 2 * alpha * lap_f**2 - slope * grad_sq,
            "E": 2 * alpha * (lap_f - x_f) ** 2 - slope * grad_sq,
            "gap": -2 * alpha * lap_f * df,
        }
    else:
        raise ValueError(f"no closed forms for {type(kind).__name__}")
    return {k: (out[k], targets[k]) for k in targets}
