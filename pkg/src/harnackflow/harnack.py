"""Differential and integrated Harnack estimates for the pressure along the flow.

The gradient quantity is
``F = |grad v|^2/v - b v_t/v + (1-b) S/v - d/t``,
and the estimates bound it from above by explicit constants built from the
curvature bounds ``k1, k2, k3`` of the flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import flow as fl
from . import manifold as mf
from . import pme
from .structure import DivisionByTime, HypothesisReport, check_hypotheses


class HarnackConfigError(ValueError):
    pass


@dataclass(frozen=True)
class HarnackConfig:
    """Parameters of the estimates.

    ``rho = inf`` selects the global mode (no ball restriction, ``E1`` term dropped).
    ``c1 .. c4`` are the unspecified absolute constants of the estimates.
    """

    b: float = 2.0
    d: float = 2.0
    rho: float = math.inf
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 1.0
    c4: float = 1.0
    tolerance: float = 1e-3
    t_start: float = 0.1
    center: tuple[int, ...] | None = None

    def __post_init__(self):
        if not self.b >= 2:
            raise HarnackConfigError(f"b must lie in [2, inf), got b={self.b}")
        if not self.d >= self.b:
            raise HarnackConfigError(f"d must satisfy d >= b, got b={self.b}, d={self.d}")
        if not self.rho > 0:
            raise HarnackConfigError(f"rho must be positive, got {self.rho}")
        for name in ("c1", "c2", "c3", "c4"):
            if not getattr(self, name) > 0:
                raise HarnackConfigError(f"{name} must be positive")
        if not self.t_start > 0:
            raise HarnackConfigError("t_start must be positive (F contains d/t)")
        if not self.tolerance >= 0:
            raise HarnackConfigError("tolerance must be nonnegative")


def harnack_F(pressure: pme.PressureView, S: np.ndarray, b: float, d: float, t: float | None = None) -> np.ndarray:
    """``|grad v|^2/v - b v_t/v + (1-b) S/v - d/t`` pointwise."""
    t = pressure.t if t is None else t
    if not t > 0:
        raise DivisionByTime("F contains d/t and needs t > 0")
    v = pressure.v
    if np.any(v <= 0):
        raise ValueError("pressure must be positive")
    return pressure.grad_sq / v - b * pressure.v_t / v + (1 - b) * S / v - d / t


# -- right-hand sides -------------------------------------------------------------

def _sqrt_k1_rho(k1: float, rho: float) -> float:
    return 0.0 if k1 == 0 else math.sqrt(k1) * rho


def _ball_term(E: float, v_max: float, rho: float) -> float:
    return 0.0 if math.isinf(rho) else E * v_max / rho**2


def theorem_constants(cfg: HarnackConfig, p: float, n: int, bounds) -> tuple[float, float]:
    """``(E1, E2)`` of the ``b = 2`` estimate."""
    k1, k2, k3 = bounds
    E1 = (p**2 * n + 0.5 * _sqrt_k1_rho(k1, cfg.rho) + 9 / 4) * cfg.c1 * (p - 1)
    E2 = math.sqrt(cfg.c2) * (k2 + k3) ** 2 + 1
    return E1, E2


def theorem1_rhs(cfg: HarnackConfig, p: float, n: int, v_max: float, bounds=(0.0, 0.0, 0.0)) -> float:
    """``2n(p-1)/(1+n(p-1)) * (E1 v_max/rho^2 + E2)``; ``rho = inf`` gives the global bound."""
    if not p > 1:
        raise HarnackConfigError(f"p must exceed 1, got {p}")
    E1, E2 = theorem_constants(cfg, p, n, bounds)
    prefactor = 2 * n * (p - 1) / (1 + n * (p - 1))
    return prefactor * (_ball_term(E1, v_max, cfg.rho) + E2)


def proposition_constants(cfg: HarnackConfig, p: float, n: int, bounds) -> dict[str, float]:
    k1, k2, k3 = bounds
    b = cfg.b
    alpha = b * n * (p - 1) / (2 + b * n * (p - 1))
    E4 = (b**2 * p**2 * n / (4 * (b - 1)) + _sqrt_k1_rho(k1, cfg.rho) / 2 + 9 / 4) * cfg.c3 * (p - 1)
    E5 = math.sqrt(cfg.c4) * (k2 + k3) ** 2 + 2 * (b - 2) / b * (k2 + k3) + 1
    E6 = n * (k2 + k3) * (b - 2) * math.sqrt(b * (p - 1) * alpha / 2)
    return {"alpha": alpha, "E4": E4, "E5": E5, "E6": E6}


def proposition_rhs(cfg: HarnackConfig, p: float, n: int, v_max: float, bounds=(0.0, 0.0, 0.0)) -> float:
    """``b alpha (E4 v_max/rho^2 + E5) + E6`` for general ``b >= 2``."""
    if not p > 1:
        raise HarnackConfigError(f"p must exceed 1, got {p}")
    c = proposition_constants(cfg, p, n, bounds)
    return cfg.b * c["alpha"] * (_ball_term(c["E4"], v_max, cfg.rho) + c["E5"]) + c["E6"]


# -- differential estimate --------------------------------------------------------

@dataclass
class HarnackReport:
    status: str  # "pass", "fail" or "not-applicable"
    rhs: float
    min_margin: float
    min_margin_node: tuple[int, ...]
    min_margin_time: float
    max_F: float
    v_max: float
    times: np.ndarray
    margin_min_series: np.ndarray  # per snapshot: min over the evaluation region of rhs - F
    F_max_series: np.ndarray
    hypotheses: HypothesisReport
    mode: str
    F_fields: list = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    @property
    def applicable(self) -> bool:
        return self.status != "not-applicable"


def _window(run: pme.Run, t_start: float, t_end: float | None = None) -> list[int]:
    t_end = math.inf if t_end is None else t_end
    eps = 1e-9 * max(1.0, abs(run.spacing))
    return [k for k, s in enumerate(run.snapshots) if t_start - eps <= s.t <= t_end + eps]


def _ball_masks(run: pme.Run, cfg: HarnackConfig, indices: Sequence[int]) -> dict[int, np.ndarray]:
    """Nodes within geodesic distance ``rho`` of the center, per snapshot (current metric)."""
    geom0 = run.geom
    if math.isinf(cfg.rho) or not mf.is_grid(geom0):
        return {k: np.ones(run[k].geom.shape, dtype=bool) for k in indices}
    center = cfg.center if cfg.center is not None else tuple(n // 2 for n in geom0.shape)
    return {k: mf.geodesic_distance(run[k].geom, center) <= cfg.rho for k in indices}


def check_differential_harnack(
    run: pme.Run,
    cfg: HarnackConfig,
    hypotheses: HypothesisReport | None = None,
    keep_fields: bool = False,
    t_end: float | None = None,
) -> HarnackReport:
    """Check ``F <= rhs`` at every node and snapshot of the window ``[t_start, t_end]``.

    With ``b = 2`` the right side is :func:`theorem1_rhs`, otherwise :func:`proposition_rhs`,
    with ``k1, k2, k3`` fitted over the run. ``v_max`` is the maximum of ``v`` over the
    evaluation region and window. Failing hypotheses make the report "not-applicable".
    """
    kind = run.kind
    indices = _window(run, cfg.t_start, t_end)
    if not indices:
        raise ValueError(f"no snapshots in the window starting at t={cfg.t_start}")
    if hypotheses is None:
        hypotheses = check_hypotheses(run.snapshots, kind, cfg.b)
    bounds = (hypotheses.k1, hypotheses.k2, hypotheses.k3)
    masks = _ball_masks(run, cfg, indices)
    v_max = max(float(np.max(run[k].v[masks[k]])) for k in indices)
    n = run.geom.dim
    rhs_fn = theorem1_rhs if cfg.b == 2 else proposition_rhs
    rhs = rhs_fn(cfg, run.p, n, v_max, bounds)

    margin_series, F_series, fields = [], [], []
    best = (math.inf, (), math.nan)
    for k in indices:
        state = run[k]
        F = harnack_F(pme.pressure_view(run, k), fl.s_trace(state.flow, kind), cfg.b, cfg.d)
        margin = np.where(masks[k], rhs - F, np.inf)
        j = int(np.argmin(margin))
        m = float(margin.flat[j])
        margin_series.append(m)
        F_series.append(float(np.max(np.where(masks[k], F, -np.inf))))
        if keep_fields:
            fields.append(F)
        if m < best[0]:
            best = (m, tuple(int(i) for i in np.unravel_index(j, F.shape)), state.t)
    ok = best[0] >= -cfg.tolerance * abs(rhs)
    status = "not-applicable" if not hypotheses.passed else ("pass" if ok else "fail")
    return HarnackReport(
        status=status,
        rhs=rhs,
        min_margin=best[0],
        min_margin_node=best[1],
        min_margin_time=best[2],
        max_F=max(F_series),
        v_max=v_max,
        times=np.array([run[k].t for k in indices]),
        margin_min_series=np.array(margin_series),
        F_max_series=np.array(F_series),
        hypotheses=hypotheses,
        mode="global" if math.isinf(cfg.rho) else "ball",
        F_fields=fields,
    )


def empirical_constants(run: pme.Run, cfg: HarnackConfig, hypotheses: HypothesisReport | None = None) -> float:
    """Smallest factor ``c >= 0`` such that ``F <= c * rhs`` over the window.

    Zero when ``F`` stays negative; a value below 1 means the stated constants suffice.
    """
    rep = check_differential_harnack(run, cfg, hypotheses)
    if not rep.hypotheses.passed:
        raise ValueError("hypotheses fail on this run; the estimate does not apply")
    return max(0.0, rep.max_F) / rep.rhs


# -- action minimisation ------------------------------------------------------------

@dataclass
class ActionPath:
    nodes: list[tuple[int, ...]]
    times: np.ndarray
    gamma: float
    max_hops: int
    spacing: float


def _snap(run, t: float) -> int:
    times = np.array([s.t for s in run])
    k = int(np.argmin(np.abs(times - t)))
    dt = times[1] - times[0] if len(times) > 1 else 1.0
    if abs(times[k] - t) > 1e-6 * abs(dt):
        raise ValueError(f"t={t} is not a snapshot time of the run")
    return k


def _potential(run, k: int, kind, potential) -> np.ndarray:
    if potential is not None:
        return np.asarray(potential[k], dtype=float)
    state = run[k]
    return fl.s_trace(getattr(state, "flow", state), kind)


def _geom(run, k):
    return run[k].geom


def _move_lengths(run, k: int, offsets) -> list[np.ndarray]:
    # metric length of each move, averaged between the two slice metrics
    return [0.5 * (mf.edge_lengths(_geom(run, k), o) + mf.edge_lengths(_geom(run, k + 1), o)) for o in offsets]


def _shift_from(arr: np.ndarray, offset) -> np.ndarray:
    """``out[x] = arr[x - offset]``: the value at the source node of a move ending at ``x``."""
    return np.roll(arr, tuple(offset), axis=tuple(range(arr.ndim)))


def action_gamma(
    run,
    x1,
    t1: float,
    x2,
    t2: float,
    kind: fl.FlowKind | None = None,
    max_hops: int = 1,
    potential: Sequence[np.ndarray] | None = None,
) -> ActionPath:
    """Minimise ``int (S + |dgamma/dt|^2) dt`` over lattice paths from ``(x1,t1)`` to ``(x2,t2)``.

    Paths advance one snapshot per step and either stay or jump to a node at most
    ``max_hops`` lattice steps away (per axis). A move over ``[t_k, t_k+1]`` costs
    ``dt * (mean S at its endpoints) + length^2 / dt``. ``potential`` overrides ``S``
    with one field per snapshot.
    """
    if not t1 < t2:
        raise ValueError(f"need t1 < t2, got t1={t1}, t2={t2}")
    kind = getattr(run, "kind", None) if kind is None else kind
    k1, k2 = _snap(run, t1), _snap(run, t2)
    geom = _geom(run, k1)
    mf._require_grid(geom, "action_gamma")
    shape = geom.shape
    x1, x2 = tuple(np.atleast_1d(x1)), tuple(np.atleast_1d(x2))
    offsets = [(0,) * geom.dim] + mf._neighbor_offsets(geom.dim, max_hops)

    value = np.full(shape, np.inf)
    value[x1] = 0.0
    parents = []
    S_here = _potential(run, k1, kind, potential)
    for k in range(k1, k2):
        dt = run[k + 1].t - run[k].t
        S_next = _potential(run, k + 1, kind, potential)
        lengths = _move_lengths(run, k, offsets[1:])
        best = np.full(shape, np.inf)
        choice = np.zeros(shape, dtype=int)
        for m, off in enumerate(offsets):
            length_sq = 0.0 if m == 0 else lengths[m - 1] ** 2
            # cost of the move from y = x - off to x; edge lengths are stored at the source node
            cost = _shift_from(value + dt * 0.5 * S_here + length_sq / dt, off) + dt * 0.5 * S_next
            better = cost < best
            best = np.where(better, cost, best)
            choice = np.where(better, m, choice)
        parents.append(choice)
        value = best
        S_here = S_next

    gamma = float(value[x2])
    nodes = [x2]
    x = np.array(x2)
    for choice in reversed(parents):
        off = np.array(offsets[int(choice[tuple(x)])])
        x = (x - off) % np.array(shape)
        nodes.append(tuple(int(i) for i in x))
    nodes.reverse()
    times = np.array([run[k].t for k in range(k1, k2 + 1)])
    return ActionPath(nodes, times, gamma, max_hops, float(times[1] - times[0]))


def path_action(run, nodes: Sequence, t1: float, kind: fl.FlowKind | None = None,
                potential: Sequence[np.ndarray] | None = None) -> float:
    """Action of a given lattice path, one node per snapshot starting at ``t1``.

    Consecutive nodes may be any lattice move; its length is the straight-move length.
    """
    kind = getattr(run, "kind", None) if kind is None else kind
    k1 = _snap(run, t1)
    shape = np.array(_geom(run, k1).shape)
    total = 0.0
    for j in range(len(nodes) - 1):
        k = k1 + j
        a, b = np.array(nodes[j]), np.array(nodes[j + 1])
        off = (b - a + shape // 2) % shape - shape // 2  # shortest periodic displacement
        dt = run[k + 1].t - run[k].t
        S_a = _potential(run, k, kind, potential)[tuple(a)]
        S_b = _potential(run, k + 1, kind, potential)[tuple(b)]
        if np.any(off):
            lk = 0.5 * (mf.edge_lengths(_geom(run, k), tuple(off))[tuple(a)]
                        + mf.edge_lengths(_geom(run, k + 1), tuple(off))[tuple(a)])
        else:
            lk = 0.0
        total += dt * 0.5 * (S_a + S_b) + lk**2 / dt
    return float(total)


# -- integrated estimate ------------------------------------------------------------

@dataclass
class IntegratedReport:
    x1: tuple[int, ...]
    t1: float
    x2: tuple[int, ...]
    t2: float
    v1: float
    v2: float
    gamma: float
    rhs: float
    slack: float  # rhs / v1
    status: str

    @property
    def passed(self) -> bool:
        return self.status == "pass"


def integrated_rhs(v2: float, t1: float, t2: float, d: float, gamma: float, v_min: float, n: int, p: float, E2: float) -> float:
    """``v2 (t2/t1)^(d/2) exp(gamma/(2 v_min) + n(p-1)/(1+n(p-1)) E2 (t2 - t1))``."""
    exponent = gamma / (2 * v_min) + n * (p - 1) / (1 + n * (p - 1)) * E2 * (t2 - t1)
    return v2 * (t2 / t1) ** (d / 2) * math.exp(exponent)


def check_integrated_harnack(
    run: pme.Run,
    cfg: HarnackConfig,
    pairs: Sequence[tuple],
    hypotheses: HypothesisReport | None = None,
    max_hops: int = 1,
    gamma_override: Sequence[float] | None = None,
) -> list[IntegratedReport]:
    """Check ``v(x1,t1) <= rhs`` for each ``(x1, t1, x2, t2)``; ``v_min`` is the run minimum.

    ``gamma_override`` replaces the minimised action (any path's action is admissible,
    because the minimum only makes the bound sharper).
    """
    if hypotheses is None:
        hypotheses = check_hypotheses(run.snapshots, run.kind, cfg.b)
    _, E2 = theorem_constants(cfg, run.p, run.geom.dim, (hypotheses.k1, hypotheses.k2, hypotheses.k3))
    v_min = min(float(np.min(s.v)) for s in run.snapshots)
    n = run.geom.dim
    out = []
    for j, (x1, t1, x2, t2) in enumerate(pairs):
        x1, x2 = tuple(np.atleast_1d(x1)), tuple(np.atleast_1d(x2))
        if gamma_override is not None:
            gamma = float(gamma_override[j])
        else:
            gamma = action_gamma(run, x1, t1, x2, t2, max_hops=max_hops).gamma
        v1 = float(run[_snap(run, t1)].v[x1])
        v2 = float(run[_snap(run, t2)].v[x2])
        rhs = integrated_rhs(v2, t1, t2, cfg.d, gamma, v_min, n, run.p, E2)
        ok = v1 <= rhs * (1 + cfg.tolerance)
        status = "not-applicable" if not hypotheses.passed else ("pass" if ok else "fail")
        out.append(IntegratedReport(x1, t1, x2, t2, v1, v2, gamma, rhs, rhs / v1, status))
    return out


def seeded_pairs(run: pme.Run, count: int, seed: int = 0, t_start: float = 0.1, min_gap: float = 0.0):
    """Deterministic sample of ``(x1, t1, x2, t2)`` with ``t_start <= t1 < t2`` on snapshot times."""
    rng = np.random.default_rng(seed)
    times = run.times
    valid = np.nonzero(times >= t_start - 1e-12)[0]
    shape = run.geom.shape
    pairs = []
    while len(pairs) < count:
        i, j = sorted(rng.choice(valid, size=2, replace=False))
        if times[j] - times[i] < min_gap - 1e-12:
            continue
        x1 = tuple(int(rng.integers(n)) for n in shape)
        x2 = tuple(int(rng.integers(n)) for n in shape)
        pairs.append((x1, float(times[i]), x2, float(times[j])))
    return pairs
