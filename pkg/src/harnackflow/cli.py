"""Command-line driver: config parsing, experiment modes and report emission.

Config files are plain ``key = value`` text split into ``[sections]``; ``#`` starts a
comment. See :data:`SCHEMA` (and the README) for every key and its default.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import flow as fl
from . import harnack as hk
from . import identities as idn
from . import manifold as mf
from . import pme
from .structure import check_hypotheses, closed_forms

log = logging.getLogger("harnackflow")

OUTPUT_ENV = "HARNACKFLOW_OUTPUT"
DEFAULT_OUTPUT = "harnackflow-out"
MODES = ("simulate", "verify-identities", "check-harnack", "flow-zoo", "convergence")
BACKENDS = ("torus", "circle", "sphere")
KINDS = ("static", "ricci", "scaled", "list", "harmonic")
PRESETS = ("gaussian-bump", "constant", "random-smooth")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


# -- schema ------------------------------------------------------------------------

def _float(text: str) -> float:
    value = float(text)
    if math.isnan(value):
        raise ValueError("nan is not allowed")
    return value


def _int(text: str) -> int:
    return int(text)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(_float(t) for t in text.split(",") if t.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _words(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _choice(options) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


def _dt(text: str):
    return "auto" if text == "auto" else _float(text)


# section -> key -> (parser, default); a default of REQUIRED must be given
REQUIRED = object()
SCHEMA: dict[str, dict[str, tuple[Callable, Any]]] = {
    "run": {
        "mode": (_choice(MODES), REQUIRED),
        "seed": (_int, 0),
        "output": (str, None),
    },
    "geometry": {
        "backend": (_choice(BACKENDS), "torus"),
        "resolution": (_int, 64),
        "length": (_float, 1.0),
        "conformal_amplitude": (_float, 0.0),
        "sphere_dimension": (_int, 2),
        "sphere_radius_sq": (_float, 1.0),
    },
    "flow": {
        "kind": (_choice(KINDS), "static"),
        "lambda": (_float, 1.0),
        "alpha_times": (_floats, (0.0,)),
        "alpha_values": (_floats, (1.0,)),
        "map_amplitude": (_float, 0.5),
    },
    "pme": {
        "p": (_float, REQUIRED),
        "dt": (_dt, "auto"),
        "horizon": (_float, 1.0),
        "snapshot_interval": (_float, 0.005),
        "initial": (_choice(PRESETS), "gaussian-bump"),
        "amplitude": (_float, 1.0),
        "width": (_float, 0.1),
        "floor": (_float, pme.DEFAULT_FLOOR),
        "constant": (_float, 1.0),
        "snapshot_files": (_int, 5),
    },
    "harnack": {
        "b": (_float, 2.0),
        "d": (_float, 2.0),
        "rho": (_float, math.inf),
        "c1": (_float, 1.0),
        "c2": (_float, 1.0),
        "c3": (_float, 1.0),
        "c4": (_float, 1.0),
        "tolerance": (_float, 1e-3),
        "t_start": (_float, 0.1),
        "pairs": (_int, 20),
        "min_pair_gap": (_float, 0.2),
        "max_hops": (_int, 1),
    },
    "identities": {
        "ladder": (_ints, idn.DEFAULT_LADDER),
        "scenarios": (_words, ("static-flat", "ricci-2d")),
        "dt_factor": (_float, idn.DT_FACTOR),
        "b": (_float, 2.0),
        "d": (_float, 2.0),
    },
}

# modes that integrate the porous medium equation and therefore need p
PME_MODES = ("simulate", "check-harnack")


@dataclass
class RunConfig:
    values: dict[str, dict[str, Any]]
    lines: dict[tuple[str, str], int] = field(default_factory=dict)

    def __getitem__(self, key: str):
        section, _, name = key.partition(".")
        return self.values[section][name]

    @property
    def mode(self) -> str:
        return self["run.mode"]

    def with_overrides(self, **dotted) -> RunConfig:
        values = {s: dict(v) for s, v in self.values.items()}
        for key, value in dotted.items():
            if value is not None:
                section, _, name = key.partition(".")
                values[section][name] = value
        cfg = RunConfig(values, dict(self.lines))
        validate(cfg)
        return cfg

    def harnack_config(self) -> hk.HarnackConfig:
        h = self.values["harnack"]
        return hk.HarnackConfig(
            b=h["b"], d=h["d"], rho=h["rho"], c1=h["c1"], c2=h["c2"], c3=h["c3"], c4=h["c4"],
            tolerance=h["tolerance"], t_start=h["t_start"],
        )

    def as_text(self) -> str:
        out = []
        for section, entries in self.values.items():
            out.append(f"[{section}]")
            for key, value in entries.items():
                if value is None:
                    continue
                if isinstance(value, tuple):
                    value = ", ".join(str(v) for v in value)
                out.append(f"{key} = {value}")
        return "\n".join(out) + "\n"


def parse_config(text: str) -> RunConfig:
    """Parse and validate config text; errors carry the offending line number."""
    values: dict[str, dict[str, Any]] = {s: {} for s in SCHEMA}
    lines: dict[tuple[str, str], int] = {}
    section = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", number)
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", number)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", number)
        if section is None:
            raise ConfigError("key outside of any [section]", number)
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", number)
        if (section, key) in lines:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", number)
        parser, _ = SCHEMA[section][key]
        try:
            values[section][key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {section}.{key}: {exc}", number) from None
        lines[(section, key)] = number

    mode = values["run"].get("mode")
    for section, entries in SCHEMA.items():
        for key, (_, default) in entries.items():
            if key in values[section]:
                continue
            if default is REQUIRED and (section != "pme" or mode in PME_MODES):
                raise ConfigError(f"missing required key {section}.{key}")
            values[section][key] = None if default is REQUIRED else default
    cfg = RunConfig(values, lines)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    """Check cross-module constraints before anything runs."""
    def fail(key: str, message: str):
        section, _, name = key.partition(".")
        raise ConfigError(f"{key}: {message}", cfg.lines.get((section, name)))

    v = cfg.values
    p = v["pme"]["p"]
    if p is not None and not p > 1:
        fail("pme.p", f"requires p > 1, got {p}")
    h = v["harnack"]
    if not h["b"] >= 2:
        fail("harnack.b", f"requires b >= 2, got {h['b']}")
    if not h["d"] >= h["b"]:
        fail("harnack.d", f"requires d >= b, got b = {h['b']}, d = {h['d']}")
    for key in ("rho", "c1", "c2", "c3", "c4", "t_start"):
        if not h[key] > 0:
            fail(f"harnack.{key}", "must be positive")
    if h["max_hops"] < 1:
        fail("harnack.max_hops", "must be at least 1")
    i = v["identities"]
    if not i["b"] >= 2:
        fail("identities.b", f"requires b >= 2, got {i['b']}")
    if not i["d"] >= i["b"]:
        fail("identities.d", f"requires d >= b, got b = {i['b']}, d = {i['d']}")
    if len(i["ladder"]) < 3:
        fail("identities.ladder", "needs at least 3 resolutions")
    for s in i["scenarios"]:
        if s not in idn.SCENARIOS:
            fail("identities.scenarios", f"unknown scenario {s!r}")
    g = v["geometry"]
    if g["resolution"] < mf.MIN_RESOLUTION:
        fail("geometry.resolution", f"must be >= {mf.MIN_RESOLUTION}")
    if not g["length"] > 0:
        fail("geometry.length", "must be positive")
    if not g["sphere_radius_sq"] > 0:
        fail("geometry.sphere_radius_sq", "must be positive")
    pm = v["pme"]
    if not pm["horizon"] > 0:
        fail("pme.horizon", "must be positive")
    if not pm["snapshot_interval"] > 0:
        fail("pme.snapshot_interval", "must be positive")
    if pm["dt"] != "auto" and not pm["dt"] > 0:
        fail("pme.dt", "must be positive or auto")
    if not pm["floor"] > 0:
        fail("pme.floor", "must be positive")
    f = v["flow"]
    try:
        fl.AlphaTable(f["alpha_times"], f["alpha_values"])
        fl.check_compatible(build_geometry(cfg), build_kind(cfg))
    except (fl.ConfigurationError, ValueError) as exc:
        raise ConfigError(f"flow: {exc}", cfg.lines.get(("flow", "kind"))) from None


# -- building the experiment --------------------------------------------------------

def build_geometry(cfg: RunConfig) -> mf.Geometry:
    g = cfg.values["geometry"]
    seed = cfg["run.seed"]
    if g["backend"] == "sphere":
        return mf.RoundSphere(g["sphere_dimension"], g["sphere_radius_sq"])
    dim = 2 if g["backend"] == "torus" else 1
    grid = mf.GridSpec.uniform(dim, g["resolution"], g["length"])
    bump = g["conformal_amplitude"] * pme.band_limited(grid, seed + 1) if g["conformal_amplitude"] else np.zeros(grid.shape)
    if dim == 2:
        return mf.ConformalTorus2D(grid, bump)
    return mf.Circle1D(grid, 1 + bump)


def build_kind(cfg: RunConfig) -> fl.FlowKind:
    f = cfg.values["flow"]
    name = f["kind"]
    if name == "static":
        return fl.Static()
    if name == "ricci":
        return fl.Ricci()
    if name == "scaled":
        return fl.ScaledIdentity(f["lambda"])
    if name == "list":
        return fl.ListExtended()
    return fl.HarmonicScalar(fl.AlphaTable(f["alpha_times"], f["alpha_values"]))


def build_initial(cfg: RunConfig, geom: mf.Geometry) -> np.ndarray:
    pm = cfg.values["pme"]
    if not mf.is_grid(geom) or pm["initial"] == "constant":
        return np.full(geom.shape, pm["constant"])
    if pm["initial"] == "gaussian-bump":
        return pme.gaussian_bump(geom, pm["amplitude"], pm["width"], floor=pm["floor"])
    return pme.random_smooth(geom, seed=cfg["run.seed"], amplitude=0.5 * pm["amplitude"], floor=pm["floor"])


def build_state(cfg: RunConfig) -> tuple[pme.PMEState, fl.FlowKind]:
    geom = build_geometry(cfg)
    kind = build_kind(cfg)
    f = None
    if fl.needs_scalar_map(kind):
        f = cfg["flow.map_amplitude"] * pme.band_limited(geom.grid, cfg["run.seed"] + 2)
    state = fl.FlowState(0.0, geom, f)
    return pme.PMEState(build_initial(cfg, geom), cfg["pme.p"], state), kind


def choose_dt(cfg: RunConfig, state: pme.PMEState, kind) -> float:
    """The configured step, or for ``auto`` the interval halved until it is stable."""
    interval = cfg["pme.snapshot_interval"]
    if cfg["pme.dt"] != "auto":
        return cfg["pme.dt"]
    limit = pme.stability_limit(state.u, state.flow, kind, state.p)
    dt = interval
    while dt > 0.9 * limit:
        dt /= 2
    return dt


def _steps_per_snapshot(cfg: RunConfig, dt: float) -> int:
    ratio = cfg["pme.snapshot_interval"] / dt
    k = int(round(ratio))
    if k < 1 or not math.isclose(k, ratio, rel_tol=1e-9):
        raise ConfigError(f"pme.snapshot_interval must be a multiple of dt = {dt}")
    return k


# -- output helpers -------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (tuple, list)):
        return ",".join(_fmt(i) for i in x)
    return str(x)


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(x) for x in row])
    path.write_text(buf.getvalue())


def write_summary(path: Path, items: dict[str, Any]) -> None:
    path.write_text("".join(f"{k}={_fmt(v)}\n" for k, v in items.items()))


def read_summary(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line and not line.startswith("#"):
            key, _, value = line.partition("=")
            out[key] = value
    return out


TIMESERIES_COLUMNS = ("t", "mass", "u_min", "u_max", "v_min", "v_max")


def _node(text: str) -> tuple[int, ...]:
    return tuple(int(i) for i in text.split(";"))


def _optional_float(text: str):
    return None if text == "" else float(text)


_REPORT_SCHEMA = {
    "scenario": str, "identity": str, "h": float, "dt": float,
    "linf": float, "l2": float, "order": _optional_float, "status": str,
}

# column parsers of every CSV the modes emit
CSV_SCHEMAS: dict[str, dict[str, Callable]] = {
    "timeseries.csv": {c: float for c in TIMESERIES_COLUMNS},
    "margins.csv": {"t": float, "min_margin": float, "max_F": float},
    "pairs.csv": {
        "x1": _node, "t1": float, "x2": _node, "t2": float, "v1": float, "v2": float,
        "gamma": float, "rhs": float, "slack": float, "status": str,
    },
    "identities.csv": _REPORT_SCHEMA,
    "closed_forms.csv": _REPORT_SCHEMA,
    "flow_zoo.csv": {"kind": str, "quantity": str, "closed_form": str, "discrete": float, "gap": float},
}


def read_csv(path) -> list[dict[str, Any]]:
    """Parse an emitted CSV under its schema; raises ``ValueError`` on any mismatch."""
    path = Path(path)
    schema = CSV_SCHEMAS[path.name]
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != tuple(schema):
            raise ValueError(f"{path.name}: columns {header} do not match {list(schema)}")
        return [{k: schema[k](v) for k, v in zip(header, row, strict=True)} for row in reader]


# -- modes ----------------------------------------------------------------------------

@dataclass
class Outcome:
    exit_code: int
    summary: dict[str, Any]


def _simulate(cfg: RunConfig, out: Path, write_snapshots: bool = True):
    state, kind = build_state(cfg)
    dt = choose_dt(cfg, state, kind)
    every = _steps_per_snapshot(cfg, dt)
    rows = []

    def record(s: pme.PMEState):
        v_min, v_max, u_min, u_max = pme.extrema(s)
        rows.append((s.t, pme.mass(s), u_min, u_max, v_min, v_max))

    run = pme.simulate(state, kind, dt, cfg["pme.horizon"], snapshot_every=every, callback=record)
    write_csv(out / "timeseries.csv", TIMESERIES_COLUMNS, rows)
    if write_snapshots and mf.is_grid(state.geom):
        snap_dir = out / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        count = max(2, cfg["pme.snapshot_files"])
        picks = sorted(set(np.linspace(0, len(run) - 1, count).round().astype(int)))
        for k in picks:
            s = run[k]
            mf.write_field(snap_dir / f"u_{k:05d}.txt", s.geom.grid, s.u, s.t,
                           kind=kind.name, f="yes" if s.flow.f is not None else "no", p=repr(s.p))
    masses = np.array([r[1] for r in rows])
    summary = {
        "dt": dt,
        "steps": len(rows) - 1,
        "snapshots": len(run),
        "mass_initial": masses[0],
        "mass_final": masses[-1],
        "mass_relative_drift": float(np.max(np.abs(masses - masses[0])) / masses[0]),
        "u_min": min(r[2] for r in rows),
        "u_max": max(r[3] for r in rows),
    }
    return run, summary


def mode_simulate(cfg: RunConfig, out: Path) -> Outcome:
    _, summary = _simulate(cfg, out)
    summary["status"] = "done"
    return Outcome(0, summary)


def mode_check_harnack(cfg: RunConfig, out: Path) -> Outcome:
    run, summary = _simulate(cfg, out, write_snapshots=False)
    hcfg = cfg.harnack_config()
    v_fields = [s.v for s in run.snapshots]
    hyp = check_hypotheses(run.snapshots, run.kind, hcfg.b, seed=cfg["run.seed"], v_fields=v_fields)
    rep = hk.check_differential_harnack(run, hcfg, hypotheses=hyp)
    write_csv(out / "margins.csv", tuple(CSV_SCHEMAS["margins.csv"]),
              zip(rep.times, rep.margin_min_series, rep.F_max_series))
    summary.update({f"hypothesis_{k}": v for k, v in hyp.as_dict().items()})
    summary.update({
        "differential_status": rep.status,
        "differential_mode": rep.mode,
        "rhs": rep.rhs,
        "max_F": rep.max_F,
        "min_margin": rep.min_margin,
        "min_margin_node": rep.min_margin_node,
        "min_margin_time": rep.min_margin_time,
        "v_max": rep.v_max,
    })
    status = [rep.status]
    if mf.is_grid(run.geom) and cfg["harnack.pairs"] > 0 and len(run) > 2:
        pairs = hk.seeded_pairs(run, cfg["harnack.pairs"], cfg["run.seed"], hcfg.t_start, cfg["harnack.min_pair_gap"])
        reports = hk.check_integrated_harnack(run, hcfg, pairs, hyp, max_hops=cfg["harnack.max_hops"])
        write_csv(out / "pairs.csv", tuple(CSV_SCHEMAS["pairs.csv"]),
                  [(";".join(map(str, r.x1)), r.t1, ";".join(map(str, r.x2)), r.t2, r.v1, r.v2, r.gamma, r.rhs, r.slack, r.status)
                   for r in reports])
        summary["integrated_pairs"] = len(reports)
        summary["integrated_min_slack"] = min(r.slack for r in reports)
        integrated = "not-applicable" if not hyp.passed else ("pass" if all(r.passed for r in reports) else "fail")
        summary["integrated_status"] = integrated
        status.append(integrated)
    if hyp.passed:
        summary["empirical_constant"] = max(0.0, rep.max_F) / rep.rhs
    overall = "fail" if "fail" in status else ("not-applicable" if "not-applicable" in status else "pass")
    summary["status"] = overall
    return Outcome(1 if overall == "fail" else 0, summary)


def mode_verify_identities(cfg: RunConfig, out: Path) -> Outcome:
    i = cfg.values["identities"]
    seed = cfg["run.seed"]
    gate = idn.bochner_study(i["ladder"], seed)
    results, summary = {}, {"bochner_order": gate.order, "bochner_status": gate.status}
    ok = gate.passed
    for scenario in i["scenarios"]:
        reports = idn.convergence_study(None, i["ladder"], scenario, 2.0, i["b"], i["d"], seed, i["dt_factor"], gate)
        results[scenario] = reports
        triple = idn.build_triple(scenario, i["ladder"][0], 2.0, seed, i["dt_factor"])
        diff, scale = idn.route_consistency(triple, i["b"], i["d"])
        route_ok = diff <= idn.ROUTE_TOL * max(1.0, scale)
        summary[f"{scenario}.route_difference"] = diff / max(1.0, scale)
        ok &= route_ok
        for name, rep in reports.items():
            summary[f"{scenario}.{name}"] = f"{rep.status}:{'' if rep.order is None else f'{rep.order:.3f}'}"
            ok &= rep.passed
    (out / "identities.csv").write_text(idn.reports_to_csv(results))
    summary["status"] = "pass" if ok else "fail"
    return Outcome(0 if ok else 1, summary)


def mode_convergence(cfg: RunConfig, out: Path) -> Outcome:
    i = cfg.values["identities"]
    results, summary, ok = {}, {}, True
    for scenario in ("ricci-2d", "list-circle"):
        reports = idn.closed_form_study(scenario, i["ladder"], 2.0, cfg["run.seed"], i["dt_factor"])
        results[scenario] = reports
        for name, rep in reports.items():
            summary[f"{scenario}.{name}"] = f"{rep.status}:{'' if rep.order is None else f'{rep.order:.3f}'}"
            ok &= rep.passed
    (out / "closed_forms.csv").write_text(idn.reports_to_csv(results))
    summary["status"] = "pass" if ok else "fail"
    return Outcome(0 if ok else 1, summary)


ZOO_FORMULAS = {
    "static": {"I": "Ric(X,X)", "D": "0", "E": "2 Ric(X,X)", "H": "0", "gap": "0"},
    "ricci": {"I": "0", "D": "0", "E": "0", "gap": "0"},
    "list": {"I": "2 (X f)^2", "D": "4 (Lap f)^2", "E": "4 (Lap f - X f)^2", "gap": "-4 Lap f df"},
    "harmonic": {
        "I": "alpha (X f)^2",
        "D": "2 alpha (Lap f)^2 - alpha' |df|^2",
        "E": "2 alpha (Lap f - X f)^2 - alpha' |df|^2",
        "gap": "-2 alpha Lap f df",
    },
}


def flow_zoo(n: int = 64, seed: int = 0, p: float = 2.0) -> list[tuple]:
    """Discrete against closed-form structure quantities for each example flow.

    Rows are ``(kind, quantity, closed form, max |discrete|, max |discrete - closed form|)``.
    """
    torus = mf.GridSpec.uniform(2, n)
    circle = mf.GridSpec.uniform(1, n)
    curved = mf.ConformalTorus2D(torus, 0.1 * pme.band_limited(torus, seed + 1))
    circ = mf.Circle1D(circle, 1 + 0.1 * pme.band_limited(circle, seed + 1))
    f0 = 0.5 * pme.band_limited(circle, seed + 2)
    cases = [
        (fl.Static(), fl.FlowState(0.5, curved)),
        (fl.Ricci(), fl.FlowState(0.5, curved)),
        (fl.ListExtended(), fl.FlowState(0.5, circ, f0)),
        (fl.HarmonicScalar(fl.AlphaTable((0.0, 1.0), (1.5, 0.5))), fl.FlowState(0.5, circ, f0)),
    ]
    rows = []
    for kind, start in cases:
        geom = start.geom
        dt = 0.05 * min(geom.grid.spacing) ** 2
        u = pme.random_smooth(geom, seed)
        s0 = pme.PMEState(u, p, start)
        s1 = pme.pme_step(s0, kind, dt)
        s2 = pme.pme_step(s1, kind, dt)
        X = np.stack([pme.band_limited(geom.grid, seed + 20 + a) for a in range(geom.dim)])
        for name, (discrete, target) in closed_forms(s0, s1, s2, kind, X).items():
            rows.append((kind.name, name, ZOO_FORMULAS[kind.name][name],
                         float(np.max(np.abs(discrete))), float(np.max(np.abs(discrete - target)))))
    return rows


def mode_flow_zoo(cfg: RunConfig, out: Path) -> Outcome:
    rows = flow_zoo(cfg["geometry.resolution"], cfg["run.seed"])
    write_csv(out / "flow_zoo.csv", tuple(CSV_SCHEMAS["flow_zoo.csv"]), rows)
    summary = {f"{k}.{q}.gap": gap for k, q, _, _, gap in rows}
    summary["status"] = "done"
    return Outcome(0, summary)


MODE_FUNCS = {
    "simulate": mode_simulate,
    "check-harnack": mode_check_harnack,
    "verify-identities": mode_verify_identities,
    "flow-zoo": mode_flow_zoo,
    "convergence": mode_convergence,
}


def output_dir(cfg: RunConfig) -> Path:
    root = cfg["run.output"] or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT
    return Path(root)


def run(cfg: RunConfig, out: Path | None = None) -> Outcome:
    """Execute the configured mode; writes ``summary.txt`` and mode artifacts into ``out``."""
    out = output_dir(cfg) if out is None else Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.as_text())
    head = {"mode": cfg.mode, "seed": cfg["run.seed"]}
    try:
        outcome = MODE_FUNCS[cfg.mode](cfg, out)
    except (fl.MetricExtinction, pme.PositivityError, fl.ConfigurationError, ValueError) as exc:
        outcome = Outcome(2, {"status": "error", "error": f"{type(exc).__name__}: {exc}"})
    summary = {**head, **outcome.summary, "exit_code": outcome.exit_code}
    write_summary(out / "summary.txt", summary)
    return Outcome(outcome.exit_code, summary)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="harnackflow", description=__doc__.splitlines()[0])
    parser.add_argument("config", type=Path, help="config file (key = value with [sections])")
    parser.add_argument("--mode", choices=MODES, help="override [run] mode")
    parser.add_argument("-o", "--output", help=f"output directory (default: ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")
    parser.add_argument("--seed", type=int, help="override [run] seed")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config.read_text())
        if args.mode and args.mode != cfg.mode:
            cfg = replace_mode(cfg, args.mode)
        cfg = cfg.with_overrides(**{"run.seed": args.seed, "run.output": args.output})
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    outcome = run(cfg)
    print(f"{cfg.mode}: {outcome.summary.get('status')} (exit {outcome.exit_code})")
    return outcome.exit_code


def replace_mode(cfg: RunConfig, mode: str) -> RunConfig:
    if mode in PME_MODES and cfg["pme.p"] is None:
        raise ConfigError(f"mode {mode} needs pme.p")
    return cfg.with_overrides(**{"run.mode": mode})


if __name__ == "__main__":
    sys.exit(main())
