import math

import pytest

from harnackflow import cli

SMALL_HARNACK = """
# short check on a coarse grid
[run]
mode = check-harnack
seed = 3

[geometry]
resolution = 16

[pme]
p = 2
horizon = 0.3
snapshot_interval = 0.01

[harnack]
t_start = 0.1
pairs = 5
min_pair_gap = 0.05
"""


def files_of(directory):
    return {p.relative_to(directory): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


# -- parsing -------------------------------------------------------------------------

def test_minimal_config_gets_documented_defaults():
    cfg = cli.parse_config("[run]\nmode = simulate\n[pme]\np = 2\n")
    assert cfg.mode == "simulate"
    assert cfg["geometry.backend"] == "torus" and cfg["geometry.resolution"] == 64
    assert cfg["flow.kind"] == "static"
    assert cfg["pme.p"] == 2.0 and cfg["pme.dt"] == "auto" and cfg["pme.horizon"] == 1.0
    assert cfg["harnack.b"] == 2.0 and cfg["harnack.d"] == 2.0 and math.isinf(cfg["harnack.rho"])
    assert cfg["run.seed"] == 0


def test_p_at_most_one_is_rejected_with_line():
    with pytest.raises(cli.ConfigError) as exc:
        cli.parse_config("[run]\nmode = simulate\n\n[pme]\np = 1.0\n")
    assert exc.value.line == 5 and "p > 1" in str(exc.value)


def test_d_below_b_is_rejected_with_line():
    text = "[run]\nmode = check-harnack\n[pme]\np = 2\n[harnack]\nb = 3\nd = 2\n"
    with pytest.raises(cli.ConfigError) as exc:
        cli.parse_config(text)
    assert exc.value.line == 7 and "d >= b" in str(exc.value)


@pytest.mark.parametrize(
    "text, line, fragment",
    [
        ("[run]\nmode = simulate\ncolour = red\n", 3, "unknown key"),
        ("[run]\nmode = simulate\n[plots]\n", 3, "unknown section"),
        ("mode = simulate\n", 1, "outside"),
        ("[run]\nmode = simulate\nmode = flow-zoo\n", 3, "duplicate"),
        ("[run]\nmode = sing\n", 2, "mode"),
        ("[run]\nmode = flow-zoo\n[geometry]\nresolution = many\n", 4, "resolution"),
        ("[run]\nmode = simulate\n[harnack]\nb = 1.5\n[pme]\np=2\n", 4, "b >= 2"),
        ("[run]\nmode = simulate\n[pme]\np = 2\n[flow]\nkind = list\n", 6, "Circle1D"),
    ],
)
def test_config_errors_carry_line_numbers(text, line, fragment):
    with pytest.raises(cli.ConfigError) as exc:
        cli.parse_config(text)
    assert exc.value.line == line
    assert fragment in str(exc.value)


def test_missing_required_keys():
    with pytest.raises(cli.ConfigError, match="run.mode"):
        cli.parse_config("[geometry]\nresolution = 16\n")
    with pytest.raises(cli.ConfigError, match="pme.p"):
        cli.parse_config("[run]\nmode = check-harnack\n")
    # modes without a PME run do not need p
    assert cli.parse_config("[run]\nmode = flow-zoo\n")["pme.p"] is None


def test_config_text_round_trip():
    cfg = cli.parse_config(SMALL_HARNACK)
    again = cli.parse_config(cfg.as_text())
    assert again.values == cfg.values


# -- running -------------------------------------------------------------------------

def test_check_harnack_run_is_deterministic(tmp_path):
    cfg = cli.parse_config(SMALL_HARNACK)
    a, b = tmp_path / "a", tmp_path / "b"
    first = cli.run(cfg, a)
    second = cli.run(cfg, b)
    assert first.exit_code == second.exit_code == 0
    assert first.summary["status"] == "pass"
    assert files_of(a) == files_of(b)
    summary = cli.read_summary(a / "summary.txt")
    assert summary["seed"] == "3" and summary["differential_status"] == "pass"
    assert float(summary["mass_relative_drift"]) < 1e-12


def test_emitted_csvs_parse_under_schema(tmp_path):
    cli.run(cli.parse_config(SMALL_HARNACK), tmp_path)
    series = cli.read_csv(tmp_path / "timeseries.csv")
    assert series[0]["t"] == 0.0 and series[-1]["t"] == pytest.approx(0.3)
    margins = cli.read_csv(tmp_path / "margins.csv")
    assert all(row["min_margin"] >= 0 for row in margins)
    pairs = cli.read_csv(tmp_path / "pairs.csv")
    assert len(pairs) == 5 and all(len(r["x1"]) == 2 and r["status"] == "pass" for r in pairs)


def test_csv_reader_rejects_wrong_columns(tmp_path):
    (tmp_path / "margins.csv").write_text("t,margin\n0.1,2\n")
    with pytest.raises(ValueError):
        cli.read_csv(tmp_path / "margins.csv")


def test_constant_data_passes(tmp_path):
    cfg = cli.parse_config(SMALL_HARNACK + "\n[flow]\nkind = static\n").with_overrides(**{"pme.initial": "constant"})
    out = cli.run(cfg, tmp_path)
    assert out.exit_code == 0 and out.summary["status"] == "pass"


def test_negative_S_is_not_applicable_with_zero_exit(tmp_path):
    cfg = cli.parse_config(SMALL_HARNACK + "\n[flow]\nkind = scaled\nlambda = -1\n")
    out = cli.run(cfg, tmp_path)
    assert out.exit_code == 0 and out.summary["status"] == "not-applicable"
    assert out.summary["hypothesis_S_ok"] is False


def test_solver_errors_give_nonzero_exit(tmp_path):
    text = "[run]\nmode = simulate\n[geometry]\nbackend = sphere\nsphere_radius_sq = 0.1\n[flow]\nkind = ricci\n[pme]\np = 2\nhorizon = 0.1\nsnapshot_interval = 0.01\n"
    out = cli.run(cli.parse_config(text), tmp_path)
    assert out.exit_code == 2 and "MetricExtinction" in out.summary["error"]
    assert cli.read_summary(tmp_path / "summary.txt")["status"] == "error"


def test_simulate_writes_snapshots(tmp_path):
    text = "[run]\nmode = simulate\n[geometry]\nbackend = circle\nresolution = 32\n[flow]\nkind = list\n[pme]\np = 3\nhorizon = 0.05\nsnapshot_interval = 0.01\nsnapshot_files = 3\n"
    out = cli.run(cli.parse_config(text), tmp_path)
    assert out.exit_code == 0
    snaps = sorted((tmp_path / "snapshots").iterdir())
    assert len(snaps) == 3
    header = snaps[-1].read_text().splitlines()[0]
    assert "dimension=1" in header and "kind=list" in header


def test_flow_zoo_rows():
    rows = cli.flow_zoo(n=32)
    table = {(kind, q): (form, gap) for kind, q, form, _, gap in rows}
    assert table[("ricci", "I")][0] == "0" and table[("ricci", "I")][1] < 1e-12
    assert table[("list", "E")][0] == "4 (Lap f - X f)^2"
    assert table[("static", "H")] == ("0", 0.0)


def test_main_exit_codes_and_env_output(tmp_path, monkeypatch, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[run]\nmode = simulate\n[pme]\np = 0.5\n")
    assert cli.main([str(bad)]) == 2
    assert "line 4" in capsys.readouterr().err

    good = tmp_path / "zoo.cfg"
    good.write_text("[run]\nmode = flow-zoo\n[geometry]\nresolution = 16\n")
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "from-env"))
    assert cli.main([str(good), "--seed", "5"]) == 0
    assert cli.read_summary(tmp_path / "from-env" / "summary.txt")["seed"] == "5"
    assert cli.main([str(good), "-o", str(tmp_path / "explicit")]) == 0
    assert (tmp_path / "explicit" / "flow_zoo.csv").exists()
    cli.read_csv(tmp_path / "explicit" / "flow_zoo.csv")


def test_mode_override_needs_p(tmp_path):
    cfg = tmp_path / "zoo.cfg"
    cfg.write_text("[run]\nmode = flow-zoo\n")
    assert cli.main([str(cfg), "--mode", "simulate", "-o", str(tmp_path / "o")]) == 2


def test_verify_identities_on_small_ladder(tmp_path):
    text = "[run]\nmode = verify-identities\n[identities]\nladder = 32, 64, 128\nscenarios = static-flat\n"
    out = cli.run(cli.parse_config(text), tmp_path)
    assert out.exit_code == 0, out.summary
    rows = cli.read_csv(tmp_path / "identities.csv")
    assert {r["identity"] for r in rows} >= {"metric", "pressure", "F"}
