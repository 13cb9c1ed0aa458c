import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facts_def.cli import SweepRow, SweepTable, _brackets, droop_sweep, main, run_command
from facts_def.config import (
    ConfigError,
    apply_overrides,
    parse_config,
    preset,
    preset_names,
    serialize,
)

MINIMAL = """\
[scenario]
name = mine
duration = 12

[tcsc]
strategy = lag
Kp = 1.5
"""


def test_preset_a_ii_values():
    cfg = preset("A-ii")
    assert cfg.tcsc.Kp == 0.0527
    assert (cfg.tcsc.Tw, cfg.tcsc.Td1, cfg.tcsc.Td2) == (10.0, 0.4867, 0.0543)
    assert cfg.tcsc.kc0 == 0.3
    assert cfg.tcsc.strategy == "damping_controller"
    assert preset("A-iii").tcsc.Kp == -0.0527
    assert preset("A-i").tcsc.Kp == 0.0


def test_every_preset_has_a_check():
    for name in preset_names():
        if name == "B-droop(x)":
            continue
        assert preset(name).expect, name


def test_droop_preset_parses_value():
    cfg = preset("B-droop(2.5)")
    assert cfg.statcom.Kdroop == 2.5
    assert cfg.statcom.control == "pi_droop"
    with pytest.raises(KeyError, match="did you mean"):
        preset("A-iv")


def test_minimal_file():
    cfg = parse_config(MINIMAL)
    assert cfg.name == "mine"
    assert cfg.duration == 12.0
    assert cfg.tcsc.strategy == "lag" and cfg.tcsc.Kp == 1.5
    assert cfg.tcsc.branch == "L8-9b"
    assert cfg.statcom is None


def test_empty_file_lists_required_sections():
    with pytest.raises(ConfigError) as err:
        parse_config("")
    assert any("[scenario]" in e for e in err.value.errors)


def test_non_numeric_value_reports_line():
    text = MINIMAL.replace("Kp = 1.5", "Kp = fast")
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.errors == ["line 7: tcsc.Kp = 'fast' is not a valid float"]


def test_unknown_key_suggests_nearest():
    text = MINIMAL + "Tww = 3\n"
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert "line 8" in err.value.errors[0]
    assert "'Tw'" in err.value.errors[0]


def test_all_errors_reported_together():
    text = MINIMAL.replace("Kp = 1.5", "Kp = x\nbranch = L8-9c\nfeedback = L9-10@3") + "\n[stacom]\nbus = 7\n"
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert len(err.value.errors) >= 2
    assert any("stacom" in e and "statcom" in e for e in err.value.errors)


def test_cross_field_validation():
    with pytest.raises(ConfigError, match="unknown branch 'L8-9c'"):
        parse_config(MINIMAL + "branch = L8-9c\n")
    with pytest.raises(ConfigError, match="end bus"):
        parse_config(MINIMAL + "feedback = L9-10@3\n")
    with pytest.raises(ConfigError, match="unknown bus 42"):
        parse_config("[scenario]\npreset = B-constI\n[statcom]\nbus = 42\n")
    with pytest.raises(ConfigError, match="unknown generator"):
        parse_config(MINIMAL + "[disturbance]\ntarget = G9\n")


def test_preset_key_with_overrides():
    cfg = parse_config("[scenario]\npreset = A-ii\nduration = 10\n[tcsc]\nKp = 0.1\n")
    assert cfg.tcsc.Kp == 0.1
    assert cfg.duration == 10.0
    assert cfg.tcsc.Td1 == 0.4867
    assert cfg.expect == {"tcsc": ("sink", "path_dependent")}


@pytest.mark.parametrize("name", ["A-i", "A-ii", "A-iii", "A-alg", "A-lag", "B-constI", "B-prop", "B-droop(1.5)"])
def test_presets_round_trip(name):
    cfg = preset(name)
    assert parse_config(serialize(cfg)) == cfg


@settings(max_examples=30, deadline=None)
@given(
    kp=st.floats(-5, 5, allow_nan=False),
    tc=st.floats(0.01, 2.0),
    dt=st.sampled_from([1e-3, 5e-4, 2e-3]),
    strategy=st.sampled_from(["fixed", "algebraic", "lag", "damping_controller"]),
    magnitude=st.floats(-0.2, 0.2, allow_nan=False),
)
def test_round_trip_property(kp, tc, dt, strategy, magnitude):
    cfg = preset("A-ii")
    cfg.tcsc.Kp, cfg.tcsc.Tc, cfg.tcsc.strategy = kp, tc, strategy
    cfg.dt = dt
    cfg.disturbance.magnitude = magnitude
    assert parse_config(serialize(cfg)) == cfg


def test_overrides():
    cfg = apply_overrides(preset("A-ii"), ["tcsc.Kp=0.2", "scenario.duration=8"])
    assert cfg.tcsc.Kp == 0.2 and cfg.duration == 8.0
    with pytest.raises(ConfigError):
        apply_overrides(preset("A-ii"), ["Kp=0.2"])
    with pytest.raises(ConfigError):
        apply_overrides(preset("A-ii"), ["tcsc.Kp=big"])


def test_cli_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text(MINIMAL.replace("1.5", "lots"))
    assert main(["run", str(bad)]) == 2
    assert "line 7" in capsys.readouterr().err
    assert main(["run", "A-iv"]) == 2


def test_cli_run_writes_outputs(tmp_path, capsys):
    assert main(["run", "A-ii", "--duration", "12", "--out-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "tcsc.label=sink" in out
    assert "status=pass" in out
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["A-ii_summary.txt", "A-ii_tcsc_energy.csv", "A-ii_total_energy.csv", "A-ii_trajectory.csv"]
    header = (tmp_path / "A-ii_tcsc_energy.csv").read_text().splitlines()[1]
    assert header == "t,W_total,W0,W_stored,W_pathdep"


def test_cli_failed_expectation_exits_1(capsys):
    assert main(["run", "A-ii", "--duration", "12", "--override", "tcsc.Kp=-0.0527"]) == 1
    assert "check.tcsc.sink=fail" in capsys.readouterr().out


def test_csv_outputs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        run_command("B-droop(1)", out_dir=out, duration=10.0)
    csvs = sorted(a.glob("*.csv"))
    assert len(csvs) == 3
    for path in csvs:
        assert path.read_bytes() == (b / path.name).read_bytes(), path.name


def test_run_path_study(tmp_path, capsys):
    summary = run_command("path-study", out_dir=tmp_path)
    assert summary.ok
    assert all(abs(v) > 0 for k, v in summary.values.items() if k.endswith(".delta"))
    assert (tmp_path / "path_study.csv").read_text().splitlines()[1] == "alpha,value_I,value_II,delta"
    assert main(["path-study", "--alphas", "1"]) == 0
    assert "alpha=1.value_I=" in capsys.readouterr().out


def test_export_network(tmp_path):
    out = tmp_path / "net.json"
    assert main(["export-network", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["base_mva"] == 100.0
    assert len(data["buses"]) == 12
    assert main(["export-network", "--network", "atlantis"]) == 2


def test_bracket_bookkeeping():
    rows = [SweepRow(k, s, "", 0.0) for k, s in [(0, 2.0), (1, 1.0), (2, -1.0), (3, -2.0)]]
    assert _brackets(rows) == [(1, 2)]
    assert _brackets(rows[2:]) == []
    assert SweepTable(rows, []).monotone
    assert not SweepTable([rows[0], rows[2], rows[1]], []).monotone


def test_single_sign_grid_has_no_bracket():
    table = droop_sweep([2.0, 2.5, 3.0], overrides=["scenario.duration=12"], workers=1)
    assert table.brackets == []
    assert {r.label for r in table.rows} == {"source"}
    with pytest.raises(ValueError):
        droop_sweep([1.0, 0.0, 2.0])
    with pytest.raises(ValueError):
        droop_sweep([1.0, 2.0])
