import csv
import json

import pytest

from harvestgame import cli
from harvestgame.config import ConfigError, ExperimentConfig, dumps, load_config, loads, override, save_config

TOY = """
[geometry]
num_sbs = 2
macro_radius = 20
[energy]
battery_capacity = 1
[sim]
horizon = 50
slots = 200
replications = 3
sweep_values = 2, 3
[mfg]
r_max = 10
dR = 0.5
dt = 1e-6
t_max = 10
m0_mean = 20
m0_std = 8
max_iterations = 5
[compare]
battery_capacity = 10
compare_m = 2, 4
"""


@pytest.fixture
def toy_ini(tmp_path):
    p = tmp_path / "toy.ini"
    p.write_text(TOY)
    return p


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "empty.ini"
    p.write_text("")
    assert load_config(p).snapshot() == ExperimentConfig().snapshot()


def test_round_trip_is_exact(tmp_path, toy_ini):
    cfg = load_config(toy_ini)
    save_config(cfg, tmp_path / "again.ini")
    again = load_config(tmp_path / "again.ini")
    assert again.snapshot() == cfg.snapshot()
    assert dumps(again) == dumps(cfg)


@pytest.mark.parametrize("text,where", [
    ("[game]\ndiscount = 1.5", "game.discount"),
    ("[game]\nbeta = 1.5", "game.discount"),
    ("[game]\nmode = magic", "game.mode"),
    ("[energy]\nbattery_capacity = 2.5", "energy.battery_capacity"),
    ("[geometry]\nnum_sbs = lots", "geometry.num_sbs"),
    ("[mfg]\ndt = 0.01", "mfg.dt"),
    ("[game]\nwhatever = 1", "game.whatever"),
    ("[nonsense]\nx = 1", "nonsense"),
])
def test_bad_values_name_their_key(text, where):
    with pytest.raises(ConfigError, match=where.replace(".", r"\.")):
        loads(text)


def test_override_revalidates():
    cfg = override(ExperimentConfig(), **{"game.mode": "bri"})
    assert cfg.scenario.mode == "bri"
    with pytest.raises(ConfigError):
        override(cfg, **{"game.discount": 2.0})


def test_solve_stochastic_artifacts(tmp_path, toy_ini):
    out = tmp_path / "run"
    assert cli.main(["solve-stochastic", "--config", str(toy_ini), "--seed", "3", "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "solve-stochastic" and man["seed"] == 3
    assert set(man["artifacts"]) == {"payoff_tables.csv", "equilibrium.csv", "trajectory.csv", "summary.json",
                                     "config.ini"}
    assert man["config"]["energy"]["battery_capacity"] == 1
    with open(out / "trajectory.csv") as fh:
        assert len(list(csv.reader(fh))) == 51
    summary = json.loads((out / "summary.json").read_text())
    assert summary["gap"] <= 1e-9
    # the resolved config reproduces the run
    assert load_config(out / "config.ini").snapshot() == man["config"]


def test_usage_and_config_errors(tmp_path, capsys):
    assert cli.main(["frobnicate"]) == 2
    assert cli.main([]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[game]\ndiscount = 1.5\n")
    assert cli.main(["baseline", "--config", str(bad), "--out", str(tmp_path)]) == 3
    assert "game.discount" in capsys.readouterr().err
    assert cli.main(["baseline", "--config", str(tmp_path / "missing.ini")]) == 5


def test_solver_failure_exit_code(tmp_path, capsys):
    ini = tmp_path / "big.ini"
    ini.write_text(TOY + "\n[game]\nenumeration_budget = 1\n")
    assert cli.main(["solve-stochastic", "--config", str(ini), "--out", str(tmp_path / "o")]) == 4
    assert "--mode incremental" in capsys.readouterr().err


@pytest.mark.parametrize("command", cli.COMMANDS)
def test_reruns_are_byte_identical(tmp_path, toy_ini, command):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main([command, "--config", str(toy_ini), "--seed", "9", "--out", str(a)]) == 0
    # second run from the written config.ini, not the original file
    assert cli.main([command, "--config", str(a / "config.ini"), "--seed", "9", "--out", str(b)]) == 0
    ma = json.loads((a / "manifest.json").read_text())["artifacts"]
    mb = json.loads((b / "manifest.json").read_text())["artifacts"]
    assert ma == mb
    for name in ma:
        assert (a / name).read_bytes() == (b / name).read_bytes()
