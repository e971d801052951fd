import numpy as np
import pytest

from harvestgame.geometry import GainTable
from harvestgame.stackelberg import (BaselineConfig, SbsBatteryState, _system, followers_response, leader_choice,
                                     mbs_utility, run_baseline, sbs_objective)

import oracles
from conftest import TOY_GAINS

DT = 5e-3


def test_empty_batteries_give_zero():
    g = GainTable(TOY_GAINS)
    p = followers_response(10.0, SbsBatteryState.empty(2, 1e-3), g, 0.5, DT)
    np.testing.assert_array_equal(p, 0.0)


def test_single_cell_hits_target():
    g = GainTable(np.array([[1.0, 0.2], [0.3, 2.0]]))
    p = followers_response(4.0, SbsBatteryState.full(1, 1.0), g, 0.5, DT)
    assert p[0] == pytest.approx(0.5 * 4.0 * 0.3 / 2.0, rel=1e-12)


@pytest.mark.parametrize("stored", [[1e-3, 2e-5], [3e-6, 1e-3], [2e-6, 4e-6]])
def test_binding_battery_against_grid_oracle(stored):
    g = GainTable(TOY_GAINS)
    bat = SbsBatteryState(stored, 1e-3)
    p = followers_response(3.0, bat, g, 1.0, DT)
    A, b = _system(3.0, g, 1.0)
    ref, fref = oracles.follower_grid_oracle(A, b, bat.stored / DT)
    assert sbs_objective(p, 3.0, g, 1.0) <= fref + 1e-10
    np.testing.assert_allclose(p, ref, atol=1e-4)


def test_projected_first_order_conditions():
    rng = np.random.default_rng(0)
    M = 6
    gb = rng.uniform(0.05, 0.3, size=(M + 1, M + 1))
    gb[np.arange(M + 1), np.arange(M + 1)] = rng.uniform(0.8, 1.2, size=M + 1)
    g = GainTable(gb)
    bat = SbsBatteryState(rng.uniform(0, 5e-3, size=M), 5e-3)
    p = followers_response(2.0, bat, g, 0.5, DT)
    A, b = _system(2.0, g, 0.5)
    grad = 2 * A.T @ (A @ p - b)
    up = bat.stored / DT
    step = np.clip(p - grad / np.linalg.norm(2 * A.T @ A, 2), 0, up)
    assert np.max(np.abs(step - p)) <= 1e-8 * max(np.max(np.abs(p)), 1e-300)


def test_leader_choice_cases():
    g = GainTable(TOY_GAINS)
    cfg = BaselineConfig(mbs_power_levels=(1.0, 3.0), target_sinr_mbs=2.0, target_sinr_sbs=0.5, noise=0.5,
                         battery_capacity=1e-3)
    p0, p = leader_choice(SbsBatteryState.empty(2, 1e-3), g, cfg)
    assert p0 == 1.0 and np.all(p == 0)
    one = BaselineConfig(mbs_power_levels=(7.0,))
    assert leader_choice(SbsBatteryState.full(2, 1e-3), g, one)[0] == 7.0
    bat = SbsBatteryState([1e-3, 4e-6], 1e-3)
    p0, p = leader_choice(bat, g, cfg)
    utils = [mbs_utility(q, followers_response(q, bat, g, 0.5, DT), g, 2.0, 0.5) for q in (1.0, 3.0)]
    assert p0 == (1.0, 3.0)[int(np.argmax(utils))]


def test_one_shot_tuple_has_no_profitable_deviation():
    g = GainTable(TOY_GAINS)
    cfg = BaselineConfig(mbs_power_levels=(1.0, 3.0), target_sinr_mbs=2.0, target_sinr_sbs=0.5, noise=0.5)
    bat = SbsBatteryState([1e-3, 4e-6], 1e-3)
    p0, p = leader_choice(bat, g, cfg)
    A, b = _system(p0, g, 0.5)
    _, fref = oracles.follower_grid_oracle(A, b, bat.stored / DT)
    assert sbs_objective(p, p0, g, 0.5) <= fref + 1e-10
    u = mbs_utility(p0, p, g, 2.0, 0.5)
    for q in cfg.mbs_power_levels:
        assert mbs_utility(q, followers_response(q, bat, g, 0.5, DT), g, 2.0, 0.5) <= u + 1e-12


def test_zero_arrivals_drain_to_zero():
    g = GainTable(TOY_GAINS)
    cfg = BaselineConfig(mbs_power_levels=(1.0, 3.0), target_sinr_sbs=2.0, battery_capacity=1e-4)
    tr = run_baseline(g, cfg, 200, harvest=np.zeros((200, 2), dtype=int))
    assert np.all(np.diff(tr.stored, axis=0) <= 0)
    assert np.all(tr.powers[-20:] == 0)


def test_ample_energy_gives_interior_solution():
    g = GainTable(TOY_GAINS)
    cfg = BaselineConfig(mbs_power_levels=(1.0, 3.0), target_sinr_sbs=0.5, battery_capacity=np.inf,
                         packet_volume=1.0, arrival_rate=5.0)
    tr = run_baseline(g, cfg, 50, seed=1)
    for t in range(1, 50):
        A, b = _system(tr.p0[t], g, 0.5)
        np.testing.assert_allclose(tr.powers[t], np.linalg.solve(A, b), rtol=1e-10)


def test_energy_bookkeeping_and_determinism():
    g = GainTable(TOY_GAINS)
    cfg = BaselineConfig(mbs_power_levels=(1.0, 3.0), target_sinr_sbs=1.0)
    a = run_baseline(g, cfg, 300, seed=9)
    b = run_baseline(g, cfg, 300, seed=9)
    np.testing.assert_array_equal(a.powers, b.powers)
    expect = np.clip(a.stored[:-1] - a.powers * cfg.slot_duration + a.harvest * cfg.packet_volume,
                     0.0, cfg.battery_capacity)
    np.testing.assert_array_equal(a.stored[1:], expect)
    assert np.all(a.powers * cfg.slot_duration <= a.stored[:-1] * (1 + 1e-12))


def test_trajectory_csv_matches_policy_schema(tmp_path):
    g = GainTable(TOY_GAINS)
    tr = run_baseline(g, BaselineConfig(), 5)
    tr.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "b.csv").read_text().splitlines()[0] == "t,s,Q,p0,p1,p2,arrivals"


def test_battery_state_validation():
    with pytest.raises(ValueError):
        SbsBatteryState([2e-3], 1e-3)
