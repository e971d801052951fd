import json

import numpy as np
import pytest

from harvestgame.mfg import (MfgConfig, MfgConfigError, MfgInstability, average_sinr, fokker_planck_step,
                             gaussian_energy_density, hjb_backward_sweep, lemma2_diagnostic, mean_power,
                             power_update, second_moment, solve_mfg)

import oracles


def small(**kw):
    base = dict(num_sbs=400, r_max=10, dR=0.5, dt=1e-6, t_max=40, m0_mean=20.0, m0_std=8.0)
    base.update(kw)
    return MfgConfig(**base)


def test_static_density_without_drift_or_noise():
    cfg = small(sigma=0.0)
    m = fokker_planck_step(cfg.m0, np.zeros_like(cfg.m0), cfg)
    np.testing.assert_allclose(m, cfg.m0, rtol=1e-10, atol=0)


def test_every_step_normalises():
    cfg = small()
    rng = np.random.default_rng(0)
    m = cfg.m0
    for _ in range(50):
        p = rng.random(len(m)) * cfg.power_cap
        m = fokker_planck_step(m, p, cfg)
        assert abs(m.sum() * cfg.dR - 1) <= 1e-8
        assert np.all(m >= 0) and m[-1] == 0


def test_step_matches_pointwise_stencil():
    cfg = small(t_max=5)
    rng = np.random.default_rng(1)
    p = rng.random(len(cfg.R)) * cfg.power_cap
    m = fokker_planck_step(cfg.m0, p, cfg)
    ref = oracles.fp_step_loops(cfg.m0, p, cfg.R, cfg.dR, cfg.dt, cfg.sigma)
    np.testing.assert_allclose(m[1:-1], np.clip(ref[1:-1], 0, None), rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("k0,c", [(50, 0.5), (56, 1.0), (64, 2.5)])
def test_spike_follows_characteristic(k0, c):
    cfg = MfgConfig(sigma=0.0, dt=0.015, t_max=100)
    R, dR = cfg.R, cfg.dR
    p = np.minimum(np.full(len(R), c), cfg.power_cap)
    p[0] = 0.0
    E_end = oracles.particle_drift(np.exp(R[k0] * dR), c, cfg.dt, 100)
    assert E_end / 5.0 > c          # cap never binds along the path
    target = np.log(E_end) / dR
    m = np.zeros(len(R))
    m[k0] = 1.0 / dR
    for _ in range(100):
        m = fokker_planck_step(m, p, cfg)
    centre = np.sum(R[1:] * m[1:]) / np.sum(m[1:])
    assert abs(centre - target) <= 1.0


def test_mean_power():
    cfg = small()
    assert mean_power(cfg.m0, np.zeros_like(cfg.m0), cfg) == 0.0
    assert mean_power(cfg.m0, np.full_like(cfg.m0, 2.0), cfg) == pytest.approx(
        2.0 * np.sum(cfg.energy * cfg.m0) * cfg.dR, rel=1e-14)
    rng = np.random.default_rng(2)
    p = rng.random(len(cfg.R))
    direct = sum(np.exp(r * cfg.dR) * pi * mi for r, pi, mi in zip(cfg.R, p, cfg.m0)) * cfg.dR
    assert mean_power(cfg.m0, p, cfg) == pytest.approx(direct, rel=1e-12)


def test_value_stays_zero_without_sources():
    cfg = small(noise=0.0)
    U = np.zeros(len(cfg.R))
    for _ in range(10):
        U = hjb_backward_sweep(U, np.zeros_like(U), 0.0, cfg)
    assert np.all(U == 0)


def test_value_pure_source_term():
    cfg = small(sigma=0.0)
    U_next = np.full(len(cfg.R), 3.0)
    p = np.linspace(0, 1, len(cfg.R))
    c = cfg.lam_bar * 0.7 + cfg.target_sinr * cfg.noise
    U = hjb_backward_sweep(U_next, p, 0.7, cfg)
    np.testing.assert_allclose(U[1:-1], 3.0 - cfg.dt * ((p[1:-1] * cfg.own_gain) ** 2 - c**2), rtol=1e-14)


def test_value_step_on_five_points():
    cfg = MfgConfig(r_max=2, dR=0.5, dt=0.01, t_max=3, m0_mean=1.0, m0_std=1.0, num_sbs=50)
    rng = np.random.default_rng(3)
    U_next = rng.normal(size=5)
    p = rng.random(5)
    U = hjb_backward_sweep(U_next, p, 0.3, cfg)
    ref = oracles.hjb_step_loops(U_next, p, 0.3, cfg.R, cfg.dR, cfg.dt, cfg.sigma, cfg.own_gain,
                                 cfg.target_sinr, cfg.lam_bar, cfg.noise)
    np.testing.assert_allclose(U[1:-1], ref[1:-1], rtol=1e-13)
    g = cfg.own_gain
    c = cfg.lam_bar * 0.3 + cfg.target_sinr * cfg.noise
    top = cfg.r_max * cfg.dR
    assert (U[-1] - U[-2]) / cfg.dR == pytest.approx(2 * g * g * np.exp(top) * (p[-1] - c / g), rel=1e-10)
    assert np.exp(top) * (U[1] - U[0]) / cfg.dR / (2 * g * g) == pytest.approx(-c / g, rel=1e-6)   # U[1] - U[0] cancels against O(1) values


def test_power_update_cases():
    cfg = small()
    flat = power_update(np.zeros(len(cfg.R)), 0.0, cfg)
    expect = np.minimum(cfg.target_sinr * cfg.noise / cfg.own_gain, cfg.power_cap)
    np.testing.assert_allclose(flat[1:], expect[1:], rtol=1e-14)
    assert flat[0] == 0.0
    steep = power_update(-1e6 * cfg.energy, 0.0, cfg)
    assert np.all(steep == 0)
    high = power_update(np.zeros(len(cfg.R)), 1e6, cfg)
    np.testing.assert_array_equal(high[1:], cfg.power_cap[1:])


def test_no_incentive_gives_zero_power():
    # the full-battery relation maps p at R_max onto itself, so only cells below R_max - 1 are free
    cfg = small(num_sbs=1, cross_gain=1e-9, noise=0.0, max_iterations=300)
    grid = solve_mfg(cfg)
    assert np.max(grid.p[:, :-2]) <= 1e-10 * np.max(cfg.power_cap)


def test_solver_invariants_and_determinism():
    cfg = small()
    a = solve_mfg(cfg)
    b = solve_mfg(cfg)
    np.testing.assert_array_equal(a.p, b.p)
    np.testing.assert_array_equal(a.m, b.m)
    assert np.all(a.U[-1] == 0)
    assert np.all(a.p >= 0) and np.all(a.p <= cfg.power_cap[None, :] * (1 + 1e-15))
    np.testing.assert_allclose(a.m.sum(axis=1) * cfg.dR, 1.0, atol=1e-8)
    assert np.all(np.diff(second_moment(a, cfg)) <= 1e-9 * second_moment(a, cfg)[0])
    assert np.all(average_sinr(a, cfg) < cfg.target_sinr)


def test_energy_balance_residual_vanishes_for_static_density():
    cfg = small(sigma=0.0)
    from harvestgame.mfg import MfgGrid
    T = cfg.t_max + 1
    m = np.tile(cfg.m0, (T, 1))
    z = np.zeros_like(m)
    grid = MfgGrid(z, m, z, np.zeros(T), 1, 0.0, True, [])
    d = lemma2_diagnostic(grid, cfg)
    assert d["max"] <= 1e-12 * d["E2"][0] / cfg.dt


def test_config_validation():
    with pytest.raises(MfgConfigError, match="dt"):
        MfgConfig(dt=0.01)
    with pytest.raises(MfgConfigError, match="dt"):
        MfgConfig(dR=0.1, dt=0.02)
    with pytest.raises(MfgConfigError, match="relax"):
        MfgConfig(relax_a=0.5, relax_b=0.6)
    with pytest.raises(MfgConfigError, match="m0"):
        MfgConfig(m0=np.ones(81))


def test_instability_reported():
    cfg = small()
    p = np.zeros_like(cfg.m0)
    p[5] = np.inf
    with pytest.raises(MfgInstability, match="diffusion number"):
        fokker_planck_step(cfg.m0, p, cfg)
    with pytest.raises(MfgConfigError, match="unstable"):
        small(dt=0.2)


def test_initial_density():
    m = gaussian_energy_density(40, 0.125)
    assert m[-1] == 0 and m.sum() * 0.125 == pytest.approx(1.0)
    E = np.exp(np.arange(-40, 41) * 0.125)
    assert np.sum(E * m) * 0.125 == pytest.approx(100.0, rel=0.05)


def test_refined_keeps_domain():
    cfg = small()
    f = cfg.refined()
    assert f.dR == cfg.dR / 2 and f.r_max == 2 * cfg.r_max
    assert f.t_max * f.dt == pytest.approx(cfg.t_max * cfg.dt)


def test_exports(tmp_path):
    cfg = small(t_max=5)
    grid = solve_mfg(cfg)
    grid.write_csv(tmp_path / "g.csv", cfg)
    grid.write_mean_power_csv(tmp_path / "p.csv", cfg)
    grid.to_json(tmp_path / "g.json", cfg)
    rows = (tmp_path / "g.csv").read_text().splitlines()
    assert rows[0] == "t,R,energy_uJ,U,m,p_mW" and len(rows) == 1 + 6 * 21
    d = json.loads((tmp_path / "g.json").read_text())
    assert np.array(d["m"]).shape == (6, 21)
