import numpy as np
import pytest

from harvestgame.energy import EnergyConfig
from harvestgame.geometry import GainTable
from harvestgame.payoff import GameConfig, build_payoff_tables

# Gains well above the paper's path-loss scale so payoffs are O(1)-O(10).
DESK_GAINS = np.array([[1.0, 0.3, 0.2, 0.4],
                       [0.5, 1.0, 0.1, 0.2],
                       [0.3, 0.15, 0.8, 0.1],
                       [0.2, 0.1, 0.25, 1.2]])
TOY_GAINS = np.array([[1.0, 0.4, 0.3],
                      [0.5, 1.0, 0.2],
                      [0.2, 0.3, 0.9]])


def make_game(gains, S, P, lam0, lam1, noise=0.1, pmax=1.0, discount=0.9, **energy):
    e = EnergyConfig(battery_capacity=S, packet_volume=2.5e-3, slot_duration=5e-3, **energy)
    cfg = GameConfig(GainTable(gains), e, mbs_power_levels=P, target_sinr_mbs=lam0, target_sinr_sbs=lam1,
                     noise=noise, sbs_max_power=pmax, discount=discount)
    return cfg, build_payoff_tables(cfg)


@pytest.fixture(scope="session")
def desk_game():
    """S=6, |P|=2, M=3 with nine pure-m equilibria."""
    return make_game(DESK_GAINS, 6, (1.0, 3.0), 6.0, 1.0, pmax=1.5)


@pytest.fixture(scope="session")
def toy_unique():
    """S=3, |P|=2, M=2 with a single equilibrium."""
    return make_game(TOY_GAINS, 3, (1.0, 3.0), 2.0, 1.0)


@pytest.fixture(scope="session")
def toy_multi():
    """S=3, |P|=2, M=2 symmetric instance with four equilibria."""
    g = GainTable.symmetric(2, 1.0, 0.1, 1.0, 0.5, 0.1)
    cfg = GameConfig(g, EnergyConfig(battery_capacity=3), mbs_power_levels=(1.0, 5.0), sbs_max_power=2.0,
                     target_sinr_sbs=1.0)
    return cfg, build_payoff_tables(cfg)
