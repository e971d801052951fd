"""Myopic leader-follower baseline: every small cell harvests into its own battery.

The macro BS leads with p0; the small cells answer with the box-constrained
least-squares powers that best track their SINR targets this slot.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import GainTable, Topology, build_gain_table
from .qp import solve_qp
from .stochastic_game import Trajectory


@dataclass
class SbsBatteryState:
    stored: np.ndarray        # J
    capacity: np.ndarray      # J, may be inf

    def __post_init__(self):
        self.stored = np.asarray(self.stored, dtype=float).copy()
        self.capacity = np.broadcast_to(np.asarray(self.capacity, dtype=float), self.stored.shape).copy()
        if np.any(self.stored < 0) or np.any(self.stored > self.capacity * (1 + 1e-12)):
            raise ValueError("stored energy must lie in [0, capacity]")

    @classmethod
    def full(cls, M, capacity):
        return cls(np.full(M, float(capacity)), capacity)

    @classmethod
    def empty(cls, M, capacity):
        return cls(np.zeros(M), capacity)


@dataclass
class BaselineConfig:
    mbs_power_levels: tuple = (10.0, 20.0)
    target_sinr_mbs: float = 10.0
    target_sinr_sbs: float = 0.1
    noise: float = 1e-8
    slot_duration: float = 5e-3
    packet_volume: float = 2.5e-3 / 60     # J per harvested packet at a small cell
    arrival_rate: float = 1.0
    battery_capacity: float = 1.5e-3       # J
    initial_fill: float = 1.0              # fraction of capacity at t = 0

    def __post_init__(self):
        self.mbs_power_levels = tuple(float(p) for p in self.mbs_power_levels)
        if not self.mbs_power_levels:
            raise ValueError("mbs_power_levels must be non-empty")
        if self.slot_duration <= 0 or self.packet_volume < 0 or self.arrival_rate < 0:
            raise ValueError("slot_duration must be > 0; packet_volume and arrival_rate >= 0")
        if self.battery_capacity <= 0:
            raise ValueError("battery_capacity must be > 0")
        if not 0 <= self.initial_fill <= 1:
            raise ValueError("initial_fill must lie in [0, 1]")


def _system(p0, gains: GainTable, lam1):
    A = np.diag(gains.own[1:]) - lam1 * gains.cotier
    b = lam1 * p0 * gains.to_sbs_from_mbs
    return A, b


def sbs_objective(p, p0, gains, lam1):
    A, b = _system(p0, gains, lam1)
    return float(np.sum((A @ p - b) ** 2))


def _box_kkt_ok(H, c, x, upper, rtol=1e-12):
    g = H @ x - c
    tol = rtol * max(np.max(np.abs(c)), np.max(np.abs(H @ x)), 1e-300)
    lo = x <= 0
    hi = x >= upper
    free = ~(lo | hi)
    return bool(np.all(g[lo] >= -tol) and np.all(g[hi] <= tol) and np.all(np.abs(g[free]) <= tol))


def followers_response(p0, batteries: SbsBatteryState, gains: GainTable, lam1, slot_duration, _cache=None):
    """argmin sum_i (p_i g_i - lam1 I_i)^2 over 0 <= p_i <= E_i / dT."""
    upper = batteries.stored / slot_duration
    M = len(upper)
    if M == 0:
        return np.zeros(0)
    if _cache is not None and p0 in _cache:
        H, c, p_free, L = _cache[p0]
    else:
        A, b = _system(p0, gains, lam1)
        H, c = 2 * A.T @ A, 2 * A.T @ b
        try:
            p_free = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            p_free = None
        L = float(np.linalg.eigvalsh(H)[-1])
        if _cache is not None:
            _cache[p0] = (H, c, p_free, L)
    if not np.any(upper > 0):
        return np.zeros(M)
    if p_free is not None:
        if np.all(p_free >= 0) and np.all(p_free <= upper):
            return p_free
        x0 = np.clip(p_free, 0.0, upper)
        # with weak coupling the clipped free solution is often already optimal
        if _box_kkt_ok(H, c, x0, upper):
            return x0
    else:
        x0 = None
    return solve_qp(H, c, upper, x0=x0, lipschitz=L).x


def mbs_utility(p0, p, gains: GainTable, lam0, noise):
    I0 = float(p @ gains.to_mbs_from_sbs) if len(p) else 0.0
    return -(p0 * gains.g_bar[0, 0] - lam0 * (I0 + noise)) ** 2


def leader_choice(batteries: SbsBatteryState, gains: GainTable, config: BaselineConfig, _cache=None):
    """Macro power maximising its own utility given the followers' reaction; returns (p0, p)."""
    best = None
    for p0 in config.mbs_power_levels:
        p = followers_response(p0, batteries, gains, config.target_sinr_sbs, config.slot_duration, _cache)
        u = mbs_utility(p0, p, gains, config.target_sinr_mbs, config.noise)
        if best is None or u > best[0]:
            best = (u, p0, p)
    return best[1], best[2]


@dataclass
class BaselineTrajectory:
    p0: np.ndarray
    powers: np.ndarray       # horizon x M
    stored: np.ndarray       # (horizon + 1) x M, J at the start of each slot
    harvest: np.ndarray      # horizon x M, packets

    def as_trajectory(self):
        """Same record layout as the stochastic policy; the CES columns are -1 / 0."""
        T = len(self.p0)
        return Trajectory(np.full(T, -1), np.zeros(T, dtype=int), self.p0, self.powers,
                          self.harvest.sum(axis=1))

    def write_csv(self, path):
        self.as_trajectory().write_csv(path)


def run_baseline(gains: GainTable, config: BaselineConfig, horizon, seed=0, harvest=None):
    """Slot loop: decide powers from the stored energy, spend p dT, add this slot's harvest, clip."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if isinstance(gains, Topology):
        gains = build_gain_table(gains)
    M = gains.num_sbs
    rng = np.random.default_rng(seed)
    if harvest is None:
        harvest = rng.poisson(config.arrival_rate, size=(horizon, M))
    cap = config.battery_capacity
    bat = SbsBatteryState(np.full(M, cap * config.initial_fill if np.isfinite(cap) else 0.0), cap)
    cache = {}
    p0s = np.empty(horizon)
    powers = np.empty((horizon, M))
    stored = np.empty((horizon + 1, M))
    stored[0] = bat.stored
    dT = config.slot_duration
    for t in range(horizon):
        p0, p = leader_choice(bat, gains, config, cache)
        p = np.minimum(p, bat.stored / dT)
        p0s[t] = p0
        powers[t] = p
        bat.stored = np.clip(bat.stored - p * dT + harvest[t] * config.packet_volume, 0.0, cap)
        stored[t + 1] = bat.stored
    return BaselineTrajectory(p0s, powers, stored, harvest)
