"""Stage utilities of the macro BS and the CES, and the per-state payoff matrices."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .energy import EnergyConfig, packets_to_power_budget
from .geometry import GainTable
from .qp import InfeasibleBudget, solve_qp


@dataclass
class GameConfig:
    gains: GainTable
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    mbs_power_levels: tuple = (10.0, 20.0)
    target_sinr_mbs: float = 10.0
    target_sinr_sbs: float = 0.1
    noise: float = 1e-8
    sbs_max_power: float = 0.3          # 1.5 mJ per 5 ms slot
    discount: float = 0.9
    initial_state_dist: Optional[np.ndarray] = None

    def __post_init__(self):
        P = tuple(float(p) for p in self.mbs_power_levels)
        if not P:
            raise ValueError("mbs_power_levels must be non-empty")
        if any(p <= 0 for p in P) or any(b <= a for a, b in zip(P, P[1:])):
            raise ValueError("mbs_power_levels must be positive and strictly increasing")
        self.mbs_power_levels = P
        if not 0 < self.discount < 1:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")
        if self.sbs_max_power <= 0:
            raise ValueError("sbs_max_power must be > 0")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        n = self.energy.num_states
        if self.initial_state_dist is None:
            pi = np.zeros(n)
            pi[-1] = 1.0   # CES starts with a full battery
        else:
            pi = np.asarray(self.initial_state_dist, dtype=float)
            if pi.shape != (n,) or np.any(pi < 0) or abs(pi.sum() - 1) > 1e-10:
                raise ValueError("initial_state_dist must be a probability vector over 0..S")
        self.initial_state_dist = pi

    @property
    def num_sbs(self):
        return self.gains.num_sbs

    @property
    def num_states(self):
        return self.energy.num_states

    @property
    def num_powers(self):
        return len(self.mbs_power_levels)

    def budget(self, Q):
        return packets_to_power_budget(Q, self.energy)

    def feasible(self, Q):
        return self.budget(Q) <= self.num_sbs * self.sbs_max_power * (1 + 1e-12)


@dataclass
class Allocation:
    powers: np.ndarray
    objective: float
    kkt_residual: float


def _ces_system(p0, config: GameConfig):
    """A, b with U1 = -(1/M) ||A p - b||^2."""
    g = config.gains
    lam = config.target_sinr_sbs
    A = np.diag(np.diag(g.g_bar)[1:]) - lam * g.cotier
    b = lam * p0 * g.to_sbs_from_mbs
    return A, b


def allocate_energy(Q, p0, config: GameConfig) -> Allocation:
    """Split the Q-packet budget across the small cells to maximise the CES utility."""
    M = config.num_sbs
    B = config.budget(Q)
    if M == 0:
        if B > 0:
            raise InfeasibleBudget("no small cells to receive energy")
        return Allocation(np.zeros(0), 0.0, 0.0)
    if B > M * config.sbs_max_power * (1 + 1e-12):
        raise InfeasibleBudget(f"budget {B} W exceeds {M} x {config.sbs_max_power} W")
    B = min(B, M * config.sbs_max_power)
    A, b = _ces_system(p0, config)
    H = (2.0 / M) * A.T @ A
    c = (2.0 / M) * A.T @ b
    res = solve_qp(H, c, config.sbs_max_power, total=B)
    p = res.x
    obj = -float(np.sum((A @ p - b) ** 2)) / M
    return Allocation(p, obj, res.kkt_residual)


def mbs_interference(powers, config: GameConfig):
    return float(powers @ config.gains.to_mbs_from_sbs) if len(powers) else 0.0


def sbs_interference(powers, p0, config: GameConfig):
    g = config.gains
    return g.cotier @ powers + p0 * g.to_sbs_from_mbs


def _powers(Q, p0, config, allocation):
    if allocation is None:
        allocation = allocate_energy(Q, p0, config)
    return allocation.powers


def utility_mbs(p0, Q, config: GameConfig, allocation: Allocation = None):
    p = _powers(Q, p0, config, allocation)
    g0 = config.gains.g_bar[0, 0]
    return -(p0 * g0 - config.target_sinr_mbs * (mbs_interference(p, config) + config.noise)) ** 2


def utility_ces(p0, Q, config: GameConfig, allocation: Allocation = None):
    p = _powers(Q, p0, config, allocation)
    if len(p) == 0:
        return 0.0
    own = np.diag(config.gains.g_bar)[1:]
    err = p * own - config.target_sinr_sbs * sbs_interference(p, p0, config)
    return -float(np.mean(err**2))


@dataclass
class PayoffTables:
    """Payoff blocks R0[s], R1[s] of shape |P| x (s+1); infeasible Q columns are NaN."""
    R0: list
    R1: list
    U0: np.ndarray                # |P| x (S+1), payoffs by (p0 index, Q)
    U1: np.ndarray
    feasible_q: np.ndarray        # bool over Q = 0..S
    allocations: dict             # (Q, p0 index) -> Allocation

    @property
    def num_states(self):
        return len(self.R0)

    def actions(self, s):
        return np.flatnonzero(self.feasible_q[: s + 1])

    def allocation(self, Q, ip):
        return self.allocations[(int(Q), int(ip))]

    def to_rows(self, config: GameConfig):
        rows = []
        for s in range(self.num_states):
            for ip, p0 in enumerate(config.mbs_power_levels):
                for Q in range(s + 1):
                    if not self.feasible_q[Q]:
                        continue
                    a = self.allocations[(Q, ip)]
                    rows.append([s, p0, Q, self.U0[ip, Q], self.U1[ip, Q], *a.powers.tolist()])
        return rows

    def write_csv(self, path, config: GameConfig):
        M = config.num_sbs
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["state", "p0", "Q", "R0", "R1"] + [f"p{i + 1}" for i in range(M)])
            for row in self.to_rows(config):
                w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def build_payoff_tables(config: GameConfig) -> PayoffTables:
    S = config.energy.battery_capacity
    P = config.mbs_power_levels
    feasible = np.array([config.feasible(Q) for Q in range(S + 1)])
    U0 = np.full((len(P), S + 1), np.nan)
    U1 = np.full((len(P), S + 1), np.nan)
    allocs = {}
    for Q in np.flatnonzero(feasible):
        for ip, p0 in enumerate(P):
            try:
                a = allocate_energy(int(Q), p0, config)
            except Exception as exc:
                raise RuntimeError(f"allocation failed for Q={Q}, p0={p0}: {exc}") from exc
            allocs[(int(Q), ip)] = a
            U0[ip, Q] = utility_mbs(p0, Q, config, a)
            U1[ip, Q] = a.objective
    R0 = [U0[:, : s + 1].copy() for s in range(S + 1)]
    R1 = [U1[:, : s + 1].copy() for s in range(S + 1)]
    return PayoffTables(R0, R1, U0, U1, feasible, allocs)
