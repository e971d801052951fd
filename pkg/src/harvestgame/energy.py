"""CES battery as a finite Markov chain over packet counts 0..S."""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class ArrivalDistribution:
    """Pr(phi = X) for X = 0..S; the last entry holds Pr(phi >= S)."""
    pmf: tuple

    def __post_init__(self):
        p = np.asarray(self.pmf, dtype=float)
        if p.ndim != 1 or len(p) == 0:
            raise ValueError("arrival pmf must be a non-empty vector")
        if np.any(p < 0):
            raise ValueError("arrival pmf entries must be >= 0")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"arrival pmf must sum to 1 (got {p.sum()!r})")
        object.__setattr__(self, "pmf", tuple(float(x) for x in p))

    @property
    def array(self):
        return np.array(self.pmf)

    @property
    def capacity(self):
        return len(self.pmf) - 1

    @classmethod
    def from_pmf(cls, pmf, capacity):
        """Fold or pad an arbitrary pmf over 0,1,2,... onto 0..capacity."""
        p = np.asarray(pmf, dtype=float)
        out = np.zeros(capacity + 1)
        k = min(len(p), capacity + 1)
        out[:k] = p[:k]
        out[capacity] = max(0.0, 1.0 - out[:capacity].sum())
        return cls(tuple(out))

    @classmethod
    def poisson(cls, rate, capacity):
        p = stats.poisson.pmf(np.arange(capacity), rate)
        return cls(tuple(np.append(p, 1.0 - p.sum())))

    @classmethod
    def deterministic(cls, value, capacity):
        p = np.zeros(capacity + 1)
        p[min(value, capacity)] = 1.0
        return cls(tuple(p))

    @classmethod
    def gaussian(cls, mean, std, capacity):
        """Gaussian discretised onto integer bins, tails folded onto 0 and S."""
        edges = np.arange(capacity + 2) - 0.5
        cdf = stats.norm.cdf(edges, loc=mean, scale=std)
        p = np.diff(cdf)
        p[0] += cdf[0]
        p[-1] += 1.0 - cdf[-1]
        p = p / p.sum()
        p[-1] = 1.0 - p[:-1].sum()
        return cls(tuple(p))

    @classmethod
    def parse(cls, text, capacity):
        """``"poisson(1.0)"``, ``"gaussian(3, 1)"``, ``"deterministic(2)"`` or a comma list of probabilities."""
        text = str(text).strip()
        m = re.fullmatch(r"(\w+)\s*\((.*)\)", text)
        if m:
            name, args = m.group(1).lower(), [float(a) for a in m.group(2).split(",") if a.strip()]
            if name == "poisson":
                return cls.poisson(args[0], capacity)
            if name == "gaussian":
                return cls.gaussian(args[0], args[1], capacity)
            if name == "deterministic":
                return cls.deterministic(int(args[0]), capacity)
            raise ValueError(f"unknown arrival distribution {name!r}")
        vals = [float(v) for v in text.replace("[", "").replace("]", "").split(",") if v.strip()]
        return cls.from_pmf(vals, capacity)


@dataclass(frozen=True)
class EnergyConfig:
    battery_capacity: int = 25
    packet_volume: float = 2.5e-3      # J
    slot_duration: float = 5e-3        # s
    arrival: ArrivalDistribution = None
    transfer_loss_fraction: float = 0.0

    def __post_init__(self):
        if self.battery_capacity < 0:
            raise ValueError("battery_capacity must be >= 0")
        if self.packet_volume <= 0:
            raise ValueError("packet_volume must be > 0")
        if self.slot_duration <= 0:
            raise ValueError("slot_duration must be > 0")
        if not 0 <= self.transfer_loss_fraction < 1:
            raise ValueError("transfer_loss_fraction must lie in [0, 1)")
        if self.arrival is None:
            object.__setattr__(self, "arrival", ArrivalDistribution.poisson(1.0, self.battery_capacity))
        elif self.arrival.capacity != self.battery_capacity:
            object.__setattr__(
                self, "arrival", ArrivalDistribution.from_pmf(self.arrival.pmf, self.battery_capacity)
            )

    @property
    def num_states(self):
        return self.battery_capacity + 1


def transition_matrix(config: EnergyConfig, Q: int):
    """Rows s >= Q of q(.|s, Q); rows with s < Q are NaN (action infeasible).

    Overflow beyond S is folded into the last column so every valid row is
    stochastic.
    """
    S = config.battery_capacity
    if not 0 <= Q <= S:
        raise ValueError(f"action Q={Q} outside 0..{S}")
    pmf = config.arrival.array
    P = np.full((S + 1, S + 1), np.nan)
    for s in range(Q, S + 1):
        base = s - Q
        row = np.zeros(S + 1)
        row[base:S] = pmf[: S - base]
        row[S] = max(0.0, 1.0 - row[:S].sum())   # round-off can leave -1e-16
        P[s] = row
    return P


def transition_tensor(config: EnergyConfig):
    """q[s, Q, s'] with zeros for infeasible (s, Q)."""
    S = config.battery_capacity
    q = np.zeros((S + 1, S + 1, S + 1))
    for Q in range(S + 1):
        P = transition_matrix(config, Q)
        q[Q:, Q, :] = P[Q:]
    return q


def step_battery(s, Q, arrival, capacity):
    if Q < 0 or Q > s:
        raise ValueError(f"cannot dispatch Q={Q} packets from a battery holding {s}")
    return min(s - Q + arrival, capacity)


def sample_arrivals(config: EnergyConfig, rng, size=None):
    pmf = config.arrival.array
    return rng.choice(len(pmf), size=size, p=pmf)


def packets_to_power_budget(Q, config: EnergyConfig):
    """Total SBS transmit power (W) funded by Q packets in one slot."""
    if Q < 0:
        raise ValueError("Q must be >= 0")
    return (1.0 - config.transfer_loss_fraction) * config.packet_volume * Q / config.slot_duration
