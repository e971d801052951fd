"""Monte Carlo outage evaluation of the equilibrium and baseline policies, and
the mean-field versus single-CES comparison over small-cell density."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, asdict, replace

import numpy as np
from scipy import stats

from .energy import ArrivalDistribution, EnergyConfig
from .geometry import Topology, build_gain_table, clustered_topology, generate_topology
from .mfg import MfgConfig, average_sinr, solve_mfg
from .payoff import GameConfig, build_payoff_tables
from .stackelberg import BaselineConfig, run_baseline
from .stochastic_game import run_policy, solve_equilibrium

logger = logging.getLogger(__name__)

POLICIES = ("stochastic", "stackelberg")
CSV_COLUMNS = ["value", "method", "sbs_outage", "sbs_outage_ci", "mbs_outage", "mbs_outage_ci",
               "mean_sinr_sbs", "mean_sinr_mbs", "replications", "slots", "seed"]


class SweepError(RuntimeError):
    pass


@dataclass
class ScenarioConfig:
    """Everything needed to build one network instance and both policies."""
    # layout
    num_sbs: int = 10
    layout: str = "uniform"                    # or "clustered"
    num_clusters: int = 4
    ring_radius: float = 13.0
    cluster_radius: float = 1.0
    macro_radius: float = 500.0
    coverage_radius: float = 10.0
    inner_radius: float = 0.0
    outer_radius: float = None
    min_separation: float = 0.0
    pathloss_exponent: float = 4.0
    rayleigh_mean_sq: float = 1.0
    topology_seed: int = 0
    # energy
    battery_capacity: int = 25
    sbs_packet_volume: float = 2.5e-3 / 60     # J, one harvested packet at a small cell
    quanta_ratio: float = 60.0                 # CES packet / small-cell packet
    slot_duration: float = 5e-3
    arrival: str = "poisson(1)"
    transfer_loss_fraction: float = 0.0
    sbs_battery: float = 1.5e-3                # J, per small cell
    # game
    mbs_power_levels: tuple = (10.0, 20.0)
    target_sinr_mbs: float = 10.0
    target_sinr_sbs: float = 0.1
    noise: float = 1e-8
    discount: float = 0.9
    mode: str = "enumerate"
    enumeration_budget: int = 2**20
    # evaluation
    sbs_outage_threshold: float = 0.02
    mbs_outage_threshold: float = 5.0

    def __post_init__(self):
        self.mbs_power_levels = tuple(float(p) for p in self.mbs_power_levels)
        if self.num_sbs < 1:
            raise ValueError("num_sbs must be >= 1")
        if self.quanta_ratio <= 0 or self.sbs_packet_volume <= 0:
            raise ValueError("quanta_ratio and sbs_packet_volume must be > 0")
        if self.sbs_battery <= 0:
            raise ValueError("sbs_battery must be > 0")
        if self.layout not in ("uniform", "clustered"):
            raise ValueError(f"layout must be 'uniform' or 'clustered', got {self.layout!r}")

    @property
    def ces_packet_volume(self):
        return self.quanta_ratio * self.sbs_packet_volume

    def topology(self, seed=None):
        seed = self.topology_seed if seed is None else seed
        if self.layout == "clustered":
            return clustered_topology(self.num_sbs, self.num_clusters, self.ring_radius, self.cluster_radius,
                                      self.coverage_radius, self.macro_radius, seed=seed,
                                      pathloss_exponent=self.pathloss_exponent,
                                      rayleigh_mean_sq=self.rayleigh_mean_sq)
        return generate_topology(
            self.num_sbs, self.macro_radius, self.coverage_radius,
            seed=seed,
            inner_radius=self.inner_radius, outer_radius=self.outer_radius,
            min_separation=self.min_separation, pathloss_exponent=self.pathloss_exponent,
            rayleigh_mean_sq=self.rayleigh_mean_sq,
        )

    def energy_config(self):
        S = self.battery_capacity
        return EnergyConfig(
            battery_capacity=S, packet_volume=self.ces_packet_volume, slot_duration=self.slot_duration,
            arrival=ArrivalDistribution.parse(self.arrival, S), transfer_loss_fraction=self.transfer_loss_fraction,
        )

    def game_config(self, gains):
        return GameConfig(
            gains, self.energy_config(), mbs_power_levels=self.mbs_power_levels,
            target_sinr_mbs=self.target_sinr_mbs, target_sinr_sbs=self.target_sinr_sbs, noise=self.noise,
            sbs_max_power=self.sbs_battery / self.slot_duration, discount=self.discount,
        )

    def baseline_config(self):
        return BaselineConfig(
            mbs_power_levels=self.mbs_power_levels, target_sinr_mbs=self.target_sinr_mbs,
            target_sinr_sbs=self.target_sinr_sbs, noise=self.noise, slot_duration=self.slot_duration,
            packet_volume=self.sbs_packet_volume, arrival_rate=1.0, battery_capacity=self.sbs_battery,
        )

    def with_value(self, parameter, value):
        key = {"M": "num_sbs", "lambda1": "target_sinr_sbs", "λ1": "target_sinr_sbs", "C": "quanta_ratio"}.get(parameter, parameter)
        if key == "num_sbs":
            value = int(value)
        return replace(self, **{key: value})

    def to_dict(self):
        return asdict(self)


@dataclass
class OutageReport:
    method: str
    value: float
    sbs_outage: float
    sbs_outage_ci: float
    mbs_outage: float
    mbs_outage_ci: float
    mean_sinr_sbs: float
    mean_sinr_mbs: float
    replications: int
    slots: int
    seed: int
    per_replication_sbs: np.ndarray = field(repr=False, default=None)
    per_replication_mbs: np.ndarray = field(repr=False, default=None)
    scenario: dict = field(repr=False, default_factory=dict)

    def row(self):
        return [self.value, self.method, self.sbs_outage, self.sbs_outage_ci, self.mbs_outage,
                self.mbs_outage_ci, self.mean_sinr_sbs, self.mean_sinr_mbs, self.replications,
                self.slots, self.seed]

    @property
    def sbs_interval(self):
        return self.sbs_outage - self.sbs_outage_ci, self.sbs_outage + self.sbs_outage_ci


def write_reports_csv(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in reports:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r.row()])


# ---------------------------------------------------------------------------
# instantaneous SINR


def _user_positions(topology: Topology, rng, n_slots):
    pos = topology.positions
    radii = topology.radii
    n = len(pos)
    rad = radii[None, :] * np.sqrt(rng.random((n_slots, n)))
    ang = rng.random((n_slots, n)) * (2 * np.pi)
    return pos[None, :, :] + np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=-1)


def sample_link_gains(topology: Topology, rng, n_slots):
    """G[b, i, j]: instantaneous gain from BS j to the user of BS i; distances floored at 1.

    Single precision: only threshold crossings and means are reported."""
    users = _user_positions(topology, rng, n_slots).astype(np.float32)
    pos = topology.positions.astype(np.float32)
    dx = users[:, :, None, 0] - pos[None, None, :, 0]
    dy = users[:, :, None, 1] - pos[None, None, :, 1]
    d2 = np.maximum(dx * dx + dy * dy, np.float32(1.0))
    fade = rng.standard_exponential(d2.shape, dtype=np.float32)
    fade *= np.float32(topology.rayleigh_mean_sq)
    if topology.pathloss_exponent == 4:
        return fade / (d2 * d2)
    return fade * d2 ** np.float32(-topology.pathloss_exponent / 2)


def instantaneous_sinr(G, p0, powers, noise):
    """SINR of every user given link gains G (B x n x n), macro power p0 (B,) and SBS powers (B x M)."""
    q = np.concatenate([np.asarray(p0, dtype=float)[:, None], powers], axis=1).astype(G.dtype)
    rx = G * q[:, None, :]
    sig = np.einsum("bii->bi", rx).astype(np.float64)
    n = rx.shape[1]
    rx[:, np.arange(n), np.arange(n)] = 0
    interf = rx.sum(axis=2, dtype=np.float64) + noise
    return sig / interf


def _outage_counts(topology, runs, config: ScenarioConfig, rng, chunk):
    """Shared fading draws for every (p0, powers) run; returns per-run
    (sbs outage fraction, mbs outage fraction, mean sbs sinr, mean mbs sinr)."""
    T = len(runs[0][0])
    M = topology.num_sbs
    acc = np.zeros((len(runs), 4))
    for start in range(0, T, chunk):
        stop = min(start + chunk, T)
        G = sample_link_gains(topology, rng, stop - start)
        for k, (p0, P) in enumerate(runs):
            s = instantaneous_sinr(G, p0[start:stop], P[start:stop], config.noise)
            acc[k, 0] += np.count_nonzero(s[:, 1:] < config.sbs_outage_threshold)
            acc[k, 1] += np.count_nonzero(s[:, 0] < config.mbs_outage_threshold)
            acc[k, 2] += s[:, 1:].sum()
            acc[k, 3] += s[:, 0].sum()
    acc[:, [0, 2]] /= T * M
    acc[:, [1, 3]] /= T
    return acc


# ---------------------------------------------------------------------------
# policies


def _policy_runs(policies, topology, config: ScenarioConfig, slots, seed_seq):
    """Per-slot (p0, powers) for each policy on one replication."""
    gains = build_gain_table(topology)
    s_policy, s_base = seed_seq.spawn(2)
    runs = []
    for pol in policies:
        if pol == "stochastic":
            gc = config.game_config(gains)
            tables = build_payoff_tables(gc)
            sol = solve_equilibrium(tables, gc, config.mode, budget=config.enumeration_budget)
            traj = run_policy(sol, gc, slots, seed=np.random.default_rng(s_policy), tables=tables)
            runs.append((traj.p0, traj.powers))
        elif pol == "stackelberg":
            traj = run_baseline(gains, config.baseline_config(), slots, seed=np.random.default_rng(s_base))
            runs.append((traj.p0, traj.powers))
        else:
            raise ValueError(f"unknown policy {pol!r}; expected one of {POLICIES}")
    return runs


def _ci_halfwidth(x, level=0.95):
    n = len(x)
    if n < 2:
        return float("nan")
    return float(stats.t.ppf(0.5 + level / 2, n - 1) * np.std(x, ddof=1) / np.sqrt(n))


def evaluate_policies(policies, config: ScenarioConfig, slots=10_000, replications=20, seed=0,
                      topology=None, pin_topology=True, value=None, chunk=None):
    """Outage reports for several policies evaluated on common random numbers."""
    if slots < 1 or replications < 1:
        raise ValueError("slots and replications must be >= 1")
    master = np.random.SeedSequence(seed)
    reps = master.spawn(replications)
    per = np.zeros((replications, len(policies), 4))
    for r, ss in enumerate(reps):
        s_topo, s_run, s_fade = ss.spawn(3)
        if topology is not None and pin_topology:
            topo = topology
        elif pin_topology:
            topo = config.topology()
        else:
            topo = config.topology(seed=int(s_topo.generate_state(1)[0]))
        runs = _policy_runs(policies, topo, config, slots, s_run)
        M = topo.num_sbs
        ch = chunk or max(1, min(slots, int(2e6 // (M + 1) ** 2)))
        per[r] = _outage_counts(topo, runs, config, np.random.default_rng(s_fade), ch)
    reports = []
    for k, pol in enumerate(policies):
        x = per[:, k]
        reports.append(OutageReport(
            method=pol, value=value, sbs_outage=float(x[:, 0].mean()), sbs_outage_ci=_ci_halfwidth(x[:, 0]),
            mbs_outage=float(x[:, 1].mean()), mbs_outage_ci=_ci_halfwidth(x[:, 1]),
            mean_sinr_sbs=float(x[:, 2].mean()), mean_sinr_mbs=float(x[:, 3].mean()),
            replications=replications, slots=slots, seed=seed,
            per_replication_sbs=x[:, 0].copy(), per_replication_mbs=x[:, 1].copy(), scenario=config.to_dict(),
        ))
    return reports


def evaluate_outage(policy, topology, config: ScenarioConfig, slots=10_000, replications=20, seed=0):
    return evaluate_policies((policy,), config, slots, replications, seed, topology=topology)[0]


def sweep(parameter, values, base: ScenarioConfig, policies=POLICIES, slots=10_000, replications=20,
          seed=0, pin_topology=True, out_csv=None):
    reports = []
    for v in values:
        cfg = base.with_value(parameter, v)
        try:
            reports += evaluate_policies(policies, cfg, slots, replications, seed,
                                         pin_topology=pin_topology, value=v)
        except Exception as exc:
            raise SweepError(f"sweep over {parameter} failed at value {v}: {exc}") from exc
        logger.info("sweep %s=%s done", parameter, v)
    if out_csv is not None:
        write_reports_csv(out_csv, reports)
    return reports


# ---------------------------------------------------------------------------
# mean field versus a single CES


@dataclass
class CesMdpConfig:
    """CES-only model with identical small cells: the CES splits Q packets evenly."""
    battery_capacity: int = 101
    sbs_packet_volume: float = 2.5e-3 / 60   # J
    quanta_ratio: float = 20.0
    slot_duration: float = 5e-3
    arrival: str = "gaussian(1, 1)"
    own_gain: float = 1e-3
    cross_gain: float = 1e-3
    target_sinr: float = 2e-3
    noise: float = 1e-5                      # W
    sbs_battery: float = 150e-6              # J per small cell per slot
    discount: float = 0.9

    @property
    def ces_packet_volume(self):
        return self.quanta_ratio * self.sbs_packet_volume


def ces_only_sinr(Q, M, cfg: CesMdpConfig):
    """g / ((M-1) g_bar + N0 M dT / (Q C K)), zero when nothing is sent."""
    Q = np.asarray(Q, dtype=float)
    with np.errstate(divide="ignore"):
        denom = (M - 1) * cfg.cross_gain + cfg.noise * M * cfg.slot_duration / (Q * cfg.ces_packet_volume)
    return np.where(Q > 0, cfg.own_gain / denom, 0.0)


def solve_ces_mdp(M, cfg: CesMdpConfig):
    """Optimal CES dispatch and its long-run average SINR."""
    from .energy import transition_tensor

    S = cfg.battery_capacity
    ec = EnergyConfig(battery_capacity=S, packet_volume=cfg.ces_packet_volume, slot_duration=cfg.slot_duration,
                      arrival=ArrivalDistribution.parse(cfg.arrival, S))
    q = transition_tensor(ec)
    Q = np.arange(S + 1)
    p = Q * cfg.ces_packet_volume / (M * cfg.slot_duration)
    ok = p <= cfg.sbs_battery / cfg.slot_duration * (1 + 1e-12)
    reward = -(p * cfg.own_gain - cfg.target_sinr * ((M - 1) * cfg.cross_gain * p + cfg.noise)) ** 2
    mask = np.tril(np.ones((S + 1, S + 1), dtype=bool)) & ok[None, :]
    r = np.where(mask, reward[None, :], -np.inf)
    V = np.zeros(S + 1)
    beta = cfg.discount
    for _ in range(100_000):
        Qv = np.where(mask, r + beta * np.einsum("sjt,t->sj", q, V), -np.inf)
        Vn = Qv.max(axis=1)
        # rewards can be ~1e-16, so the stopping rule has to be relative
        done = np.max(np.abs(Vn - V)) * beta / (1 - beta) <= 1e-12 * max(np.max(np.abs(Vn)), 1e-300)
        V = Vn
        if done:
            break
    Qv = np.where(mask, r + beta * np.einsum("sjt,t->sj", q, V), -np.inf)
    act = np.argmax(Qv >= Qv.max(axis=1, keepdims=True) - 1e-15 * np.max(np.abs(V)), axis=1)
    P = q[np.arange(S + 1), act]
    w, v = np.linalg.eig(P.T)
    pi = np.real(v[:, np.argmin(np.abs(w - 1))])
    pi = pi / pi.sum()
    sinr = ces_only_sinr(act, M, cfg)
    return {"policy": act, "stationary": pi, "avg_sinr": float(pi @ sinr), "values": V}


def compare_mfg_vs_mdp(M_values, mfg_base: MfgConfig = None, mdp: CesMdpConfig = None, out_csv=None):
    """Rows (M, method, avg_sinr) for the mean-field and CES-only models."""
    mfg_base = mfg_base or MfgConfig()
    mdp = mdp or CesMdpConfig()
    rows = []
    for M in M_values:
        cfg = MfgConfig.from_dict({**mfg_base.to_dict(), "num_sbs": int(M), "m0": mfg_base.m0})
        grid = solve_mfg(cfg)
        rows.append((int(M), "mfg", float(np.mean(average_sinr(grid, cfg))), grid.converged))
        res = solve_ces_mdp(int(M), mdp)
        rows.append((int(M), "mdp", res["avg_sinr"], True))
    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["M", "method", "avg_sinr", "converged"])
            for row in rows:
                w.writerow([row[0], row[1], repr(row[2]), row[3]])
    return rows
