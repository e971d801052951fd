"""Mean-field power control for a large population of harvesting small cells.

Finite differences on the log-energy grid R in {-R_max..R_max} (energy
e^{R dR}).  Units on the grid: energy in uJ, time in ms, power in mW
(uJ/ms), so the slot cap e^{R dR}/dT is in mW when dT is in ms.

The scheme is fully explicit, so the time step must resolve the diffusion
e^{-2R} sigma^2 / 2, which is stiffest at the low-energy end of the grid.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)


class MfgConfigError(ValueError):
    pass


class MfgInstability(RuntimeError):
    pass


class MfgDivergence(RuntimeError):
    pass


def gaussian_energy_density(r_max, dR, mean=100.0, std=25.0):
    """Density over the R grid of a Gaussian battery level (uJ) truncated to the grid.

    Includes the Jacobian dE/dR = E, is zero on the top cell and normalised
    so that sum(m) dR = 1.
    """
    R = np.arange(-r_max, r_max + 1)
    E = np.exp(R * dR)
    m = np.exp(-0.5 * ((E - mean) / std) ** 2) * E
    m[-1] = 0.0
    tot = m.sum() * dR
    if tot <= 0:
        raise MfgConfigError("initial battery distribution has no mass on the grid")
    return m / tot


@dataclass
class MfgConfig:
    num_sbs: int = 400
    own_gain: float = 1e-3
    cross_gain: float = 1e-3
    target_sinr: float = 2e-3
    noise: float = 1e-2          # mW (1e-5 W)
    sigma: float = 1.0           # uJ / sqrt(ms)
    r_max: int = 40
    t_max: int = 1000
    dR: float = 0.125
    dt: float = 1.5e-7           # ms
    slot: float = 5.0            # ms
    relax_a: float = 0.9
    relax_b: float = 0.1
    max_iterations: int = 500
    tol: float = 1e-6
    m0: Optional[np.ndarray] = None
    m0_mean: float = 100.0       # uJ, used when m0 is None
    m0_std: float = 25.0

    def __post_init__(self):
        def bad(key, why):
            raise MfgConfigError(f"{key}: {why}")

        if self.num_sbs < 1:
            bad("num_sbs", "must be >= 1")
        for k in ("own_gain", "cross_gain", "dR", "dt", "slot"):
            if not getattr(self, k) > 0:
                bad(k, "must be > 0")
        for k in ("target_sinr", "noise", "sigma"):
            if getattr(self, k) < 0:
                bad(k, "must be >= 0")
        if self.r_max < 2 or self.t_max < 1:
            bad("r_max/t_max", "need r_max >= 2 and t_max >= 1")
        if not self.dR**2 > self.dt:
            bad("dt", f"need (dR)^2 > dt, got dR={self.dR}, dt={self.dt}")
        if self.relax_a < 0 or self.relax_b < 0 or abs(self.relax_a + self.relax_b - 1) > 1e-12:
            bad("relax_a/relax_b", "need a, b >= 0 and a + b = 1")
        if self.max_iterations < 1:
            bad("max_iterations", "must be >= 1")
        nu = self.diffusion_number
        if nu > 1.0:
            bad("dt", f"explicit scheme unstable: sigma^2 dt e^(2 R_max dR) / dR^2 = {nu:.3g} > 1; "
                      f"use dt <= {self.dR**2 / (self.sigma**2 * np.exp(2 * self.r_max * self.dR)):.3g}")
        if self.m0 is None:
            self.m0 = gaussian_energy_density(self.r_max, self.dR, self.m0_mean, self.m0_std)
        else:
            m0 = np.asarray(self.m0, dtype=float)
            if m0.shape != (2 * self.r_max + 1,):
                bad("m0", f"must have {2 * self.r_max + 1} entries")
            if np.any(m0 < 0) or abs(m0.sum() * self.dR - 1) > 1e-8:
                bad("m0", "must be >= 0 with sum(m0) dR = 1")
            self.m0 = m0

    @property
    def diffusion_number(self):
        return self.sigma**2 * self.dt * np.exp(2 * self.r_max * self.dR) / self.dR**2

    @property
    def lam_bar(self):
        return self.target_sinr * self.cross_gain * self.num_sbs

    @property
    def R(self):
        return np.arange(-self.r_max, self.r_max + 1)

    @property
    def energy(self):
        return np.exp(self.R * self.dR)

    @property
    def power_cap(self):
        return self.energy / self.slot

    def refined(self, factor=2):
        """Same physical domain and horizon on a grid `factor` times finer in R and t."""
        d = self.to_dict()
        d.update(r_max=self.r_max * factor, dR=self.dR / factor, dt=self.dt / factor,
                 t_max=self.t_max * factor, m0=None)
        return MfgConfig.from_dict(d)

    def to_dict(self):
        d = asdict(self)
        d["m0"] = None if self.m0 is None else np.asarray(self.m0).tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("m0") is not None:
            d["m0"] = np.asarray(d["m0"], dtype=float)
        return cls(**d)


@dataclass
class MfgGrid:
    U: np.ndarray
    m: np.ndarray
    p: np.ndarray
    p_bar: np.ndarray
    iterations: int = 0
    residual: float = np.inf
    converged: bool = False
    history: list = field(default_factory=list)

    def write_csv(self, path, config: MfgConfig):
        R = config.R
        E = config.energy
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "R", "energy_uJ", "U", "m", "p_mW"])
            for t in range(self.U.shape[0]):
                for k in range(len(R)):
                    w.writerow([t, int(R[k]), repr(float(E[k])), repr(float(self.U[t, k])),
                                repr(float(self.m[t, k])), repr(float(self.p[t, k]))])

    def write_mean_power_csv(self, path, config: MfgConfig):
        sinr = average_sinr(self, config)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "time_ms", "p_bar", "avg_sinr"])
            for t in range(len(self.p_bar)):
                w.writerow([t, repr(t * config.dt), repr(float(self.p_bar[t])), repr(float(sinr[t]))])

    def to_json(self, path, config: MfgConfig):
        with open(path, "w") as fh:
            json.dump({"R": config.R.tolist(), "dR": config.dR, "dt": config.dt,
                       "U": self.U.tolist(), "m": self.m.tolist(), "p": self.p.tolist(),
                       "p_bar": self.p_bar.tolist(), "iterations": self.iterations,
                       "residual": self.residual, "converged": self.converged}, fh)


# ---------------------------------------------------------------------------
# stencils


def fokker_planck_step(m_prev, p_prev, config: MfgConfig):
    """One explicit step of the density transport, then the boundary rows."""
    dR, dt, s2 = config.dR, config.dt, config.sigma**2
    e1 = np.exp(-config.R * dR)
    flux = e1 * p_prev * m_prev                # e^{-R} p m
    w = e1 * e1 * m_prev                       # e^{-2R} m
    m = m_prev.copy()
    A2 = flux[2:] - flux[:-2]
    B2 = w[2:] - 2 * w[1:-1] + w[:-2]
    m[1:-1] = m_prev[1:-1] + dt / (2 * dR) * A2 + s2 * dt / (2 * dR**2) * B2
    if not np.all(np.isfinite(m)) or np.max(np.abs(m)) > 1e6:
        raise MfgInstability(
            f"density blew up (max |m| = {np.max(np.abs(m)):.3g}); "
            f"diffusion number {config.diffusion_number:.3g}, reduce dt"
        )
    m[-1] = 0.0
    m[1:-1] = np.clip(m[1:-1], 0.0, None)
    rest = m[1:].sum()
    m[0] = 1.0 / dR - rest
    if m[0] < 0:
        # interior mass already exceeds one; rescale it and leave the bottom cell empty
        m[0] = 0.0
        m[1:] *= (1.0 / dR) / rest
    return m


def mean_power(m_row, p_row, config: MfgConfig):
    return float(np.sum(config.energy * p_row * m_row) * config.dR)


def _interference(p_bar_t, config):
    return config.lam_bar * p_bar_t + config.target_sinr * config.noise


def hjb_backward_sweep(U_next, p_row, p_bar_t, config: MfgConfig):
    """U(t-1, .) from U(t, .); boundary values from the one-sided gradient relations."""
    dR, dt, g = config.dR, config.dt, config.own_gain
    R = config.R
    c = _interference(p_bar_t, config)
    U = np.empty_like(U_next)
    A1 = U_next[2:] - 2 * U_next[1:-1] + U_next[:-2]
    B1 = (p_row[1:-1] * g) ** 2 - c**2
    U[1:-1] = U_next[1:-1] + np.exp(-2 * R[1:-1] * dR) * config.sigma**2 * dt / (2 * dR**2) * A1 - dt * B1
    top = R[-1] * dR
    # full battery: the power formula holds without the positive part
    dU_top = 2 * g**2 * np.exp(top) * (p_row[-1] - c / g)
    U[-1] = U[-2] + dR * dU_top
    # empty battery: the power formula sits exactly at zero
    dU_bot = -2 * g * c * np.exp(-top)
    U[0] = U[1] - dR * dU_bot
    if not np.all(np.isfinite(U)) or np.max(np.abs(U)) > 1e12:
        raise MfgInstability(f"value function blew up; diffusion number {config.diffusion_number:.3g}")
    return U


def power_update(U_row, p_bar_t, config: MfgConfig):
    dR, g = config.dR, config.own_gain
    c = _interference(p_bar_t, config)
    dU = np.empty_like(U_row)
    dU[1:-1] = (U_row[2:] - U_row[:-2]) / (2 * dR)
    dU[0] = (U_row[1] - U_row[0]) / dR
    dU[-1] = (U_row[-1] - U_row[-2]) / dR
    p = np.maximum(c / g + np.exp(-config.R * dR) * dU / (2 * g**2), 0.0)
    p = np.minimum(p, config.power_cap)
    p[0] = 0.0
    return p


# ---------------------------------------------------------------------------


def forward_sweep(p, config: MfgConfig):
    T = config.t_max
    m = np.empty_like(p)
    m[0] = config.m0
    m[0, -1] = 0.0
    for t in range(1, T + 1):
        m[t] = fokker_planck_step(m[t - 1], p[t - 1], config)
    return m


def backward_sweep(p, p_bar, config: MfgConfig):
    T = config.t_max
    U = np.zeros_like(p)
    for t in range(T, 0, -1):
        U[t - 1] = hjb_backward_sweep(U[t], p[t], p_bar[t], config)
    return U


def initial_power(config: MfgConfig):
    p = np.tile(config.energy, (config.t_max + 1, 1))
    p = np.minimum(p, config.power_cap)
    p[:, 0] = 0.0
    return p


def solve_mfg(config: MfgConfig, p_init=None, raise_on_nonconvergence=False):
    T = config.t_max
    p = initial_power(config) if p_init is None else np.array(p_init, dtype=float)
    a, b = config.relax_a, config.relax_b
    cap = config.power_cap
    history = []
    m = U = p_bar = None
    residual = np.inf
    it = 0
    for it in range(1, config.max_iterations + 1):
        m = forward_sweep(p, config)
        p_bar = np.einsum("tr,r,tr->t", p, config.energy, m) * config.dR
        U = backward_sweep(p, p_bar, config)
        p_new = np.empty_like(p)
        for t in range(T + 1):
            p_new[t] = power_update(U[t], p_bar[t], config)
        p_next = np.minimum(a * p + b * p_new, cap)
        p_next[:, 0] = 0.0
        if not np.all(np.isfinite(p_next)):
            raise MfgDivergence(f"non-finite power at iteration {it}")
        scale = max(np.max(np.abs(p_next)), 1e-300)
        residual = float(np.max(np.abs(p_next - p)) / scale)
        history.append(residual)
        p = p_next
        if residual < config.tol:
            break
    # final consistent forward pass for the returned power
    m = forward_sweep(p, config)
    p_bar = np.einsum("tr,r,tr->t", p, config.energy, m) * config.dR
    U = backward_sweep(p, p_bar, config)
    converged = residual < config.tol
    if not converged:
        msg = f"no convergence after {it} iterations (relative change {residual:.3g})"
        if raise_on_nonconvergence:
            raise MfgDivergence(msg)
        logger.warning(msg)
    return MfgGrid(U, m, p, p_bar, it, residual, converged, history)


# ---------------------------------------------------------------------------
# diagnostics


def second_moment(grid: MfgGrid, config: MfgConfig):
    """E2(t) = sum e^{2R} m dR."""
    return grid.m @ (config.energy**2) * config.dR


def lemma2_diagnostic(grid: MfgGrid, config: MfgConfig):
    """Residual of p_bar(t) = -dE2/dt on the grid, with summary norms."""
    E2 = second_moment(grid, config)
    D = -(E2[1:] - E2[:-1]) / config.dt
    r = D - grid.p_bar[:-1]
    horizon = config.t_max * config.dt
    return {
        "residual": r,
        "max": float(np.max(np.abs(r))),
        "l2": float(np.sqrt(np.sum(r**2) * config.dt / horizon)),
        "E2": E2,
    }


def monotonicity_diagnostic(grid: MfgGrid, config: MfgConfig):
    """Fractions of interior points where dU/dR or dU/dt is positive beyond 1e-6 max|U|."""
    U = grid.U
    eps = 1e-6 * max(np.max(np.abs(U)), 1e-300)
    dR = (U[:, 2:] - U[:, :-2]) / (2 * config.dR)
    dt = (U[1:, :] - U[:-1, :]) / config.dt
    return {"frac_dR_positive": float(np.mean(dR[:-1, :] > eps)),
            "frac_dt_positive": float(np.mean(dt[:, 1:-1] > eps))}


def average_sinr(grid: MfgGrid, config: MfgConfig):
    """Density-weighted SINR g p / (g_bar M p_bar + N0) per time row."""
    mean_p = np.sum(grid.p * grid.m, axis=1) * config.dR
    return config.own_gain * mean_p / (config.cross_gain * config.num_sbs * grid.p_bar + config.noise)
