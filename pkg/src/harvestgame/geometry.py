"""Network layout and average channel gains.

Base station 0 is the macro BS; 1..M are small cells. A user of BS ``i`` is
uniform in a disk around BS ``i`` (radius ``macro_radius`` for the macro cell,
``sbs_coverage_radius`` for small cells).  ``g_bar[i, j]`` is the average gain
from BS ``j`` to the user of BS ``i``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate


class GeometryError(ValueError):
    """Raised when a layout violates the disk/transmitter preconditions."""


class QuadratureError(RuntimeError):
    pass


def _check_disk(R, r):
    if R < 0 or r <= 0:
        raise GeometryError(f"need R >= 0 and r > 0, got R={R}, r={r}")
    if math.isclose(R, r, rel_tol=1e-12, abs_tol=0.0):
        raise GeometryError(f"transmitter lies on the disk circumference (R = r = {r})")
    if R == 0 and r < 1:
        raise GeometryError(f"co-located case needs r >= 1, got r={r}")


def expected_inv_d4(R, r):
    """E[d^-4] for a user uniform in a disk of radius ``r`` whose centre is ``R`` away.

    The co-located case (``R == 0``) excludes user distances below 1.
    For ``R < r`` the closed form is the same algebraic expression as for
    ``R > r``; the true expectation diverges there, see README.
    """
    R = float(R)
    r = float(r)
    _check_disk(R, r)
    if R == 0:
        return (1.0 - r**-2) / r**2
    return 1.0 / (R * R - r * r) ** 2


def expected_inv_d_alpha(R, r, alpha, epsabs=1e-10, epsrel=1e-10):
    """Numerical E[d^-alpha] by 2-D quadrature over the user disk."""
    R = float(R)
    r = float(r)
    if alpha <= 2:
        raise GeometryError(f"path-loss exponent must exceed 2, got {alpha}")
    _check_disk(R, r)
    if 0 < R < r:
        raise QuadratureError(
            f"E[d^-{alpha}] diverges when the transmitter is inside the disk (R={R} < r={r})"
        )
    half = alpha / 2.0
    dens = 1.0 / (math.pi * r * r)  # (2a / r^2) * (1 / 2pi)

    def integrand(theta, a):
        return a * dens * (R * R + a * a - 2.0 * a * R * math.cos(theta)) ** (-half)

    lo = 1.0 if R == 0 else 0.0
    # the integrand is tiny for far transmitters; scale it so relative and
    # absolute tolerances behave alike
    scale = 1.0 / max(R - r, 1.0) ** alpha if R > 0 else 1.0
    val, err = integrate.dblquad(
        lambda th, a: integrand(th, a) / scale,
        lo, r, 0.0, 2.0 * math.pi,
        epsabs=epsabs, epsrel=epsrel,
    )
    if not np.isfinite(val) or err > max(epsabs, epsrel * abs(val)) * 100:
        raise QuadratureError(f"quadrature did not converge: value={val * scale}, error estimate={err * scale}")
    return val * scale


def expected_pathloss(R, r, alpha):
    if alpha == 4:
        return expected_inv_d4(R, r)
    return expected_inv_d_alpha(R, r, alpha)


@dataclass
class Topology:
    mbs_position: np.ndarray
    sbs_positions: np.ndarray
    macro_radius: float
    sbs_coverage_radius: float
    pathloss_exponent: float = 4.0
    rayleigh_mean_sq: float = 1.0

    def __post_init__(self):
        self.mbs_position = np.asarray(self.mbs_position, dtype=float).reshape(2)
        self.sbs_positions = np.asarray(self.sbs_positions, dtype=float).reshape(-1, 2)
        if self.pathloss_exponent <= 2:
            raise GeometryError("pathloss_exponent must be > 2")
        if self.sbs_coverage_radius < 1:
            raise GeometryError("sbs_coverage_radius must be >= 1")
        if self.macro_radius < 1:
            raise GeometryError("macro_radius must be >= 1")
        if self.rayleigh_mean_sq <= 0:
            raise GeometryError("rayleigh_mean_sq must be > 0")
        d = np.linalg.norm(self.sbs_positions - self.mbs_position, axis=1)
        if np.any(d > self.macro_radius * (1 + 1e-12)):
            raise GeometryError("every small cell must lie inside the macro disk")

    @property
    def num_sbs(self):
        return len(self.sbs_positions)

    @property
    def positions(self):
        """All BS positions, macro first."""
        return np.vstack([self.mbs_position[None, :], self.sbs_positions])

    @property
    def radii(self):
        return np.array([self.macro_radius] + [self.sbs_coverage_radius] * self.num_sbs)

    def to_dict(self):
        return {
            "mbs_position": self.mbs_position.tolist(),
            "sbs_positions": self.sbs_positions.tolist(),
            "macro_radius": self.macro_radius,
            "sbs_coverage_radius": self.sbs_coverage_radius,
            "pathloss_exponent": self.pathloss_exponent,
            "rayleigh_mean_sq": self.rayleigh_mean_sq,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class GainTable:
    g_bar: np.ndarray

    def __post_init__(self):
        self.g_bar = np.asarray(self.g_bar, dtype=float)
        n = self.g_bar.shape
        if len(n) != 2 or n[0] != n[1]:
            raise ValueError("gain table must be square")
        if not np.all(np.isfinite(self.g_bar)) or np.any(self.g_bar <= 0):
            raise ValueError("gains must be finite and strictly positive")

    @property
    def num_sbs(self):
        return self.g_bar.shape[0] - 1

    @property
    def own(self):
        """g_i = g_bar[i, i] for i = 0..M."""
        return np.diag(self.g_bar).copy()

    @property
    def to_sbs_from_mbs(self):
        """g_bar[i, 0], i = 1..M."""
        return self.g_bar[1:, 0].copy()

    @property
    def to_mbs_from_sbs(self):
        """g_bar[0, i], i = 1..M."""
        return self.g_bar[0, 1:].copy()

    @property
    def cotier(self):
        """M x M block with zero diagonal: gain from SBS j to user of SBS i."""
        G = self.g_bar[1:, 1:].copy()
        np.fill_diagonal(G, 0.0)
        return G

    def to_dict(self):
        return {"g_bar": self.g_bar.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["g_bar"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def symmetric(cls, num_sbs, own_sbs, cross_sbs, own_mbs, sbs_to_mbs, mbs_to_sbs):
        """Gain table in which every small cell looks alike."""
        n = num_sbs + 1
        g = np.full((n, n), float(cross_sbs))
        g[0, 0] = own_mbs
        g[0, 1:] = sbs_to_mbs
        g[1:, 0] = mbs_to_sbs
        g[np.arange(1, n), np.arange(1, n)] = own_sbs
        return cls(g)


def build_gain_table(topology: Topology) -> GainTable:
    pos = topology.positions
    radii = topology.radii
    alpha = topology.pathloss_exponent
    n = len(pos)
    g = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            R = 0.0 if i == j else float(np.linalg.norm(pos[i] - pos[j]))
            try:
                g[i, j] = expected_pathloss(R, radii[i], alpha)
            except (GeometryError, QuadratureError) as exc:
                raise type(exc)(f"pair (user of BS {i}, BS {j}): {exc}") from exc
    return GainTable(topology.rayleigh_mean_sq * g)


def _uniform_annulus(rng, n, inner, outer):
    rad = np.sqrt(rng.uniform(inner**2, outer**2, size=n))
    ang = rng.uniform(0.0, 2.0 * np.pi, size=n)
    return np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])


def _placement_ok(p, placed, coverage, macro_radius, min_separation):
    R0 = float(np.hypot(*p))
    # MBS user disk (radius macro_radius) vs this SBS, and this SBS's disk vs MBS
    if math.isclose(R0, macro_radius, rel_tol=1e-9) or math.isclose(R0, coverage, rel_tol=1e-9):
        return False
    if not placed:
        return True
    d = np.linalg.norm(np.asarray(placed) - p, axis=1)
    if np.any(d < min_separation):
        return False
    return not np.any(np.isclose(d, coverage, rtol=1e-9, atol=0.0))


def generate_topology(num_sbs, macro_radius, coverage_radius, seed=0, *,
                      inner_radius=0.0, outer_radius=None, min_separation=0.0,
                      pathloss_exponent=4.0, rayleigh_mean_sq=1.0, max_rounds=10_000):
    """Random small-cell layout, uniform over the annulus [inner_radius, outer_radius]
    around the macro BS (the full macro disk by default)."""
    if num_sbs < 0:
        raise ValueError("num_sbs must be >= 0")
    outer = macro_radius if outer_radius is None else outer_radius
    if not 0 <= inner_radius <= outer <= macro_radius:
        raise ValueError("need 0 <= inner_radius <= outer_radius <= macro_radius")
    rng = np.random.default_rng(seed)
    placed = []
    for k in range(num_sbs):
        for _ in range(max_rounds):
            p = _uniform_annulus(rng, 1, inner_radius, outer)[0]
            if _placement_ok(p, placed, coverage_radius, macro_radius, min_separation):
                placed.append(p)
                break
        else:
            raise GeometryError(
                f"could not place small cell {k} after {max_rounds} draws; "
                "reduce coverage_radius/min_separation or num_sbs"
            )
    return Topology(
        mbs_position=np.zeros(2),
        sbs_positions=np.array(placed).reshape(-1, 2),
        macro_radius=float(macro_radius),
        sbs_coverage_radius=float(coverage_radius),
        pathloss_exponent=pathloss_exponent,
        rayleigh_mean_sq=rayleigh_mean_sq,
    )


def clustered_topology(num_sbs, num_clusters, ring_radius, cluster_radius, coverage_radius, macro_radius,
                       seed=0, pathloss_exponent=4.0, rayleigh_mean_sq=1.0):
    """Hotspot layout: cluster centres evenly spaced on a ring around the macro BS,
    small cells uniform in a disk of ``cluster_radius`` around their centre
    (round-robin assignment)."""
    if num_clusters < 1:
        raise ValueError("num_clusters must be >= 1")
    if ring_radius + cluster_radius > macro_radius:
        raise GeometryError("clusters must fit inside the macro disk")
    rng = np.random.default_rng(seed)
    ang = 2 * np.pi * np.arange(num_clusters) / num_clusters
    centres = ring_radius * np.column_stack([np.cos(ang), np.sin(ang)])
    offs = _uniform_annulus(rng, num_sbs, 0.0, cluster_radius)
    pos = centres[np.arange(num_sbs) % num_clusters] + offs
    return Topology(np.zeros(2), pos.reshape(-1, 2), float(macro_radius), float(coverage_radius),
                    pathloss_exponent, rayleigh_mean_sq)
