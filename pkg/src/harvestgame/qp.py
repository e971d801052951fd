"""Convex quadratic programs over boxes, optionally with a fixed total.

    minimise  0.5 x'Hx - c'x   s.t.  0 <= x <= upper,  [sum(x) == total]

Projected gradient with exact line search, followed by an active-set polish
that solves the KKT system on the identified free set exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InfeasibleBudget(ValueError):
    pass


@dataclass
class QPResult:
    x: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    polished: bool


def project_box(y, upper):
    return np.clip(y, 0.0, upper)


def project_capped_simplex(y, total, upper):
    """Euclidean projection of ``y`` onto {0 <= x <= upper, sum(x) = total}."""
    y = np.asarray(y, dtype=float)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), y.shape)
    cap = upper.sum()
    if total < 0 or total > cap * (1 + 1e-12):
        raise InfeasibleBudget(f"total {total} outside [0, {cap}]")
    if total >= cap:
        return upper.copy()
    if total == 0:
        return np.zeros_like(y)
    # h(nu) = sum(clip(y - nu, 0, u)) is piecewise linear and non-increasing;
    # breakpoints at y and y - u
    bp = np.unique(np.concatenate([y, y - upper[np.isfinite(upper)]]))
    h = np.clip(y[None, :] - bp[:, None], 0.0, upper[None, :]).sum(axis=1)
    # h decreasing in bp; find segment with h(bp[k]) >= total >= h(bp[k+1])
    k = np.searchsorted(-h, -total, side="right") - 1
    if k < 0:
        nu = bp[0] - (total - h[0]) / max(np.count_nonzero(np.isinf(upper)), 1)
    elif k >= len(bp) - 1:
        nu = bp[-1]
    else:
        h0, h1 = h[k], h[k + 1]
        nu = bp[k] if h0 == h1 else bp[k] + (h0 - total) * (bp[k + 1] - bp[k]) / (h0 - h1)
    x = np.clip(y - nu, 0.0, upper)
    # remove round-off drift from the sum on the free coordinates
    free = (x > 0) & (x < upper)
    if np.any(free):
        x[free] += (total - x.sum()) / np.count_nonzero(free)
        x = np.clip(x, 0.0, upper)
    return x


def _project(y, upper, total):
    if total is None:
        return project_box(y, upper)
    return project_capped_simplex(y, total, upper)


def kkt_residual(H, c, x, upper, total=None, lipschitz=None):
    """Scale-free stationarity measure ||x - P(x - grad/L)||_inf / ||x||_inf."""
    L = lipschitz if lipschitz is not None else _lipschitz(H)
    g = H @ x - c
    step = _project(x - g / L, upper, total)
    scale = max(np.max(np.abs(x), initial=0.0), np.max(np.abs(step), initial=0.0))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(x - step)) / scale)


def _lipschitz(H):
    if H.shape[0] == 0:
        return 1.0
    L = float(np.linalg.eigvalsh(H)[-1])
    return L if L > 0 else 1.0


def _active_set(H, c, upper, total, x, max_iter=200):
    """Block principal pivoting on the KKT system; returns None on failure."""
    n = len(c)
    g = H @ x - c
    at_lo = (x <= 0) & (g >= 0) if total is None else (x <= 0)
    at_hi = (x >= upper) & (g <= 0) if total is None else (x >= upper)
    at_hi &= ~at_lo
    best_bad, stall = n + 1, 0
    for _ in range(max_iter):
        free = ~(at_lo | at_hi)
        xs = np.zeros(n)
        xs[at_hi] = upper[at_hi]
        rhs = c[free] - H[np.ix_(free, at_hi)] @ upper[at_hi]
        nu = 0.0
        nf = int(free.sum())
        try:
            if total is None:
                if nf:
                    xs[free] = np.linalg.solve(H[np.ix_(free, free)], rhs)
            else:
                if nf == 0:
                    return None
                K = np.zeros((nf + 1, nf + 1))
                K[:nf, :nf] = H[np.ix_(free, free)]
                K[:nf, nf] = 1.0
                K[nf, :nf] = 1.0
                sol = np.linalg.solve(K, np.append(rhs, total - upper[at_hi].sum()))
                xs[free] = sol[:nf]
                nu = sol[nf]
        except np.linalg.LinAlgError:
            return None
        r = H @ xs - c + nu
        tol = 1e-12 * max(np.max(np.abs(c), initial=0.0), np.max(np.abs(H @ xs), initial=0.0), 1e-300)
        bad_lo_free = free & (xs < 0)
        bad_hi_free = free & (xs > upper)
        bad_lo = at_lo & (r < -tol)
        bad_hi = at_hi & (r > tol)
        bad = bad_lo_free | bad_hi_free | bad_lo | bad_hi
        nbad = int(bad.sum())
        if nbad == 0:
            return np.clip(xs, 0.0, upper)
        if nbad < best_bad:
            best_bad, stall = nbad, 0
            swap = bad
        else:
            stall += 1
            swap = np.zeros(n, dtype=bool)
            swap[np.flatnonzero(bad)[-1]] = True
            if stall > 3 * n + 10:
                return None
        at_lo = (at_lo & ~swap) | (swap & bad_lo_free)
        at_hi = (at_hi & ~swap) | (swap & bad_hi_free)
    return None


def solve_qp(H, c, upper, total=None, x0=None, tol=1e-10, max_iter=100_000, polish=True, lipschitz=None):
    H = np.asarray(H, dtype=float)
    c = np.asarray(c, dtype=float)
    n = len(c)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (n,)).copy()
    # work with H normalised to unit spectral norm; objective rescaled at the end
    scale_f = _lipschitz(H) if lipschitz is None else float(lipschitz)
    H = H / scale_f
    c = c / scale_f
    L = 1.0
    if x0 is None:
        x = _project(np.zeros(n), upper, total) if total is not None else np.zeros(n)
    else:
        x = _project(np.asarray(x0, dtype=float), upper, total)
    it = 0
    for it in range(1, max_iter + 1):
        g = H @ x - c
        d = _project(x - g / L, upper, total) - x
        scale = max(np.max(np.abs(x), initial=0.0), 1e-300)
        if np.max(np.abs(d), initial=0.0) <= tol * scale:
            break
        curv = d @ H @ d
        alpha = 1.0 if curv <= 0 else min(1.0, max(0.0, -(g @ d) / curv))
        if alpha == 0.0:
            break
        x = x + alpha * d
        if total is None:
            x = np.clip(x, 0.0, upper)
    polished = False
    if polish:
        xp = _active_set(H, c, upper, total, x)
        if xp is not None:
            f_old = 0.5 * x @ H @ x - c @ x
            f_new = 0.5 * xp @ H @ xp - c @ xp
            if f_new <= f_old + 1e-12 * (abs(f_old) + 1e-300):
                x, polished = xp, True
    return QPResult(
        x=x,
        objective=float(scale_f * (0.5 * x @ H @ x - c @ x)),
        kkt_residual=kkt_residual(H, c, x, upper, total, L),
        iterations=it,
        polished=polished,
    )


def least_squares_qp(A, b):
    """(H, c) such that 0.5 x'Hx - c'x = 0.5 ||Ax - b||^2 - const."""
    return A.T @ A, A.T @ b
