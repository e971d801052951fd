"""Slow, independent reference computations used by the tests."""
import itertools

import numpy as np
from scipy import stats


def mc_inv_d4(R, r, n, seed=0, batch=1_000_000):
    """Monte Carlo E[d^-4 ; d >= 1] for a user uniform in a disk of radius r whose centre is R away."""
    rng = np.random.default_rng(seed)
    tot = 0.0
    done = 0
    while done < n:
        k = min(batch, n - done)
        rad = r * np.sqrt(rng.random(k))
        ang = 2 * np.pi * rng.random(k)
        d2 = (R + rad * np.cos(ang)) ** 2 + (rad * np.sin(ang)) ** 2
        tot += np.sum(np.where(d2 >= 1.0, 1.0 / (d2 * d2), 0.0))
        done += k
    return tot / n


def poisson_transition(S, Q, rate=1.0, terms=200):
    """Row s of q(.|s, Q) by summing Pr(X = x) over x with min(s - Q + x, S) = s'."""
    P = np.full((S + 1, S + 1), np.nan)
    for s in range(Q, S + 1):
        row = np.zeros(S + 1)
        for x in range(terms):
            row[min(s - Q + x, S)] += stats.poisson.pmf(x, rate)
        P[s] = row
    return P


def allocation_grid_oracle(A, b, budget, cap, n=20001):
    """Best -(1/2)||Ap - b||^2 over p1 + p2 = budget, 0 <= p <= cap: dense grid then golden refinement."""
    lo = max(0.0, budget - cap)
    hi = min(cap, budget)

    def f(p1):
        p = np.array([p1, budget - p1])
        return -float(np.sum((A @ p - b) ** 2)) / 2

    if hi - lo <= 0:
        return f(lo), np.array([lo, budget - lo])
    xs = np.linspace(lo, hi, n)
    vals = np.array([f(x) for x in xs])
    k = int(np.argmax(vals))
    a, c = xs[max(k - 1, 0)], xs[min(k + 1, n - 1)]
    g = (np.sqrt(5) - 1) / 2
    for _ in range(200):
        x1, x2 = c - g * (c - a), a + g * (c - a)
        if f(x1) >= f(x2):
            c = x2
        else:
            a = x1
    x = 0.5 * (a + c)
    best = max((f(x), x), (vals[k], xs[k]))
    return best[0], np.array([best[1], budget - best[1]])


def mdp_policy_enumeration(r, q, mask, beta):
    """Best deterministic policy of a finite MDP by trying all of them.

    r[s, a] rewards, q[s, a, s'] transitions, mask[s, a] admissible.
    Returns (V*, list of optimal policies)."""
    S1 = r.shape[0]
    choices = [np.flatnonzero(mask[s]) for s in range(S1)]
    best, pols = None, []
    for pol in itertools.product(*choices):
        idx = np.arange(S1), np.array(pol)
        V = np.linalg.solve(np.eye(S1) - beta * q[idx], r[idx])
        if best is None or np.all(V >= best - 1e-12) and np.any(V > best + 1e-12):
            best, pols = V, [pol]
        elif np.allclose(V, best, atol=1e-12, rtol=1e-12):
            pols.append(pol)
    return best, pols


def follower_grid_oracle(A, b, upper, n=2001):
    """argmin ||Ap - b||^2 over the box [0, upper] for one or two small cells by grid search and refinement."""
    M = len(upper)

    def f(p):
        return float(np.sum((A @ p - b) ** 2))

    if M == 1:
        xs = np.linspace(0, upper[0], n)
        vals = [f(np.array([x])) for x in xs]
        k = int(np.argmin(vals))
        best = np.array([xs[k]])
        step = upper[0] / (n - 1)
        for _ in range(60):
            step /= 2
            cand = [best, np.clip(best - step, 0, upper), np.clip(best + step, 0, upper)]
            best = min(cand, key=f)
        return best, f(best)
    g0 = np.linspace(0, upper[0], 301)
    g1 = np.linspace(0, upper[1], 301)
    X, Y = np.meshgrid(g0, g1, indexing="ij")
    P = np.stack([X.ravel(), Y.ravel()], 1)
    vals = np.sum((P @ A.T - b) ** 2, axis=1)
    best = P[int(np.argmin(vals))]
    step = np.asarray(upper) / 300
    for _ in range(80):
        moved = False
        for d in ([1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [-1, -1], [1, -1], [-1, 1]):
            c = np.clip(best + step * np.array(d), 0, upper)
            if f(c) < f(best):
                best, moved = c, True
        if not moved:
            step = step / 2
    return best, f(best)


def fp_step_loops(m_prev, p_prev, R, dR, dt, sigma):
    """Explicit transport + diffusion update written point by point (interior only)."""
    n = len(m_prev)
    m = list(m_prev)
    for k in range(1, n - 1):
        a2 = (np.exp(-R[k + 1] * dR) * p_prev[k + 1] * m_prev[k + 1]
              - np.exp(-R[k - 1] * dR) * p_prev[k - 1] * m_prev[k - 1])
        b2 = (np.exp(-2 * R[k + 1] * dR) * m_prev[k + 1] - 2 * np.exp(-2 * R[k] * dR) * m_prev[k]
              + np.exp(-2 * R[k - 1] * dR) * m_prev[k - 1])
        m[k] = m_prev[k] + dt / (2 * dR) * a2 + sigma**2 * dt / (2 * dR**2) * b2
    return np.array(m)


def hjb_step_loops(U_next, p_row, p_bar, R, dR, dt, sigma, g, lam, lam_bar, N0):
    """Interior of one backward value step, point by point."""
    n = len(U_next)
    U = np.full(n, np.nan)
    c = lam_bar * p_bar + lam * N0
    for k in range(1, n - 1):
        a1 = U_next[k + 1] - 2 * U_next[k] + U_next[k - 1]
        b1 = (p_row[k] * g) ** 2 - c**2
        U[k] = U_next[k] + np.exp(-2 * R[k] * dR) * sigma**2 * dt / (2 * dR**2) * a1 - dt * b1
    return U


def particle_drift(E0, p, dt, steps):
    """Deterministic battery path dE = -p dt, i.e. R = log E drifting at -p e^{-R}."""
    E = E0
    for _ in range(steps):
        E = E - p * dt
    return E
