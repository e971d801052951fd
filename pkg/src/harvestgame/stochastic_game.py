"""Single-controller discounted stochastic game between the macro BS and the CES.

Only the CES (dispatch Q) moves the battery state, so with the macro strategy
fixed the CES faces an ordinary discounted MDP.  An equilibrium candidate is
certified through the bilinear gap

    gap = m (R0 + R1) x - pi' phi1 - 1' xi,

which is zero exactly at Nash pairs.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .energy import sample_arrivals, step_battery, transition_tensor
from .payoff import GameConfig, PayoffTables

logger = logging.getLogger(__name__)

FEAS_TOL = 1e-6
GAP_TOL = 1e-6
BELLMAN_TOL = 1e-9


class SolverError(RuntimeError):
    pass


class EnumerationBudgetExceeded(SolverError):
    pass


class BestResponseCycle(SolverError):
    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


class NoEquilibriumFound(SolverError):
    pass


class InfeasibleCandidate(ValueError):
    pass


@dataclass
class StrategyPair:
    m: np.ndarray   # (S+1) x |P|
    n: np.ndarray   # (S+1) x (S+1), row s supported on 0..s

    def validate(self, feasible_q=None, tol=1e-10):
        for name, a in (("m", self.m), ("n", self.n)):
            if np.any(a < -tol):
                raise ValueError(f"{name} has negative entries")
            if np.any(np.abs(a.sum(axis=1) - 1) > tol):
                raise ValueError(f"{name} rows must sum to 1")
        S1 = self.n.shape[0]
        allowed = np.tril(np.ones((S1, S1), dtype=bool))
        if feasible_q is not None:
            allowed &= feasible_q[None, :]
        if np.any(self.n[~allowed] > tol):
            raise ValueError("n puts mass on infeasible actions")

    def is_pure(self):
        return bool(np.all(np.isclose(self.m.max(axis=1), 1)) and np.all(np.isclose(self.n.max(axis=1), 1)))


@dataclass
class EquilibriumSolution:
    strategies: StrategyPair
    ces_values: np.ndarray        # phi1 over states
    mbs_state_payoffs: np.ndarray  # xi over states
    occupancy: np.ndarray         # x[s, j]
    gap: float
    mode: str = "enumerate"
    candidates_checked: int = 0
    equilibria_found: int = 0
    all_values: list = field(default_factory=list)   # pi'phi1 of every equilibrium found
    tables: PayoffTables = field(default=None, repr=False)

    @property
    def ces_value(self):
        return float(self._pi @ self.ces_values) if hasattr(self, "_pi") else float("nan")

    def write_csv(self, path, config: GameConfig):
        S1 = config.num_states
        P = config.mbs_power_levels
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["state"] + [f"m_{p:g}" for p in P] + [f"n_{j}" for j in range(S1)] + ["phi1", "xi"])
            for s in range(S1):
                w.writerow(
                    [s]
                    + [repr(float(v)) for v in self.strategies.m[s]]
                    + [repr(float(v)) for v in self.strategies.n[s]]
                    + [repr(float(self.ces_values[s])), repr(float(self.mbs_state_payoffs[s]))]
                )


# ---------------------------------------------------------------------------
# MDP machinery


class _Game:
    """Dense arrays shared by the solvers."""

    def __init__(self, tables: PayoffTables, config: GameConfig):
        self.tables = tables
        self.config = config
        S1 = config.num_states
        self.S1 = S1
        self.beta = config.discount
        self.pi = config.initial_state_dist
        self.q = transition_tensor(config.energy)                       # [s, j, s']
        self.mask = np.tril(np.ones((S1, S1), dtype=bool)) & tables.feasible_q[None, :]
        self.U0 = np.nan_to_num(tables.U0, nan=0.0)                       # [p, j]
        self.U1 = np.nan_to_num(tables.U1, nan=0.0)
        scale = max(np.max(np.abs(self.U0)), np.max(np.abs(self.U1)), 1e-300)
        self.tie_tol = 1e-12 * scale / (1 - self.beta)

    def ces_rewards(self, m):
        r = m @ self.U1                                                   # [s, j]
        return np.where(self.mask, r, -np.inf)

    def q_values(self, r, V):
        return np.where(self.mask, r + self.beta * np.einsum("sjt,t->sj", self.q, V), -np.inf)

    def greedy(self, Qv):
        best = Qv.max(axis=1, keepdims=True)
        ok = Qv >= best - self.tie_tol
        j = np.argmax(ok, axis=1)                                         # smallest tied index
        n = np.zeros((self.S1, self.S1))
        n[np.arange(self.S1), j] = 1.0
        return n

    def chain(self, n):
        P = np.einsum("sj,sjt->st", n, self.q)
        return P

    def evaluate(self, n, r):
        P = self.chain(n)
        rn = np.sum(np.where(self.mask, n * np.where(self.mask, r, 0.0), 0.0), axis=1)
        return np.linalg.solve(np.eye(self.S1) - self.beta * P, rn)

    def occupancy(self, n):
        P = self.chain(n)
        d = np.linalg.solve((np.eye(self.S1) - self.beta * P).T, self.pi)
        return d[:, None] * n

    def solve_mdp(self, m, tol=BELLMAN_TOL, max_iter=100_000):
        """Value iteration to the Bellman tolerance, then policy-iteration polish."""
        r = self.ces_rewards(m)
        V = np.zeros(self.S1)
        for _ in range(max_iter):
            Vn = self.q_values(r, V).max(axis=1)
            diff = np.max(np.abs(Vn - V))
            V = Vn
            if diff * self.beta / (1 - self.beta) <= tol:
                break
        n = self.greedy(self.q_values(r, V))
        for _ in range(100):
            V = self.evaluate(n, r)
            n_new = self.greedy(self.q_values(r, V))
            if np.array_equal(n_new, n):
                break
            n = n_new
        return n, V, r

    def bellman_residual(self, V, r):
        return float(np.max(np.abs(self.q_values(r, V).max(axis=1) - V)))

    def mbs_scores(self, n):
        """scores[s, p] = sum_j U0[p, j] n[s, j]."""
        return n @ self.U0.T

    def H_residual(self, x):
        """x'H - pi'."""
        inflow = np.einsum("sj,sjt->t", x, self.q)
        return x.sum(axis=1) - self.beta * inflow - self.pi


# ---------------------------------------------------------------------------
# best responses


def ces_best_response(m, tables: PayoffTables, config: GameConfig):
    """Pure optimal CES policy against macro strategy ``m``; returns (n, phi1, x)."""
    G = _Game(tables, config)
    n, V, _ = G.solve_mdp(np.asarray(m, dtype=float))
    return n, V, G.occupancy(n)


def mbs_best_response(n, tables: PayoffTables, config: GameConfig):
    G = _Game(tables, config)
    return _mbs_br(G, np.asarray(n, dtype=float))


def _mbs_br(G, n):
    sc = G.mbs_scores(n)
    best = sc.max(axis=1, keepdims=True)
    tol = 1e-12 * max(np.max(np.abs(G.U0)), 1e-300)
    ip = np.argmax(sc >= best - tol, axis=1)
    m = np.zeros((G.S1, G.config.num_powers))
    m[np.arange(G.S1), ip] = 1.0
    return m


def mbs_vertex_power(n_s, s, config: GameConfig):
    """Unconstrained maximiser of the macro state payoff when all SBS-to-macro-user gains are equal."""
    g = config.gains
    g0 = g.g_bar[0, 0]
    gs = float(np.mean(g.to_mbs_from_sbs)) if config.num_sbs else 0.0
    e = config.energy
    scale = (1 - e.transfer_loss_fraction) * e.packet_volume / e.slot_duration
    j = np.arange(s + 1)
    return config.target_sinr_mbs * float(np.sum((scale * gs * j + config.noise) * n_s[: s + 1])) / g0


# ---------------------------------------------------------------------------
# certification


def _solution_from(G, m, n, mode):
    V, r = None, None
    _, V, r = G.solve_mdp(m)
    x = G.occupancy(n)
    xi = np.max(x @ G.U0.T, axis=1)                       # max_p sum_j U0[p,j] x[s,j]
    sol = EquilibriumSolution(
        strategies=StrategyPair(m, n),
        ces_values=V,
        mbs_state_payoffs=xi,
        occupancy=x,
        gap=0.0,
        mode=mode,
        tables=G.tables,
    )
    sol.gap = equilibrium_gap(sol, G.tables, G.config, _game=G)
    sol._pi = G.pi
    return sol


def equilibrium_gap(candidate: EquilibriumSolution, tables: PayoffTables, config: GameConfig, _game=None):
    G = _game or _Game(tables, config)
    m = candidate.strategies.m
    x = candidate.occupancy
    phi = candidate.ces_values
    xi = candidate.mbs_state_payoffs
    # H phi1 >= R1' m
    r = G.ces_rewards(m)
    slack = phi[:, None] - G.beta * np.einsum("sjt,t->sj", G.q, phi) - r
    worst = np.min(np.where(G.mask, slack, np.inf))
    if worst < -FEAS_TOL:
        s, j = np.unravel_index(np.argmin(np.where(G.mask, slack, np.inf)), slack.shape)
        raise InfeasibleCandidate(f"H phi1 >= R1'm violated at (s={s}, Q={j}) by {-worst:.3g}")
    res = np.max(np.abs(G.H_residual(x)))
    if res > FEAS_TOL:
        raise InfeasibleCandidate(f"x'H = pi' violated by {res:.3g}")
    if np.any(x < -FEAS_TOL) or np.any(np.abs(x[~G.mask]) > FEAS_TOL):
        raise InfeasibleCandidate("occupancy x must be >= 0 and supported on feasible actions")
    over = np.max(x @ G.U0.T - xi[:, None])
    if over > FEAS_TOL:
        raise InfeasibleCandidate(f"R0^s x(s) <= xi_s violated by {over:.3g}")
    if np.any(np.abs(m.sum(axis=1) - 1) > FEAS_TOL) or np.any(m < -FEAS_TOL):
        raise InfeasibleCandidate("m(s) must be a probability vector")
    total = np.sum((m @ (G.U0 + G.U1)) * x)
    return float(total - G.pi @ phi - xi.sum())


def deviation_report(solution: EquilibriumSolution, tables: PayoffTables, config: GameConfig):
    """Largest gain from a unilateral pure deviation (macro per state) and the CES Bellman residual."""
    G = _Game(tables, config)
    m, n = solution.strategies.m, solution.strategies.n
    sc = G.mbs_scores(n)
    cur = np.sum(sc * m, axis=1)
    mbs_gain = float(np.max(sc.max(axis=1) - cur))
    r = G.ces_rewards(m)
    V = G.evaluate(n, r)
    return {"mbs_deviation_gain": mbs_gain, "ces_bellman_residual": G.bellman_residual(V, r)}


# ---------------------------------------------------------------------------
# solvers


def _support_n(G, m, A_opt):
    """CES state strategies on the optimal action sets making m a macro best response, or None."""
    n = np.zeros((G.S1, G.S1))
    tol = 1e-12 * max(np.max(np.abs(G.U0)), 1e-300)
    for s in range(G.S1):
        acts = np.flatnonzero(A_opt[s])
        ms = m[s]
        # payoff advantage of the prescribed mix over each pure macro deviation, per CES action
        adv = (ms @ G.U0[:, acts])[None, :] - G.U0[:, acts]              # [p, a]
        ok = np.all(adv >= -tol, axis=0)
        if np.any(ok):
            n[s, acts[np.argmax(ok)]] = 1.0
            continue
        # mixed CES action at this state: maximise the worst advantage
        k = len(acts)
        c = np.zeros(k + 1)
        c[-1] = -1.0
        A_ub = np.hstack([-adv, np.ones((adv.shape[0], 1))])
        A_eq = np.append(np.ones(k), 0.0)[None, :]
        sc = max(np.max(np.abs(adv)), 1e-300)
        lp = optimize.linprog(c, A_ub=A_ub / sc, b_ub=np.zeros(adv.shape[0]), A_eq=A_eq, b_eq=[1.0],
                              bounds=[(0, None)] * k + [(None, None)], method="highs")
        if lp.status != 0 or lp.x[-1] < -1e-9:
            return None
        w = np.clip(lp.x[:k], 0, None)
        n[s, acts] = w / w.sum()
    return n


def _equilibrium_for_pure_m(G, m):
    """CES-optimal strategy certifying pure macro strategy m as an equilibrium, or None."""
    n_greedy, V, r = G.solve_mdp(m)
    Qv = G.q_values(r, V)
    A_opt = G.mask & (Qv >= V[:, None] - max(G.tie_tol, 1e-12 * np.max(np.abs(V), initial=0.0)))
    n = _support_n(G, m, A_opt)
    if n is None:
        return None, V
    return n, V


def solve_equilibrium(tables: PayoffTables, config: GameConfig, mode="enumerate", *,
                      budget=2**20, seed=0, epsilon=1e-6, max_rounds=200, seeds=4, workers=1):
    G = _Game(tables, config)
    if mode == "enumerate":
        return _enumerate(G, budget, workers)
    if mode in ("best-response-iteration", "bri"):
        return _best_response_iteration(G, seed, max_rounds)
    if mode == "incremental":
        return _incremental(G, seed, epsilon, max_rounds, seeds)
    raise ValueError(f"unknown mode {mode!r}")


def _pure_m(idx, nP, S1):
    """The idx-th pure macro strategy in lexicographic order."""
    digits = np.zeros(S1, dtype=int)
    for s in range(S1 - 1, -1, -1):
        idx, digits[s] = divmod(idx, nP)
    return np.eye(nP)[digits]


def _enum_chunk(G, start, stop):
    found = []
    nP = G.config.num_powers
    for k in range(start, stop):
        n, V = _equilibrium_for_pure_m(G, _pure_m(k, nP, G.S1))
        if n is not None:
            found.append((k, float(G.pi @ V)))
    return found


def _enumerate(G, budget, workers=1):
    nP = G.config.num_powers
    count = nP**G.S1
    if count > budget:
        raise EnumerationBudgetExceeded(f"{nP}^{G.S1} = {count} pure macro strategies exceed budget {budget}")
    if workers > 1 and count > 64:
        from concurrent.futures import ProcessPoolExecutor
        edges = np.linspace(0, count, 4 * workers + 1).astype(int)
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_enum_chunk, [G] * (len(edges) - 1), edges[:-1], edges[1:]))
        found = [f for part in parts for f in part]
    else:
        found = _enum_chunk(G, 0, count)
    if not found:
        raise NoEquilibriumFound(f"no pure-macro equilibrium among {count} candidates")
    # lexicographic order is preserved, so strict improvement keeps the smallest m on ties
    best = None
    for k, val in found:
        if best is None or val > best[1] + 1e-12 * max(abs(val), 1e-300):
            best = (k, val)
    m = _pure_m(best[0], nP, G.S1)
    n, _ = _equilibrium_for_pure_m(G, m)
    sol = _solution_from(G, m, n, "enumerate")
    sol.candidates_checked = count
    sol.equilibria_found = len(found)
    sol.all_values = [v for _, v in found]
    return sol


def _bri_from(G, m, max_rounds):
    seen = {}
    trace = []
    tol = 1e-12 * max(np.max(np.abs(G.U0)), 1e-300)
    for k in range(max_rounds):
        key = tuple(np.argmax(m, axis=1))
        if key in seen:
            cyc = trace[seen[key]:]
            raise BestResponseCycle(f"best responses cycle with period {len(cyc)}", cyc)
        seen[key] = len(trace)
        trace.append(key)
        n, _, _ = G.solve_mdp(m)
        sc = G.mbs_scores(n)
        # stop as soon as m is already a best response (ties included)
        if np.all(np.sum(sc * m, axis=1) >= sc.max(axis=1) - tol):
            return _solution_from(G, m, n, "best-response-iteration"), k + 1
        m = _mbs_br(G, n)
    raise BestResponseCycle(f"no fixed point within {max_rounds} rounds", trace)


def _best_response_iteration(G, seed, max_rounds):
    rng = np.random.default_rng(seed)
    nP = G.config.num_powers
    m = np.eye(nP)[rng.integers(nP, size=G.S1)]
    sol, k = _bri_from(G, m, max_rounds)
    sol.candidates_checked = k
    sol.equilibria_found = 1
    sol.all_values = [float(G.pi @ sol.ces_values)]
    return sol


def _incremental(G, seed, epsilon, max_rounds, seeds):
    """Repeated local solves of the CES-favouring program, each demanding a better CES value."""
    nP = G.config.num_powers
    S1 = G.S1
    pairs = np.argwhere(G.mask)
    nx = len(pairs)
    scale = max(np.max(np.abs(G.U0)), np.max(np.abs(G.U1)), 1e-300)
    U0 = G.U0 / scale
    U1 = G.U1 / scale
    nm = S1 * nP
    sl_x = slice(nm, nm + nx)
    sl_phi = slice(nm + nx, nm + nx + S1)
    sl_xi = slice(nm + nx + S1, nm + nx + 2 * S1)
    nz = nm + nx + 2 * S1

    # linear constraint blocks
    qx = G.q[pairs[:, 0], pairs[:, 1], :]                         # [pair, s']
    Heq = np.zeros((S1, nz))                                       # x'H = pi'
    for k, (s, j) in enumerate(pairs):
        Heq[s, nm + k] += 1.0
        Heq[:, nm + k] -= G.beta * qx[k]
    Meq = np.zeros((S1, nz))
    for s in range(S1):
        Meq[s, s * nP:(s + 1) * nP] = 1.0
    # H phi - R1'm >= 0 per pair
    Aphi = np.zeros((nx, nz))
    for k, (s, j) in enumerate(pairs):
        Aphi[k, sl_phi.start + s] += 1.0
        Aphi[k, sl_phi] -= G.beta * qx[k]
        Aphi[k, s * nP:(s + 1) * nP] -= U1[:, j]
    # xi_s - sum_j U0[p, j] x[s, j] >= 0
    Axi = np.zeros((S1 * nP, nz))
    for s in range(S1):
        for p in range(nP):
            row = s * nP + p
            Axi[row, sl_xi.start + s] = 1.0
            for k in np.flatnonzero(pairs[:, 0] == s):
                Axi[row, nm + k] -= U0[p, pairs[k, 1]]
    W = U0 + U1

    def gap(z):
        m = z[:nm].reshape(S1, nP)
        x = z[sl_x]
        return float(np.sum((m[pairs[:, 0]] * W[:, pairs[:, 1]].T).sum(axis=1) * x)
                     - G.pi @ z[sl_phi] - z[sl_xi].sum())

    def gap_grad(z):
        m = z[:nm].reshape(S1, nP)
        x = z[sl_x]
        gz = np.zeros(nz)
        gm = np.zeros((S1, nP))
        np.add.at(gm, pairs[:, 0], W[:, pairs[:, 1]].T * x[:, None])
        gz[:nm] = gm.ravel()
        gz[sl_x] = (m[pairs[:, 0]] * W[:, pairs[:, 1]].T).sum(axis=1)
        gz[sl_phi] = -G.pi
        gz[sl_xi] = -1.0
        return gz

    c_obj = np.zeros(nz)
    c_obj[sl_phi] = -G.pi
    bounds = [(0, 1)] * nm + [(0, None)] * nx + [(None, None)] * (2 * S1)

    def local_solve(z0, floor):
        cons = [
            {"type": "eq", "fun": lambda z: Heq @ z - G.pi, "jac": lambda z: Heq},
            {"type": "eq", "fun": lambda z: Meq @ z - 1.0, "jac": lambda z: Meq},
            {"type": "ineq", "fun": lambda z: Aphi @ z, "jac": lambda z: Aphi},
            {"type": "ineq", "fun": lambda z: Axi @ z, "jac": lambda z: Axi},
        ]
        if floor is not None:
            cons.append({"type": "ineq", "fun": lambda z: -c_obj @ z - floor, "jac": lambda z: -c_obj})
        # augmented Lagrangian on the bilinear gap; the linear constraints stay explicit
        z, lam, mu = z0, 0.0, 10.0
        prev, stall = np.inf, 0
        tol = GAP_TOL / scale * 1e-2
        for _ in range(40):
            res = optimize.minimize(
                lambda z: c_obj @ z - lam * gap(z) + 0.5 * mu * gap(z) ** 2,
                z,
                jac=lambda z: c_obj + (mu * gap(z) - lam) * gap_grad(z),
                bounds=bounds, constraints=cons, method="SLSQP",
                options={"maxiter": 500, "ftol": 1e-14},
            )
            z = res.x
            gz = gap(z)
            logger.debug("local solve mu=%g status=%s gap=%.3g value=%.6g", mu, res.status, gz, -c_obj @ z)
            if abs(gz) <= tol:
                return z
            if abs(gz - prev) <= 1e-3 * abs(gz):
                stall += 1
                if stall >= 3:
                    break
            else:
                stall = 0
            prev = gz
            lam -= mu * gz
            mu = min(mu * 2.0, 1e8)
        return z if abs(gap(z)) <= GAP_TOL / scale else None

    def one_start(m0):
        n0, V0, _ = G.solve_mdp(m0)
        x0 = G.occupancy(n0)
        z0 = np.zeros(nz)
        z0[:nm] = m0.ravel()
        z0[sl_x] = x0[pairs[:, 0], pairs[:, 1]]
        z0[sl_phi] = V0 / scale
        z0[sl_xi] = np.max(x0 @ U0.T, axis=1)
        z = local_solve(z0, None)
        if z is None:
            return None, 0
        rounds = 0
        for rounds in range(1, max_rounds + 1):
            floor = float(G.pi @ z[sl_phi]) + epsilon / scale
            z_new = local_solve(z, floor)
            if z_new is None:
                break
            z = z_new
        m_loc = z[:nm].reshape(S1, nP)
        # certify: best-response dynamics seeded at the rounded local strategy,
        # which also fixes the macro action on states the local solve never visits
        m_pure = np.eye(nP)[np.argmax(m_loc, axis=1)]
        try:
            sol, _ = _bri_from(G, m_pure, max_rounds)
        except BestResponseCycle:
            m_mix = np.clip(m_loc, 0, None)
            m_mix /= m_mix.sum(axis=1, keepdims=True)
            n, _, _ = G.solve_mdp(m_mix)
            sol = _solution_from(G, m_mix, n, "incremental")
            if abs(sol.gap) > GAP_TOL:
                return None, rounds
        return sol, rounds

    rng = np.random.default_rng(seed)
    best, total_rounds = None, 0
    for _ in range(max(1, seeds)):
        sol, rounds = one_start(np.eye(nP)[rng.integers(nP, size=S1)])
        total_rounds += rounds
        if sol is not None and (best is None or G.pi @ sol.ces_values > G.pi @ best.ces_values + 1e-12):
            best = sol
    if best is None:
        raise NoEquilibriumFound("incremental mode found no certified equilibrium")
    sol = best
    sol.mode = "incremental"
    rounds = total_rounds
    sol.candidates_checked = rounds
    sol.equilibria_found = 1
    sol.all_values = [float(G.pi @ sol.ces_values)]
    return sol


# ---------------------------------------------------------------------------
# running the policy


@dataclass
class Trajectory:
    state: np.ndarray
    Q: np.ndarray
    p0: np.ndarray
    powers: np.ndarray     # horizon x M
    arrivals: np.ndarray

    def write_csv(self, path):
        M = self.powers.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "s", "Q", "p0"] + [f"p{i + 1}" for i in range(M)] + ["arrivals"])
            for t in range(len(self.state)):
                w.writerow([t, int(self.state[t]), int(self.Q[t]), repr(float(self.p0[t]))]
                           + [repr(float(v)) for v in self.powers[t]] + [int(self.arrivals[t])])


def run_policy(solution: EquilibriumSolution, config: GameConfig, horizon, seed=0, tables=None, initial_state=None):
    """Play the equilibrium: sample Q ~ n(s), p0 ~ m(s), look up the SBS powers, advance the battery."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    tables = tables or solution.tables
    rng = np.random.default_rng(seed)
    S = config.energy.battery_capacity
    P = np.array(config.mbs_power_levels)
    m, n = solution.strategies.m, solution.strategies.n
    if initial_state is None:
        s = int(rng.choice(S + 1, p=config.initial_state_dist))
    else:
        s = int(initial_state)
    arrivals = sample_arrivals(config.energy, rng, size=horizon)
    u_q = rng.random(horizon)
    u_p = rng.random(horizon)
    cm = np.cumsum(m, axis=1)
    cn = np.cumsum(n, axis=1)
    out_s = np.empty(horizon, dtype=int)
    out_q = np.empty(horizon, dtype=int)
    out_p = np.empty(horizon, dtype=int)
    for t in range(horizon):
        out_s[t] = s
        Q = min(int(np.searchsorted(cn[s], u_q[t] * cn[s, -1], side="right")), s)
        ip = min(int(np.searchsorted(cm[s], u_p[t] * cm[s, -1], side="right")), len(P) - 1)
        out_q[t] = Q
        out_p[t] = ip
        s = step_battery(s, Q, int(arrivals[t]), S)
    M = config.num_sbs
    powers = np.zeros((horizon, M))
    for key in set(zip(out_q.tolist(), out_p.tolist())):
        sel = (out_q == key[0]) & (out_p == key[1])
        powers[sel] = tables.allocation(*key).powers
    return Trajectory(out_s, out_q, P[out_p], powers, arrivals)


def stationary_distribution(solution: EquilibriumSolution, config: GameConfig):
    """Stationary law of the battery chain induced by the CES strategy."""
    q = transition_tensor(config.energy)
    P = np.einsum("sj,sjt->st", solution.strategies.n, q)
    w, v = np.linalg.eig(P.T)
    k = np.argmin(np.abs(w - 1))
    pi = np.real(v[:, k])
    return pi / pi.sum()
