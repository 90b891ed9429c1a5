"""Exact tabular counterpart of the learning loop, solved with linear programs.

For a finite MDP the constrained policy step and the constraint adjustment
step are both linear programs over occupancy measures. Alternating the two
exactly lets the convergence claim be checked against the expert occupancy
without any sampling noise.

Includes a dense two-phase primal simplex solver used by the LPs here and by
the exact transport distances in :mod:`iclearn.metrics`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

_TOL = 1e-9


class SimplexError(RuntimeError):
    pass


@dataclass
class LpProblem:
    """max objective . x  s.t.  a_ub x <= b_ub, a_eq x = b_eq, x >= 0."""

    objective: np.ndarray
    a_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        n = self.objective.shape[0]
        for name in ("a_ub", "a_eq"):
            mat = getattr(self, name)
            if mat is not None:
                mat = np.atleast_2d(np.asarray(mat, dtype=float))
                if mat.shape[1] != n:
                    raise ValueError(f"{name} has {mat.shape[1]} columns, expected {n}")
                setattr(self, name, mat)
        for mat, vec in (("a_ub", "b_ub"), ("a_eq", "b_eq")):
            m = getattr(self, mat)
            v = getattr(self, vec)
            if (m is None) != (v is None):
                raise ValueError(f"{mat} and {vec} must be given together")
            if v is not None:
                v = np.asarray(v, dtype=float).ravel()
                if v.shape[0] != m.shape[0]:
                    raise ValueError(f"{vec} length does not match {mat}")
                setattr(self, vec, v)
        parts = [self.objective]
        for p in (self.a_ub, self.b_ub, self.a_eq, self.b_eq):
            if p is not None:
                parts.append(p)
        if not all(np.isfinite(p).all() for p in parts):
            raise ValueError("LP data must be finite")


@dataclass
class SimplexResult:
    status: str  # optimal | infeasible | unbounded
    x: np.ndarray | None
    value: float | None
    n_pivots: int = 0


def _pivot(tableau, basis, row, col):
    tableau[row] /= tableau[row, col]
    factor = tableau[:, col].copy()
    factor[row] = 0.0
    tableau -= np.outer(factor, tableau[row])
    basis[row] = col


def _run_simplex(tableau, basis, cost, allowed, max_iter):
    """Minimize cost over the tableau in place. Dantzig pricing by default;
    Bland's anti-cycling rule engages after a stretch of degenerate pivots
    and disengages once the objective moves again."""
    m = tableau.shape[0]
    best = np.inf
    stall = 0
    bland = False
    for it in range(max_iter):
        z = cost[basis] @ tableau[:, :-1] - cost
        z[~allowed] = 0.0
        candidates = np.flatnonzero(z > _TOL)
        if candidates.size == 0:
            return it
        col = candidates[0] if bland else candidates[np.argmax(z[candidates])]
        ratios = np.full(m, np.inf)
        positive = tableau[:, col] > _TOL
        ratios[positive] = tableau[positive, -1] / tableau[positive, col]
        if not positive.any():
            raise SimplexError("unbounded")
        best_ratio = ratios.min()
        rows = np.flatnonzero(ratios <= best_ratio + _TOL)
        row = rows[np.argmin(basis[rows])]
        _pivot(tableau, basis, row, col)
        value = cost[basis] @ tableau[:, -1]
        if value < best - _TOL:
            best = value
            stall = 0
            bland = False
        else:
            stall += 1
            if stall >= 50:
                bland = True
    raise SimplexError(f"no convergence within {max_iter} pivots")


def simplex_solve(problem: LpProblem, max_iter: int = 100000) -> SimplexResult:
    """Two-phase primal simplex on a dense tableau.

    Returns an optimal vertex, or a result flagged infeasible/unbounded.
    """
    n = problem.objective.shape[0]
    a_ub = problem.a_ub if problem.a_ub is not None else np.zeros((0, n))
    b_ub = problem.b_ub if problem.b_ub is not None else np.zeros(0)
    a_eq = problem.a_eq if problem.a_eq is not None else np.zeros((0, n))
    b_eq = problem.b_eq if problem.b_eq is not None else np.zeros(0)
    m_ub, m_eq = a_ub.shape[0], a_eq.shape[0]
    m = m_ub + m_eq

    # Columns: n structural, m_ub slacks, then one artificial per row that
    # needs one. Rows with negative rhs are sign-flipped first.
    rows = np.hstack([np.vstack([a_ub, a_eq]),
                      np.vstack([np.eye(m_ub), np.zeros((m_eq, m_ub))])])
    rhs = np.concatenate([b_ub, b_eq])
    flip = rhs < 0
    rows[flip] *= -1.0
    rhs = np.abs(rhs)

    needs_artificial = np.ones(m, dtype=bool)
    needs_artificial[:m_ub] = flip[:m_ub]  # un-flipped slack rows start basic
    art_rows = np.flatnonzero(needs_artificial)
    n_art = art_rows.size
    art_cols = np.zeros((m, n_art))
    for k, r in enumerate(art_rows):
        art_cols[r, k] = 1.0
    tableau = np.hstack([rows, art_cols, rhs[:, None]])
    total = n + m_ub + n_art

    basis = np.empty(m, dtype=int)
    basis[:m_ub] = n + np.arange(m_ub)
    basis[art_rows] = n + m_ub + np.arange(n_art)

    pivots = 0
    if n_art:
        phase1_cost = np.zeros(total)
        phase1_cost[n + m_ub:] = 1.0
        allowed = np.ones(total, dtype=bool)
        try:
            pivots += _run_simplex(tableau, basis, phase1_cost, allowed, max_iter)
        except SimplexError as exc:
            raise SimplexError(f"phase 1 failed: {exc}") from exc
        if phase1_cost[basis] @ tableau[:, -1] > 1e-7:
            return SimplexResult("infeasible", None, None, pivots)
        # Drive remaining artificials out of the basis or drop their rows.
        keep = np.ones(m, dtype=bool)
        for r in range(m):
            if basis[r] >= n + m_ub:
                cols = np.flatnonzero(np.abs(tableau[r, : n + m_ub]) > _TOL)
                if cols.size:
                    _pivot(tableau, basis, r, cols[0])
                    pivots += 1
                else:
                    keep[r] = False  # redundant constraint
        if not keep.all():
            tableau = tableau[keep]
            basis = basis[keep]

    phase2_cost = np.zeros(total)
    phase2_cost[:n] = -problem.objective  # maximize -> minimize
    allowed = np.zeros(total, dtype=bool)
    allowed[: n + m_ub] = True
    try:
        pivots += _run_simplex(tableau, basis, phase2_cost, allowed, max_iter)
    except SimplexError as exc:
        if "unbounded" in str(exc):
            return SimplexResult("unbounded", None, None, pivots)
        raise
    x = np.zeros(total)
    x[basis] = tableau[:, -1]
    value = float(problem.objective @ x[:n])
    return SimplexResult("optimal", x[:n].copy(), value, pivots)


@dataclass
class TabularMdp:
    """Finite MDP: transitions (S, A, S) row-stochastic, rewards (S, A) >= 0,
    start distribution mu (S,), discount gamma in (0, 1)."""

    transitions: np.ndarray
    rewards: np.ndarray
    mu: np.ndarray
    gamma: float

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=float)
        self.rewards = np.asarray(self.rewards, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)
        if self.transitions.ndim != 3 or self.transitions.shape[0] != self.transitions.shape[2]:
            raise ValueError("transitions must have shape (S, A, S)")
        s, a, _ = self.transitions.shape
        if self.rewards.shape != (s, a):
            raise ValueError("rewards must have shape (S, A)")
        if self.mu.shape != (s,):
            raise ValueError("mu must have shape (S,)")
        if not np.allclose(self.transitions.sum(axis=2), 1.0, atol=1e-8):
            raise ValueError("transition rows must sum to 1")
        if (self.transitions < -1e-12).any():
            raise ValueError("transition probabilities must be non-negative")
        if (self.rewards < 0).any():
            raise ValueError("rewards must be non-negative")
        if not np.isclose(self.mu.sum(), 1.0, atol=1e-8) or (self.mu < -1e-12).any():
            raise ValueError("mu must be a distribution")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]


def load_mdp_spec(path) -> tuple[TabularMdp, np.ndarray, float]:
    """Read a JSON MDP spec; returns (mdp, true constraint table, beta)."""
    with open(path) as fh:
        spec = json.load(fh)
    required = {"n_states", "n_actions", "transitions", "rewards", "mu", "gamma",
                "constraint", "beta"}
    missing = required - spec.keys()
    if missing:
        raise ValueError(f"MDP spec missing fields: {sorted(missing)}")
    unknown = spec.keys() - required
    if unknown:
        raise ValueError(f"MDP spec has unknown fields: {sorted(unknown)}")
    mdp = TabularMdp(spec["transitions"], spec["rewards"], spec["mu"], spec["gamma"])
    if mdp.n_states != spec["n_states"] or mdp.n_actions != spec["n_actions"]:
        raise ValueError("declared sizes do not match the tensors")
    constraint = np.asarray(spec["constraint"], dtype=float)
    if constraint.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("constraint table must have shape (S, A)")
    return mdp, constraint, float(spec["beta"])


def _flow_system(mdp: TabularMdp) -> tuple[np.ndarray, np.ndarray]:
    """Bellman-flow equalities over flattened rho (s-major): for every state
    sum_a rho(s, a) - gamma * sum_{s', a'} p(s | s', a') rho(s', a') = mu(s)."""
    s, a = mdp.n_states, mdp.n_actions
    a_eq = np.zeros((s, s * a))
    for state in range(s):
        a_eq[state, state * a:(state + 1) * a] = 1.0
    inflow = mdp.transitions.transpose(2, 0, 1).reshape(s, s * a)
    a_eq -= mdp.gamma * inflow
    return a_eq, mdp.mu.copy()


def flow_residual(mdp: TabularMdp, rho: np.ndarray) -> float:
    """Max violation of the Bellman-flow equalities; 0 for valid occupancies."""
    a_eq, b_eq = _flow_system(mdp)
    return float(np.abs(a_eq @ rho.ravel() - b_eq).max())


@dataclass
class PolicyLpResult:
    occupancy: np.ndarray  # (S, A)
    policy: np.ndarray  # (S, A) rows sum to 1
    value: float  # expected discounted reward


class InfeasibleError(RuntimeError):
    """The constraint threshold admits no policy."""


def policy_lp(mdp: TabularMdp, constraint: np.ndarray, beta) -> PolicyLpResult:
    """Reward-maximal occupancy subject to expected discounted constraint <= beta.

    Solves: max rho.r  s.t. Bellman flow, rho.c <= beta, rho >= 0. The policy
    is read off as rho(s, a) / sum_a rho(s, a), uniform at unvisited states.
    beta=None drops the constraint row (plain reward maximization).
    """
    s, a = mdp.n_states, mdp.n_actions
    constraint = np.asarray(constraint, dtype=float)
    if constraint.shape != (s, a):
        raise ValueError("constraint table must have shape (S, A)")
    a_eq, b_eq = _flow_system(mdp)
    if beta is None:
        a_ub, b_ub = None, None
    else:
        a_ub, b_ub = constraint.ravel()[None, :], np.array([float(beta)])
    problem = LpProblem(
        objective=mdp.rewards.ravel(),
        a_ub=a_ub,
        b_ub=b_ub,
        a_eq=a_eq,
        b_eq=b_eq,
    )
    res = simplex_solve(problem)
    if res.status == "infeasible":
        raise InfeasibleError(f"no occupancy satisfies constraint <= {beta}")
    if res.status != "optimal":
        raise SimplexError(f"policy LP ended with status {res.status}")
    rho = res.x.reshape(s, a)
    totals = rho.sum(axis=1, keepdims=True)
    safe = np.where(totals > _TOL, totals, 1.0)
    policy = np.where(totals > _TOL, rho / safe, 1.0 / a)
    return PolicyLpResult(rho, policy, res.value)


@dataclass
class AdjustLpResult:
    constraint: np.ndarray  # (S, A) in [0, 1]
    value: float  # optimal min_k rho_k . c


def adjust_lp(occupancies, expert_occupancy, beta: float) -> AdjustLpResult:
    """Constraint table maximizing the worst constraint value over the given
    occupancies while keeping the expert's value at or below beta.

    Solves the epigraph program max t s.t. rho_k.c >= t for all k,
    rho_E.c <= beta, 0 <= c <= 1, refined leximin-style: occupancies whose
    value cannot exceed the current optimum are frozen at it and the minimum
    over the rest is maximized again. A plain max-t (or a max-sum tie-break)
    can strand an already separated occupancy at exactly the threshold once
    some occupancy pins the optimum at beta; that occupancy would stay
    feasible for the next policy solve and the alternation could terminate
    on it instead of on the expert. The leximin pass pushes every occupancy
    that can sit strictly above the threshold strictly above it.
    """
    occupancies = [np.asarray(o, dtype=float) for o in occupancies]
    if not occupancies:
        raise ValueError("need at least one occupancy to adjust against")
    expert = np.asarray(expert_occupancy, dtype=float)
    n = expert.size
    k = len(occupancies)
    stacked = np.stack([o.ravel() for o in occupancies])
    expert_row = expert.ravel()[None, :]

    def solve_level(active, frozen_rows, frozen_levels):
        # max t s.t. rho_k.c >= t (active), rho_j.c >= level_j (frozen),
        # expert cap, 0 <= c <= 1
        rows = [np.hstack([-stacked[active], np.ones((len(active), 1))])]
        rhs = [np.zeros(len(active))]
        if frozen_rows:
            frozen = np.stack(frozen_rows)
            levels = np.asarray(frozen_levels)
            slack = 1e-9 * np.maximum(1.0, np.abs(levels))
            rows.append(np.hstack([-frozen, np.zeros((len(frozen_rows), 1))]))
            rhs.append(-(levels - slack))
        rows.append(np.hstack([expert_row, [[0.0]]]))
        rhs.append(np.array([beta]))
        rows.append(np.hstack([np.eye(n), np.zeros((n, 1))]))
        rhs.append(np.ones(n))
        objective = np.zeros(n + 1)
        objective[n] = 1.0
        res = simplex_solve(LpProblem(objective, a_ub=np.vstack(rows),
                                      b_ub=np.concatenate(rhs)))
        if res.status != "optimal":
            raise SimplexError(f"adjustment LP ended with status {res.status}")
        return res.value, res.x[:n]

    def solve_push(target, floor_rows, floor_levels):
        # max rho_target.c s.t. rho_j.c >= level_j, expert cap, 0 <= c <= 1
        floors = np.stack(floor_rows) if floor_rows else np.zeros((0, n))
        levels = np.asarray(floor_levels) if floor_levels else np.zeros(0)
        slack = 1e-9 * np.maximum(1.0, np.abs(levels)) if len(levels) else levels
        a_ub = np.vstack([-floors, expert_row, np.eye(n)])
        b_ub = np.concatenate([-(levels - slack), [beta], np.ones(n)])
        res = simplex_solve(LpProblem(stacked[target], a_ub=a_ub, b_ub=b_ub))
        if res.status != "optimal":
            raise SimplexError(f"adjustment LP ended with status {res.status}")
        return res.value

    active = list(range(k))
    frozen_rows: list[np.ndarray] = []
    frozen_levels: list[float] = []
    t_star = None
    c_vec = None
    while active:
        level, c_vec = solve_level(active, frozen_rows, frozen_levels)
        if t_star is None:
            t_star = level
        tol = 1e-9 * max(1.0, abs(level))
        values = stacked[active] @ c_vec
        tight = [idx for idx, v in zip(active, values) if v <= level + tol]
        blocked = []
        for idx in tight:
            others = [j for j in active if j != idx]
            floors = [stacked[j] for j in others] + frozen_rows
            levels = [level] * len(others) + frozen_levels
            if solve_push(idx, floors, levels) <= level + tol:
                blocked.append(idx)
        if not blocked:
            # the optimum is tight only through degenerate ties; freeze the
            # lowest-value occupancy to guarantee progress
            blocked = [active[int(np.argmin(values))]]
        for idx in blocked:
            frozen_rows.append(stacked[idx])
            frozen_levels.append(level)
            active.remove(idx)
    c = np.clip(c_vec, 0.0, 1.0).reshape(expert.shape)
    return AdjustLpResult(c, float(t_star))


@dataclass
class AlternationTrace:
    iteration: int
    constraint_value: float  # new policy's value under the constraint it was solved with
    adjusted_min: float  # optimal t of the adjustment that followed
    occupancy: np.ndarray
    constraint: np.ndarray
    reward: float


@dataclass
class AlternationResult:
    converged: bool
    n_iterations: int
    expert_occupancy: np.ndarray
    final_occupancy: np.ndarray
    final_constraint: np.ndarray
    occupancies: list = field(default_factory=list)
    trace: list = field(default_factory=list)


def alternate(mdp: TabularMdp, true_constraint: np.ndarray, beta: float,
              max_iter: int = 50) -> AlternationResult:
    """Alternate exact policy and adjustment LPs until the occupancy repeats.

    The expert is the policy LP under the true constraint. Starting from a
    zero constraint table, each round solves the policy LP under the current
    table and then re-adjusts against every occupancy seen so far. A repeated
    occupancy (L-inf within 1e-8) is the fixed point.
    """
    expert = policy_lp(mdp, true_constraint, beta)
    c = np.zeros_like(true_constraint, dtype=float)
    occupancies: list[np.ndarray] = []
    trace: list[AlternationTrace] = []
    final = None
    converged = False
    for it in range(1, max_iter + 1):
        step = policy_lp(mdp, c, beta)
        final = step.occupancy
        if any(np.abs(step.occupancy - seen).max() <= 1e-8 for seen in occupancies):
            converged = True
            break
        occupancies.append(step.occupancy)
        adj = adjust_lp(occupancies, expert.occupancy, beta)
        c = adj.constraint
        trace.append(AlternationTrace(
            iteration=it,
            constraint_value=float((step.occupancy * c).sum()),
            adjusted_min=adj.value,
            occupancy=step.occupancy,
            constraint=c.copy(),
            reward=step.value,
        ))
    return AlternationResult(
        converged=converged,
        n_iterations=len(trace),
        expert_occupancy=expert.occupancy,
        final_occupancy=final,
        final_constraint=c,
        occupancies=occupancies,
        trace=trace,
    )


def reward_scaled_constraint(mdp: TabularMdp, expert_occupancy: np.ndarray,
                             beta: float) -> np.ndarray:
    """The explicit feasible table c(s, a) = r(s, a) * beta / (rho_E . r).

    By construction the expert attains exactly beta under it, and any
    occupancy with a higher reward value exceeds beta. Used as a lower-bound
    certificate for the adjustment LP optimum.
    """
    expert_value = float((np.asarray(expert_occupancy) * mdp.rewards).sum())
    if expert_value <= 0:
        raise ValueError("expert reward value must be positive")
    return np.clip(mdp.rewards * beta / expert_value, 0.0, 1.0)
