"""Evaluation metrics: grid accruals, constraint MSE, exact transport distances.

Distances are exact optimal-transport costs computed by linear programming
(no entropic smoothing), so the metric axioms hold to solver tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import DiscretizationGrid
from .oracle import LpProblem, SimplexError, simplex_solve

_MASS_TOL = 1e-8


@dataclass
class TransportPlan:
    flow: np.ndarray  # (n_bins, n_bins), row marginal = source, column = target
    cost: float


def accrual(trajectories, env) -> np.ndarray:
    """Visitation histogram of (state, action) steps over the env's grid,
    normalized to sum to 1. Steps snap to their nearest bin."""
    if not trajectories:
        raise ValueError("cannot build an accrual from an empty dataset")
    grid = env.grid()
    counts = np.zeros(grid.n_bins)
    for traj in trajectories:
        idx = env.bin_indices(traj.states, traj.actions)
        np.add.at(counts, idx, 1.0)
    return counts / counts.sum()


def cmse(learned, env) -> float:
    """Mean squared error between the true and learned constraint over the grid.

    ``learned`` is a callable mapping a (n, f) batch of constraint inputs to
    (n,) values. Raises ConstraintUnavailableError for data-only envs.
    """
    truth = env.true_constraint_grid()
    values = np.asarray(learned(env.grid().points), dtype=float).ravel()
    if values.shape != truth.shape:
        raise ValueError("learned constraint returned wrong number of grid values")
    return float(np.mean((truth - values) ** 2))


def _check_histogram(hist, n_bins, name) -> np.ndarray:
    h = np.asarray(hist, dtype=float).ravel()
    if h.shape[0] != n_bins:
        raise ValueError(f"{name} has {h.shape[0]} bins, expected {n_bins}")
    if (h < -1e-12).any():
        raise ValueError(f"{name} has negative mass")
    if abs(h.sum() - 1.0) > _MASS_TOL:
        raise ValueError(f"{name} must be normalized to total mass 1 (got {h.sum():.3g})")
    return np.maximum(h, 0.0)


def wasserstein_1d(hist_a, hist_b, positions) -> float:
    """Exact 1-D W1 between histograms on shared sorted positions:
    integral of |CDF_a - CDF_b|."""
    positions = np.asarray(positions, dtype=float).ravel()
    if positions.ndim != 1 or positions.size < 1:
        raise ValueError("positions must be a non-empty 1-D array")
    if (np.diff(positions) <= 0).any():
        raise ValueError("positions must be strictly increasing")
    a = _check_histogram(hist_a, positions.size, "hist_a")
    b = _check_histogram(hist_b, positions.size, "hist_b")
    gaps = np.diff(positions)
    cdf_gap = np.abs(np.cumsum(a - b))[:-1]
    return float(np.sum(cdf_gap * gaps)) if gaps.size else 0.0


def wasserstein_2d(hist_a, hist_b, coords, return_plan: bool = False):
    """Exact W1 with Euclidean ground cost, by solving the transportation LP.

    ``coords`` holds one coordinate row per bin. Only bins carrying mass
    enter the LP; the returned plan is re-embedded over all bins.
    """
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    n = coords.shape[0]
    a = _check_histogram(hist_a, n, "hist_a")
    b = _check_histogram(hist_b, n, "hist_b")
    if np.array_equal(a, b):
        # identity axiom exactly: the diagonal plan has zero cost
        cost = 0.0
        if not return_plan:
            return cost
        flow = np.zeros((n, n))
        np.fill_diagonal(flow, a)
        return cost, TransportPlan(flow, cost)
    src = np.flatnonzero(a > 0)
    dst = np.flatnonzero(b > 0)
    diff = coords[src][:, None, :] - coords[dst][None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))

    ns, nd = src.size, dst.size
    n_vars = ns * nd
    # Marginal equalities; the last one is redundant (masses balance) and dropped.
    a_eq = np.zeros((ns + nd - 1, n_vars))
    for i in range(ns):
        a_eq[i, i * nd:(i + 1) * nd] = 1.0
    for j in range(nd - 1):
        a_eq[ns + j, j::nd] = 1.0
    b_eq = np.concatenate([a[src], b[dst][:-1]])
    res = simplex_solve(LpProblem(-dist.ravel(), a_eq=a_eq, b_eq=b_eq))
    if res.status != "optimal":
        raise SimplexError(f"transport LP ended with status {res.status}")
    cost = max(0.0, -res.value)
    if not return_plan:
        return cost
    flow = np.zeros((n, n))
    flow[np.ix_(src, dst)] = res.x.reshape(ns, nd)
    return cost, TransportPlan(flow, cost)


def nad(accrual_e, accrual_pi, env) -> float:
    """Transport distance between two accruals over the env's grid.

    Planar grids use the exact 2-D distance with Euclidean ground cost.
    Per-action grids renormalize each action's slice and sum the 1-D
    distances across actions; an action used by exactly one of the datasets
    contributes the full axis span.
    """
    grid: DiscretizationGrid = env.grid()
    a = _check_histogram(accrual_e, grid.n_bins, "accrual_e")
    b = _check_histogram(accrual_pi, grid.n_bins, "accrual_pi")
    if grid.kind == "euclidean-2d":
        return wasserstein_2d(a, b, grid.points)
    if grid.kind != "per-action-1d":
        raise ValueError(f"no distance defined for grid kind {grid.kind!r}")
    xs = grid.axis_values
    k = xs.size
    span = float(xs[-1] - xs[0])
    total = 0.0
    for action in range(grid.n_actions):
        sa = a[action * k:(action + 1) * k]
        sb = b[action * k:(action + 1) * k]
        ma, mb = sa.sum(), sb.sum()
        if ma <= _MASS_TOL and mb <= _MASS_TOL:
            continue
        if ma <= _MASS_TOL or mb <= _MASS_TOL:
            total += span
            continue
        total += wasserstein_1d(sa / ma, sb / mb, xs)
    return total
