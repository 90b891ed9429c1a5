"""Environments with ground-truth constraint maps and discretization grids.

Built-in environments are defined by JSON spec files shipped with the
package; custom environments use the same schema loaded from a path.

Gridworld spec::

    {"type": "gridworld", "grid_size": 7, "start_cells": [[x, y], ...],
     "goal_cell": [x, y], "white_cells": [[x, y], ...] or null,
     "horizon": 50, "gamma": 1.0, "beta": 0.99}

Cartpole spec::

    {"type": "cartpole", "start_intervals": [[lo, hi], ...],
     "white_intervals_per_action": [[[lo, hi], ...], ...] or null,
     "horizon": 200, "gamma": 0.99, "beta": 50.0}

Cartpole constraint intervals are open; a null endpoint means unbounded.
A null constraint field gives a data-only environment: rollouts work but
any metric needing the true constraint raises ConstraintUnavailableError.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

BUILTIN_ENVS = {
    "gridworld-a": "gridworld_a.json",
    "gridworld-b": "gridworld_b.json",
    "cartpole-mr": "cartpole_mr.json",
    "cartpole-mid": "cartpole_mid.json",
}

# Gridworld action set: 4 nominal moves then 4 diagonals, as (dx, dy).
GRID_MOVES = np.array(
    [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)]
)
RIGHT, LEFT, UP, DOWN = 0, 1, 2, 3

CART_X_BINS = np.round(np.arange(-2.4, 2.45, 0.1), 10)  # 49 values


class ConstraintUnavailableError(RuntimeError):
    """Raised when an operation needs a true constraint the env does not define."""


@dataclass
class Transition:
    next_state: np.ndarray
    reward: float
    done: bool
    true_constraint: float


@dataclass
class DiscretizationGrid:
    """Finite bin set used for constraint evaluation and distance metrics.

    ``points`` holds one constraint-input vector per bin. ``kind`` selects
    the ground metric: "euclidean-2d" treats points as coordinates in the
    plane, "per-action-1d" groups bins by the action column and measures
    distance along ``axis_values``.
    """

    points: np.ndarray
    kind: str
    axis_values: np.ndarray | None = None
    n_actions: int | None = None

    @property
    def n_bins(self) -> int:
        return self.points.shape[0]


class Gridworld:
    """Deterministic grid with 8 moves (4 nominal + 4 diagonal).

    States are (x, y) integer coordinates embedded as floats, origin at the
    bottom-left corner. Moves off the grid clip per axis, so a blocked
    diagonal still applies its feasible component. Reward is +1 on entering
    the goal cell, which ends the episode; all other steps give 0.
    """

    n_actions = 8
    state_dim = 2
    constraint_dim = 2
    discrete_feature_dims = (0, 1)

    def __init__(self, name, size, start_cells, goal_cell, white_cells,
                 horizon=50, gamma=1.0, beta=0.99):
        self.name = name
        self.size = int(size)
        self.start_cells = np.asarray(start_cells, dtype=int)
        self.goal_cell = np.asarray(goal_cell, dtype=int)
        self.horizon = int(horizon)
        self.gamma = float(gamma)
        self.beta = float(beta)
        if self.start_cells.ndim != 2 or self.start_cells.shape[1] != 2:
            raise ValueError("start_cells must be a list of [x, y] pairs")
        for cell in np.vstack([self.start_cells, self.goal_cell[None]]):
            if not (0 <= cell[0] < self.size and 0 <= cell[1] < self.size):
                raise ValueError(f"cell {cell.tolist()} outside {self.size}x{self.size} grid")
        if white_cells is None:
            self.white_map = None
        else:
            self.white_map = np.zeros((self.size, self.size))
            for x, y in white_cells:
                if not (0 <= x < self.size and 0 <= y < self.size):
                    raise ValueError(f"white cell [{x}, {y}] outside grid")
                self.white_map[int(x), int(y)] = 1.0
            gx, gy = self.goal_cell
            if self.white_map[gx, gy] != 0.0:
                raise ValueError("goal cell must not carry constraint value 1")

    @property
    def has_true_constraint(self) -> bool:
        return self.white_map is not None

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        cell = self.start_cells[rng.integers(len(self.start_cells))]
        return cell.astype(float)

    def step(self, state, action, rng, t=None) -> Transition:
        """Apply one move. ``t`` is the number of steps taken so far; when
        given, the horizon cap marks the transition done."""
        dx, dy = GRID_MOVES[int(action)]
        hi = self.size - 1
        nx = min(max(int(state[0]) + dx, 0), hi)
        ny = min(max(int(state[1]) + dy, 0), hi)
        at_goal = nx == self.goal_cell[0] and ny == self.goal_cell[1]
        done = at_goal or (t is not None and t + 1 >= self.horizon)
        reward = 1.0 if at_goal else 0.0
        return Transition(
            np.array([nx, ny], dtype=float),
            reward,
            done,
            self.true_constraint(state, action) if self.has_true_constraint else 0.0,
        )

    def true_constraint(self, state, action) -> float:
        if self.white_map is None:
            raise ConstraintUnavailableError(f"{self.name} defines no true constraint")
        return float(self.white_map[int(round(state[0])), int(round(state[1]))])

    def true_constraint_batch(self, states, actions) -> np.ndarray:
        if self.white_map is None:
            raise ConstraintUnavailableError(f"{self.name} defines no true constraint")
        s = np.asarray(states, dtype=float)
        x = np.clip(np.rint(s[:, 0]), 0, self.size - 1).astype(int)
        y = np.clip(np.rint(s[:, 1]), 0, self.size - 1).astype(int)
        return self.white_map[x, y]

    def constraint_input(self, state, action) -> np.ndarray:
        return np.asarray(state, dtype=float)[:2]

    def constraint_inputs(self, states, actions) -> np.ndarray:
        return np.asarray(states, dtype=float)[:, :2]

    def grid(self) -> DiscretizationGrid:
        xs, ys = np.meshgrid(np.arange(self.size), np.arange(self.size), indexing="ij")
        points = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(float)
        return DiscretizationGrid(points=points, kind="euclidean-2d")

    def bin_indices(self, states, actions) -> np.ndarray:
        s = np.asarray(states, dtype=float)
        x = np.clip(np.rint(s[:, 0]), 0, self.size - 1).astype(int)
        y = np.clip(np.rint(s[:, 1]), 0, self.size - 1).astype(int)
        return x * self.size + y

    def true_constraint_grid(self) -> np.ndarray:
        if self.white_map is None:
            raise ConstraintUnavailableError(f"{self.name} defines no true constraint")
        return self.white_map.ravel().copy()


def _in_open_intervals(x, intervals) -> bool:
    for lo, hi in intervals:
        if (lo is None or x > lo) and (hi is None or x < hi):
            return True
    return False


class CartPole:
    """Pole balancing cart with Euler dynamics (dt = 0.02, force 10 N).

    State is (x, x_dot, theta, theta_dot). The episode ends when |x| > 2.4,
    |theta| > 12 degrees, or the horizon is reached; every step pays +1.
    The constraint input is (cart position, action).
    """

    n_actions = 2
    state_dim = 4
    constraint_dim = 2
    discrete_feature_dims = (1,)

    GRAVITY = 9.8
    MASS_CART = 1.0
    MASS_POLE = 0.1
    HALF_LENGTH = 0.5
    FORCE = 10.0
    DT = 0.02
    X_LIMIT = 2.4
    THETA_LIMIT = 12 * math.pi / 180

    def __init__(self, name, start_intervals, white_intervals_per_action,
                 horizon=200, gamma=0.99, beta=50.0):
        self.name = name
        self.start_intervals = [(float(lo), float(hi)) for lo, hi in start_intervals]
        for lo, hi in self.start_intervals:
            if not lo < hi:
                raise ValueError(f"empty start interval [{lo}, {hi}]")
        if white_intervals_per_action is None:
            self.white_intervals = None
        else:
            if len(white_intervals_per_action) != self.n_actions:
                raise ValueError("white_intervals_per_action needs one list per action")
            self.white_intervals = [
                [(None if lo is None else float(lo), None if hi is None else float(hi))
                 for lo, hi in per_action]
                for per_action in white_intervals_per_action
            ]
        self.horizon = int(horizon)
        self.gamma = float(gamma)
        self.beta = float(beta)
        self._total_mass = self.MASS_CART + self.MASS_POLE
        self._polemass_length = self.MASS_POLE * self.HALF_LENGTH

    @property
    def has_true_constraint(self) -> bool:
        return self.white_intervals is not None

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        lengths = np.array([hi - lo for lo, hi in self.start_intervals])
        k = rng.choice(len(self.start_intervals), p=lengths / lengths.sum())
        lo, hi = self.start_intervals[k]
        x = rng.uniform(lo, hi)
        rest = rng.uniform(-0.05, 0.05, size=3)
        return np.array([x, rest[0], rest[1], rest[2]])

    def step(self, state, action, rng, t=None) -> Transition:
        x, x_dot, theta, theta_dot = (float(v) for v in state)
        force = self.FORCE if int(action) == 1 else -self.FORCE
        cos_t = math.cos(theta)
        sin_t = math.sin(theta)
        temp = (force + self._polemass_length * theta_dot**2 * sin_t) / self._total_mass
        theta_acc = (self.GRAVITY * sin_t - cos_t * temp) / (
            self.HALF_LENGTH * (4.0 / 3.0 - self.MASS_POLE * cos_t**2 / self._total_mass)
        )
        x_acc = temp - self._polemass_length * theta_acc * cos_t / self._total_mass
        x += self.DT * x_dot
        x_dot += self.DT * x_acc
        theta += self.DT * theta_dot
        theta_dot += self.DT * theta_acc
        fell = abs(x) > self.X_LIMIT or abs(theta) > self.THETA_LIMIT
        done = fell or (t is not None and t + 1 >= self.horizon)
        return Transition(
            np.array([x, x_dot, theta, theta_dot]),
            1.0,
            done,
            self.true_constraint(state, action) if self.has_true_constraint else 0.0,
        )

    def true_constraint(self, state, action) -> float:
        if self.white_intervals is None:
            raise ConstraintUnavailableError(f"{self.name} defines no true constraint")
        return float(_in_open_intervals(float(state[0]), self.white_intervals[int(action)]))

    def true_constraint_batch(self, states, actions) -> np.ndarray:
        if self.white_intervals is None:
            raise ConstraintUnavailableError(f"{self.name} defines no true constraint")
        xs = np.asarray(states, dtype=float)[:, 0]
        acts = np.asarray(actions, dtype=int)
        out = np.zeros(xs.shape[0])
        for a, intervals in enumerate(self.white_intervals):
            sel = acts == a
            if not sel.any():
                continue
            hit = np.zeros(sel.sum(), dtype=bool)
            for lo, hi in intervals:
                ok = np.ones(sel.sum(), dtype=bool)
                if lo is not None:
                    ok &= xs[sel] > lo
                if hi is not None:
                    ok &= xs[sel] < hi
                hit |= ok
            out[sel] = hit.astype(float)
        return out

    def constraint_input(self, state, action) -> np.ndarray:
        return np.array([float(state[0]), float(action)])

    def constraint_inputs(self, states, actions) -> np.ndarray:
        xs = np.asarray(states, dtype=float)[:, 0]
        return np.stack([xs, np.asarray(actions, dtype=float)], axis=1)

    def grid(self) -> DiscretizationGrid:
        xs = np.tile(CART_X_BINS, self.n_actions)
        acts = np.repeat(np.arange(self.n_actions, dtype=float), len(CART_X_BINS))
        return DiscretizationGrid(
            points=np.stack([xs, acts], axis=1),
            kind="per-action-1d",
            axis_values=CART_X_BINS.copy(),
            n_actions=self.n_actions,
        )

    def bin_indices(self, states, actions) -> np.ndarray:
        xs = np.asarray(states, dtype=float)[:, 0]
        idx = np.clip(np.rint((xs - CART_X_BINS[0]) / 0.1), 0, len(CART_X_BINS) - 1)
        return np.asarray(actions, dtype=int) * len(CART_X_BINS) + idx.astype(int)

    def true_constraint_grid(self) -> np.ndarray:
        if self.white_intervals is None:
            raise ConstraintUnavailableError(f"{self.name} defines no true constraint")
        grid = self.grid()
        return np.array([
            float(_in_open_intervals(x, self.white_intervals[int(a)]))
            for x, a in grid.points
        ])


_GRIDWORLD_KEYS = {"type", "grid_size", "start_cells", "goal_cell", "white_cells",
                   "horizon", "gamma", "beta"}
_CARTPOLE_KEYS = {"type", "start_intervals", "white_intervals_per_action",
                  "horizon", "gamma", "beta"}


def _env_from_spec(name: str, spec: dict):
    kind = spec.get("type")
    if kind == "gridworld":
        unknown = set(spec) - _GRIDWORLD_KEYS
        if unknown:
            raise ValueError(f"unknown gridworld spec fields: {sorted(unknown)}")
        for key in ("grid_size", "start_cells", "goal_cell"):
            if key not in spec:
                raise ValueError(f"gridworld spec missing '{key}'")
        return Gridworld(
            name,
            spec["grid_size"],
            spec["start_cells"],
            spec["goal_cell"],
            spec.get("white_cells"),
            horizon=spec.get("horizon", 50),
            gamma=spec.get("gamma", 1.0),
            beta=spec.get("beta", 0.99),
        )
    if kind == "cartpole":
        unknown = set(spec) - _CARTPOLE_KEYS
        if unknown:
            raise ValueError(f"unknown cartpole spec fields: {sorted(unknown)}")
        if "start_intervals" not in spec:
            raise ValueError("cartpole spec missing 'start_intervals'")
        return CartPole(
            name,
            spec["start_intervals"],
            spec.get("white_intervals_per_action"),
            horizon=spec.get("horizon", 200),
            gamma=spec.get("gamma", 0.99),
            beta=spec.get("beta", 50.0),
        )
    raise ValueError(f"unknown environment type {kind!r}")


def make_env(env_id: str):
    """Build an environment from a built-in id or a JSON spec path."""
    if env_id in BUILTIN_ENVS:
        ref = resources.files("iclearn").joinpath("specs", BUILTIN_ENVS[env_id])
        spec = json.loads(ref.read_text())
        return _env_from_spec(env_id, spec)
    try:
        with open(env_id) as fh:
            spec = json.load(fh)
    except FileNotFoundError:
        known = ", ".join(sorted(BUILTIN_ENVS))
        raise ValueError(f"{env_id!r} is not a built-in env ({known}) or a readable spec file")
    return _env_from_spec(env_id, spec)
