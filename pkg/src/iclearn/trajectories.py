"""Trajectory container and line-delimited JSON persistence.

A trajectory file holds one trajectory per line. Each line is a JSON list
of step objects ``{"state": [..], "action": <int or float>, "reward": <float>}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Trajectory:
    """One episode: per-step states, actions, rewards.

    ``states`` has shape (T, state_dim), ``actions`` and ``rewards`` shape (T,).
    ``terminated`` is True when the episode ended on a terminal transition
    (goal reached, pole fallen) rather than the horizon cap. The flag is
    runtime metadata and is not part of the file format.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    terminated: bool = field(default=False, compare=False)

    def __post_init__(self) -> None:
        self.states = np.asarray(self.states, dtype=float)
        self.actions = np.asarray(self.actions)
        self.rewards = np.asarray(self.rewards, dtype=float)
        if self.states.ndim != 2:
            raise ValueError("states must be a (T, state_dim) array")
        n = self.states.shape[0]
        if self.actions.shape != (n,) or self.rewards.shape != (n,):
            raise ValueError("states, actions and rewards must share length")

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())


def _step_obj(state: np.ndarray, action, reward: float) -> dict:
    act = action.item() if isinstance(action, np.generic) else action
    return {"state": [float(v) for v in state], "action": act, "reward": float(reward)}


def save_trajectories(path, trajectories) -> None:
    """Write trajectories as line-delimited JSON, one trajectory per line."""
    with open(path, "w") as fh:
        for traj in trajectories:
            steps = [
                _step_obj(traj.states[t], traj.actions[t], traj.rewards[t])
                for t in range(len(traj))
            ]
            fh.write(json.dumps(steps) + "\n")


def load_trajectories(path) -> list[Trajectory]:
    """Read a trajectory file written by :func:`save_trajectories`.

    Raises ValueError on malformed lines or steps missing required fields.
    """
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                steps = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {lineno} is not valid JSON: {exc}") from exc
            if not isinstance(steps, list) or not steps:
                raise ValueError(f"{path}: line {lineno} must be a non-empty JSON list of steps")
            states, actions, rewards = [], [], []
            for k, step in enumerate(steps):
                if not isinstance(step, dict) or not {"state", "action", "reward"} <= step.keys():
                    raise ValueError(
                        f"{path}: line {lineno} step {k} needs state/action/reward fields"
                    )
                states.append(step["state"])
                actions.append(step["action"])
                rewards.append(step["reward"])
            out.append(Trajectory(np.asarray(states, dtype=float), np.asarray(actions), np.asarray(rewards)))
    return out
