"""Constraint-function adjustment against a weighted mixture of policies.

The learned constraint is a sigmoid-headed MLP on constraint-input features.
Adjustment descends a soft loss that raises the mixture's discounted
constraint value while a hinge with multiplier ``lam`` keeps the expert's
value at or below the threshold beta:

    loss = -J_mix(c) + lam * relu(J_expert(c) - beta)

J_mix weights each mixture trajectory by its flow-based dissimilarity weight,
so expert-like trajectories contribute little.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import nn
from .crl import collect


class DegenerateMixtureError(RuntimeError):
    """Every trajectory weight is zero: the mixture objective is undefined."""


@dataclass
class AdjustConfig:
    beta: float
    gamma: float
    epochs: int = 20
    lam: float = 15.0
    eta: float = 5e-4
    hidden: tuple = (64, 64)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")


@dataclass
class MixtureDataset:
    """Trajectories sampled from the policy mixture with per-trajectory weights."""

    trajectories: list
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.trajectories) != self.weights.shape[0]:
            raise ValueError("need exactly one weight per trajectory")
        if (self.weights < 0).any():
            raise ValueError("trajectory weights must be non-negative")


class ConstraintNet:
    """Learned constraint function c(s, a) in [0, 1]."""

    def __init__(self, env, rng, hidden=(64, 64), eta=5e-4):
        self.env = env
        # small output gain: the initial map is near-flat at 0.5 instead of a
        # seed lottery over saturated sigmoids
        self.mlp = nn.init_mlp([env.constraint_dim, *hidden, 1], rng,
                               output_activation="sigmoid", output_gain=0.01)
        self.eta = eta
        self.opt = nn.make_adam(eta)

    def values(self, features) -> np.ndarray:
        out, _ = nn.forward(self.mlp, np.atleast_2d(features))
        return out[:, 0]

    def __call__(self, states, actions) -> np.ndarray:
        """Constraint values for a batch of (state, action) pairs."""
        feats = self.env.constraint_inputs(np.atleast_2d(states), np.asarray(actions).ravel())
        return self.values(feats)

    def grid_values(self) -> np.ndarray:
        return self.values(self.env.grid().points)


def load_constraint(env, path) -> ConstraintNet:
    """Rebuild a constraint network from an npz parameter checkpoint."""
    net = ConstraintNet(env, np.random.default_rng(0))
    net.mlp = nn.load_params(path)
    if net.mlp.in_dim != env.constraint_dim:
        raise ValueError(
            f"checkpoint expects {net.mlp.in_dim} input features, "
            f"env provides {env.constraint_dim}")
    return net


def cgamma(trajectory, constraint, gamma: float) -> float:
    """Discounted constraint accumulation sum_t gamma^(t-1) c(s_t, a_t)."""
    values = np.asarray(constraint(trajectory.states, trajectory.actions), dtype=float)
    return float(np.dot(values, gamma ** np.arange(len(values))))


def mixture_objective(cgammas, weights) -> float:
    """Weighted mean of per-trajectory discounted constraint values."""
    weights = np.asarray(weights, dtype=float)
    total = weights.sum()
    if total <= 0.0:
        raise DegenerateMixtureError("all trajectory weights are zero")
    return float(np.dot(weights, np.asarray(cgammas)) / total)


def soft_loss(j_mix: float, j_expert: float, beta: float, lam: float) -> float:
    return -j_mix + lam * max(j_expert - beta, 0.0)


def _flatten(env, trajectories, gamma):
    """Concatenate step features with trajectory indices and discount factors."""
    feats, traj_idx, gpow = [], [], []
    for i, traj in enumerate(trajectories):
        n = len(traj)
        feats.append(env.constraint_inputs(traj.states, traj.actions))
        traj_idx.append(np.full(n, i))
        gpow.append(gamma ** np.arange(n))
    return np.vstack(feats), np.concatenate(traj_idx), np.concatenate(gpow)


def adjust(constraint: ConstraintNet, mixture: MixtureDataset, expert_trajectories,
           cfg: AdjustConfig, reset_optimizer: bool = True) -> list[dict]:
    """Run ``cfg.epochs`` full-batch descent steps on the soft loss.

    Returns per-epoch records with keys epoch, loss, j_mix, j_expert. Raises
    DegenerateMixtureError when all mixture weights are zero; the caller
    decides whether to fall back to uniform weights.

    By default the optimizer state is reset on entry: each call optimizes
    against a new mixture dataset, and second-moment state carried over from
    an earlier phase (where the expert hinge can dominate with much larger
    gradients) scales the new phase's steps down to nothing. Pass
    ``reset_optimizer=False`` to keep whatever optimizer the net carries.
    """
    if mixture.weights.sum() <= 0.0:
        raise DegenerateMixtureError("all trajectory weights are zero")
    if reset_optimizer:
        constraint.opt = nn.make_adam(constraint.eta)
    env = constraint.env
    feats_a, idx_a, gpow_a = _flatten(env, mixture.trajectories, cfg.gamma)
    feats_e, idx_e, gpow_e = _flatten(env, expert_trajectories, cfg.gamma)
    n_a, n_e = len(mixture.trajectories), len(expert_trajectories)
    w = mixture.weights
    w_total = w.sum()
    stacked = np.vstack([feats_a, feats_e])
    split = feats_a.shape[0]

    # Per-step loss coefficients: the mixture term is weight-normalized, the
    # expert hinge term activates only while J_expert exceeds beta.
    coef_a = -(w[idx_a] * gpow_a) / w_total
    coef_e_base = cfg.lam * gpow_e / n_e

    log = []
    for epoch in range(1, cfg.epochs + 1):
        out, tape = nn.forward(constraint.mlp, stacked)
        vals = out[:, 0]
        cg_a = np.bincount(idx_a, weights=vals[:split] * gpow_a, minlength=n_a)
        cg_e = np.bincount(idx_e, weights=vals[split:] * gpow_e, minlength=n_e)
        j_mix = mixture_objective(cg_a, w)
        j_expert = float(cg_e.mean())
        loss = soft_loss(j_mix, j_expert, cfg.beta, cfg.lam)
        upstream = np.concatenate([
            coef_a,
            coef_e_base if j_expert > cfg.beta else np.zeros_like(coef_e_base),
        ])
        grads = nn.backward(constraint.mlp, tape, upstream[:, None])
        nn.opt_step(constraint.mlp, grads, constraint.opt)
        log.append({"epoch": epoch, "loss": loss, "j_mix": j_mix, "j_expert": j_expert})
    return log


def sample_mixture(policies, policy_weights, env, n_trajectories, rng) -> list:
    """Draw trajectories by first picking a policy proportionally to its
    weight, then rolling out fresh episodes. All-zero weights fall back to a
    uniform pick with a warning."""
    weights = np.asarray(policy_weights, dtype=float)
    if weights.shape[0] != len(policies):
        raise ValueError("need exactly one weight per policy")
    if (weights < 0).any():
        raise ValueError("policy weights must be non-negative")
    if weights.sum() <= 0.0:
        warnings.warn("all policy weights are zero; sampling uniformly", RuntimeWarning)
        weights = np.ones_like(weights)
    p = weights / weights.sum()
    choices = rng.choice(len(policies), size=n_trajectories, p=p)
    trajectories = []
    for k in range(len(policies)):
        count = int((choices == k).sum())
        if count == 0:
            continue
        batch = collect(policies[k], env, count, rng, gamma=1.0)
        trajectories.extend(batch.trajectories)
    return trajectories
