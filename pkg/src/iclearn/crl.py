"""Constrained policy optimization: PPO alternating with correction steps.

Each training epoch runs clipped-surrogate PPO updates with an entropy bonus
on a fresh batch of episodes, then applies up to ``max_corrections``
score-function gradient steps that push the discounted constraint estimate
J(c) below the threshold beta, re-collecting a fresh batch after each step.
The correction loop keeps firing until a pooled estimate over the last
``correction_window`` batches shows the policy feasible within one standard
error; a final feasibility loop after the last epoch repeats the same rule
and only stops once an independent confirmation batch also reads feasible.

Correction coefficients subtract a learned state baseline (a constraint-value
net regressed on the discounted constraint returns) when
``correction_baseline`` is on. The baseline leaves the gradient estimator
unbiased and stops the correction from punishing actions for violations they
cannot influence, which otherwise degrades the reward when corrections fire
often.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax

from . import nn
from .envs import ConstraintUnavailableError
from .trajectories import Trajectory

LOG_RATIO_CLAMP = 20.0


@dataclass
class PpoConfig:
    gamma: float
    beta: float
    epochs: int
    episodes_per_epoch: int = 20
    updates_per_epoch: int = 25
    minibatch: int = 64
    clip: float = 0.1
    entropy_coef: float = 0.01
    eta_correction: float = 2.5e-5
    eta_policy: float = 5e-4
    value_coef: float = 0.5
    max_corrections: int = 25
    correction_window: int = 5
    correction_baseline: bool = True
    final_correction_budget: int = 1500
    confirmation_episodes: int = 60
    gae_lambda: float | None = None
    hidden: tuple = (64, 64)

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.epochs < 1 or self.episodes_per_epoch < 1:
            raise ValueError("epochs and episodes_per_epoch must be positive")
        if not 0.0 < self.clip < 1.0:
            raise ValueError("clip must lie in (0, 1)")
        if self.correction_window < 1:
            raise ValueError("correction_window must be positive")
        if self.final_correction_budget < 0 or self.confirmation_episodes < 1:
            raise ValueError("final correction settings out of range")


class PolicyNet:
    """Categorical policy: MLP from state to action logits.

    Carries two Adam states because two different update rules touch the same
    parameters: the PPO surrogate (eta_policy) and the constraint correction
    (eta_correction).
    """

    def __init__(self, state_dim, n_actions, rng, hidden=(64, 64),
                 eta_policy=5e-4, eta_correction=2.5e-5):
        self.n_actions = n_actions
        self.mlp = nn.init_mlp([state_dim, *hidden, n_actions], rng, output_gain=0.01)
        self.opt = nn.make_adam(eta_policy)
        self.correction_opt = nn.make_adam(eta_correction)

    def log_probs(self, states) -> np.ndarray:
        logits, _ = nn.forward(self.mlp, np.atleast_2d(states))
        return log_softmax(logits, axis=1)

    def sample(self, states, rng) -> tuple[np.ndarray, np.ndarray]:
        """Sample one action per state row; returns (actions, log probs)."""
        logp = self.log_probs(states)
        probs = np.exp(logp)
        cdf = probs.cumsum(axis=1)
        u = rng.random(probs.shape[0])
        actions = np.minimum((cdf <= u[:, None]).sum(axis=1), self.n_actions - 1)
        return actions, logp[np.arange(len(actions)), actions]


class ValueNet:
    def __init__(self, state_dim, rng, hidden=(64, 64), eta=5e-4):
        self.mlp = nn.init_mlp([state_dim, *hidden, 1], rng, output_gain=1.0)
        self.opt = nn.make_adam(eta)

    def predict(self, states) -> np.ndarray:
        out, _ = nn.forward(self.mlp, np.atleast_2d(states))
        return out[:, 0]


class GaussianPolicy:
    """Placeholder for continuous action spaces; not implemented."""

    def __init__(self, *args, **kwargs):
        raise NotImplementedError("continuous-action policies are not supported")


def discounted_suffix_sums(values: np.ndarray, gamma: float) -> np.ndarray:
    """G_t = values_t + gamma * G_{t+1}, computed right to left."""
    out = np.empty_like(values, dtype=float)
    acc = 0.0
    for t in range(len(values) - 1, -1, -1):
        acc = values[t] + gamma * acc
        out[t] = acc
    return out


def estimate_J(per_episode_values, gamma: float) -> float:
    """Monte Carlo estimate: mean over episodes of sum_t gamma^(t-1) v_t."""
    if not per_episode_values:
        raise ValueError("need at least one episode")
    totals = [float(np.dot(v, gamma ** np.arange(len(v)))) for v in per_episode_values]
    return float(np.mean(totals))


@dataclass
class RolloutBatch:
    trajectories: list[Trajectory]
    log_probs: list[np.ndarray]
    returns: list[np.ndarray]  # reward-to-go, discounted
    constraint_values: list[np.ndarray] | None = None
    constraint_returns: list[np.ndarray] | None = None
    states: np.ndarray = field(default=None, repr=False)
    actions: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.states is None:
            self.states = np.vstack([t.states for t in self.trajectories])
            self.actions = np.concatenate([t.actions for t in self.trajectories]).astype(int)

    @property
    def n_episodes(self) -> int:
        return len(self.trajectories)

    @property
    def n_steps(self) -> int:
        return self.states.shape[0]

    def flat_log_probs(self) -> np.ndarray:
        return np.concatenate(self.log_probs)

    def flat_returns(self) -> np.ndarray:
        return np.concatenate(self.returns)

    def flat_constraint_returns(self) -> np.ndarray:
        return np.concatenate(self.constraint_returns)

    def mean_reward(self) -> float:
        return float(np.mean([t.total_reward for t in self.trajectories]))

    def mean_violations(self) -> float:
        """Average per-episode undiscounted sum of constraint values."""
        return float(np.mean([v.sum() for v in self.constraint_values]))


def collect(policy: PolicyNet, env, n_episodes: int, rng, constraint=None,
            gamma: float = 1.0) -> RolloutBatch:
    """Roll out episodes under the policy, stepping all of them in lockstep so
    the policy forward pass is batched. ``constraint`` is an optional callable
    (states, actions) -> values evaluated on every step afterwards.
    """
    states = [env.reset(rng) for _ in range(n_episodes)]
    buf_states = [[] for _ in range(n_episodes)]
    buf_actions = [[] for _ in range(n_episodes)]
    buf_rewards = [[] for _ in range(n_episodes)]
    buf_logp = [[] for _ in range(n_episodes)]
    terminated = [False] * n_episodes
    steps = [0] * n_episodes
    active = list(range(n_episodes))
    while active:
        stacked = np.stack([states[i] for i in active])
        actions, logp = policy.sample(stacked, rng)
        still = []
        for k, i in enumerate(active):
            tr = env.step(states[i], actions[k], rng, t=steps[i])
            buf_states[i].append(states[i])
            buf_actions[i].append(int(actions[k]))
            buf_rewards[i].append(tr.reward)
            buf_logp[i].append(logp[k])
            states[i] = tr.next_state
            steps[i] += 1
            if tr.done:
                terminated[i] = steps[i] < env.horizon
            else:
                still.append(i)
        active = still

    trajectories = [
        Trajectory(np.vstack(buf_states[i]), np.array(buf_actions[i]),
                   np.array(buf_rewards[i]), terminated=terminated[i])
        for i in range(n_episodes)
    ]
    log_probs = [np.array(buf_logp[i]) for i in range(n_episodes)]
    returns = [discounted_suffix_sums(t.rewards, gamma) for t in trajectories]
    batch = RolloutBatch(trajectories, log_probs, returns)
    if constraint is not None:
        flat = np.asarray(constraint(batch.states, batch.actions), dtype=float).ravel()
        lengths = [len(t) for t in trajectories]
        splits = np.cumsum(lengths)[:-1]
        batch.constraint_values = [np.asarray(v) for v in np.split(flat, splits)]
        batch.constraint_returns = [
            discounted_suffix_sums(v, gamma) for v in batch.constraint_values
        ]
    return batch


def correction_step(policy: PolicyNet, batch: RolloutBatch, beta: float,
                    gamma: float, baseline: ValueNet | None = None,
                    only_if_infeasible: bool = True) -> bool:
    """One gradient step reducing J(c) when the batch estimate exceeds beta.

    The gradient is the score-function form: mean over episodes of
    sum_t G_t(c) grad log pi(a_t | s_t). When ``baseline`` is given, its
    state-value prediction is subtracted from each G_t, which keeps the
    estimator unbiased while removing the shared component of the constraint
    return that no single action controls. With ``only_if_infeasible`` the
    step is skipped (returning False) when the batch already reads
    J(c) <= beta; the training loop passes False here because it gates on a
    pooled estimate instead.
    """
    if batch.constraint_values is None:
        raise ValueError("batch was collected without a constraint")
    if only_if_infeasible and estimate_J(batch.constraint_values, gamma) <= beta:
        return False
    logits, tape = nn.forward(policy.mlp, batch.states)
    logp = log_softmax(logits, axis=1)
    probs = np.exp(logp)
    onehot = np.zeros_like(probs)
    onehot[np.arange(batch.n_steps), batch.actions] = 1.0
    coef = batch.flat_constraint_returns()
    if baseline is not None:
        coef = coef - baseline.predict(batch.states)
    coef = coef / batch.n_episodes
    upstream = coef[:, None] * (onehot - probs)
    grads = nn.backward(policy.mlp, tape, upstream)
    nn.opt_step(policy.mlp, grads, policy.correction_opt)
    return True


def _fit_constraint_value(cvalue: ValueNet, batch: RolloutBatch) -> None:
    # one half-batch regression step of the constraint-return baseline
    targets = batch.flat_constraint_returns()
    out, tape = nn.forward(cvalue.mlp, batch.states)
    err = out[:, 0] - targets
    grads = nn.backward(cvalue.mlp, tape, (2.0 * err / batch.n_steps)[:, None])
    nn.opt_step(cvalue.mlp, grads, cvalue.opt)


def _more_corrections_needed(window: list, beta: float, pool: int) -> bool:
    """One-sided stop rule: keep correcting until the pooled J estimate over
    the last ``pool`` batches sits below beta by at least one standard error.
    A plain <= beta check on a single 20-episode batch stops on lucky draws
    whose true J is well above beta; pooling plus the margin makes the exit
    mean what it claims.
    """
    w = window[-pool:]
    pooled = float(np.mean(w))
    if len(w) < 2:
        return pooled > beta
    se = float(np.std(w, ddof=1)) / np.sqrt(len(w))
    return pooled > beta - se


def _entropy_upstream(probs, logp, coef):
    # d(-coef * H)/d logits with H = -sum p log p per row.
    ent = -(probs * logp).sum(axis=1, keepdims=True)
    return coef * probs * (logp + ent)


def ppo_update(policy: PolicyNet, value: ValueNet, batch: RolloutBatch,
               cfg: PpoConfig, rng) -> dict:
    """Minibatch PPO updates on one batch: clipped surrogate with entropy
    bonus for the policy, half-MSE regression for the value baseline.

    Advantages are reward-to-go minus the value prediction, normalized over
    the batch to zero mean and unit std.
    """
    rets = batch.flat_returns()
    baseline = value.predict(batch.states)
    adv = rets - baseline
    if cfg.gae_lambda is not None:
        adv = _gae_advantages(batch, baseline, cfg)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    old_logp = batch.flat_log_probs()
    n = batch.n_steps
    stats = {"surrogate": 0.0, "entropy": 0.0, "value_loss": 0.0}
    for _ in range(cfg.updates_per_epoch):
        idx = rng.choice(n, size=min(cfg.minibatch, n), replace=False)
        b = idx.size
        logits, tape = nn.forward(policy.mlp, batch.states[idx])
        logp_all = log_softmax(logits, axis=1)
        probs = np.exp(logp_all)
        rows = np.arange(b)
        acts = batch.actions[idx]
        log_ratio = logp_all[rows, acts] - old_logp[idx]
        if (log_ratio > LOG_RATIO_CLAMP).any():
            warnings.warn("PPO ratio overflow; clamping log-ratio at 20", RuntimeWarning)
            log_ratio = np.minimum(log_ratio, LOG_RATIO_CLAMP)
        ratio = np.exp(log_ratio)
        a = adv[idx]
        unclipped = ratio * a
        clipped = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * a
        take_unclipped = unclipped <= clipped + 1e-12
        dlogp = np.where(take_unclipped, -ratio * a, 0.0) / b
        onehot = np.zeros_like(probs)
        onehot[rows, acts] = 1.0
        upstream = dlogp[:, None] * (onehot - probs)
        upstream += _entropy_upstream(probs, logp_all, cfg.entropy_coef / b)
        grads = nn.backward(policy.mlp, tape, upstream)
        nn.opt_step(policy.mlp, grads, policy.opt)

        vout, vtape = nn.forward(value.mlp, batch.states[idx])
        verr = vout[:, 0] - rets[idx]
        vgrads = nn.backward(value.mlp, vtape, (cfg.value_coef * 2.0 * verr / b)[:, None])
        nn.opt_step(value.mlp, vgrads, value.opt)

        stats["surrogate"] += float(np.minimum(unclipped, clipped).mean())
        stats["entropy"] += float(-(probs * logp_all).sum(axis=1).mean())
        stats["value_loss"] += float(cfg.value_coef * (verr**2).mean())
    for key in stats:
        stats[key] /= cfg.updates_per_epoch
    return stats


def _gae_advantages(batch: RolloutBatch, baseline: np.ndarray, cfg: PpoConfig) -> np.ndarray:
    """Generalized advantage estimation, available as a config option."""
    lengths = [len(t) for t in batch.trajectories]
    splits = np.cumsum(lengths)[:-1]
    values = np.split(baseline, splits)
    out = []
    for traj, v in zip(batch.trajectories, values):
        t_len = len(traj)
        next_v = np.append(v[1:], 0.0 if traj.terminated else v[-1])
        deltas = traj.rewards + cfg.gamma * next_v - v
        out.append(discounted_suffix_sums(deltas, cfg.gamma * cfg.gae_lambda))
    return np.concatenate(out)


def train_constrained(env, constraint, cfg: PpoConfig, rng,
                      policy: PolicyNet | None = None,
                      value: ValueNet | None = None):
    """Full constrained training run: fresh policy and value nets, then
    ``cfg.epochs`` rounds of PPO updates followed by correction steps, and a
    final feasibility loop that keeps correcting until an independent
    confirmation batch reads J(c) <= beta (or the budget runs out).

    Returns (policy, value, log) where log is a list of per-epoch dicts with
    keys epoch, mean_reward, mean_violations, j_constraint, corrections.
    """
    if policy is None:
        policy = PolicyNet(env.state_dim, env.n_actions, rng, hidden=cfg.hidden,
                           eta_policy=cfg.eta_policy, eta_correction=cfg.eta_correction)
    if value is None:
        value = ValueNet(env.state_dim, rng, hidden=cfg.hidden, eta=cfg.eta_policy)
    cvalue = None
    if cfg.correction_baseline:
        cvalue = ValueNet(env.state_dim, rng, hidden=cfg.hidden, eta=cfg.eta_policy)

    def fresh_batch():
        batch = collect(policy, env, cfg.episodes_per_epoch, rng,
                        constraint=constraint, gamma=cfg.gamma)
        if cvalue is not None:
            _fit_constraint_value(cvalue, batch)
        return batch

    log = []
    for epoch in range(1, cfg.epochs + 1):
        batch = fresh_batch()
        ppo_update(policy, value, batch, cfg, rng)
        window = []
        batch = fresh_batch()
        window.append(estimate_J(batch.constraint_values, cfg.gamma))
        corrections = 0
        while (corrections < cfg.max_corrections
               and _more_corrections_needed(window, cfg.beta, cfg.correction_window)):
            correction_step(policy, batch, cfg.beta, cfg.gamma, baseline=cvalue,
                            only_if_infeasible=False)
            corrections += 1
            batch = fresh_batch()
            window.append(estimate_J(batch.constraint_values, cfg.gamma))
        log.append({
            "epoch": epoch,
            "mean_reward": batch.mean_reward(),
            "mean_violations": batch.mean_violations(),
            "j_constraint": estimate_J(batch.constraint_values, cfg.gamma),
            "corrections": corrections,
        })

    # final feasibility loop: correct until a confirmation batch agrees
    window = []
    steps = 0
    while steps < cfg.final_correction_budget:
        batch = fresh_batch()
        window.append(estimate_J(batch.constraint_values, cfg.gamma))
        if not _more_corrections_needed(window, cfg.beta, cfg.correction_window):
            conf = collect(policy, env, cfg.confirmation_episodes, rng,
                           constraint=constraint, gamma=cfg.gamma)
            if estimate_J(conf.constraint_values, cfg.gamma) <= cfg.beta:
                break
            window.append(estimate_J(conf.constraint_values, cfg.gamma))
        correction_step(policy, batch, cfg.beta, cfg.gamma, baseline=cvalue,
                        only_if_infeasible=False)
        steps += 1
    return policy, value, log


def sample_demonstrations(policy, env, n_episodes: int, rng, budget=None,
                          max_rounds: int = 30) -> RolloutBatch:
    """Sample demonstration episodes that individually respect the budget.

    A policy trained to keep the constraint below the threshold in
    expectation still crosses it on some rollouts; those rollouts show the
    constraint being broken, not the behavior to imitate, so they are
    rejected and redrawn. ``budget`` defaults to the env's beta and is
    compared against each episode's discounted true-constraint accrual at the
    env's discount. If rejection sampling cannot fill the quota within
    ``max_rounds``, the lowest-accrual rejects top it up and a warning is
    emitted.
    """
    constraint = true_constraint_fn(env)
    budget = float(env.beta if budget is None else budget)
    kept = []
    rejects = []
    for _ in range(max_rounds):
        need = n_episodes - len(kept)
        if need <= 0:
            break
        batch = collect(policy, env, need, rng, constraint=constraint,
                        gamma=env.gamma)
        for i, traj in enumerate(batch.trajectories):
            crets = batch.constraint_returns[i]
            accrual = float(crets[0]) if len(crets) else 0.0
            entry = (traj, batch.log_probs[i], batch.returns[i],
                     batch.constraint_values[i], crets)
            if accrual <= budget:
                kept.append(entry)
            else:
                rejects.append((accrual, len(rejects), entry))
    if len(kept) < n_episodes:
        warnings.warn(
            f"budget filter kept {len(kept)}/{n_episodes} demonstrations after "
            f"{max_rounds} rounds; filling with the lowest-accrual rollouts")
        rejects.sort(key=lambda r: (r[0], r[1]))
        kept.extend(e for _, _, e in rejects[: n_episodes - len(kept)])
    trajs, logps, rets, cvals, crets = (list(z) for z in zip(*kept))
    out = RolloutBatch(trajs, logps, rets)
    out.constraint_values = cvals
    out.constraint_returns = crets
    return out


def generate_expert(env, cfg: PpoConfig, n_trajectories: int, rng):
    """Train a policy against the env's true constraint, then sample a
    demonstration dataset from it via ``sample_demonstrations``, so every
    demonstration individually stays within the episode budget.
    Returns (trajectories, policy, log)."""
    policy, _, log = train_constrained(env, true_constraint_fn(env), cfg, rng)
    batch = sample_demonstrations(policy, env, n_trajectories, rng,
                                  budget=cfg.beta)
    return batch.trajectories, policy, log


def true_constraint_fn(env):
    """The env's ground-truth constraint as a batched (states, actions) callable."""
    if not env.has_true_constraint:
        raise ConstraintUnavailableError(f"{env.name} defines no true constraint")

    def fn(states, actions):
        states = np.atleast_2d(np.asarray(states, dtype=float))
        return env.true_constraint_batch(states, np.asarray(actions).ravel())

    return fn
