"""Top-level alternation: constrained policy training and constraint
adjustment, with flow-based trajectory reweighting.

One run fits the expert density model once, then repeats: train a fresh
policy against the current learned constraint, add it to the policy set with
its mean dissimilarity weight, sample an adjustment dataset from the weighted
mixture, and descend the soft adjustment loss. Per-iteration accruals, the
transport distance to the expert accrual, and (when the env defines a ground
truth) the constraint MSE are always recorded.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .adjust import AdjustConfig, ConstraintNet, MixtureDataset, adjust, sample_mixture
from .crl import PolicyNet, PpoConfig, collect, train_constrained
from .envs import make_env
from .flow import fit_expert_flow, nll_stats, trajectory_weights
from .metrics import accrual, cmse, nad
from .trajectories import Trajectory

VARIANTS = ("full", "no-mixture", "uniform-mixture")

# Table defaults: policy-training epochs per environment family.
PPO_EPOCHS_DEFAULT = {"gridworld": 500, "cartpole": 300}


@dataclass
class IclConfig:
    """Flat configuration for one run; None means take the env default."""

    env: str = "gridworld-a"
    n_iterations: int = 10
    ppo_epochs: int | None = None
    adjust_epochs: int = 20
    beta: float | None = None
    gamma: float | None = None
    lam: float = 15.0
    eta_correction: float = 2.5e-5
    eta_policy: float = 5e-4
    eta_constraint: float = 5e-4
    eps: float = 0.0
    seed: int = 1
    variant: str = "full"
    n_trajectories: int = 50
    episodes_per_epoch: int = 20
    updates_per_epoch: int = 25
    minibatch: int = 64
    clip: float = 0.1
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_corrections: int = 25
    correction_window: int = 5
    correction_baseline: bool = True
    final_correction_budget: int = 300
    confirmation_episodes: int = 60
    flow_epochs: int = 200
    flow_batch: int = 64
    flow_lr: float = 5e-4

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be positive")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")

    def resolved(self, env) -> "IclConfig":
        """Fill None fields from the environment's defaults."""
        family = "gridworld" if env.state_dim == 2 else "cartpole"
        return dataclasses.replace(
            self,
            ppo_epochs=self.ppo_epochs if self.ppo_epochs is not None else PPO_EPOCHS_DEFAULT[family],
            beta=self.beta if self.beta is not None else env.beta,
            gamma=self.gamma if self.gamma is not None else env.gamma,
        )

    def ppo_config(self) -> PpoConfig:
        return PpoConfig(
            gamma=self.gamma, beta=self.beta, epochs=self.ppo_epochs,
            episodes_per_epoch=self.episodes_per_epoch,
            updates_per_epoch=self.updates_per_epoch, minibatch=self.minibatch,
            clip=self.clip, entropy_coef=self.entropy_coef,
            eta_correction=self.eta_correction, eta_policy=self.eta_policy,
            value_coef=self.value_coef, max_corrections=self.max_corrections,
            correction_window=self.correction_window,
            correction_baseline=self.correction_baseline,
            final_correction_budget=self.final_correction_budget,
            confirmation_episodes=self.confirmation_episodes,
        )

    def adjust_config(self) -> AdjustConfig:
        return AdjustConfig(beta=self.beta, gamma=self.gamma,
                            epochs=self.adjust_epochs, lam=self.lam,
                            eta=self.eta_constraint)


def ablation_variant(cfg: IclConfig, variant: str) -> IclConfig:
    """Return the config switched to an ablation variant.

    "no-mixture" adjusts against the newest policy's dataset only;
    "uniform-mixture" keeps the policy mixture but drops all reweighting
    (equal policy weights, unit trajectory weights); "full" is the standard
    run. Both ablations use unit trajectory weights.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    return dataclasses.replace(cfg, variant=variant)


def converged(nad_value: float, eps: float) -> bool:
    """Accrual-distance stopping rule; the default eps=0 never fires for
    stochastic policies."""
    return nad_value <= eps


@dataclass
class IterationRecord:
    iteration: int
    nad: float
    cmse: float  # NaN when the env has no true constraint
    policy_weight: float
    j_expert: float  # expert term of the soft loss after adjustment
    accrual: np.ndarray = field(repr=False, default=None)
    constraint_grid: np.ndarray = field(repr=False, default=None)
    train_log: list = field(repr=False, default_factory=list)
    adjust_log: list = field(repr=False, default_factory=list)


@dataclass
class IclResult:
    config: IclConfig
    constraint: ConstraintNet
    policies: list
    policy_weights: list
    history: list[IterationRecord]
    flow: object
    flow_stats: tuple
    expert_accrual: np.ndarray
    converged_at: int | None = None

    @property
    def final_cmse(self) -> float:
        return self.history[-1].cmse

    @property
    def final_nad(self) -> float:
        return self.history[-1].nad


def run(cfg: IclConfig, expert_trajectories, env=None,
        on_iteration=None) -> IclResult:
    """Execute the full alternation for one seed.

    ``on_iteration`` is an optional callback receiving each IterationRecord
    as it is produced (used for incremental persistence).
    """
    if not expert_trajectories:
        raise ValueError("need a non-empty expert dataset")
    if env is None:
        env = make_env(cfg.env)
    cfg = cfg.resolved(env)
    rng = np.random.default_rng(cfg.seed)

    model = fit_expert_flow(env, expert_trajectories, epochs=cfg.flow_epochs,
                            batch_size=cfg.flow_batch, learning_rate=cfg.flow_lr,
                            seed=cfg.seed)
    stats = nll_stats(model, env, expert_trajectories)
    expert_acc = accrual(expert_trajectories, env)

    constraint = ConstraintNet(env, rng, eta=cfg.eta_constraint)
    policies: list[PolicyNet] = []
    weights: list[float] = []
    history: list[IterationRecord] = []
    converged_at = None

    for i in range(1, cfg.n_iterations + 1):
        policy, _, train_log = train_constrained(env, constraint, cfg.ppo_config(), rng)
        d_pi = collect(policy, env, cfg.n_trajectories, rng, gamma=cfg.gamma).trajectories
        if cfg.variant == "full":
            w_i = float(trajectory_weights(model, env, d_pi, stats).mean())
        else:
            w_i = 1.0
        policies.append(policy)
        weights.append(w_i)

        if cfg.variant == "no-mixture":
            mix_trajs = d_pi
        elif cfg.variant == "uniform-mixture":
            mix_trajs = sample_mixture(policies, np.ones(len(policies)), env,
                                       cfg.n_trajectories, rng)
        else:
            mix_trajs = sample_mixture(policies, np.array(weights), env,
                                       cfg.n_trajectories, rng)

        if cfg.variant == "full":
            tw = trajectory_weights(model, env, mix_trajs, stats)
            if tw.sum() <= 0.0:
                warnings.warn(
                    "all mixture trajectories weighted zero; falling back to "
                    "uniform trajectory weights", RuntimeWarning)
                tw = np.ones(len(mix_trajs))
        else:
            tw = np.ones(len(mix_trajs))

        adjust_log = adjust(constraint, MixtureDataset(mix_trajs, tw),
                            expert_trajectories, cfg.adjust_config())

        acc_i = accrual(d_pi, env)
        nad_i = nad(expert_acc, acc_i, env)
        if env.has_true_constraint:
            cmse_i = cmse(constraint.values, env)
        else:
            cmse_i = float("nan")
        record = IterationRecord(
            iteration=i, nad=nad_i, cmse=cmse_i, policy_weight=w_i,
            j_expert=adjust_log[-1]["j_expert"], accrual=acc_i,
            constraint_grid=constraint.grid_values(),
            train_log=train_log, adjust_log=adjust_log,
        )
        history.append(record)
        if on_iteration is not None:
            on_iteration(record)
        if converged(nad_i, cfg.eps):
            converged_at = i
            break

    return IclResult(
        config=cfg, constraint=constraint, policies=policies,
        policy_weights=weights, history=history, flow=model, flow_stats=stats,
        expert_accrual=expert_acc, converged_at=converged_at,
    )


class InverseConstraintLearner(BaseEstimator):
    """Estimator-style front end: fit on expert trajectories, predict
    constraint values for constraint-input feature rows.

    ``fit`` expects a sequence of Trajectory objects from the configured
    environment; ``predict`` evaluates the learned constraint on an array of
    constraint-input features; ``score`` returns the negative constraint MSE
    against the env's ground truth (higher is better).
    """

    def __init__(self, env="gridworld-a", n_iterations=10, ppo_epochs=None,
                 adjust_epochs=20, beta=None, gamma=None, lam=15.0,
                 eta_correction=2.5e-5, eta_policy=5e-4, eta_constraint=5e-4,
                 eps=0.0, variant="full", random_state=1):
        self.env = env
        self.n_iterations = n_iterations
        self.ppo_epochs = ppo_epochs
        self.adjust_epochs = adjust_epochs
        self.beta = beta
        self.gamma = gamma
        self.lam = lam
        self.eta_correction = eta_correction
        self.eta_policy = eta_policy
        self.eta_constraint = eta_constraint
        self.eps = eps
        self.variant = variant
        self.random_state = random_state

    def _config(self) -> IclConfig:
        return IclConfig(
            env=self.env, n_iterations=self.n_iterations, ppo_epochs=self.ppo_epochs,
            adjust_epochs=self.adjust_epochs, beta=self.beta, gamma=self.gamma,
            lam=self.lam, eta_correction=self.eta_correction,
            eta_policy=self.eta_policy, eta_constraint=self.eta_constraint,
            eps=self.eps, variant=self.variant, seed=self.random_state,
        )

    def fit(self, X, y=None):
        if not hasattr(X, "__len__") or not all(isinstance(t, Trajectory) for t in X):
            raise TypeError("X must be a sequence of Trajectory objects")
        result = run(self._config(), list(X))
        self.result_ = result
        self.constraint_ = result.constraint
        self.policy_ = result.policies[-1]
        self.history_ = result.history
        self.n_features_in_ = result.constraint.env.constraint_dim
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "constraint_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"expected {self.n_features_in_} constraint-input features, got {X.shape[1]}")
        return self.constraint_.values(X)

    def score(self, X=None, y=None) -> float:
        check_is_fitted(self, "constraint_")
        return -cmse(self.constraint_.values, self.constraint_.env)
