"""Learning soft constraints of a constrained MDP from expert demonstrations.

The package alternates constrained policy optimization against the current
constraint estimate with a constraint adjustment step that pushes agent
behavior above a violation budget while keeping the expert below it. An
exact tabular counterpart (linear programs over occupancy measures) serves
as a verifiable reference for the alternation scheme.
"""

from .adjust import AdjustConfig, ConstraintNet, MixtureDataset, adjust, load_constraint
from .crl import PolicyNet, PpoConfig, RolloutBatch, collect, generate_expert, train_constrained
from .envs import CartPole, DiscretizationGrid, Gridworld, make_env
from .flow import RealNvpDensity, fit_expert_flow, load_flow, save_flow, trajectory_weights
from .icl import (
    IclConfig,
    IclResult,
    InverseConstraintLearner,
    IterationRecord,
    run,
)
from .metrics import accrual, cmse, nad, wasserstein_1d, wasserstein_2d
from .oracle import (
    AlternationResult,
    TabularMdp,
    adjust_lp,
    alternate,
    load_mdp_spec,
    policy_lp,
    reward_scaled_constraint,
    simplex_solve,
)
from .trajectories import Trajectory, load_trajectories, save_trajectories

__version__ = "0.1.0"

__all__ = [
    "AdjustConfig",
    "AlternationResult",
    "CartPole",
    "ConstraintNet",
    "DiscretizationGrid",
    "Gridworld",
    "IclConfig",
    "IclResult",
    "InverseConstraintLearner",
    "IterationRecord",
    "MixtureDataset",
    "PolicyNet",
    "PpoConfig",
    "RealNvpDensity",
    "RolloutBatch",
    "TabularMdp",
    "Trajectory",
    "accrual",
    "adjust",
    "adjust_lp",
    "alternate",
    "cmse",
    "collect",
    "fit_expert_flow",
    "generate_expert",
    "load_constraint",
    "load_flow",
    "load_mdp_spec",
    "load_trajectories",
    "make_env",
    "nad",
    "policy_lp",
    "reward_scaled_constraint",
    "run",
    "save_flow",
    "save_trajectories",
    "simplex_solve",
    "train_constrained",
    "trajectory_weights",
    "wasserstein_1d",
    "wasserstein_2d",
    "__version__",
]
