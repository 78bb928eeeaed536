"""Hierarchical actor-critic for multi-turn token-sequence games.

An utterance-level TD critic (twin Q and V models with Polyak-averaged
targets) supplies advantages to a token-level policy-gradient actor.  The
package also carries the imitation baselines it is usually compared against
and a tabular harness for studying fitted policy evaluation at the utterance
and token granularities.
"""

__version__ = "0.1.0"

from .hmdp import (DialogueState, Trajectory, Transition, Utterance,
                   load_trajectories, save_trajectories, token_discount)
from .envs import (ChainGame, GuessGame, generate_offline_dataset, make_env,
                   optimal_return, scripted_expert)
from .actor import TokenPolicy, BaselineValue
from .critic import CriticPair, advantage, make_critic, polyak_update
from .trainer import (Metrics, ReplayBuffer, TrainConfig, chai_train, evaluate,
                      filtered_bc_train, train)
from .fpe import (TabularMDP, FunctionClass, TokenView, UtteranceView, analytic_q,
                  advantage_error, compare_levels, default_theory_instance,
                  fitted_policy_evaluation, worst_case_level_gap)

__all__ = [
    "__version__",
    "DialogueState", "Trajectory", "Transition", "Utterance",
    "load_trajectories", "save_trajectories", "token_discount",
    "ChainGame", "GuessGame", "generate_offline_dataset", "make_env",
    "optimal_return", "scripted_expert",
    "TokenPolicy", "BaselineValue",
    "CriticPair", "advantage", "make_critic", "polyak_update",
    "Metrics", "ReplayBuffer", "TrainConfig", "chai_train", "evaluate",
    "filtered_bc_train", "train",
    "TabularMDP", "FunctionClass", "TokenView", "UtteranceView", "analytic_q",
    "advantage_error", "compare_levels", "default_theory_instance",
    "fitted_policy_evaluation", "worst_case_level_gap",
]
