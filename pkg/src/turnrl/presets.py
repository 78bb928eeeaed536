"""Ready-made desk-scale experiment setups.

These are the configurations the comparison scripts and the acceptance tests
share, so tuning lives in exactly one place.  Sizes are deliberately small:
every preset is meant to run on one core in minutes.
"""
from __future__ import annotations

from .envs import ChainGame, GuessGame, chain5_config, guess10_config, guess32_config
from .fpe import FunctionClass, default_theory_instance
from .trainer import TrainConfig


def guess10_env() -> GuessGame:
    return GuessGame(guess10_config())


def guess32_env() -> GuessGame:
    return GuessGame(guess32_config())


def chain5_env() -> ChainGame:
    return ChainGame(chain5_config())


_ONLINE_COMMON = dict(
    mode="online",
    iterations=150,
    rollouts_per_iter=8,
    batch_size=96,
    gamma=0.95,
    polyak_alpha=0.9,
    encoder="hashed",
    encoder_dim=192,
    encoder_window=64,
    scorer="linear",
    optimizer="adam",
    pretrain_episodes=150,
    pretrain_epsilon=0.9,
    pretrain_steps=150,
    pretrain_batch_size=64,
    eval_every=10,
    eval_episodes=32,
    eval_decode="greedy",
)


def online_archer_config(seed: int = 0) -> TrainConfig:
    """The main method on the guessing game: TD critic plus on-policy
    token-level policy gradient."""
    return TrainConfig(
        algorithm="archer",
        actor_objective="reinforce",
        v_loss_kind="mse",
        critic_updates_per_iter=15,
        actor_updates_per_iter=4,
        warmup_iters_no_actor=5,
        critic_lr=0.01,
        actor_lr=0.003,
        seed=seed,
        **_ONLINE_COMMON,
    ).validate()


def online_filtered_bc_config(seed: int = 0) -> TrainConfig:
    return TrainConfig(
        algorithm="filtered_bc",
        actor_objective="bc",
        critic_updates_per_iter=0,
        actor_updates_per_iter=8,
        warmup_iters_no_actor=0,
        filtered_fraction=0.1,
        actor_lr=0.01,
        seed=seed,
        **_ONLINE_COMMON,
    ).validate()


def online_chai_config(seed: int = 0) -> TrainConfig:
    return TrainConfig(
        algorithm="chai",
        actor_objective="bc",
        v_loss_kind="mse",
        critic_updates_per_iter=15,
        actor_updates_per_iter=0,
        warmup_iters_no_actor=0,
        chai_k=5,
        critic_lr=0.01,
        actor_lr=0.01,
        seed=seed,
        **_ONLINE_COMMON,
    ).validate()


OFFLINE_DATASET_EPSILON = 0.5
OFFLINE_DATASET_EPISODES = 2000
OFFLINE_DATASET_SEED = 77

_OFFLINE_COMMON = dict(
    mode="offline",
    iterations=60,
    rollouts_per_iter=0,
    batch_size=128,
    gamma=0.95,
    polyak_alpha=0.9,
    encoder="hashed",
    encoder_dim=192,
    encoder_window=64,
    scorer="linear",
    optimizer="adam",
    warmup_iters_no_actor=10,
    eval_every=10,
    eval_episodes=32,
    eval_decode="greedy",
)


def offline_config(variant: str, seed: int = 0) -> TrainConfig:
    """variant: iql_awr | sarsa_awr | filtered_bc | bc."""
    if variant == "iql_awr":
        return TrainConfig(
            algorithm="archer", actor_objective="awr", v_loss_kind="iql",
            iql_tau=0.7, awr_beta=1.0, critic_updates_per_iter=20,
            actor_updates_per_iter=6, critic_lr=0.01, actor_lr=0.01,
            seed=seed, **_OFFLINE_COMMON,
        ).validate()
    if variant == "sarsa_awr":
        return TrainConfig(
            algorithm="archer", actor_objective="awr", v_loss_kind="sarsa",
            awr_beta=1.0, critic_updates_per_iter=20, actor_updates_per_iter=6,
            critic_lr=0.01, actor_lr=0.01, seed=seed, **_OFFLINE_COMMON,
        ).validate()
    if variant == "filtered_bc":
        return TrainConfig(
            algorithm="filtered_bc", actor_objective="bc",
            critic_updates_per_iter=0, actor_updates_per_iter=6,
            warmup_iters_no_actor=0, filtered_fraction=0.1, actor_lr=0.01,
            seed=seed, **{k: v for k, v in _OFFLINE_COMMON.items()
                          if k != "warmup_iters_no_actor"},
        ).validate()
    if variant == "bc":
        return TrainConfig(
            algorithm="archer", actor_objective="bc",
            critic_updates_per_iter=0, actor_updates_per_iter=6,
            warmup_iters_no_actor=0, actor_lr=0.01, seed=seed,
            **{k: v for k, v in _OFFLINE_COMMON.items()
               if k != "warmup_iters_no_actor"},
        ).validate()
    raise ValueError(f"unknown offline variant {variant!r}")


FPE_GRID = tuple(2**k for k in range(7, 14))
FPE_SEEDS = tuple(range(20))
FPE_ROUNDS = 8


def fpe_sweep_spec(instance_seed: int = 0) -> dict:
    """Everything the two-level comparison sweep needs, in one bundle."""
    mdp, pi = default_theory_instance(instance_seed)
    return {
        "mdp": mdp,
        "pi": pi,
        "grid": FPE_GRID,
        "seeds": FPE_SEEDS,
        "fclass": FunctionClass(family="linear", dim=96, seed=5),
        "k_policy": FPE_ROUNDS,
        "ridge": 0.1,
    }
