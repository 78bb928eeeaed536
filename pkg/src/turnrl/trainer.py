"""Training loops: the hierarchical actor-critic, plus the imitation-style
baselines it is compared against.

One iteration of the main loop is: collect rollouts (online mode), a block of
critic updates (each a Q step, a V step, and a Polyak pull on the frozen
targets), optional token-baseline regression steps, and actor steps with the
configured objective, skipped entirely during warmup.  The offline mode runs
the same schedule against a fixed dataset and never steps the training
environment.
"""
from __future__ import annotations

import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .hmdp import DialogueState, Trajectory, Transition, Utterance, save_trajectories
from .approx import (DivergenceError, make_encoder, make_optimizer, make_scorer,
                     save_scorer)
from .actor import (BaselineValue, PgSample, TokenPolicy, awr_grad, baseline_loss,
                    bc_grad, normalize_coefs, reinforce_baseline_grad,
                    reinforce_grad)
from .critic import (advantage, make_critic, polyak_update, q_loss, q_loss_sarsa,
                     q_target_min, v_loss, v_loss_from_pairs, v_loss_iql)
from .envs import generate_offline_dataset, rollout_episode

EVAL_SEED_BASE = 1_000_000_000

_SUBSTREAMS = {
    "env": 3,
    "rollout": 5,
    "actor-init": 7,
    "critic-init": 11,
    "v-sample": 13,
    "fpe": 17,
    "pretrain": 19,
    "eval": 23,
    "actor-sample": 29,
    "batch": 31,
}


def substream(seed: int, name: str) -> np.random.Generator:
    """Named child generator of the root seed, so one component's draws can
    be changed without disturbing any other's."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(_SUBSTREAMS[name],)))


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


_ALGORITHMS = ("archer", "filtered_bc", "chai")
_OBJECTIVES = ("reinforce", "reinforce_baseline", "awr", "bc")
_V_LOSSES = ("mse", "iql", "sarsa")


@dataclass
class TrainConfig:
    mode: str = "online"
    algorithm: str = "archer"
    iterations: int = 100
    rollouts_per_iter: int = 128
    critic_updates_per_iter: int = 50
    actor_updates_per_iter: int = 3
    baseline_updates_per_iter: int = 60
    warmup_iters_no_actor: int = 10
    batch_size: int = 256
    gamma: float = 0.95
    polyak_alpha: float = 0.9
    actor_objective: str = "reinforce"
    v_loss_kind: str = "mse"
    iql_tau: float = 0.7
    awr_beta: float = 1.0
    awr_weight_max: float = 20.0
    normalize_advantages: bool = False
    v_samples: int = 1
    buffer_capacity: int = 10000
    # models
    encoder: str = "hashed"
    encoder_dim: int = 256
    encoder_buckets: int = 4
    encoder_window: int = 96
    scorer: str = "linear"
    hidden: int = 16
    critic_encoder: str = ""  # empty: share the actor's encoder mode
    optimizer: str = "adam"
    actor_lr: float = 0.01
    critic_lr: float = 0.01
    baseline_lr: float = 0.01
    # actor pretraining (online mode): behavior-cloned start shared by methods
    pretrain_episodes: int = 0
    pretrain_epsilon: float = 0.9
    pretrain_steps: int = 0
    pretrain_batch_size: int = 64
    pretrain_lr: float = 0.01
    # baselines
    filtered_fraction: float = 0.1
    chai_k: int = 5
    # evaluation / output
    eval_every: int = 10
    eval_episodes: int = 20
    eval_decode: str = "greedy"
    checkpoint_every: int = 0
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.mode not in ("online", "offline"):
            raise ConfigError("mode", f"must be online or offline, got {self.mode!r}")
        if self.algorithm not in _ALGORITHMS:
            raise ConfigError("algorithm", f"must be one of {_ALGORITHMS}, got {self.algorithm!r}")
        if self.actor_objective not in _OBJECTIVES:
            raise ConfigError("actor_objective", f"must be one of {_OBJECTIVES}, got {self.actor_objective!r}")
        if self.v_loss_kind not in _V_LOSSES:
            raise ConfigError("v_loss_kind", f"must be one of {_V_LOSSES}, got {self.v_loss_kind!r}")
        counts = ("iterations", "rollouts_per_iter", "critic_updates_per_iter",
                  "actor_updates_per_iter", "baseline_updates_per_iter",
                  "warmup_iters_no_actor", "v_samples", "pretrain_episodes",
                  "pretrain_steps", "eval_every", "checkpoint_every")
        for name in counts:
            if getattr(self, name) < 0:
                raise ConfigError(name, "must be >= 0")
        for name in ("batch_size", "buffer_capacity", "eval_episodes", "chai_k",
                     "pretrain_batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if not (0.0 <= self.gamma < 1.0):
            raise ConfigError("gamma", "must lie in [0, 1)")
        if not (0.0 <= self.polyak_alpha <= 1.0):
            raise ConfigError("polyak_alpha", "must lie in [0, 1]")
        if not (0.5 <= self.iql_tau < 1.0):
            raise ConfigError("iql_tau", "must lie in [0.5, 1)")
        if self.awr_beta < 0.0:
            raise ConfigError("awr_beta", "must be >= 0")
        if not (0.0 < self.filtered_fraction <= 1.0):
            raise ConfigError("filtered_fraction", "must lie in (0, 1]")
        if self.v_loss_kind == "sarsa" and self.mode != "offline":
            raise ConfigError("v_loss_kind", "sarsa bootstraps on dataset successor actions and needs offline mode")
        if self.eval_decode not in ("greedy", "sample"):
            raise ConfigError("eval_decode", "must be greedy or sample")
        return self


# --- storage -------------------------------------------------------------------


@dataclass
class Slot:
    s: DialogueState
    a: Utterance
    r: float
    s_next: DialogueState
    done: bool
    a_next: Utterance | None
    episode: int


def _episode_slots(traj: Trajectory, episode_id: int) -> list[Slot]:
    ts = traj.transitions
    out = []
    for i, tr in enumerate(ts):
        nxt = ts[i + 1].a if i + 1 < len(ts) else None
        out.append(Slot(s=tr.s, a=tr.a, r=tr.r, s_next=tr.s_next, done=tr.done,
                        a_next=nxt, episode=episode_id))
    return out


class ReplayBuffer:
    """Fixed-capacity transition ring with strict FIFO eviction and uniform
    sampling.  Whole episodes are tracked on the side so return-filtered
    imitation can tell which stored episodes are still fully present."""

    def __init__(self, capacity: int = 10000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._ring: list[Slot | None] = [None] * capacity
        self._inserted = 0
        self._next_episode = 0
        # episode id -> [live transition count, total, reward_sum, trajectory]
        self._episodes: dict[int, list] = {}

    def __len__(self) -> int:
        return min(self._inserted, self.capacity)

    @property
    def n_episodes(self) -> int:
        return len(self._episodes)

    def insert_episode(self, traj: Trajectory) -> int:
        ep = self._next_episode
        self._next_episode += 1
        slots = _episode_slots(traj, ep)
        self._episodes[ep] = [len(slots), len(slots), traj.reward_sum(), traj]
        for slot in slots:
            pos = self._inserted % self.capacity
            old = self._ring[pos]
            if old is not None:
                rec = self._episodes[old.episode]
                rec[0] -= 1
                if rec[0] == 0:
                    del self._episodes[old.episode]
            self._ring[pos] = slot
            self._inserted += 1
        return ep

    def sample(self, rng: np.random.Generator, k: int) -> list[Slot]:
        n = len(self)
        if n == 0:
            raise ValueError("empty buffer")
        idx = rng.integers(0, n, size=k)
        return [self._ring[int(i)] for i in idx]

    def full_episodes(self) -> list[tuple[int, float, Trajectory]]:
        """(id, undiscounted return, trajectory) for episodes with no evicted
        transitions, oldest first."""
        out = []
        for ep in sorted(self._episodes):
            live, total, ret, traj = self._episodes[ep]
            if live == total:
                out.append((ep, ret, traj))
        return out


class TransitionStore:
    """Immutable offline dataset with the buffer's sampling interface and the
    successor actions joined up front."""

    def __init__(self, trajectories: list[Trajectory]):
        if not trajectories:
            raise ValueError("empty dataset")
        self._slots: list[Slot] = []
        self._episodes: list[tuple[int, float, Trajectory]] = []
        for ep, traj in enumerate(trajectories):
            self._slots.extend(_episode_slots(traj, ep))
            self._episodes.append((ep, traj.reward_sum(), traj))

    def __len__(self) -> int:
        return len(self._slots)

    @property
    def n_episodes(self) -> int:
        return len(self._episodes)

    def sample(self, rng: np.random.Generator, k: int) -> list[Slot]:
        idx = rng.integers(0, len(self._slots), size=k)
        return [self._slots[int(i)] for i in idx]

    def full_episodes(self) -> list[tuple[int, float, Trajectory]]:
        return list(self._episodes)


def select_top_return(episodes: list[tuple[int, float, Trajectory]],
                      fraction: float) -> list[Trajectory]:
    """Top fraction of episodes by undiscounted return; ties go to the newer
    episode (larger id).  Fewer than 1/fraction episodes -> the single best."""
    if not episodes:
        raise ValueError("no complete episodes to filter")
    k = max(1, int(len(episodes) * fraction))
    ranked = sorted(episodes, key=lambda t: (t[1], t[0]))
    return [traj for _, _, traj in ranked[-k:]]


# --- evaluation -----------------------------------------------------------------


class GreedyDecode:
    """Argmax-decoding wrapper with the sampling-policy call shape."""

    def __init__(self, policy: TokenPolicy):
        self.policy = policy

    def sample_utterance(self, state: DialogueState, rng=None):
        a = self.policy.greedy_utterance(state)
        return a, np.zeros(len(a))


def chai_select(frozen_policy, critic, state: DialogueState, k: int,
                rng: np.random.Generator) -> Utterance:
    """Sample k candidate utterances from the frozen policy and return the one
    the online twin critic scores highest; ties keep the first-drawn."""
    if k < 1:
        raise ValueError("k must be >= 1")
    best, best_q = None, -np.inf
    for _ in range(k):
        a, _ = frozen_policy.sample_utterance(state, rng)
        f = critic.pair_feats(state, a)
        q = min(float(critic.q1.forward(f)[0]), float(critic.q2.forward(f)[0]))
        if q > best_q:
            best, best_q = a, q
    return best


class ChaiPolicy:
    """Frozen sampler reranked by the critic at every turn."""

    def __init__(self, frozen_policy, critic, k: int):
        self.frozen_policy = frozen_policy
        self.critic = critic
        self.k = k

    def sample_utterance(self, state: DialogueState, rng: np.random.Generator):
        a = chai_select(self.frozen_policy, self.critic, state, self.k, rng)
        return a, np.zeros(len(a))


@dataclass
class EvalResult:
    mean_return: float
    success_rate: float
    returns: list[float]


def evaluate(policy, env, episodes: int, seed: int = 0,
             decode: str = "greedy") -> EvalResult:
    """Frozen-policy rollouts on a held-out seed block disjoint from training
    reset seeds.  Returns are undiscounted sums."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if decode == "greedy" and isinstance(policy, TokenPolicy):
        policy = GreedyDecode(policy)
    rng = substream(seed, "eval")
    returns, successes = [], 0
    for i in range(episodes):
        traj = rollout_episode(env, policy, EVAL_SEED_BASE + seed + i, rng, gamma=1.0)
        returns.append(traj.reward_sum())
        successes += int(getattr(env, "success", False))
    return EvalResult(mean_return=float(np.mean(returns)),
                      success_rate=successes / episodes,
                      returns=returns)


# --- metrics --------------------------------------------------------------------

METRICS_HEADER = "iteration,eval_return,success_rate,q_loss,v_loss,mean_advantage,buffer_size"


@dataclass
class Metrics:
    records: list[dict] = field(default_factory=list)
    audit: list[str] = field(default_factory=list)
    models: object = None

    def add(self, **kw) -> None:
        self.records.append(kw)

    def tag(self, step: str) -> None:
        self.audit.append(step)

    @property
    def final_eval_return(self) -> float:
        return self.records[-1]["eval_return"] if self.records else float("nan")

    @property
    def best_success_rate(self) -> float:
        if not self.records:
            return 0.0
        return max(r["success_rate"] for r in self.records)

    def to_csv(self, path: str) -> None:
        """One row per iteration.  Wall-clock stays in the in-memory records
        only, so files from identically seeded runs are byte-identical."""
        cols = METRICS_HEADER.split(",")
        lines = [METRICS_HEADER]
        for rec in self.records:
            cells = []
            for c in cols:
                v = rec[c]
                cells.append(str(v) if isinstance(v, (int, np.integer)) else repr(float(v)))
            lines.append(",".join(cells))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


# --- model assembly ---------------------------------------------------------------


@dataclass
class Models:
    encoder: object
    critic: object
    policy: TokenPolicy
    baseline: BaselineValue | None
    opt_q1: object
    opt_q2: object
    opt_v1: object
    opt_v2: object
    opt_actor: object
    opt_baseline: object | None


def build_models(config: TrainConfig, vocab, max_len: int) -> Models:
    enc = make_encoder(config.encoder, vocab_size=vocab.size, dim=config.encoder_dim,
                       buckets=config.encoder_buckets, window=config.encoder_window)
    crit_enc = enc
    if config.critic_encoder and config.critic_encoder != config.encoder:
        crit_enc = make_encoder(config.critic_encoder, vocab_size=vocab.size,
                                dim=config.encoder_dim, buckets=config.encoder_buckets,
                                window=config.encoder_window)
    crit_rng = substream(config.seed, "critic-init")
    critic = make_critic(
        crit_enc, config.gamma,
        lambda: make_scorer(config.scorer, heads=1, in_dim=crit_enc.out_dim,
                            hidden=config.hidden, rng=crit_rng),
    )
    actor_rng = substream(config.seed, "actor-init")
    actor_scorer = make_scorer(config.scorer, heads=vocab.size, in_dim=enc.out_dim,
                               hidden=config.hidden, rng=actor_rng)
    policy = TokenPolicy(actor_scorer, enc, vocab, max_len)
    baseline = None
    opt_baseline = None
    if config.actor_objective == "reinforce_baseline":
        b_scorer = make_scorer(config.scorer, heads=1, in_dim=enc.out_dim,
                               hidden=config.hidden, rng=actor_rng)
        baseline = BaselineValue(b_scorer, enc)
        opt_baseline = make_optimizer(config.optimizer, config.baseline_lr)
    return Models(
        encoder=enc, critic=critic, policy=policy, baseline=baseline,
        opt_q1=make_optimizer(config.optimizer, config.critic_lr),
        opt_q2=make_optimizer(config.optimizer, config.critic_lr),
        opt_v1=make_optimizer(config.optimizer, config.critic_lr),
        opt_v2=make_optimizer(config.optimizer, config.critic_lr),
        opt_actor=make_optimizer(config.optimizer, config.actor_lr),
        opt_baseline=opt_baseline,
    )


def save_models(models: Models, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    save_scorer(os.path.join(directory, "actor.ckpt"), models.policy.scorer)
    c = models.critic
    for name, scorer in (("q1", c.q1), ("q2", c.q2), ("v1", c.v1), ("v2", c.v2)):
        save_scorer(os.path.join(directory, f"{name}.ckpt"), scorer)
    if models.baseline is not None:
        save_scorer(os.path.join(directory, "baseline.ckpt"), models.baseline.scorer)


# --- shared update steps ----------------------------------------------------------


def collect(env, policy, n_trajectories: int, rng: np.random.Generator,
            buffer: ReplayBuffer, seed: int, episode_counter: int,
            gamma: float) -> tuple[list[Trajectory], int]:
    """Roll n complete episodes and append them to the buffer.  Reset seeds
    are a deterministic function of the root seed and a running episode
    counter, keeping them disjoint from the held-out evaluation block."""
    out = []
    for _ in range(n_trajectories):
        traj = rollout_episode(env, policy, seed * 1_000_003 + episode_counter, rng, gamma)
        episode_counter += 1
        buffer.insert_episode(traj)
        out.append(traj)
    return out, episode_counter


def _critic_block(config: TrainConfig, models: Models, store, batch_rng,
                  metrics: Metrics, v_sampler) -> tuple[float, float]:
    """critic_updates_per_iter rounds of (Q step, V step, Polyak).  Returns the
    mean Q and V losses over the block."""
    critic = models.critic
    q_losses, v_losses = [], []
    for _ in range(config.critic_updates_per_iter):
        batch = store.sample(batch_rng, config.batch_size)
        transitions = [Transition(s=b.s, a=b.a, r=b.r, s_next=b.s_next, done=b.done)
                       for b in batch]
        if config.v_loss_kind == "sarsa":
            step = q_loss_sarsa(critic, transitions, [b.a_next for b in batch])
        else:
            step = q_loss(critic, transitions)
        if not np.isfinite(step.loss):
            raise DivergenceError("divergence detected in the Q loss")
        models.opt_q1.step(critic.q1, step.g1)
        models.opt_q2.step(critic.q2, step.g2)
        metrics.tag("critic.q")
        q_losses.append(step.loss)

        if config.v_loss_kind == "mse":
            vstep = v_sampler(batch)
        elif config.v_loss_kind == "iql":
            vstep = v_loss_iql(critic, transitions, config.iql_tau)
        else:  # sarsa: plain regression onto the frozen min-Q at dataset actions
            vstep = v_loss_from_pairs(critic, [(b.s, b.a) for b in batch])
        if not np.isfinite(vstep.loss):
            raise DivergenceError("divergence detected in the V loss")
        models.opt_v1.step(critic.v1, vstep.g1)
        models.opt_v2.step(critic.v2, vstep.g2)
        metrics.tag("critic.v")
        v_losses.append(vstep.loss)

        polyak_update(critic, config.polyak_alpha)
        metrics.tag("polyak")
    return float(np.mean(q_losses)), float(np.mean(v_losses))


def _actor_batch(config: TrainConfig, models: Models, slots: list[Slot],
                 sample_rng) -> list[PgSample]:
    """Assemble the actor batch for the configured objective.  On-policy
    estimators resample the action at each state from the current policy;
    imitation-style ones keep the stored action."""
    critic, policy = models.critic, models.policy
    out = []
    for slot in slots:
        if config.actor_objective in ("reinforce", "reinforce_baseline"):
            a, _ = policy.sample_utterance(slot.s, sample_rng)
        else:
            a = slot.a
        coef = 0.0
        if config.actor_objective != "bc":
            coef = advantage(critic, slot.s, a)
        out.append(PgSample(s=slot.s, a=a, coef=coef))
    if config.normalize_advantages and config.actor_objective != "bc":
        out = normalize_coefs(out)
    return out


def _actor_step(config: TrainConfig, models: Models, batch: list[PgSample]) -> float:
    """One gradient step of the configured objective; returns the mean
    coefficient for the metrics row."""
    policy = models.policy
    if config.actor_objective == "reinforce":
        grad = reinforce_grad(policy, batch)
    elif config.actor_objective == "reinforce_baseline":
        grad = reinforce_baseline_grad(policy, models.baseline, batch)
    elif config.actor_objective == "awr":
        grad, _ = awr_grad(policy, batch, config.awr_beta, config.awr_weight_max)
    else:
        grad = bc_grad(policy, batch)
    models.opt_actor.step(policy.scorer, grad)
    return float(np.mean([b.coef for b in batch])) if batch else 0.0


def bc_pretrain(config: TrainConfig, models: Models, trajectories: list[Trajectory],
                metrics: Metrics) -> None:
    """Behavior-clone the actor on a fixed trajectory set before any RL.
    Identical seeds and data give every compared method the same start.
    Uses its own optimizer so the RL learning rate stays a separate knob."""
    slots = []
    for ep, traj in enumerate(trajectories):
        slots.extend(_episode_slots(traj, ep))
    if not slots:
        return
    rng = substream(config.seed, "pretrain")
    opt = make_optimizer(config.optimizer, config.pretrain_lr)
    for _ in range(config.pretrain_steps):
        idx = rng.integers(0, len(slots), size=config.pretrain_batch_size)
        batch = [PgSample(s=slots[int(i)].s, a=slots[int(i)].a, coef=0.0) for i in idx]
        grad = bc_grad(models.policy, batch)
        opt.step(models.policy.scorer, grad)
        metrics.tag("pretrain.bc")


# --- main loops -------------------------------------------------------------------


def _run_dir_setup(run_dir: str | None) -> str | None:
    if run_dir is None:
        return None
    os.makedirs(run_dir, exist_ok=True)
    os.makedirs(os.path.join(run_dir, "checkpoints"), exist_ok=True)
    os.makedirs(os.path.join(run_dir, "trajectories"), exist_ok=True)
    return run_dir


def _maybe_checkpoint(config: TrainConfig, models: Models, run_dir: str | None,
                      iteration: int) -> None:
    if run_dir is None or config.checkpoint_every <= 0:
        return
    if (iteration + 1) % config.checkpoint_every == 0:
        save_models(models, os.path.join(run_dir, "checkpoints", f"iter{iteration + 1:05d}"))


def _diagnostic_dump(models: Models, run_dir: str | None) -> None:
    if run_dir is not None:
        save_models(models, os.path.join(run_dir, "checkpoints", "diverged"))


def train(config: TrainConfig, env=None, dataset: list[Trajectory] | None = None,
          run_dir: str | None = None) -> Metrics:
    """The full loop for the hierarchical method and its single-model ablations
    (actor objective bc reduces to supervised imitation when critic updates
    are zero).  Online mode needs an environment; offline mode needs a dataset
    and touches the environment only inside evaluation rollouts."""
    config.validate()
    if env is None:
        raise ConfigError("mode", "an environment is required (it supplies the vocabulary and hosts evaluation)")
    if config.mode == "offline" and dataset is None:
        raise ConfigError("mode", "offline training requires a dataset")
    if config.algorithm != "archer":
        raise ConfigError("algorithm", "train() runs the main method; use the dedicated entry points for baselines")
    run_dir = _run_dir_setup(run_dir)
    models = build_models(config, env.vocab, env.utterance_len)
    metrics = Metrics()

    rollout_rng = substream(config.seed, "rollout")
    batch_rng = substream(config.seed, "batch")
    vsamp_rng = substream(config.seed, "v-sample")
    actor_rng = substream(config.seed, "actor-sample")

    if config.mode == "online":
        store: object = ReplayBuffer(config.buffer_capacity)
    else:
        store = TransitionStore(dataset)

    if config.mode == "online" and config.pretrain_episodes > 0:
        demo = generate_offline_dataset(env, config.pretrain_epsilon,
                                        config.pretrain_episodes, config.seed,
                                        gamma=config.gamma)
        bc_pretrain(config, models, demo, metrics)

    def v_sampler(batch):
        return v_loss(models.critic, [b.s for b in batch], models.policy,
                      vsamp_rng, m=config.v_samples)

    episode_counter = 0
    last_eval = EvalResult(float("nan"), float("nan"), [])
    try:
        for it in range(config.iterations):
            t0 = time.perf_counter()
            if config.mode == "online":
                _, episode_counter = collect(env, models.policy, config.rollouts_per_iter,
                                             rollout_rng, store, config.seed,
                                             episode_counter, config.gamma)
                metrics.tag("collect")

            ql, vl = (0.0, 0.0)
            if config.critic_updates_per_iter > 0 and len(store) > 0:
                ql, vl = _critic_block(config, models, store, batch_rng,
                                       metrics, v_sampler)

            if (models.baseline is not None and it >= config.warmup_iters_no_actor
                    and len(store) > 0):
                for _ in range(config.baseline_updates_per_iter):
                    slots = store.sample(batch_rng, config.batch_size)
                    batch = _actor_batch(config, models, slots, actor_rng)
                    loss, grad = baseline_loss(models.baseline, batch)
                    if not np.isfinite(loss):
                        raise DivergenceError("divergence detected in the baseline loss")
                    models.opt_baseline.step(models.baseline.scorer, grad)
                    metrics.tag("baseline")

            mean_adv = 0.0
            if it >= config.warmup_iters_no_actor and len(store) > 0:
                advs = []
                for _ in range(config.actor_updates_per_iter):
                    slots = store.sample(batch_rng, config.batch_size)
                    batch = _actor_batch(config, models, slots, actor_rng)
                    advs.append(_actor_step(config, models, batch))
                    metrics.tag("actor")
                if advs:
                    mean_adv = float(np.mean(advs))

            if config.eval_every > 0 and ((it + 1) % config.eval_every == 0
                                          or it + 1 == config.iterations):
                last_eval = evaluate(models.policy, env, config.eval_episodes,
                                     seed=config.seed, decode=config.eval_decode)
                metrics.tag("eval")

            metrics.add(iteration=it, eval_return=last_eval.mean_return,
                        success_rate=last_eval.success_rate, q_loss=ql, v_loss=vl,
                        mean_advantage=mean_adv, buffer_size=len(store),
                        wall_clock=time.perf_counter() - t0)
            _maybe_checkpoint(config, models, run_dir, it)
    except DivergenceError:
        _diagnostic_dump(models, run_dir)
        raise

    if run_dir is not None:
        metrics.to_csv(os.path.join(run_dir, "metrics.csv"))
        save_models(models, os.path.join(run_dir, "checkpoints", "final"))
    metrics.models = models
    return metrics


def filtered_bc_train(config: TrainConfig, env=None,
                      dataset: list[Trajectory] | None = None,
                      run_dir: str | None = None) -> Metrics:
    """Imitation on the top-return slice.  Online mode keeps the usual rollout
    buffer and re-filters it every iteration; offline mode filters the fixed
    dataset once."""
    config.validate()
    if env is None:
        raise ConfigError("mode", "an environment is required (it supplies the vocabulary and hosts evaluation)")
    if config.mode == "offline" and dataset is None:
        raise ConfigError("mode", "offline training requires a dataset")
    run_dir = _run_dir_setup(run_dir)
    models = build_models(config, env.vocab, env.utterance_len)
    metrics = Metrics()
    rollout_rng = substream(config.seed, "rollout")
    batch_rng = substream(config.seed, "batch")

    if config.mode == "online":
        store: object = ReplayBuffer(config.buffer_capacity)
    else:
        store = TransitionStore(dataset)

    if config.mode == "online" and config.pretrain_episodes > 0:
        demo = generate_offline_dataset(env, config.pretrain_epsilon,
                                        config.pretrain_episodes, config.seed,
                                        gamma=config.gamma)
        bc_pretrain(config, models, demo, metrics)

    episode_counter = 0
    last_eval = EvalResult(float("nan"), float("nan"), [])
    for it in range(config.iterations):
        t0 = time.perf_counter()
        if config.mode == "online":
            _, episode_counter = collect(env, models.policy, config.rollouts_per_iter,
                                         rollout_rng, store, config.seed,
                                         episode_counter, config.gamma)
            metrics.tag("collect")
        chosen = select_top_return(store.full_episodes(), config.filtered_fraction)
        slots = []
        for ep, traj in enumerate(chosen):
            slots.extend(_episode_slots(traj, ep))
        for _ in range(config.actor_updates_per_iter):
            idx = batch_rng.integers(0, len(slots), size=config.batch_size)
            batch = [PgSample(s=slots[int(i)].s, a=slots[int(i)].a, coef=0.0) for i in idx]
            grad = bc_grad(models.policy, batch)
            models.opt_actor.step(models.policy.scorer, grad)
            metrics.tag("actor")
        if config.eval_every > 0 and ((it + 1) % config.eval_every == 0
                                      or it + 1 == config.iterations):
            last_eval = evaluate(models.policy, env, config.eval_episodes,
                                 seed=config.seed, decode=config.eval_decode)
            metrics.tag("eval")
        metrics.add(iteration=it, eval_return=last_eval.mean_return,
                    success_rate=last_eval.success_rate, q_loss=0.0, v_loss=0.0,
                    mean_advantage=0.0, buffer_size=len(store),
                    wall_clock=time.perf_counter() - t0)
        _maybe_checkpoint(config, models, run_dir, it)

    if run_dir is not None:
        metrics.to_csv(os.path.join(run_dir, "metrics.csv"))
        save_models(models, os.path.join(run_dir, "checkpoints", "final"))
    metrics.models = models
    return metrics


def chai_train(config: TrainConfig, env=None,
               dataset: list[Trajectory] | None = None,
               run_dir: str | None = None) -> Metrics:
    """Frozen behavior-cloned sampler with a learned utterance critic that
    reranks k candidates per turn.  Only the critic trains; collection,
    V-loss action sampling, and evaluation all route through the reranker."""
    config.validate()
    if env is None:
        raise ConfigError("mode", "an environment is required (it supplies the vocabulary and hosts evaluation)")
    if config.mode == "offline" and dataset is None:
        raise ConfigError("mode", "offline training requires a dataset")
    run_dir = _run_dir_setup(run_dir)
    models = build_models(config, env.vocab, env.utterance_len)
    metrics = Metrics()
    rollout_rng = substream(config.seed, "rollout")
    batch_rng = substream(config.seed, "batch")
    vsamp_rng = substream(config.seed, "v-sample")

    if config.mode == "online":
        store: object = ReplayBuffer(config.buffer_capacity)
    else:
        store = TransitionStore(dataset)

    demo = None
    if config.mode == "online" and config.pretrain_episodes > 0:
        demo = generate_offline_dataset(env, config.pretrain_epsilon,
                                        config.pretrain_episodes, config.seed,
                                        gamma=config.gamma)
    elif config.mode == "offline":
        demo = dataset
    if demo:
        bc_pretrain(config, models, demo, metrics)

    rerank = ChaiPolicy(models.policy, models.critic, config.chai_k)

    def v_sampler(batch):
        pairs = [(b.s, chai_select(models.policy, models.critic, b.s,
                                   config.chai_k, vsamp_rng)) for b in batch]
        return v_loss_from_pairs(models.critic, pairs)

    episode_counter = 0
    last_eval = EvalResult(float("nan"), float("nan"), [])
    try:
        for it in range(config.iterations):
            t0 = time.perf_counter()
            if config.mode == "online":
                _, episode_counter = collect(env, rerank, config.rollouts_per_iter,
                                             rollout_rng, store, config.seed,
                                             episode_counter, config.gamma)
                metrics.tag("collect")
            ql, vl = (0.0, 0.0)
            if config.critic_updates_per_iter > 0 and len(store) > 0:
                ql, vl = _critic_block(config, models, store, batch_rng,
                                       metrics, v_sampler)
            if config.eval_every > 0 and ((it + 1) % config.eval_every == 0
                                          or it + 1 == config.iterations):
                last_eval = evaluate(rerank, env, config.eval_episodes,
                                     seed=config.seed, decode="sample")
                metrics.tag("eval")
            metrics.add(iteration=it, eval_return=last_eval.mean_return,
                        success_rate=last_eval.success_rate, q_loss=ql, v_loss=vl,
                        mean_advantage=0.0, buffer_size=len(store),
                        wall_clock=time.perf_counter() - t0)
            _maybe_checkpoint(config, models, run_dir, it)
    except DivergenceError:
        _diagnostic_dump(models, run_dir)
        raise

    if run_dir is not None:
        metrics.to_csv(os.path.join(run_dir, "metrics.csv"))
        save_models(models, os.path.join(run_dir, "checkpoints", "final"))
    metrics.models = models
    return metrics
