"""Desk-scale multi-turn environments with token-sequence actions.

GuessGame is a twenty-questions analog over a table of binary attributes;
ChainGame is a milestone-chasing analog of a text adventure.  Both speak a
closed vocabulary and answer each agent utterance with a single response
token appended to the history.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .hmdp import (
    EOS,
    ILLEGAL,
    INVALID,
    NO,
    YES,
    DialogueState,
    Trajectory,
    Transition,
    Utterance,
    Vocab,
    make_vocab,
)


@dataclass(frozen=True)
class Observation:
    state: DialogueState
    legal_hint: tuple[Utterance, ...] | None = None


# --- guessing game ----------------------------------------------------------


@dataclass(frozen=True)
class GuessGameConfig:
    """N entities described by D binary attributes; rows must be distinct so
    every entity is identifiable in principle."""

    entities: tuple[tuple[int, ...], ...]
    max_turns: int = 20
    reward_per_turn: float = -1.0
    success_reward: float = 0.0

    def __post_init__(self):
        n = len(self.entities)
        if n < 2:
            raise ValueError("need at least 2 entities")
        d = len(self.entities[0])
        if d < 1 or any(len(e) != d for e in self.entities):
            raise ValueError("attribute rows must be non-empty and equal length")
        if any(v not in (0, 1) for e in self.entities for v in e):
            raise ValueError("attributes must be binary")
        if len(set(self.entities)) != n:
            raise ValueError("entities must be pairwise distinct")
        if self.max_turns < 1:
            raise ValueError("max_turns must be >= 1")

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_attributes(self) -> int:
        return len(self.entities[0])


def binary_code_entities(n: int) -> tuple[tuple[int, ...], ...]:
    """Entities 0..n-1 described by the bits of their index."""
    d = max(1, int(np.ceil(np.log2(n))))
    return tuple(tuple((i >> b) & 1 for b in reversed(range(d))) for i in range(n))


class GuessGame:
    """Identify a hidden entity by asking about attributes or guessing.

    Utterance grammar: [ask, attr_i, eos] answers yes/no about the hidden
    entity and costs reward_per_turn; [guess, ent_j, eos] ends the episode
    with success_reward when correct, otherwise costs reward_per_turn and the
    game continues.  Anything else draws the invalid response at
    reward_per_turn.  The episode is cut off after max_turns utterances.
    """

    kind = "guess"

    def __init__(self, config: GuessGameConfig):
        self.config = config
        n, d = config.n_entities, config.n_attributes
        names = ["ask", "guess"]
        names += [f"attr{i}" for i in range(d)]
        names += [f"ent{j}" for j in range(n)]
        self.vocab: Vocab = make_vocab(names)
        self.ask_id = self.vocab.id_of("ask")
        self.guess_id = self.vocab.id_of("guess")
        self.attr_ids = tuple(self.vocab.id_of(f"attr{i}") for i in range(d))
        self.ent_ids = tuple(self.vocab.id_of(f"ent{j}") for j in range(n))
        self.utterance_len = 3
        self._state: DialogueState | None = None
        self._hidden: int | None = None
        self._done = True
        self.success = False

    def reset(self, seed: int) -> Observation:
        rng = np.random.default_rng(seed)
        self._hidden = int(rng.integers(self.config.n_entities))
        self._state = DialogueState()
        self._done = False
        self.success = False
        return Observation(self._state)

    def valid_utterances(self, obs: Observation | None = None) -> tuple[Utterance, ...]:
        asks = tuple(Utterance.of(self.ask_id, a, EOS) for a in self.attr_ids)
        guesses = tuple(Utterance.of(self.guess_id, e, EOS) for e in self.ent_ids)
        return asks + guesses

    def step(self, a: Utterance) -> tuple[Observation, float, bool]:
        if self._done or self._state is None:
            raise RuntimeError("episode finished")
        cfg = self.config
        toks = a.tokens
        reward = cfg.reward_per_turn
        done = False
        if len(toks) == 3 and toks[0] == self.ask_id and toks[1] in self.attr_ids:
            attr = self.attr_ids.index(toks[1])
            resp = YES if cfg.entities[self._hidden][attr] == 1 else NO
        elif len(toks) == 3 and toks[0] == self.guess_id and toks[1] in self.ent_ids:
            ent = self.ent_ids.index(toks[1])
            if ent == self._hidden:
                resp = YES
                reward = cfg.success_reward
                done = True
                self.success = True
            else:
                resp = NO
        else:
            resp = INVALID
        s = self._state
        s_next = DialogueState(s.history + toks + (resp,), s.turn_index + 1)
        if s_next.turn_index >= cfg.max_turns:
            done = True
        self._state = s_next
        self._done = done
        return Observation(s_next), reward, done


def _minimax_turns(entities: tuple[tuple[int, ...], ...]) -> int:
    """Worst-case count of reward-bearing turns to a guaranteed correct guess.

    Both question asking and elimination by wrong guesses are allowed; a
    correct guess from a singleton candidate set is free.  Exhaustive search
    with memoization over candidate sets.
    """
    n_attr = len(entities[0])

    @lru_cache(maxsize=None)
    def cost(cands: frozenset) -> int:
        if len(cands) == 1:
            return 0
        best = None
        for attr in range(n_attr):
            yes = frozenset(i for i in cands if entities[i][attr] == 1)
            if not yes or len(yes) == len(cands):
                continue
            c = 1 + max(cost(yes), cost(cands - yes))
            if best is None or c < best:
                best = c
        # guessing eliminates one candidate in the worst case
        worst_after_guess = 1 + cost(cands - {min(cands)})
        if best is None or worst_after_guess < best:
            best = worst_after_guess
        return best

    return cost(frozenset(range(len(entities))))


def optimal_return(config) -> float:
    """Best worst-case episode return under optimal play."""
    if isinstance(config, ChainGameConfig):
        return float(sum(config.milestone_rewards))
    if isinstance(config, GuessGameConfig):
        if config.n_entities > 32:
            raise ValueError("oracle too large")
        turns = _minimax_turns(config.entities)
        if turns + 1 > config.max_turns:
            raise ValueError("oracle too large")  # cut off before certainty
        return config.success_reward + config.reward_per_turn * turns
    raise TypeError(f"no oracle for {type(config).__name__}")


# --- milestone chain ---------------------------------------------------------


@dataclass(frozen=True)
class ChainGameConfig:
    """Ordered milestones; matching the next one pays its reward, anything
    else draws the illegal response at zero reward."""

    milestone_utterances: tuple[Utterance, ...]
    milestone_rewards: tuple[float, ...]
    step_budget: int
    vocab: Vocab

    def __post_init__(self):
        m = len(self.milestone_utterances)
        if m < 1:
            raise ValueError("need at least one milestone")
        if len(self.milestone_rewards) != m:
            raise ValueError("one reward per milestone")
        if self.step_budget < m:
            raise ValueError("step_budget must cover all milestones")


def make_chain_config(milestone_actions: Sequence[int], rewards: Sequence[float],
                      step_budget: int, n_actions: int | None = None) -> ChainGameConfig:
    """Build a chain config whose milestones are one-action utterances
    [act_i, eos] over a vocabulary of n_actions task tokens."""
    if n_actions is None:
        n_actions = max(milestone_actions) + 1
    if any(a < 0 or a >= n_actions for a in milestone_actions):
        raise ValueError("milestone action out of range")
    vocab = make_vocab([f"act{i}" for i in range(n_actions)])
    utts = tuple(Utterance.of(vocab.id_of(f"act{i}"), EOS) for i in milestone_actions)
    return ChainGameConfig(
        milestone_utterances=utts,
        milestone_rewards=tuple(float(r) for r in rewards),
        step_budget=step_budget,
        vocab=vocab,
    )


class ChainGame:
    kind = "chain"

    def __init__(self, config: ChainGameConfig):
        self.config = config
        self.vocab = config.vocab
        self.utterance_len = max(len(u) for u in config.milestone_utterances)
        self._state: DialogueState | None = None
        self._progress = 0
        self._done = True
        self.success = False

    def reset(self, seed: int) -> Observation:
        del seed  # dynamics are deterministic; the signature stays uniform
        self._state = DialogueState()
        self._progress = 0
        self._done = False
        self.success = False
        return Observation(self._state, legal_hint=self._hint())

    def _hint(self) -> tuple[Utterance, ...]:
        # the action inventory: all milestones, in fixed order
        seen = []
        for u in self.config.milestone_utterances:
            if u not in seen:
                seen.append(u)
        return tuple(seen)

    def valid_utterances(self, obs: Observation | None = None) -> tuple[Utterance, ...]:
        return self._hint()

    def step(self, a: Utterance) -> tuple[Observation, float, bool]:
        if self._done or self._state is None:
            raise RuntimeError("episode finished")
        cfg = self.config
        if a == cfg.milestone_utterances[self._progress]:
            reward = cfg.milestone_rewards[self._progress]
            self._progress += 1
            resp = YES
        else:
            reward = 0.0
            resp = ILLEGAL
        s = self._state
        s_next = DialogueState(s.history + a.tokens + (resp,), s.turn_index + 1)
        done = self._progress == len(cfg.milestone_utterances)
        if done:
            self.success = True
        if s_next.turn_index >= cfg.step_budget:
            done = True
        self._state = s_next
        self._done = done
        return Observation(s_next, legal_hint=self._hint()), reward, done


# --- scripted and random behaviors -------------------------------------------


class ScriptedGuesser:
    """Near-minimax play for GuessGame: track the candidate set implied by the
    whole history, ask the most balanced informative attribute, and guess as
    soon as one candidate remains.  Deterministic given the observation."""

    def __init__(self, env: GuessGame):
        self.env = env

    def _candidates(self, history: tuple[int, ...]) -> list[int]:
        env, cfg = self.env, self.env.config
        cands = list(range(cfg.n_entities))
        # history is a flat sequence of (utterance tokens.., response) turns
        i = 0
        turn_start = i
        while i < len(history):
            if history[i] == EOS and i + 1 < len(history):
                utt = history[turn_start : i + 1]
                resp = history[i + 1]
                if len(utt) == 3 and utt[0] == env.ask_id and utt[1] in env.attr_ids:
                    attr = env.attr_ids.index(utt[1])
                    want = 1 if resp == YES else 0
                    if resp in (YES, NO):
                        cands = [c for c in cands if cfg.entities[c][attr] == want]
                elif len(utt) == 3 and utt[0] == env.guess_id and utt[1] in env.ent_ids:
                    ent = env.ent_ids.index(utt[1])
                    if resp == NO and ent in cands:
                        cands.remove(ent)
                    elif resp == YES:
                        cands = [ent]
                i += 2
                turn_start = i
            else:
                i += 1
        return cands

    def sample_utterance(self, state: DialogueState, rng=None):
        env, cfg = self.env, self.env.config
        cands = self._candidates(state.history)
        if not cands:  # inconsistent history, bail out with a guess
            cands = list(range(cfg.n_entities))
        if len(cands) == 1:
            a = Utterance.of(env.guess_id, env.ent_ids[cands[0]], EOS)
            return a, np.zeros(len(a))
        best_attr, best_split = None, None
        for attr in range(cfg.n_attributes):
            ones = sum(cfg.entities[c][attr] for c in cands)
            if ones == 0 or ones == len(cands):
                continue
            worst = max(ones, len(cands) - ones)
            if best_split is None or worst < best_split:
                best_attr, best_split = attr, worst
        if best_attr is None:
            a = Utterance.of(env.guess_id, env.ent_ids[cands[0]], EOS)
        else:
            a = Utterance.of(env.ask_id, env.attr_ids[best_attr], EOS)
        return a, np.zeros(len(a))


class ScriptedChainWalker:
    """Plays the next unmet milestone, inferred from the history length."""

    def __init__(self, env: ChainGame):
        self.env = env

    def sample_utterance(self, state: DialogueState, rng=None):
        cfg = self.env.config
        # count milestones confirmed by a yes response
        progress = sum(1 for t in state.history if t == YES)
        progress = min(progress, len(cfg.milestone_utterances) - 1)
        a = cfg.milestone_utterances[progress]
        return a, np.zeros(len(a))


class UniformValidPolicy:
    """Uniform choice among the environment's syntactically valid utterances."""

    def __init__(self, env):
        self.env = env

    def sample_utterance(self, state: DialogueState, rng: np.random.Generator):
        opts = self.env.valid_utterances()
        a = opts[int(rng.integers(len(opts)))]
        return a, np.zeros(len(a))


class MixturePolicy:
    """Per-turn coin flip: probability epsilon acts uniformly at random,
    otherwise follows the scripted expert."""

    def __init__(self, epsilon: float, expert, random_policy):
        if not (0.0 <= epsilon <= 1.0):
            raise ValueError("epsilon must lie in [0, 1]")
        self.epsilon = epsilon
        self.expert = expert
        self.random_policy = random_policy

    def sample_utterance(self, state: DialogueState, rng: np.random.Generator):
        if rng.random() < self.epsilon:
            return self.random_policy.sample_utterance(state, rng)
        return self.expert.sample_utterance(state, rng)


def scripted_expert(env):
    if isinstance(env, GuessGame):
        return ScriptedGuesser(env)
    if isinstance(env, ChainGame):
        return ScriptedChainWalker(env)
    raise TypeError(f"no scripted expert for {type(env).__name__}")


def rollout_episode(env, policy, seed: int, rng: np.random.Generator, gamma: float) -> Trajectory:
    obs = env.reset(seed)
    transitions = []
    done = False
    while not done:
        s = obs.state
        a, _ = policy.sample_utterance(s, rng)
        obs, r, done = env.step(a)
        transitions.append(Transition(s=s, a=a, r=r, s_next=obs.state, done=done))
    return Trajectory.from_transitions(transitions, gamma)


def generate_offline_dataset(env, epsilon: float, episodes: int, seed: int,
                             gamma: float = 0.95) -> list[Trajectory]:
    """Roll a scripted-expert/uniform-random mixture for the given number of
    episodes.  Per-episode reset seeds and the mixture's coin flips both
    derive from ``seed``, so the dataset is reproducible."""
    behavior = MixturePolicy(epsilon, scripted_expert(env), UniformValidPolicy(env))
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
    out = []
    for ep in range(episodes):
        out.append(rollout_episode(env, behavior, seed * 1_000_003 + ep, rng, gamma))
    return out


# --- desk-scale default instances --------------------------------------------


def guess10_config() -> GuessGameConfig:
    return GuessGameConfig(entities=binary_code_entities(10))


def guess32_config() -> GuessGameConfig:
    return GuessGameConfig(entities=binary_code_entities(32))


def chain5_config() -> ChainGameConfig:
    return make_chain_config(
        milestone_actions=[0, 1, 2, 3, 4],
        rewards=[20.0, 40.0, 60.0, 80.0, 160.0],
        step_budget=12,
    )


def make_env(kind: str, **kwargs):
    if kind == "guess":
        if "entities" in kwargs and kwargs["entities"] is not None:
            cfg = GuessGameConfig(**kwargs)
        else:
            kwargs.pop("entities", None)
            n = kwargs.pop("n_entities", 10)
            cfg = GuessGameConfig(entities=binary_code_entities(n), **kwargs)
        return GuessGame(cfg)
    if kind == "chain":
        return ChainGame(make_chain_config(**kwargs)) if "milestone_actions" in kwargs else ChainGame(kwargs["config"])
    raise ValueError(f"unknown env kind {kind!r}")
