"""Utterance-level twin Q/V critic with frozen bootstrap targets.

Four online scorers (q1, q2, v1, v2) share one feature encoder; each has a
frozen copy that supplies bootstrap targets and trails the online model
through Polyak averaging.  Pessimism enters only through the min over the
two copies.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .approx import GradBuffer
from .hmdp import DialogueState, Transition, Utterance


@dataclass
class CriticPair:
    q1: object
    q2: object
    v1: object
    v2: object
    q1_target: object
    q2_target: object
    v1_target: object
    v2_target: object
    encoder: object
    gamma: float

    def state_feats(self, s: DialogueState):
        return self.encoder.encode(s.history)

    def pair_feats(self, s: DialogueState, a: Utterance):
        return self.encoder.encode(s.history + a.tokens)


def make_critic(encoder, gamma: float, scorer_factory) -> CriticPair:
    """scorer_factory() must return a fresh single-head scorer each call."""
    if not (0.0 <= gamma < 1.0):
        raise ValueError("gamma must lie in [0, 1)")
    q1, q2, v1, v2 = (scorer_factory() for _ in range(4))
    return CriticPair(
        q1=q1, q2=q2, v1=v1, v2=v2,
        q1_target=q1.clone(), q2_target=q2.clone(),
        v1_target=v1.clone(), v2_target=v2.clone(),
        encoder=encoder, gamma=gamma,
    )


@dataclass
class QStep:
    loss: float
    g1: GradBuffer
    g2: GradBuffer
    skipped: int = 0


@dataclass
class VStep:
    loss: float
    g1: GradBuffer
    g2: GradBuffer


def q_loss(critic: CriticPair, batch: Sequence[Transition]) -> QStep:
    """One-step TD regression of both Q copies.

    Target for copy i is r + gamma * (1 - done) * Vbar_i(s'), with the frozen
    V copy paired to the same index.  Loss is the mean squared error over the
    batch and over both copies; targets take no gradient.
    """
    if not batch:
        raise ValueError("empty batch")
    g1, g2 = critic.q1.zero_grad(), critic.q2.zero_grad()
    total = 0.0
    n = len(batch)
    for tr in batch:
        f_sa = critic.pair_feats(tr.s, tr.a)
        cont = 0.0 if tr.done else critic.gamma
        if cont != 0.0:
            f_next = critic.state_feats(tr.s_next)
            t1 = tr.r + cont * float(critic.v1_target.forward(f_next)[0])
            t2 = tr.r + cont * float(critic.v2_target.forward(f_next)[0])
        else:
            t1 = t2 = tr.r
        e1 = float(critic.q1.forward(f_sa)[0]) - t1
        e2 = float(critic.q2.forward(f_sa)[0]) - t2
        total += e1 * e1 + e2 * e2
        g1.add_(critic.q1.backward(f_sa, np.array([e1 / n])))
        g2.add_(critic.q2.backward(f_sa, np.array([e2 / n])))
    return QStep(loss=total / (2 * n), g1=g1, g2=g2)


def q_target_min(critic: CriticPair, s: DialogueState, a: Utterance) -> float:
    """Frozen pessimistic target min(q1_target, q2_target)(s, a)."""
    f = critic.pair_feats(s, a)
    return min(float(critic.q1_target.forward(f)[0]), float(critic.q2_target.forward(f)[0]))


def v_loss_from_pairs(critic: CriticPair, pairs: Sequence[tuple[DialogueState, Utterance]]) -> VStep:
    """Squared regression of both V copies onto the frozen min-Q at the given
    (state, action) pairs.  Shared by the plain and expectile variants so the
    two stay comparable sample for sample."""
    if not pairs:
        raise ValueError("empty batch")
    g1, g2 = critic.v1.zero_grad(), critic.v2.zero_grad()
    total = 0.0
    n = len(pairs)
    for s, a in pairs:
        f_s = critic.state_feats(s)
        target = q_target_min(critic, s, a)
        e1 = float(critic.v1.forward(f_s)[0]) - target
        e2 = float(critic.v2.forward(f_s)[0]) - target
        total += e1 * e1 + e2 * e2
        g1.add_(critic.v1.backward(f_s, np.array([2.0 * e1 / (2 * n)])))
        g2.add_(critic.v2.backward(f_s, np.array([2.0 * e2 / (2 * n)])))
    return VStep(loss=total / (2 * n), g1=g1, g2=g2)


def v_loss(critic: CriticPair, states: Sequence[DialogueState], actor,
           rng: np.random.Generator, m: int = 1) -> VStep:
    """On-policy V regression: for each state draw m actions from the actor
    and regress V onto the frozen min-Q at those samples."""
    pairs = []
    for s in states:
        for _ in range(m):
            a, _ = actor.sample_utterance(s, rng)
            pairs.append((s, a))
    return v_loss_from_pairs(critic, pairs)


def expectile_weight(tau: float, u: float) -> float:
    return abs(tau - (1.0 if u < 0.0 else 0.0))


def v_loss_iql_from_pairs(critic: CriticPair,
                          pairs: Sequence[tuple[DialogueState, Utterance]],
                          tau: float) -> VStep:
    """Expectile regression of V onto the frozen min-Q.

    With u = Qbar - V, each sample contributes |tau - 1{u < 0}| * u^2; tau
    above one half leans the fit toward the upper tail of the target
    distribution, which stands in for an in-sample max.  tau = 0.5 reduces to
    exactly half the squared loss.
    """
    if not pairs:
        raise ValueError("empty batch")
    if not (0.5 <= tau < 1.0):
        raise ValueError("tau must lie in [0.5, 1)")
    g1, g2 = critic.v1.zero_grad(), critic.v2.zero_grad()
    total = 0.0
    n = len(pairs)
    for s, a in pairs:
        f_s = critic.state_feats(s)
        target = q_target_min(critic, s, a)
        u1 = target - float(critic.v1.forward(f_s)[0])
        u2 = target - float(critic.v2.forward(f_s)[0])
        w1 = expectile_weight(tau, u1)
        w2 = expectile_weight(tau, u2)
        total += w1 * (u1 * u1) + w2 * (u2 * u2)
        g1.add_(critic.v1.backward(f_s, np.array([-2.0 * w1 * u1 / (2 * n)])))
        g2.add_(critic.v2.backward(f_s, np.array([-2.0 * w2 * u2 / (2 * n)])))
    return VStep(loss=total / (2 * n), g1=g1, g2=g2)


def v_loss_iql(critic: CriticPair, batch: Sequence[Transition], tau: float,
               actor=None, rng: np.random.Generator | None = None,
               action_source: str = "dataset") -> VStep:
    """Expectile V loss over a transition batch.  ``action_source`` picks the
    action whose Q value the expectile tracks: the logged dataset action, or
    a fresh actor sample per state."""
    if action_source == "dataset":
        pairs = [(tr.s, tr.a) for tr in batch]
    elif action_source == "actor":
        if actor is None or rng is None:
            raise ValueError("actor samples need an actor and an rng")
        pairs = []
        for tr in batch:
            a, _ = actor.sample_utterance(tr.s, rng)
            pairs.append((tr.s, a))
    else:
        raise ValueError(f"unknown action_source {action_source!r}")
    return v_loss_iql_from_pairs(critic, pairs, tau)


def q_target_sarsa(critic: CriticPair, batch: Sequence[Transition],
                   next_actions: Sequence[Utterance | None]) -> tuple[np.ndarray, np.ndarray, int]:
    """Bootstrap targets r + gamma * (1 - done) * min-Qbar(s', a') from logged
    successor actions.  Returns (targets, keep mask, skipped count); rows
    whose successor action is missing are masked out."""
    targets = np.zeros(len(batch))
    keep = np.zeros(len(batch), dtype=bool)
    skipped = 0
    for i, (tr, a_next) in enumerate(zip(batch, next_actions)):
        if tr.done:
            targets[i] = tr.r
            keep[i] = True
        elif a_next is None:
            skipped += 1
        else:
            targets[i] = tr.r + critic.gamma * q_target_min(critic, tr.s_next, a_next)
            keep[i] = True
    return targets, keep, skipped


def q_loss_sarsa(critic: CriticPair, batch: Sequence[Transition],
                 next_actions: Sequence[Utterance | None]) -> QStep:
    """TD regression of both Q copies onto the logged-successor target.  Both
    copies share one target here since it is already a frozen min."""
    targets, keep, skipped = q_target_sarsa(critic, batch, next_actions)
    kept = [(tr, t) for tr, t, k in zip(batch, targets, keep) if k]
    if not kept:
        raise ValueError("empty batch")  # every row lacked a successor action
    g1, g2 = critic.q1.zero_grad(), critic.q2.zero_grad()
    total = 0.0
    n = len(kept)
    for tr, t in kept:
        f_sa = critic.pair_feats(tr.s, tr.a)
        e1 = float(critic.q1.forward(f_sa)[0]) - t
        e2 = float(critic.q2.forward(f_sa)[0]) - t
        total += e1 * e1 + e2 * e2
        g1.add_(critic.q1.backward(f_sa, np.array([e1 / n])))
        g2.add_(critic.q2.backward(f_sa, np.array([e2 / n])))
    return QStep(loss=total / (2 * n), g1=g1, g2=g2, skipped=skipped)


def _polyak_pair(target, online, alpha: float) -> None:
    if hasattr(target, "values"):  # table
        keys = set(target.values) | set(online.values)
        for k in keys:
            t = target.values.get(k)
            o = online.values.get(k)
            if t is None:
                t = np.zeros(target.heads)
            if o is None:
                o = np.zeros(online.heads)
            target.values[k] = alpha * t + (1.0 - alpha) * o
    else:
        target.set_param_vector(alpha * target.param_vector() + (1.0 - alpha) * online.param_vector())


def polyak_update(critic: CriticPair, alpha: float) -> None:
    """target <- alpha * target + (1 - alpha) * online for all four copies.
    alpha is the retention coefficient: 0 copies, 1 freezes."""
    if not (0.0 <= alpha <= 1.0):
        raise ValueError("alpha must lie in [0, 1]")
    _polyak_pair(critic.q1_target, critic.q1, alpha)
    _polyak_pair(critic.q2_target, critic.q2, alpha)
    _polyak_pair(critic.v1_target, critic.v1, alpha)
    _polyak_pair(critic.v2_target, critic.v2, alpha)


def advantage(critic: CriticPair, s: DialogueState, a: Utterance) -> float:
    """min(q1, q2)(s, a) - min(v1, v2)(s) on the online models."""
    f_sa = critic.pair_feats(s, a)
    f_s = critic.state_feats(s)
    q = min(float(critic.q1.forward(f_sa)[0]), float(critic.q2.forward(f_sa)[0]))
    v = min(float(critic.v1.forward(f_s)[0]), float(critic.v2.forward(f_s)[0]))
    return q - v
