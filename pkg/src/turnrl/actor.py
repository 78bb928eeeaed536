"""Token-level autoregressive policy and its gradient estimators.

The policy factorizes over tokens inside one utterance.  Each conditional is
a masked softmax over the agent sub-vocabulary; at the final allowed position
EOS is forced with probability one, so the utterance distribution sums to one
over sequences of length at most L.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .approx import GradBuffer
from .hmdp import EOS, DialogueState, Utterance, Vocab


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max()
    w = z - m
    return w - np.log(np.exp(w).sum())


@dataclass
class PgSample:
    """One policy-gradient sample: a state, an utterance, and its scalar
    coefficient (an advantage or a regression weight, depending on the
    objective)."""

    s: DialogueState
    a: Utterance
    coef: float = 0.0


class TokenPolicy:
    """Autoregressive policy over agent tokens.

    ``scorer`` maps encoded (history + prefix) features to one logit per
    vocabulary id; ids outside ``vocab.agent_ids`` are masked out.  Sampling
    may be tempered; log-probabilities are always reported at temperature 1.
    """

    def __init__(self, scorer, encoder, vocab: Vocab, max_len: int, temperature: float = 1.0):
        if scorer.heads != vocab.size:
            raise ValueError("policy scorer needs one head per vocabulary id")
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        self.scorer = scorer
        self.encoder = encoder
        self.vocab = vocab
        self.max_len = max_len
        self.temperature = temperature
        self._agent = np.asarray(vocab.agent_ids, dtype=np.intp)
        self._eos_slot = int(np.nonzero(self._agent == EOS)[0][0])

    def _feats(self, state: DialogueState, prefix: tuple[int, ...]):
        return self.encoder.encode(state.history + prefix)

    def _agent_logits(self, state: DialogueState, prefix: tuple[int, ...]) -> np.ndarray:
        return self.scorer.forward(self._feats(state, prefix))[self._agent]

    def sample_utterance(self, state: DialogueState, rng: np.random.Generator,
                         temperature: float | None = None) -> tuple[Utterance, np.ndarray]:
        """Draw one utterance; returns it with per-token log-probs at
        temperature 1.  temperature 0 decodes greedily."""
        temp = self.temperature if temperature is None else temperature
        prefix: tuple[int, ...] = ()
        logps = []
        for pos in range(1, self.max_len + 1):
            if pos == self.max_len:
                logps.append(0.0)  # EOS is forced here: a point mass
                prefix = prefix + (EOS,)
                break
            z = self._agent_logits(state, prefix)
            logp = _log_softmax(z)
            if temp == 0.0:
                slot = int(np.argmax(z))
            else:
                p = np.exp(_log_softmax(z / temp))
                p = p / p.sum()
                slot = int(rng.choice(len(p), p=p))
            logps.append(float(logp[slot]))
            tok = int(self._agent[slot])
            prefix = prefix + (tok,)
            if tok == EOS:
                break
        return Utterance(prefix), np.asarray(logps)

    def greedy_utterance(self, state: DialogueState) -> Utterance:
        a, _ = self.sample_utterance(state, rng=None, temperature=0.0)
        return a

    def logprob(self, state: DialogueState, a: Utterance) -> tuple[float, np.ndarray]:
        """Log-probability of an utterance under the policy, with the
        per-token decomposition.  Mirrors sample_utterance exactly."""
        toks = a.tokens
        if len(toks) > self.max_len:
            raise ValueError("utterance exceeds L")
        per_tok = []
        for i, tok in enumerate(toks):
            pos = i + 1
            if pos == self.max_len:
                if tok != EOS:
                    raise ValueError("final position must be EOS")
                per_tok.append(0.0)
                break
            slots = np.nonzero(self._agent == tok)[0]
            if len(slots) == 0:
                raise ValueError(f"token {tok} is not an agent token")
            z = self._agent_logits(state, toks[:i])
            per_tok.append(float(_log_softmax(z)[slots[0]]))
        arr = np.asarray(per_tok)
        return float(arr.sum()), arr

    def utterance_distribution(self, state: DialogueState) -> dict[Utterance, float]:
        """Exhaustive enumeration of the utterance space with probabilities.
        Exponential in max_len; intended for small test vocabularies."""
        out: dict[Utterance, float] = {}

        def rec(prefix: tuple[int, ...], logp: float, pos: int):
            if pos == self.max_len:
                out[Utterance(prefix + (EOS,))] = float(np.exp(logp))
                return
            z = self._agent_logits(DialogueState(state.history, state.turn_index), prefix)
            lp = _log_softmax(z)
            for slot, tok in enumerate(self._agent):
                tok = int(tok)
                if tok == EOS:
                    out[Utterance(prefix + (EOS,))] = out.get(Utterance(prefix + (EOS,)), 0.0) + float(
                        np.exp(logp + lp[slot])
                    )
                else:
                    rec(prefix + (tok,), logp + float(lp[slot]), pos + 1)

        rec((), 0.0, 1)
        return out


class BaselineValue:
    """Prefix-conditioned scalar used to center the per-token coefficients."""

    def __init__(self, scorer, encoder):
        if scorer.heads != 1:
            raise ValueError("baseline scorer must have a single head")
        self.scorer = scorer
        self.encoder = encoder

    def value(self, state: DialogueState, prefix: tuple[int, ...]) -> float:
        return float(self.scorer.forward(self.encoder.encode(state.history + prefix))[0])


# --- gradient estimators ------------------------------------------------------
#
# All estimators return the DESCENT direction of their (negated) objective,
# averaged over the batch, as a GradBuffer congruent with policy.scorer: a
# plain params - lr * grad step ascends the weighted log-likelihood.  The
# per-position ascent of log pi(tok | prefix) w.r.t. the logits is
# onehot(tok) - softmax, restricted to agent slots; the forced final EOS has
# no gradient.


def _positions(policy: TokenPolicy, s: DialogueState, a: Utterance):
    toks = a.tokens
    if len(toks) > policy.max_len:
        raise ValueError("utterance exceeds L")
    for i, tok in enumerate(toks):
        if i + 1 == policy.max_len:
            return  # forced EOS, point mass, no gradient
        yield i, tok


def _accumulate_logpi_grad(policy: TokenPolicy, s: DialogueState, a: Utterance,
                           coef_at: Callable[[int], float], scale: float,
                           grad: GradBuffer) -> None:
    for i, tok in _positions(policy, s, a):
        feats = policy._feats(s, a.tokens[:i])
        z = policy.scorer.forward(feats)[policy._agent]
        p = np.exp(_log_softmax(z))
        slot = int(np.nonzero(policy._agent == tok)[0][0])
        g_agent = -p
        g_agent[slot] += 1.0
        upstream = np.zeros(policy.vocab.size)
        upstream[policy._agent] = (-coef_at(i) * scale) * g_agent
        grad.add_(policy.scorer.backward(feats, upstream))


def _coef_pg(policy: TokenPolicy, batch: Sequence[PgSample],
             baseline: BaselineValue | None) -> GradBuffer:
    if not batch:
        raise ValueError("empty batch")
    grad = policy.scorer.zero_grad()
    scale = 1.0 / len(batch)
    for item in batch:
        if baseline is None:
            coef_at = lambda i, c=item.coef: c
        else:
            coef_at = lambda i, it=item: it.coef - baseline.value(it.s, it.a.tokens[:i])
        _accumulate_logpi_grad(policy, item.s, item.a, coef_at, scale, grad)
    return grad


def reinforce_grad(policy: TokenPolicy, batch: Sequence[PgSample]) -> GradBuffer:
    """Plain score-function estimator: coef * grad log pi(a|s), batch mean."""
    return _coef_pg(policy, batch, baseline=None)


def reinforce_baseline_grad(policy: TokenPolicy, baseline: BaselineValue,
                            batch: Sequence[PgSample]) -> GradBuffer:
    """Score-function estimator with the prefix baseline subtracted from the
    coefficient at every position.  Baseline parameters are not touched."""
    return _coef_pg(policy, batch, baseline=baseline)


def baseline_loss(baseline: BaselineValue, batch: Sequence[PgSample]) -> tuple[float, GradBuffer]:
    """Monte-Carlo regression of the prefix baseline onto each sample's
    coefficient, summed over every prefix of the utterance and averaged over
    the batch.  Returns (loss, descent gradient)."""
    if not batch:
        raise ValueError("empty batch")
    grad = baseline.scorer.zero_grad()
    total = 0.0
    scale = 1.0 / len(batch)
    for item in batch:
        for i in range(len(item.a.tokens)):
            feats = baseline.encoder.encode(item.s.history + item.a.tokens[:i])
            v = float(baseline.scorer.forward(feats)[0])
            err = item.coef - v
            total += err * err
            grad.add_(baseline.scorer.backward(feats, np.array([-2.0 * err * scale])))
    return total * scale, grad


def _weighted_loglik_grad(policy: TokenPolicy, batch: Sequence[PgSample],
                          weights: np.ndarray) -> GradBuffer:
    grad = policy.scorer.zero_grad()
    scale = 1.0 / len(batch)
    for item, w in zip(batch, weights):
        _accumulate_logpi_grad(policy, item.s, item.a, lambda i, w=w: w, scale, grad)
    return grad


def bc_grad(policy: TokenPolicy, batch: Sequence[PgSample]) -> GradBuffer:
    """Behavior cloning: maximum likelihood on the batch actions."""
    if not batch:
        raise ValueError("empty batch")
    return _weighted_loglik_grad(policy, batch, np.ones(len(batch)))


def awr_grad(policy: TokenPolicy, batch: Sequence[PgSample], beta: float,
             weight_max: float = 20.0) -> tuple[GradBuffer, np.ndarray]:
    """Advantage-weighted log-likelihood ascent.

    Per-sample weight min(exp(beta * coef), weight_max); the clip keeps a few
    large advantages from swamping the batch.  Returns the gradient and the
    weights actually used.
    """
    if not batch:
        raise ValueError("empty batch")
    weights = np.array([min(float(np.exp(beta * it.coef)), weight_max) for it in batch])
    return _weighted_loglik_grad(policy, batch, weights), weights


def normalize_coefs(batch: Sequence[PgSample]) -> list[PgSample]:
    """Standardize coefficients across the batch (optional, off by default)."""
    c = np.array([it.coef for it in batch])
    std = c.std()
    if std < 1e-8:
        return list(batch)
    c = (c - c.mean()) / std
    return [PgSample(it.s, it.a, float(ci)) for it, ci in zip(batch, c)]
