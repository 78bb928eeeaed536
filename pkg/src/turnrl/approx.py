"""Feature encoders and small differentiable scorers.

Scorers map encoded token sequences to one or more scalar heads and expose
exact analytic gradients; a central-difference checker guards every
hand-derived backward pass.  Three families are enough at this scale:
a lookup table keyed on the exact sequence, a linear map, and a one-hidden-
layer tanh network.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

CKPT_MAGIC = b"turnrl-scorer"
CKPT_VERSION = 1


class CheckpointError(Exception):
    pass


class DivergenceError(RuntimeError):
    pass


# --- encoders -------------------------------------------------------------


class ExactEncoder:
    """Identity key encoder: the token tuple itself.  Pairs with TableScorer."""

    mode = "exact"
    out_dim = 0

    def encode(self, tokens: Sequence[int]):
        return tuple(tokens)

    def descriptor(self) -> dict:
        return {"mode": self.mode}


class BagEncoder:
    """Token counts split by turn bucket.

    A token's turn is the number of response tokens seen before it; turns at
    or past ``buckets - 1`` share the last bucket.  Output dim is
    vocab_size * buckets.
    """

    mode = "bag"

    def __init__(self, vocab_size: int, buckets: int = 4, response_ids: Sequence[int] = (2, 3, 4, 5)):
        if buckets < 1:
            raise ValueError("buckets must be >= 1")
        self.vocab_size = vocab_size
        self.buckets = buckets
        self.out_dim = vocab_size * buckets
        self._resp = frozenset(response_ids)

    def encode(self, tokens: Sequence[int]) -> np.ndarray:
        vec = np.zeros(self.out_dim)
        turn = 0
        for t in tokens:
            b = min(turn, self.buckets - 1)
            vec[b * self.vocab_size + t] += 1.0
            if t in self._resp:
                turn += 1
        return vec

    def descriptor(self) -> dict:
        return {"mode": self.mode, "vocab_size": self.vocab_size, "buckets": self.buckets}


# Multipliers for the rolling polynomial hash.  Fixed constants keep the
# feature map identical across runs and machines.
_HASH_MULTS = np.array([1000003, 998244353, 911382323], dtype=np.uint64)
_HASH_SALTS = np.array([0x9E3779B9, 0x85EBCA6B, 0xC2B2AE35], dtype=np.uint64)


class HashedNgramEncoder:
    """Counts of hashed n-grams over the last ``window`` tokens."""

    mode = "hashed"

    def __init__(self, dim: int = 256, window: int = 96, orders: Sequence[int] = (1, 2, 3)):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.out_dim = dim
        self.window = window
        self.orders = tuple(orders)
        if any(n < 1 or n > len(_HASH_MULTS) for n in self.orders):
            raise ValueError("orders must lie in 1..3")

    def encode(self, tokens: Sequence[int]) -> np.ndarray:
        vec = np.zeros(self.out_dim)
        toks = np.asarray(tokens[-self.window :] if len(tokens) > self.window else tokens, dtype=np.uint64)
        m = len(toks)
        for n in self.orders:
            if m < n:
                continue
            acc = np.full(m - n + 1, _HASH_SALTS[n - 1], dtype=np.uint64)
            for j in range(n):
                acc = acc * _HASH_MULTS[j] + (toks[j : m - n + 1 + j] + np.uint64(1))
            np.add.at(vec, (acc % np.uint64(self.out_dim)).astype(np.intp), 1.0)
        return vec

    def descriptor(self) -> dict:
        return {"mode": self.mode, "dim": self.out_dim, "window": self.window, "orders": list(self.orders)}


class HashedPairEncoder:
    """Unigram counts plus hashed co-occurrence pairs over the last ``window``
    tokens.  Pairs (t_i, t_j) with i < j give a linear scorer access to
    long-range interactions that contiguous n-grams miss, e.g. between an
    early exchange and the tokens of the action under evaluation."""

    mode = "pairs"

    def __init__(self, dim: int = 512, window: int = 96):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.out_dim = dim
        self.window = window

    def encode(self, tokens: Sequence[int]) -> np.ndarray:
        vec = np.zeros(self.out_dim)
        toks = np.asarray(tokens[-self.window :] if len(tokens) > self.window else tokens, dtype=np.uint64)
        m = len(toks)
        if m == 0:
            return vec
        # each block is normalized to unit mass so the feature norm stays O(1)
        # for any history length; raw counts make TD step sizes length-dependent
        uni = _HASH_SALTS[0] * _HASH_MULTS[0] + (toks + np.uint64(1))
        np.add.at(vec, (uni % np.uint64(self.out_dim)).astype(np.intp), 1.0 / m)
        if m > 1:
            i, j = np.triu_indices(m, k=1)
            acc = (_HASH_SALTS[2] * _HASH_MULTS[1] + (toks[i] + np.uint64(1))) * _HASH_MULTS[2] + (toks[j] + np.uint64(1))
            np.add.at(vec, (acc % np.uint64(self.out_dim)).astype(np.intp), 2.0 / (m * (m - 1)))
        return vec

    def descriptor(self) -> dict:
        return {"mode": self.mode, "dim": self.out_dim, "window": self.window}


def make_encoder(mode: str, vocab_size: int, dim: int = 256, buckets: int = 4, window: int = 96):
    if mode == "exact":
        return ExactEncoder()
    if mode == "bag":
        return BagEncoder(vocab_size, buckets=buckets)
    if mode == "hashed":
        return HashedNgramEncoder(dim=dim, window=window)
    if mode == "pairs":
        return HashedPairEncoder(dim=dim, window=window)
    raise ValueError(f"unknown encoder mode {mode!r}")


# --- gradient container ----------------------------------------------------


class GradBuffer:
    """Accumulated gradient congruent with one scorer's parameters.

    ``data`` is a flat float array for dense scorers or a key -> per-head
    array dict for table scorers.  ``count`` tracks accumulations so callers
    can renormalize if they want to.
    """

    __slots__ = ("data", "count")

    def __init__(self, data, count: int = 0):
        self.data = data
        self.count = count

    def scaled(self, c: float) -> "GradBuffer":
        if isinstance(self.data, dict):
            return GradBuffer({k: v * c for k, v in self.data.items()}, self.count)
        return GradBuffer(self.data * c, self.count)

    def add_(self, other: "GradBuffer") -> None:
        if isinstance(self.data, dict):
            for k, v in other.data.items():
                if k in self.data:
                    self.data[k] = self.data[k] + v
                else:
                    self.data[k] = v.copy()
        else:
            self.data += other.data
        self.count += max(other.count, 1)

    def is_finite(self) -> bool:
        if isinstance(self.data, dict):
            return all(np.isfinite(v).all() for v in self.data.values())
        return bool(np.isfinite(self.data).all())


# --- scorers ---------------------------------------------------------------


class TableScorer:
    """Lookup table over exact keys; unseen keys read as zeros."""

    arch = "table"

    def __init__(self, heads: int = 1):
        if heads < 1:
            raise ValueError("heads must be >= 1")
        self.heads = heads
        self.values: dict[tuple, np.ndarray] = {}

    def forward(self, key) -> np.ndarray:
        v = self.values.get(key)
        if v is None:
            return np.zeros(self.heads)
        return v.copy()

    def backward(self, key, upstream: np.ndarray) -> GradBuffer:
        return GradBuffer({key: np.asarray(upstream, dtype=float).copy()}, 1)

    def zero_grad(self) -> GradBuffer:
        return GradBuffer({}, 0)

    def touch(self, key) -> None:
        if key not in self.values:
            self.values[key] = np.zeros(self.heads)

    def sgd_step(self, grad: GradBuffer, lr: float) -> None:
        for k, g in grad.data.items():
            cur = self.values.get(key := k)
            if cur is None:
                cur = np.zeros(self.heads)
            self.values[key] = cur - lr * g

    def param_items(self):
        return sorted(self.values.items())

    def n_params(self) -> int:
        return self.heads * len(self.values)

    def clone(self) -> "TableScorer":
        c = TableScorer(self.heads)
        c.values = {k: v.copy() for k, v in self.values.items()}
        return c

    def descriptor(self) -> dict:
        return {"arch": self.arch, "heads": self.heads}


class LinearScorer:
    """Affine map of a dense feature vector: W x + b."""

    arch = "linear"

    def __init__(self, in_dim: int, heads: int = 1, rng: np.random.Generator | None = None):
        if in_dim < 1 or heads < 1:
            raise ValueError("in_dim and heads must be >= 1")
        self.in_dim = in_dim
        self.heads = heads
        if rng is None:
            self.w = np.zeros((heads, in_dim))
            self.b = np.zeros(heads)
        else:
            self.w = rng.uniform(-0.05, 0.05, size=(heads, in_dim))
            self.b = rng.uniform(-0.05, 0.05, size=heads)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.w @ x + self.b

    def backward(self, x: np.ndarray, upstream: np.ndarray) -> GradBuffer:
        u = np.asarray(upstream, dtype=float)
        return GradBuffer(np.concatenate([np.outer(u, x).ravel(), u]), 1)

    def zero_grad(self) -> GradBuffer:
        return GradBuffer(np.zeros(self.n_params()), 0)

    def sgd_step(self, grad: GradBuffer, lr: float) -> None:
        nw = self.heads * self.in_dim
        self.w -= lr * grad.data[:nw].reshape(self.heads, self.in_dim)
        self.b -= lr * grad.data[nw:]

    def param_vector(self) -> np.ndarray:
        return np.concatenate([self.w.ravel(), self.b])

    def set_param_vector(self, v: np.ndarray) -> None:
        nw = self.heads * self.in_dim
        self.w = v[:nw].reshape(self.heads, self.in_dim).copy()
        self.b = v[nw:].copy()

    def n_params(self) -> int:
        return self.heads * self.in_dim + self.heads

    def clone(self) -> "LinearScorer":
        c = LinearScorer(self.in_dim, self.heads)
        c.w = self.w.copy()
        c.b = self.b.copy()
        return c

    def descriptor(self) -> dict:
        return {"arch": self.arch, "heads": self.heads, "in_dim": self.in_dim}


class MlpScorer:
    """One hidden tanh layer: W2 tanh(W1 x + b1) + b2."""

    arch = "mlp"

    def __init__(self, in_dim: int, hidden: int = 16, heads: int = 1, rng: np.random.Generator | None = None):
        if in_dim < 1 or hidden < 1 or heads < 1:
            raise ValueError("in_dim, hidden, heads must be >= 1")
        self.in_dim = in_dim
        self.hidden = hidden
        self.heads = heads
        if rng is None:
            self.w1 = np.zeros((hidden, in_dim))
            self.b1 = np.zeros(hidden)
            self.w2 = np.zeros((heads, hidden))
            self.b2 = np.zeros(heads)
        else:
            self.w1 = rng.uniform(-0.05, 0.05, size=(hidden, in_dim))
            self.b1 = rng.uniform(-0.05, 0.05, size=hidden)
            self.w2 = rng.uniform(-0.05, 0.05, size=(heads, hidden))
            self.b2 = rng.uniform(-0.05, 0.05, size=heads)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.w2 @ np.tanh(self.w1 @ x + self.b1) + self.b2

    def backward(self, x: np.ndarray, upstream: np.ndarray) -> GradBuffer:
        u = np.asarray(upstream, dtype=float)
        h = np.tanh(self.w1 @ x + self.b1)
        dh = (self.w2.T @ u) * (1.0 - h * h)
        return GradBuffer(
            np.concatenate([np.outer(dh, x).ravel(), dh, np.outer(u, h).ravel(), u]),
            1,
        )

    def zero_grad(self) -> GradBuffer:
        return GradBuffer(np.zeros(self.n_params()), 0)

    def sgd_step(self, grad: GradBuffer, lr: float) -> None:
        self.set_param_vector(self.param_vector() - lr * grad.data)

    def param_vector(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    def set_param_vector(self, v: np.ndarray) -> None:
        i = 0
        for name, shape in (("w1", (self.hidden, self.in_dim)), ("b1", (self.hidden,)),
                            ("w2", (self.heads, self.hidden)), ("b2", (self.heads,))):
            n = int(np.prod(shape))
            setattr(self, name, v[i : i + n].reshape(shape).copy())
            i += n

    def n_params(self) -> int:
        return self.hidden * self.in_dim + self.hidden + self.heads * self.hidden + self.heads

    def clone(self) -> "MlpScorer":
        c = MlpScorer(self.in_dim, self.hidden, self.heads)
        c.w1, c.b1 = self.w1.copy(), self.b1.copy()
        c.w2, c.b2 = self.w2.copy(), self.b2.copy()
        return c

    def descriptor(self) -> dict:
        return {"arch": self.arch, "heads": self.heads, "in_dim": self.in_dim, "hidden": self.hidden}


def make_scorer(arch: str, heads: int, in_dim: int = 0, hidden: int = 16,
                rng: np.random.Generator | None = None):
    if arch == "table":
        return TableScorer(heads)
    if arch == "linear":
        return LinearScorer(in_dim, heads, rng)
    if arch == "mlp":
        return MlpScorer(in_dim, hidden, heads, rng)
    raise ValueError(f"unknown scorer arch {arch!r}")


# --- updates ---------------------------------------------------------------


def apply_update(scorer, grad: GradBuffer, lr: float) -> None:
    """Plain SGD step params <- params - lr * grad.  Rejects non-finite grads."""
    if not grad.is_finite():
        raise DivergenceError("divergence detected")
    scorer.sgd_step(grad, lr)


class AdamState:
    """Adaptive-moment update, kept behind a config flag; SGD is the default."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, scorer, grad: GradBuffer) -> None:
        if not grad.is_finite():
            raise DivergenceError("divergence detected")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        if isinstance(grad.data, dict):
            if self.m is None:
                self.m, self.v = {}, {}
            for k, g in grad.data.items():
                m = self.m.get(k, np.zeros_like(g))
                v = self.v.get(k, np.zeros_like(g))
                m = b1 * m + (1 - b1) * g
                v = b2 * v + (1 - b2) * g * g
                self.m[k], self.v[k] = m, v
                mh = m / (1 - b1**self.t)
                vh = v / (1 - b2**self.t)
                scorer.sgd_step(GradBuffer({k: mh / (np.sqrt(vh) + self.eps)}, 1), self.lr)
        else:
            if self.m is None:
                self.m = np.zeros_like(grad.data)
                self.v = np.zeros_like(grad.data)
            self.m = b1 * self.m + (1 - b1) * grad.data
            self.v = b2 * self.v + (1 - b2) * grad.data * grad.data
            mh = self.m / (1 - b1**self.t)
            vh = self.v / (1 - b2**self.t)
            scorer.sgd_step(GradBuffer(mh / (np.sqrt(vh) + self.eps), 1), self.lr)


class SgdState:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, scorer, grad: GradBuffer) -> None:
        apply_update(scorer, grad, self.lr)


def make_optimizer(kind: str, lr: float):
    if kind == "sgd":
        return SgdState(lr)
    if kind == "adam":
        return AdamState(lr)
    raise ValueError(f"unknown optimizer {kind!r}")


# --- finite-difference verification ----------------------------------------


def fd_check(scorer, feats, eps: float = 1e-6, upstream: np.ndarray | None = None) -> float:
    """Max relative disagreement between the analytic gradient of
    upstream . forward(feats) and central finite differences, taken over
    every parameter.  Restores parameters on exit."""
    if upstream is None:
        upstream = np.ones(scorer.heads)
    upstream = np.asarray(upstream, dtype=float)

    def objective() -> float:
        return float(upstream @ scorer.forward(feats))

    analytic = scorer.backward(feats, upstream)
    worst = 0.0
    if isinstance(scorer, TableScorer):
        scorer.touch(feats)
        for key in list(scorer.values):
            for h in range(scorer.heads):
                orig = scorer.values[key][h]
                scorer.values[key][h] = orig + eps
                hi = objective()
                scorer.values[key][h] = orig - eps
                lo = objective()
                scorer.values[key][h] = orig
                num = (hi - lo) / (2 * eps)
                ana = analytic.data.get(key, np.zeros(scorer.heads))[h]
                worst = max(worst, abs(ana - num) / (abs(ana) + abs(num) + 1e-12))
        return worst
    params = scorer.param_vector()
    for i in range(len(params)):
        v = params.copy()
        v[i] = params[i] + eps
        scorer.set_param_vector(v)
        hi = objective()
        v[i] = params[i] - eps
        scorer.set_param_vector(v)
        lo = objective()
        num = (hi - lo) / (2 * eps)
        ana = analytic.data[i]
        worst = max(worst, abs(ana - num) / (abs(ana) + abs(num) + 1e-12))
    scorer.set_param_vector(params)
    return worst


def fd_check_loss(scorer, loss_and_grad, eps: float = 1e-6) -> float:
    """Same comparison for an arbitrary scalar loss.

    ``loss_and_grad()`` must return (loss, GradBuffer) evaluated at the
    scorer's current parameters.  Used by tests to verify composite losses.
    """
    _, analytic = loss_and_grad()
    worst = 0.0
    if isinstance(scorer, TableScorer):
        for key in sorted(set(scorer.values) | set(analytic.data)):
            scorer.touch(key)
        for key in list(scorer.values):
            for h in range(scorer.heads):
                orig = scorer.values[key][h]
                scorer.values[key][h] = orig + eps
                hi = loss_and_grad()[0]
                scorer.values[key][h] = orig - eps
                lo = loss_and_grad()[0]
                scorer.values[key][h] = orig
                num = (hi - lo) / (2 * eps)
                ana = analytic.data.get(key, np.zeros(scorer.heads))[h]
                worst = max(worst, abs(ana - num) / (abs(ana) + abs(num) + 1e-12))
        return worst
    params = scorer.param_vector()
    for i in range(len(params)):
        v = params.copy()
        v[i] = params[i] + eps
        scorer.set_param_vector(v)
        hi = loss_and_grad()[0]
        v[i] = params[i] - eps
        scorer.set_param_vector(v)
        lo = loss_and_grad()[0]
        num = (hi - lo) / (2 * eps)
        worst = max(worst, abs(analytic.data[i] - num) / (abs(analytic.data[i]) + abs(num) + 1e-12))
    scorer.set_param_vector(params)
    return worst


# --- checkpoints -------------------------------------------------------------
#
# Byte layout, little-endian throughout:
#   magic bytes b"turnrl-scorer", version uint32, descriptor-length uint32,
#   UTF-8 JSON descriptor, raw float64 parameter array.
# Table descriptors carry the key list; dense descriptors carry dimensions.


def save_scorer(path, scorer) -> None:
    desc = scorer.descriptor()
    if isinstance(scorer, TableScorer):
        items = scorer.param_items()
        desc["keys"] = [list(k) for k, _ in items]
        params = (
            np.concatenate([v for _, v in items]) if items else np.zeros(0)
        )
    else:
        params = scorer.param_vector()
    blob = json.dumps(desc, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(params.astype("<f8").tobytes())


def load_scorer(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(CKPT_MAGIC))
        if magic != CKPT_MAGIC:
            raise CheckpointError("not a scorer checkpoint")
        hdr = fh.read(8)
        if len(hdr) != 8:
            raise CheckpointError("truncated checkpoint header")
        version, blob_len = struct.unpack("<II", hdr)
        if version != CKPT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        try:
            desc = json.loads(fh.read(blob_len).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError("corrupt checkpoint descriptor") from e
        params = np.frombuffer(fh.read(), dtype="<f8")
    arch = desc.get("arch")
    if arch == "table":
        sc = TableScorer(desc["heads"])
        keys = [tuple(k) for k in desc["keys"]]
        if len(params) != len(keys) * sc.heads:
            raise CheckpointError("parameter count does not match key list")
        for i, k in enumerate(keys):
            sc.values[k] = params[i * sc.heads : (i + 1) * sc.heads].copy()
        return sc
    if arch == "linear":
        sc = LinearScorer(desc["in_dim"], desc["heads"])
    elif arch == "mlp":
        sc = MlpScorer(desc["in_dim"], desc["hidden"], desc["heads"])
    else:
        raise CheckpointError(f"unknown arch {arch!r} in checkpoint")
    if len(params) != sc.n_params():
        raise CheckpointError("parameter count does not match descriptor")
    sc.set_param_vector(params.copy())
    return sc
