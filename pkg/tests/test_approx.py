"""Encoders, scorer gradients, optimizers, and the checkpoint format."""
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from turnrl.approx import (CKPT_MAGIC, AdamState, BagEncoder, CheckpointError,
                           DivergenceError, ExactEncoder, GradBuffer,
                           HashedNgramEncoder, LinearScorer, MlpScorer,
                           SgdState, TableScorer, apply_update, fd_check,
                           load_scorer, make_encoder, make_optimizer,
                           make_scorer, save_scorer)


def test_exact_encoder_is_identity_key():
    enc = ExactEncoder()
    assert enc.encode([3, 1, 4]) == (3, 1, 4)
    assert enc.encode(()) == ()


def test_bag_encoder_counts_by_turn_bucket():
    enc = BagEncoder(vocab_size=8, buckets=2)
    # token 2 is a response, so everything after it lands in bucket 1
    vec = enc.encode([6, 2, 7, 7])
    assert vec[0 * 8 + 6] == 1.0
    assert vec[0 * 8 + 2] == 1.0
    assert vec[1 * 8 + 7] == 2.0
    assert vec.sum() == 4.0
    assert enc.out_dim == 16


def test_bag_encoder_saturates_last_bucket():
    enc = BagEncoder(vocab_size=8, buckets=2)
    # three responses push the turn count past the bucket range
    vec = enc.encode([2, 3, 2, 6])
    assert vec[1 * 8 + 6] == 1.0


def test_hashed_encoder_window_and_determinism():
    enc = HashedNgramEncoder(dim=64, window=4, orders=(1, 2))
    long = [7, 8, 9, 6, 7, 8, 9, 6]
    assert np.array_equal(enc.encode(long), enc.encode(long[-4:]))
    assert np.array_equal(enc.encode([6, 7, 8]), enc.encode([6, 7, 8]))
    # unigrams + bigrams of a 3-token window
    assert enc.encode([6, 7, 8]).sum() == 3 + 2


def test_make_encoder_dispatch():
    assert make_encoder("exact", 8).mode == "exact"
    assert make_encoder("bag", 8, buckets=3).out_dim == 24
    assert make_encoder("hashed", 8, dim=32).out_dim == 32
    with pytest.raises(ValueError):
        make_encoder("onehot", 8)


def test_gradbuffer_scaled_and_add():
    g = GradBuffer(np.array([1.0, 2.0]), 1)
    h = g.scaled(0.5)
    assert np.array_equal(h.data, [0.5, 1.0])
    g.add_(GradBuffer(np.array([1.0, 1.0]), 1))
    assert np.array_equal(g.data, [2.0, 3.0])
    assert g.count == 2

    t = GradBuffer({("a",): np.array([1.0])}, 1)
    t.add_(GradBuffer({("a",): np.array([2.0]), ("b",): np.array([5.0])}, 1))
    assert t.data[("a",)][0] == 3.0
    assert t.data[("b",)][0] == 5.0


def test_table_scorer_unseen_reads_zero():
    sc = TableScorer(heads=2)
    assert np.array_equal(sc.forward(("x",)), [0.0, 0.0])
    sc.sgd_step(GradBuffer({("x",): np.array([1.0, -1.0])}, 1), lr=0.5)
    assert np.array_equal(sc.forward(("x",)), [-0.5, 0.5])
    assert sc.n_params() == 2


@pytest.mark.parametrize("arch,kwargs", [
    ("table", {}),
    ("linear", {"in_dim": 5}),
    ("mlp", {"in_dim": 5, "hidden": 3}),
])
def test_fd_spot_checks(arch, kwargs):
    rng = np.random.default_rng(0)
    sc = make_scorer(arch, heads=2, rng=rng, **kwargs)
    feats = (1, 2) if arch == "table" else rng.normal(size=5)
    assert fd_check(sc, feats, upstream=np.array([0.7, -1.3])) < 1e-6


def test_clone_is_independent():
    rng = np.random.default_rng(1)
    sc = LinearScorer(3, heads=1, rng=rng)
    c = sc.clone()
    sc.w += 1.0
    x = np.ones(3)
    assert not np.allclose(sc.forward(x), c.forward(x))


@pytest.mark.parametrize("arch,kwargs", [
    ("table", {}),
    ("linear", {"in_dim": 4}),
    ("mlp", {"in_dim": 4, "hidden": 3}),
])
def test_checkpoint_roundtrip(tmp_path, arch, kwargs):
    rng = np.random.default_rng(7)
    sc = make_scorer(arch, heads=3, rng=rng, **kwargs)
    probes = [(0, 1), (2,), ()] if arch == "table" else [rng.normal(size=4) for _ in range(3)]
    if arch == "table":
        for p in probes:
            sc.values[p] = rng.normal(size=3)
    path = tmp_path / "model.ckpt"
    save_scorer(path, sc)
    back = load_scorer(path)
    for p in probes:
        assert np.array_equal(back.forward(p), sc.forward(p))


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(CheckpointError):
        load_scorer(path)


def test_checkpoint_rejects_truncated_header(tmp_path):
    path = tmp_path / "trunc.ckpt"
    path.write_bytes(CKPT_MAGIC + b"\x01\x00")
    with pytest.raises(CheckpointError):
        load_scorer(path)


def test_checkpoint_rejects_unknown_version(tmp_path):
    path = tmp_path / "vers.ckpt"
    path.write_bytes(CKPT_MAGIC + struct.pack("<II", 99, 2) + b"{}")
    with pytest.raises(CheckpointError):
        load_scorer(path)


def test_checkpoint_rejects_wrong_param_count(tmp_path):
    sc = LinearScorer(4, heads=2)
    path = tmp_path / "short.ckpt"
    save_scorer(path, sc)
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])  # drop one float64
    with pytest.raises(CheckpointError):
        load_scorer(path)


def test_apply_update_rejects_nonfinite():
    sc = LinearScorer(2, heads=1)
    bad = GradBuffer(np.array([np.nan] * sc.n_params()), 1)
    with pytest.raises(DivergenceError):
        apply_update(sc, bad, lr=0.1)


def _quadratic_loss(sc, x, target):
    v = float(sc.forward(x)[0])
    e = v - target
    return e * e, GradBuffer(sc.backward(x, np.array([2.0 * e])).data, 1)


@pytest.mark.parametrize("kind", ["sgd", "adam"])
def test_optimizers_descend_quadratic(kind):
    rng = np.random.default_rng(3)
    sc = LinearScorer(3, heads=1, rng=rng)
    opt = make_optimizer(kind, lr=0.05)
    x = rng.normal(size=3)
    first, _ = _quadratic_loss(sc, x, 2.0)
    for _ in range(200):
        _, g = _quadratic_loss(sc, x, 2.0)
        opt.step(sc, g)
    last, _ = _quadratic_loss(sc, x, 2.0)
    assert last < first * 1e-3


def test_adam_handles_table_grads():
    sc = TableScorer(heads=1)
    opt = AdamState(lr=0.1)
    for _ in range(50):
        e = float(sc.forward(("k",))[0]) - 1.0
        opt.step(sc, GradBuffer({("k",): np.array([2.0 * e])}, 1))
    assert sc.forward(("k",))[0] == pytest.approx(1.0, abs=0.05)


@given(st.integers(0, 2**31 - 1))
def test_hashed_encoder_total_count_invariant(seed):
    rng = np.random.default_rng(seed)
    toks = rng.integers(0, 30, size=rng.integers(1, 12)).tolist()
    enc = HashedNgramEncoder(dim=16, window=96, orders=(1, 2, 3))
    m = len(toks)
    expected = sum(max(0, m - n + 1) for n in (1, 2, 3))
    assert enc.encode(toks).sum() == expected
