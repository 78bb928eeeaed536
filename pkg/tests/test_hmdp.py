"""Utterance primitives, token flattening, and episode serialization."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from turnrl.hmdp import (EOS, N_RESERVED, PAD, YES, DialogueState, Trajectory,
                         Transition, Utterance, Vocab, flatten_to_token_level,
                         load_trajectories, make_vocab, return_of,
                         save_trajectories, token_discount, token_return_of,
                         trajectory_from_line, trajectory_to_line)

T0 = N_RESERVED  # first task token id


def test_vocab_layout():
    v = make_vocab(["ask", "guess"])
    assert v.names[:N_RESERVED] == ("<pad>", "<eos>", "yes", "no", "invalid", "illegal")
    assert v.id_of("ask") == N_RESERVED
    assert EOS in v.agent_ids
    assert PAD not in v.agent_ids
    assert YES not in v.agent_ids
    assert v.size == N_RESERVED + 2


def test_vocab_rejects_duplicates():
    with pytest.raises(ValueError):
        make_vocab(["ask", "ask"])


def test_utterance_shape_rules():
    Utterance.of(T0, EOS)
    Utterance.of(EOS)
    with pytest.raises(ValueError):
        Utterance(())
    with pytest.raises(ValueError):
        Utterance.of(T0, T0)  # no EOS
    with pytest.raises(ValueError):
        Utterance.of(EOS, T0, EOS)  # interior EOS
    with pytest.raises(ValueError):
        Utterance.of(PAD, EOS)


def _chain(rewards, gamma):
    """A linear episode with the given per-turn rewards."""
    a = Utterance.of(T0, EOS)
    ts = []
    s = DialogueState()
    for i, r in enumerate(rewards):
        s_next = DialogueState(s.history + a.tokens + (YES,), s.turn_index + 1)
        ts.append(Transition(s=s, a=a, r=r, s_next=s_next, done=i == len(rewards) - 1))
        s = s_next
    return Trajectory.from_transitions(ts, gamma)


def test_discounted_return_hand_sum():
    # -1 - 0.95*1 + 0.95^2*0 = -1.95
    traj = _chain([-1.0, -1.0, 0.0], gamma=0.95)
    assert traj.total_return == pytest.approx(-1.95)
    assert return_of(traj, 0.95) == pytest.approx(-1.95)
    assert return_of(traj, 1.0) == pytest.approx(-2.0)
    assert traj.reward_sum() == pytest.approx(-2.0)


def test_done_must_be_final():
    a = Utterance.of(T0, EOS)
    s = DialogueState()
    s2 = DialogueState((T0, EOS, YES), 1)
    early = Transition(s=s, a=a, r=0.0, s_next=s2, done=True)
    late = Transition(s=s2, a=a, r=0.0, s_next=DialogueState((T0, EOS, YES) * 2, 2), done=True)
    with pytest.raises(ValueError):
        Trajectory.from_transitions([early, late], 0.9)
    with pytest.raises(ValueError):
        Trajectory.from_transitions([], 0.9)


@given(gamma=st.floats(0.05, 0.95), max_len=st.integers(1, 64))
def test_token_discount_compounds_back(gamma, max_len):
    assert token_discount(gamma, max_len) ** max_len == pytest.approx(gamma, rel=1e-12)


def test_token_discount_domain():
    with pytest.raises(ValueError):
        token_discount(1.0, 4)
    with pytest.raises(ValueError):
        token_discount(0.0, 4)
    with pytest.raises(ValueError):
        token_discount(0.9, 0)


@st.composite
def trajectories(draw):
    gamma = draw(st.floats(0.1, 0.99))
    max_len = draw(st.integers(2, 4))
    n = draw(st.integers(1, 4))
    ts = []
    s = DialogueState()
    for i in range(n):
        body = draw(st.lists(st.integers(T0, T0 + 3), min_size=0, max_size=max_len - 1))
        a = Utterance(tuple(body) + (EOS,))
        r = draw(st.floats(-2.0, 2.0))
        s_next = DialogueState(s.history + a.tokens + (YES,), s.turn_index + 1)
        ts.append(Transition(s=s, a=a, r=r, s_next=s_next, done=i == n - 1))
        s = s_next
    return Trajectory.from_transitions(ts, gamma), max_len


@given(trajectories())
def test_flatten_preserves_reward_mass(case):
    traj, max_len = case
    steps = flatten_to_token_level(traj, max_len)
    assert len(steps) == max_len * len(traj)
    assert sum(st_.r for st_ in steps) == pytest.approx(traj.reward_sum(), abs=1e-12)
    # final token of each block hops to the next utterance state, empty prefix
    for t, tr in enumerate(traj.transitions):
        last = steps[(t + 1) * max_len - 1]
        assert last.s_next.history == tr.s_next.history
        assert last.s_next.prefix == ()
        assert last.r == tr.r
    # interior steps are free and only extend the prefix
    for j, st_ in enumerate(steps):
        if (j + 1) % max_len != 0:
            assert st_.r == 0.0
            assert st_.s_next.history == st_.s.history
            assert len(st_.s_next.prefix) == len(st_.s.prefix) + 1
    assert sum(st_.done for st_ in steps) == 1
    assert steps[-1].done


@given(trajectories())
def test_block_clock_return_matches_utterance_return(case):
    traj, max_len = case
    steps = flatten_to_token_level(traj, max_len)
    tok_gamma = token_discount(traj.gamma, max_len)
    assert token_return_of(steps, tok_gamma, max_len) == pytest.approx(
        return_of(traj, traj.gamma), rel=1e-9, abs=1e-9)


def test_flatten_rejects_overlong_utterance():
    traj = _chain([0.0], gamma=0.9)
    with pytest.raises(ValueError):
        flatten_to_token_level(traj, 1)  # utterance has 2 tokens


@given(trajectories())
@settings(max_examples=40)
def test_line_roundtrip(case):
    traj, _ = case
    back = trajectory_from_line(trajectory_to_line(traj))
    assert back.transitions == traj.transitions
    assert back.gamma == traj.gamma
    assert back.total_return == pytest.approx(traj.total_return, rel=1e-12)


def test_file_roundtrip(tmp_path):
    trajs = [_chain([-1.0, 0.5], 0.9), _chain([2.0], 0.95)]
    path = tmp_path / "episodes.jsonl"
    save_trajectories(path, trajs)
    back = load_trajectories(path)
    assert len(back) == 2
    assert [t.transitions for t in back] == [t.transitions for t in trajs]
