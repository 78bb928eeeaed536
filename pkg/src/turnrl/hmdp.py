"""Two-level MDP primitives for multi-turn token-sequence tasks.

The high level steps in whole utterances (token sequences ending in EOS);
the low level steps token by token inside an utterance.  Everything else in
the package builds on the types here.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

# Reserved token ids, identical for every vocabulary.
PAD = 0
EOS = 1
YES = 2
NO = 3
INVALID = 4
ILLEGAL = 5
N_RESERVED = 6
RESPONSE_IDS = (YES, NO, INVALID, ILLEGAL)


@dataclass(frozen=True)
class Vocab:
    """Closed integer vocabulary shared by an environment and its policies.

    Ids 0..5 are reserved (pad, eos, and the four one-token environment
    responses); task tokens follow.  ``agent_ids`` lists what a policy may
    emit, which always includes EOS and never PAD or a response token.
    """

    names: tuple[str, ...]
    agent_ids: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.names)

    def name(self, token: int) -> str:
        return self.names[token]

    def id_of(self, name: str) -> int:
        return self.names.index(name)


def make_vocab(agent_names: Sequence[str]) -> Vocab:
    names = ("<pad>", "<eos>", "yes", "no", "invalid", "illegal") + tuple(agent_names)
    if len(set(names)) != len(names):
        raise ValueError("duplicate token names")
    agent_ids = (EOS,) + tuple(range(N_RESERVED, len(names)))
    return Vocab(names=names, agent_ids=agent_ids)


@dataclass(frozen=True)
class Utterance:
    """A token sequence ending in exactly one EOS, with no PAD inside."""

    tokens: tuple[int, ...]

    def __post_init__(self):
        t = self.tokens
        if len(t) == 0:
            raise ValueError("empty utterance")
        if t[-1] != EOS or EOS in t[:-1]:
            raise ValueError("utterance must contain exactly one EOS, at the end")
        if PAD in t:
            raise ValueError("utterance must not contain PAD")

    def __len__(self) -> int:
        return len(self.tokens)

    @staticmethod
    def of(*tokens: int) -> "Utterance":
        return Utterance(tuple(tokens))


@dataclass(frozen=True)
class DialogueState:
    """Full interaction history plus the count of completed agent utterances."""

    history: tuple[int, ...] = ()
    turn_index: int = 0


@dataclass(frozen=True)
class Transition:
    s: DialogueState
    a: Utterance
    r: float
    s_next: DialogueState
    done: bool


@dataclass(frozen=True)
class Trajectory:
    """One episode.  ``total_return`` caches the discounted return at the
    gamma the episode was built with."""

    transitions: tuple[Transition, ...]
    gamma: float
    total_return: float

    @staticmethod
    def from_transitions(transitions: Iterable[Transition], gamma: float) -> "Trajectory":
        ts = tuple(transitions)
        if not ts:
            raise ValueError("empty episode")
        for i, tr in enumerate(ts):
            if tr.done and i != len(ts) - 1:
                raise ValueError("done before the final transition")
        g = sum(gamma**i * tr.r for i, tr in enumerate(ts))
        return Trajectory(transitions=ts, gamma=gamma, total_return=g)

    def reward_sum(self) -> float:
        """Undiscounted task reward of the episode."""
        return sum(tr.r for tr in self.transitions)

    def __len__(self) -> int:
        return len(self.transitions)


def return_of(trajectory: Trajectory, gamma: float) -> float:
    """Discounted return sum_t gamma^t r_t, t starting at 0."""
    ts = trajectory.transitions
    if not ts:
        raise ValueError("empty episode")
    return sum(gamma**i * tr.r for i, tr in enumerate(ts))


def token_discount(gamma: float, max_len: int) -> float:
    """Per-token discount gamma^(1/L) so that L token steps compound to gamma."""
    if not (0.0 < gamma < 1.0):
        raise ValueError("gamma must lie strictly inside (0, 1)")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    return gamma ** (1.0 / max_len)


@dataclass(frozen=True)
class TokenState:
    """Low-level state: the utterance-level history plus the token prefix
    emitted so far in the current utterance."""

    history: tuple[int, ...]
    prefix: tuple[int, ...] = ()


@dataclass(frozen=True)
class TokenTransition:
    s: TokenState
    a: int
    r: float
    s_next: TokenState
    done: bool


def flatten_to_token_level(trajectory: Trajectory, max_len: int) -> list[TokenTransition]:
    """Expand each utterance transition into exactly ``max_len`` token steps.

    Utterances shorter than max_len are PAD-extended.  The whole utterance
    reward rides on the last (possibly PAD) token; intermediate rewards are 0,
    so reward mass is preserved exactly.
    """
    out: list[TokenTransition] = []
    for tr in trajectory.transitions:
        toks = tr.a.tokens
        if len(toks) > max_len:
            raise ValueError("utterance exceeds L")
        padded = toks + (PAD,) * (max_len - len(toks))
        for i, tok in enumerate(padded):
            s_i = TokenState(tr.s.history, padded[:i])
            last = i == max_len - 1
            if last:
                s_next = TokenState(tr.s_next.history, ())
            else:
                s_next = TokenState(tr.s.history, padded[: i + 1])
            out.append(
                TokenTransition(
                    s=s_i,
                    a=tok,
                    r=tr.r if last else 0.0,
                    s_next=s_next,
                    done=tr.done and last,
                )
            )
    return out


def token_return_of(steps: Sequence[TokenTransition], tok_gamma: float, max_len: int) -> float:
    """Return of a flattened episode on the utterance clock.

    A reward earned anywhere inside the t-th block of ``max_len`` token steps
    is discounted tok_gamma^(t*max_len), i.e. by whole utterances.  With
    tok_gamma = gamma^(1/L) this reproduces the utterance-level return.
    """
    total = 0.0
    for j, st in enumerate(steps):
        if st.r != 0.0:
            total += tok_gamma ** (max_len * (j // max_len)) * st.r
    return total


# --- episode serialization ----------------------------------------------
#
# One episode per line.  Each line is a JSON object:
#   {"transitions": [{"s": [...], "turn": int, "a": [...], "r": float,
#                     "s_next": [...], "turn_next": int, "done": bool}, ...],
#    "gamma": float}
# Token ids are plain integers into the run's vocabulary.


def trajectory_to_line(traj: Trajectory) -> str:
    recs = [
        {
            "s": list(tr.s.history),
            "turn": tr.s.turn_index,
            "a": list(tr.a.tokens),
            "r": tr.r,
            "s_next": list(tr.s_next.history),
            "turn_next": tr.s_next.turn_index,
            "done": tr.done,
        }
        for tr in traj.transitions
    ]
    return json.dumps({"transitions": recs, "gamma": traj.gamma}, separators=(",", ":"))


def trajectory_from_line(line: str) -> Trajectory:
    obj = json.loads(line)
    ts = []
    for rec in obj["transitions"]:
        ts.append(
            Transition(
                s=DialogueState(tuple(rec["s"]), rec["turn"]),
                a=Utterance(tuple(rec["a"])),
                r=float(rec["r"]),
                s_next=DialogueState(tuple(rec["s_next"]), rec["turn_next"]),
                done=bool(rec["done"]),
            )
        )
    return Trajectory.from_transitions(ts, float(obj["gamma"]))


def save_trajectories(path, trajectories: Iterable[Trajectory]) -> None:
    with open(path, "w") as fh:
        for traj in trajectories:
            fh.write(trajectory_to_line(traj) + "\n")


def load_trajectories(path) -> list[Trajectory]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(trajectory_from_line(line))
    return out
