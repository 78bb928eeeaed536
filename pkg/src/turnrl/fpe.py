"""Fitted policy evaluation at two granularities of one tabular MDP.

The utterance view treats each action as atomic.  The token view rewrites
every action as an L-token code over a small alphabet, steps through the code
one token at a time under the per-token discount gamma^(1/L), and pays the
reward on the final token.  Both views share one generic engine over
(state, action)-pair form, so a single code path does the analytic solves,
the sampled regressions, and the advantage-gap measurements for either side
of the comparison.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .hmdp import token_discount


@dataclass(frozen=True)
class TabularMDP:
    """Dense finite MDP: transition (S, A, S), reward (S, A), start dist mu0."""

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    max_len: int
    mu0: np.ndarray

    def __post_init__(self):
        p, r, mu = self.transition, self.reward, self.mu0
        if p.ndim != 3 or p.shape[0] != p.shape[2] or r.shape != p.shape[:2]:
            raise ValueError("transition must be (S, A, S) and reward (S, A)")
        if mu.shape != (p.shape[0],):
            raise ValueError("mu0 must have one entry per state")
        if not np.isfinite(p).all() or not np.isfinite(r).all():
            raise ValueError("non-finite dynamics")
        if (p < 0).any() or not np.allclose(p.sum(axis=2), 1.0, atol=1e-12):
            raise ValueError("transition rows must be distributions")
        if (mu < 0).any() or not np.isclose(mu.sum(), 1.0, atol=1e-12):
            raise ValueError("mu0 must be a distribution")
        if self.gamma < 0.0:
            raise ValueError("gamma must be nonnegative")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]


def validate_policy(mdp: TabularMDP, pi: np.ndarray) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("policy must be (S, A)")
    if (pi < 0).any() or not np.allclose(pi.sum(axis=1), 1.0, atol=1e-12):
        raise ValueError("policy rows must be distributions")
    return pi


# --- generic pair-form engine -------------------------------------------------


class View:
    """A finite MDP in (state, action)-pair form plus the hooks the fitted
    evaluation needs: lifting a base policy onto pairs and drawing sample
    rows from the uniform-over-base-pairs offline distribution."""

    label: str
    n_states: int
    n_pairs: int
    pair_state: np.ndarray  # (n_pairs,) owning state of each pair
    reward: np.ndarray  # (n_pairs,)
    p_pair: np.ndarray  # (n_pairs, n_states)
    gamma_step: float
    mu0: np.ndarray  # (n_states,)

    def pair_probs(self, pi: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample_rows(self, rng: np.random.Generator, m: int,
                    nu: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def next_matrix(self, pi: np.ndarray) -> np.ndarray:
        """(n_states, n_pairs) rows: distribution over the next pair given a
        state, i.e. the policy restricted to that state's pairs."""
        probs = self.pair_probs(pi)
        out = np.zeros((self.n_states, self.n_pairs))
        out[self.pair_state, np.arange(self.n_pairs)] = probs
        return out


def _draw_categorical_rows(p_rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of a row-stochastic matrix.  The shared
    helper keeps rng consumption identical across views."""
    u = rng.random(p_rows.shape[0])
    cdf = np.cumsum(p_rows, axis=1)
    idx = (u[:, None] > cdf).sum(axis=1)
    return np.minimum(idx, p_rows.shape[1] - 1).astype(np.intp)


def _validate_nu(nu: np.ndarray, n: int) -> np.ndarray:
    nu = np.asarray(nu, dtype=float).reshape(-1)
    if nu.shape != (n,):
        raise ValueError("nu must have one entry per base pair")
    if (nu < 0).any() or not np.isclose(nu.sum(), 1.0, atol=1e-12):
        raise ValueError("nu must be a distribution")
    return nu


def _draw_base_pairs(rng: np.random.Generator, m: int, n_pairs: int,
                     nu: np.ndarray | None) -> np.ndarray:
    """Offline draws of utterance-level pairs: uniform by default, or from an
    explicit skewed distribution for coverage-stress tests.  Both views call
    this with identical arguments so their streams stay paired."""
    if nu is None:
        return rng.integers(0, n_pairs, size=m).astype(np.intp)
    nu = _validate_nu(nu, n_pairs)
    return _draw_categorical_rows(np.broadcast_to(nu, (m, n_pairs)), rng)


class UtteranceView(View):
    label = "utterance"

    def __init__(self, mdp: TabularMDP):
        s, a = mdp.n_states, mdp.n_actions
        self.mdp = mdp
        self.n_states = s
        self.n_pairs = s * a
        self.pair_state = np.repeat(np.arange(s), a)
        self.reward = mdp.reward.reshape(-1).astype(float).copy()
        self.p_pair = mdp.transition.reshape(s * a, s).astype(float).copy()
        self.gamma_step = mdp.gamma
        self.mu0 = mdp.mu0.astype(float).copy()

    def pair_probs(self, pi: np.ndarray) -> np.ndarray:
        return validate_policy(self.mdp, pi).reshape(-1).copy()

    def sample_rows(self, rng, m, nu=None):
        pairs = _draw_base_pairs(rng, m, self.n_pairs, nu)
        nxt = _draw_categorical_rows(self.p_pair[pairs], rng)
        return pairs, nxt


def _codes_for(n_actions: int, max_len: int, alphabet: int | None) -> tuple[int, np.ndarray]:
    if alphabet is None:
        alphabet = 2 if max_len > 1 else n_actions
        while alphabet**max_len < n_actions:
            alphabet += 1
    if alphabet**max_len < n_actions:
        raise ValueError("alphabet too small to code every action")
    codes = np.zeros((n_actions, max_len), dtype=np.intp)
    for a in range(n_actions):
        v = a
        for i in reversed(range(max_len)):
            codes[a, i] = v % alphabet
            v //= alphabet
    return alphabet, codes


class TokenView(View):
    """The same MDP unrolled over L-token action codes.

    View states are (base state, code prefix); view pairs are trie edges.
    Edges that complete a code carry that action's reward and hop to
    (successor state, empty prefix); interior edges are deterministic and
    free.  The per-step discount is gamma^(1/L).  Offline rows come from the
    same uniform utterance-level draws as the utterance view, each expanded
    into its L token steps.
    """

    label = "token"

    def __init__(self, mdp: TabularMDP, alphabet: int | None = None):
        self.mdp = mdp
        s, a_n, L = mdp.n_states, mdp.n_actions, mdp.max_len
        self.alphabet, self.codes = _codes_for(a_n, L, alphabet)

        nodes: dict[tuple, int] = {(): 0}
        for a in range(a_n):
            for i in range(1, L):
                pre = tuple(self.codes[a, :i])
                if pre not in nodes:
                    nodes[pre] = len(nodes)
        self.nodes = nodes
        self.n_nodes = len(nodes)

        # local edges shared by every base state, ordered by (node, digit)
        edge_list = []  # (node_id, digit, child_node_id or -1, action or -1)
        by_node: dict[int, list[int]] = {}
        for pre, nid in nodes.items():
            digits = sorted({int(self.codes[a, len(pre)]) for a in range(a_n)
                             if tuple(self.codes[a, : len(pre)]) == pre})
            by_node[nid] = digits
        order = sorted(nodes.items(), key=lambda kv: kv[1])
        for pre, nid in order:
            for d in by_node[nid]:
                ext = pre + (d,)
                if len(ext) == L:
                    act = int(np.nonzero((self.codes == np.asarray(ext)).all(axis=1))[0][0])
                    edge_list.append((nid, d, -1, act))
                else:
                    edge_list.append((nid, d, nodes[ext], -1))
        self.edges = edge_list
        self.edges_per_state = len(edge_list)
        self._edge_index = {(nid, d): i for i, (nid, d, _, _) in enumerate(edge_list)}
        self._fanout = {nid: len(ds) for nid, ds in by_node.items()}

        # per-action path: the L local edge ids and L node ids along its code
        self.path_edges = np.zeros((a_n, L), dtype=np.intp)
        self.path_nodes = np.zeros((a_n, L), dtype=np.intp)
        for a in range(a_n):
            for i in range(L):
                pre = tuple(self.codes[a, :i])
                self.path_nodes[a, i] = nodes[pre]
                self.path_edges[a, i] = self._edge_index[(nodes[pre], int(self.codes[a, i]))]

        self.n_states = s * self.n_nodes
        self.n_pairs = s * self.edges_per_state
        self.pair_state = np.zeros(self.n_pairs, dtype=np.intp)
        self.reward = np.zeros(self.n_pairs)
        self.p_pair = np.zeros((self.n_pairs, self.n_states))
        for st in range(s):
            for ei, (nid, d, child, act) in enumerate(edge_list):
                p = st * self.edges_per_state + ei
                self.pair_state[p] = st * self.n_nodes + nid
                if act >= 0:
                    self.reward[p] = mdp.reward[st, act]
                    self.p_pair[p, :: self.n_nodes] = mdp.transition[st, act]
                else:
                    self.p_pair[p, st * self.n_nodes + child] = 1.0
        if 0.0 < mdp.gamma < 1.0:
            self.gamma_step = token_discount(mdp.gamma, L)
        else:
            self.gamma_step = mdp.gamma
        self.mu0 = np.zeros(self.n_states)
        self.mu0[:: self.n_nodes] = mdp.mu0

    def node_masses(self, pi: np.ndarray) -> np.ndarray:
        """(S, n_nodes) total policy mass of the codes extending each prefix.
        The root mass is one by definition."""
        pi = validate_policy(self.mdp, pi)
        masses = np.zeros((self.mdp.n_states, self.n_nodes))
        masses[:, 0] = 1.0
        for a in range(self.mdp.n_actions):
            for i in range(1, self.mdp.max_len):
                masses[:, self.path_nodes[a, i]] += pi[:, a]
        return masses

    def pair_probs(self, pi: np.ndarray) -> np.ndarray:
        pi = validate_policy(self.mdp, pi)
        masses = self.node_masses(pi)
        probs = np.zeros(self.n_pairs)
        for st in range(self.mdp.n_states):
            base = st * self.edges_per_state
            for ei, (nid, d, child, act) in enumerate(self.edges):
                child_mass = pi[st, act] if act >= 0 else masses[st, child]
                parent_mass = masses[st, nid]
                if parent_mass > 0.0:
                    probs[base + ei] = child_mass / parent_mass
                else:
                    # subtree never chosen by pi: any conditional works, keep
                    # rows stochastic so the dense solves stay well posed
                    probs[base + ei] = 1.0 / self._fanout[nid]
        return probs

    def sample_rows(self, rng, m, nu=None):
        s, a_n, L = self.mdp.n_states, self.mdp.n_actions, self.mdp.max_len
        upairs = _draw_base_pairs(rng, m, s * a_n, nu)
        p_rows = self.mdp.transition.reshape(s * a_n, s)[upairs]
        nxt_base = _draw_categorical_rows(p_rows, rng)
        pairs = np.zeros(m * L, dtype=np.intp)
        nxt = np.zeros(m * L, dtype=np.intp)
        for j in range(m):
            st, act = divmod(int(upairs[j]), a_n)
            base = st * self.edges_per_state
            for i in range(L):
                row = j * L + i
                pairs[row] = base + self.path_edges[act, i]
                if i + 1 < L:
                    nxt[row] = st * self.n_nodes + self.path_nodes[act, i + 1]
                else:
                    nxt[row] = int(nxt_base[j]) * self.n_nodes
        return pairs, nxt


# --- analytic quantities ------------------------------------------------------


def _solve_q_pairs(view: View, pi: np.ndarray) -> np.ndarray:
    if view.gamma_step >= 1.0:
        raise ValueError("discount must be strictly below 1 for the dense solve")
    nxt = view.next_matrix(pi)
    m = np.eye(view.n_pairs) - view.gamma_step * (view.p_pair @ nxt)
    q = np.linalg.solve(m, view.reward)
    resid = float(np.max(np.abs(m @ q - view.reward)))
    if resid > 1e-10:
        raise RuntimeError(f"policy evaluation solve residual {resid:.2e} too large")
    return q


def analytic_q(mdp: TabularMDP, pi: np.ndarray) -> np.ndarray:
    """Exact Q^pi of the utterance-level MDP, shape (S, A)."""
    view = UtteranceView(mdp)
    return _solve_q_pairs(view, pi).reshape(mdp.n_states, mdp.n_actions)


def analytic_v(mdp: TabularMDP, pi: np.ndarray) -> np.ndarray:
    q = analytic_q(mdp, pi)
    return (validate_policy(mdp, pi) * q).sum(axis=1)


def analytic_v_token_boundary(mdp: TabularMDP, pi: np.ndarray,
                              alphabet: int | None = None) -> np.ndarray:
    """Token-view state values at utterance boundaries, reported on the
    utterance clock.

    The raw token-level fixed point discounts a reward earned on the final
    token of the first utterance by gamma^((L-1)/L), because L - 1 free token
    steps precede it.  Dividing boundary values by that constant phase puts
    them on the utterance clock, where they coincide with the utterance-level
    V^pi exactly.
    """
    view = TokenView(mdp, alphabet)
    q = _solve_q_pairs(view, pi)
    nxt = view.next_matrix(pi)
    v_states = nxt @ q
    bound = v_states[:: view.n_nodes]
    phase = view.gamma_step ** (mdp.max_len - 1)
    return bound / phase


def occupancy_pairs(view: View, pi: np.ndarray) -> np.ndarray:
    """Discounted (state, action)-pair occupancy (1 - gamma) sum_t gamma^t."""
    if view.gamma_step >= 1.0:
        raise ValueError("discount must be strictly below 1 for the dense solve")
    probs = view.pair_probs(pi)
    s_of = view.pair_state
    t = np.zeros((view.n_states, view.n_states))
    np.add.at(t, s_of, probs[:, None] * view.p_pair)
    rho = np.linalg.solve(
        np.eye(view.n_states) - view.gamma_step * t.T,
        (1.0 - view.gamma_step) * view.mu0,
    )
    d = rho[s_of] * probs
    return d


def advantage_error(view: View, pi: np.ndarray, f_values: np.ndarray) -> float:
    """Occupancy-weighted squared gap between the advantage induced by
    ``f_values`` and the exact advantage, measured at the utterance scale.

    Both views are scored against the same yardstick: the estimator is read
    out once per (state, action) pair and centered under the policy, and the
    gap to the analytic advantage is integrated over the utterance-level
    pair occupancy.  For the token view the read-out is the value at each
    action's final token edge; the value there estimates r + gamma * E[V]
    exactly (the L - 1 free steps before it contribute the phase that turns
    the per-step discount back into the utterance one), so no rescaling is
    needed.
    """
    f = np.asarray(f_values, dtype=float)
    if f.shape != (view.n_pairs,):
        raise ValueError("f_values must have one entry per pair")
    mdp = view.mdp
    pol = validate_policy(mdp, pi)
    if isinstance(view, TokenView):
        offs = np.arange(mdp.n_states)[:, None] * view.edges_per_state
        f_utt = f[offs + view.path_edges[np.newaxis, :, -1]]
    else:
        f_utt = f.reshape(mdp.n_states, mdp.n_actions)
    q = analytic_q(mdp, pol)
    gap = (f_utt - (pol * f_utt).sum(axis=1, keepdims=True)) \
        - (q - (pol * q).sum(axis=1, keepdims=True))
    d = occupancy_pairs(UtteranceView(mdp), pol)
    return float(np.sum(d * gap.reshape(-1) ** 2))


# --- function classes and the fitted iteration --------------------------------


@dataclass(frozen=True)
class FunctionClass:
    """What the per-round regression may express.

    family "tabular" fits one free value per pair (least squares there is the
    per-pair target mean; unseen pairs stay at zero, the minimum-norm
    completion).  family "linear" fits fixed random Gaussian features of the
    pair index; ``corruption`` zeroes that fraction of pair rows to make the
    class deliberately incomplete for negative tests.
    """

    family: str = "tabular"
    dim: int = 32
    seed: int = 0
    corruption: float = 0.0

    def materialize(self, view: View) -> np.ndarray | None:
        if self.family == "tabular":
            return None
        if self.family != "linear":
            raise ValueError(f"unknown function class family {self.family!r}")
        rng = np.random.default_rng(np.random.SeedSequence(entropy=self.seed, spawn_key=(11,)))
        phi = rng.normal(size=(view.n_pairs, self.dim)) / np.sqrt(self.dim)
        if self.corruption > 0.0:
            k = int(round(self.corruption * view.n_pairs))
            dead = rng.choice(view.n_pairs, size=k, replace=False)
            phi[dead] = 0.0
        return phi


def _fit_round(phi: np.ndarray | None, n_pairs: int, rows: np.ndarray,
               targets: np.ndarray, ridge: float) -> np.ndarray:
    if phi is None:
        sums = np.zeros(n_pairs)
        counts = np.zeros(n_pairs)
        np.add.at(sums, rows, targets)
        np.add.at(counts, rows, 1.0)
        out = np.zeros(n_pairs)
        seen = counts > 0
        out[seen] = sums[seen] / counts[seen]
        return out
    a = phi[rows]
    if ridge > 0.0:
        g = a.T @ a + ridge * np.eye(phi.shape[1])
        w = np.linalg.solve(g, a.T @ targets)
    else:
        w, *_ = np.linalg.lstsq(a, targets, rcond=None)
    return phi @ w


@dataclass
class FpeResult:
    f_bar: np.ndarray
    f_last: np.ndarray
    n_rounds: int
    per_round: int


def fitted_policy_evaluation(view: View, pi: np.ndarray, n_rounds: int, per_round: int,
                             fclass: FunctionClass, seed: int,
                             ridge: float = 0.0,
                             nu: np.ndarray | None = None) -> FpeResult:
    """Iterate the sampled one-step backup n_rounds times from f_0 = 0 and
    return the average of the iterates.

    Each round draws a fresh dataset of per_round base transitions from the
    offline distribution nu over utterance-level pairs (uniform when omitted;
    the token view expands each draw into its L token steps), regresses f onto
    r + gamma_view * E_{a' ~ pi} f_prev(s', a'), and moves on.  The bootstrap
    expectation is computed exactly from the previous iterate, so all sampling
    noise enters through the drawn transitions.
    """
    if n_rounds < 1 or per_round < 1:
        raise ValueError("n_rounds and per_round must be >= 1")
    phi = fclass.materialize(view)
    nxt = view.next_matrix(pi)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(13,)))
    f_prev = np.zeros(view.n_pairs)
    f_sum = np.zeros(view.n_pairs)
    for _ in range(n_rounds):
        rows, nxt_states = view.sample_rows(rng, per_round, nu)
        boot = nxt @ f_prev
        targets = view.reward[rows] + view.gamma_step * boot[nxt_states]
        f_prev = _fit_round(phi, view.n_pairs, rows, targets, ridge)
        f_sum += f_prev
    return FpeResult(f_bar=f_sum / n_rounds, f_last=f_prev, n_rounds=n_rounds, per_round=per_round)


def worst_case_level_gap(gamma: float, max_len: int) -> float:
    """Scale factor by which the token-level advantage-error bound exceeds the
    utterance-level one: gamma * sqrt(L)."""
    return gamma * float(np.sqrt(max_len))


def rounds_schedule(n_samples: int, k_policy) -> tuple[int, int]:
    """Split a total sample budget into (rounds, per-round).  An integer pins
    the number of rounds so doubling the budget doubles the per-round dataset;
    'sqrt' grows both together."""
    if k_policy == "sqrt":
        k = max(1, int(round(np.sqrt(n_samples))))
    else:
        k = int(k_policy)
        if k < 1:
            raise ValueError("rounds must be >= 1")
    m = max(1, n_samples // k)
    return k, m


def compare_levels(mdp: TabularMDP, pi: np.ndarray, sample_grid: Sequence[int],
                   seeds: Sequence[int], fclass: FunctionClass,
                   k_policy=8, ridge: float = 0.0,
                   alphabet: int | None = None,
                   nu: np.ndarray | None = None) -> list[dict]:
    """Run both views over a grid of total sample budgets and seeds.

    Paired cells share the same underlying draws: the token view expands the
    very transitions the utterance view regresses on.  Returns one row per
    (view, budget, seed); N counts utterance-level transitions in both views.
    """
    uview = UtteranceView(mdp)
    tview = TokenView(mdp, alphabet)
    rows = []
    for n in sample_grid:
        k, m = rounds_schedule(n, k_policy)
        for seed in seeds:
            for view in (uview, tview):
                res = fitted_policy_evaluation(view, pi, k, m, fclass, seed, ridge, nu)
                err = advantage_error(view, pi, res.f_bar)
                rows.append(
                    {
                        "view": view.label,
                        "N": int(n),
                        "K": k,
                        "M": m,
                        "seed": int(seed),
                        "advantage_error": float(err),
                    }
                )
    return rows


def sweep_summary(rows: Sequence[dict]) -> list[dict]:
    """Median advantage error per (view, N), sorted by N then view."""
    cells: dict[tuple, list[float]] = {}
    for row in rows:
        cells.setdefault((row["view"], row["N"]), []).append(row["advantage_error"])
    out = []
    for (view, n), errs in sorted(cells.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        out.append({"view": view, "N": n, "median_error": float(np.median(errs))})
    return out


def default_theory_instance(seed: int = 0) -> tuple[TabularMDP, np.ndarray]:
    """The stock comparison instance: 6 states, 16 actions, L = 8.

    Transitions are deterministic (a seeded random next-state map), so the
    regression targets inside fitted evaluation carry no label noise and the
    error curves are driven purely by pair coverage and the depth of value
    propagation.  Rewards are graded by state so the value function has real
    spread, and a full-support softmax policy supplies the mixing.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(17,)))
    s, a = 6, 16
    reward = np.linspace(-1.0, 1.0, s)[:, None] * np.ones((s, a))
    dest = rng.integers(0, s, size=(s, a))
    transition = np.zeros((s, a, s))
    transition[np.arange(s)[:, None], np.arange(a)[None, :], dest] = 1.0
    mu0 = np.full(s, 1.0 / s)
    mdp = TabularMDP(transition=transition, reward=reward, gamma=0.9, max_len=8, mu0=mu0)
    logits = 0.5 * rng.normal(size=(s, a))
    pi = np.exp(logits - logits.max(axis=1, keepdims=True))
    pi = pi / pi.sum(axis=1, keepdims=True)
    return mdp, pi


def loglog_slope(ns: Sequence[float], errs: Sequence[float]) -> float:
    """Least-squares slope of log error against log sample count."""
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(errs, dtype=float))
    x = x - x.mean()
    return float((x @ (y - y.mean())) / (x @ x))


# --- concentrability ----------------------------------------------------------


def density_ratio_utterance(mdp: TabularMDP, pi: np.ndarray, nu: np.ndarray) -> float:
    """max over pairs of occupancy(s, a) / nu(s, a)."""
    nu = np.asarray(nu, dtype=float).reshape(-1)
    view = UtteranceView(mdp)
    d = occupancy_pairs(view, pi)
    if ((nu == 0) & (d > 0)).any():
        raise ValueError("offline distribution misses visited pairs")
    mask = nu > 0
    return float(np.max(d[mask] / nu[mask]))


def density_ratio_token(mdp: TabularMDP, pi: np.ndarray, nu: np.ndarray,
                        alphabet: int | None = None) -> float:
    """Token-view concentrability on the utterance clock.

    Occupancy and the offline distribution are both marginalized from whole
    codes onto trie edges, with every token of an utterance carrying the
    utterance's own discount weight.  Partial-depth ratios are dominated by
    the full-depth ones, and at full depth the ratio is pointwise the
    utterance-level ratio, so the max agrees with it exactly.
    """
    nu = np.asarray(nu, dtype=float).reshape(mdp.n_states, mdp.n_actions)
    view = TokenView(mdp, alphabet)
    d_utt = occupancy_pairs(UtteranceView(mdp), pi).reshape(mdp.n_states, mdp.n_actions)
    edge_actions: list[list[int]] = [[] for _ in range(view.edges_per_state)]
    for a in range(mdp.n_actions):
        for i in range(mdp.max_len):
            edge_actions[view.path_edges[a, i]].append(a)
    best = 0.0
    for st in range(mdp.n_states):
        for ei in range(view.edges_per_state):
            acts = edge_actions[ei]
            num = float(sum(d_utt[st, a] for a in acts))
            den = float(sum(nu[st, a] for a in acts))
            if den == 0.0:
                if num > 0.0:
                    raise ValueError("offline distribution misses visited pairs")
                continue
            ratio = num / den
            if ratio > best:
                best = ratio
    return best
