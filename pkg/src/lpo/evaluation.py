"""Off-policy critic estimation by importance-weighted geometric-stop returns.

A collection of rollouts is drawn once from a behaviour policy and reused to
evaluate nearby policies.  For a rollout ``(s_1, a_1, ..., s_h, a_h)`` the
target for the first pair is

    lambda * (r + b)(s_h, a_h) / (1 - gamma) - b(s_1, a_1)

with ``lambda`` the product of probability ratios from the second step on.
Its expectation is ``Q_b(s_1, a_1) - b(s_1, a_1)`` under the evaluated policy.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bonus import BonusOracle, build_bonus_mdp, unknown_bonus
from .function_class import fit_least_squares
from .mdp import (Simulator, Trajectory, d_sampler_batch, default_horizon_cap, default_nu,
                  policy_evaluation_exact)


class UnsupportedBehaviourError(ValueError):
    pass


def g_max(gamma: float) -> float:
    return (2.0 + unknown_bonus(gamma)) / (1.0 - gamma)


@dataclass
class EvalDataset:
    """``M`` rollouts in flat storage; rollout ``i`` is ``states[offsets[i]:offsets[i+1]]``."""

    states: np.ndarray
    actions: np.ndarray
    offsets: np.ndarray
    behaviour: object
    oracle: Optional[BonusOracle] = None
    created_at_inner_step: int = 0
    transitions: int = 0

    @property
    def M(self) -> int:
        return len(self.offsets) - 1

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def first(self) -> tuple:
        idx = self.offsets[:-1]
        return self.states[idx], self.actions[idx]

    @property
    def last(self) -> tuple:
        idx = self.offsets[1:] - 1
        return self.states[idx], self.actions[idx]

    def rollout(self, i: int, reward=None, bonus=None) -> Trajectory:
        lo, hi = self.offsets[i], self.offsets[i + 1]
        steps = []
        for s, a in zip(self.states[lo:hi], self.actions[lo:hi]):
            r = 0.0 if reward is None else float(reward[s, a])
            b = 0.0 if bonus is None else float(bonus[s, a])
            steps.append((int(s), int(a), r, b))
        return Trajectory(steps)

    def to_jsonl(self, estimates=None) -> str:
        lines = []
        for i in range(self.M):
            lo, hi = self.offsets[i], self.offsets[i + 1]
            row = {"pairs": [[int(s), int(a)] for s, a in zip(self.states[lo:hi], self.actions[lo:hi])]}
            if estimates is not None:
                row.update(lam=float(estimates["lam"][i]), G=float(estimates["G"][i]),
                           target=float(estimates["target"][i]))
            lines.append(json.dumps(row))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ISEstimate:
    lam: float
    G: float
    target: float
    clipped: bool = False


def behaviour_sample(cover, behaviour, sim: Simulator, oracle: Optional[BonusOracle], M: int,
                     rng, nu=None, horizon_cap: Optional[int] = None,
                     created_at_inner_step: int = 0) -> EvalDataset:
    """Collect ``M`` rollouts: first pair from the cover's occupancy, then follow ``behaviour``.

    All rollouts share ``rng``; they are drawn in lockstep.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    mdp = sim.mdp
    gamma = mdp.gamma
    cap = default_horizon_cap(gamma) if horizon_cap is None else horizon_cap
    nu = default_nu(mdp) if nu is None else nu
    before = sim.n_transitions
    s, a, _ = d_sampler_batch(sim, cover, nu, rng, M, cap)
    h = np.minimum(rng.geometric(1.0 - gamma, size=M), cap)
    offsets = np.zeros(M + 1, dtype=np.int64)
    np.cumsum(h, out=offsets[1:])
    states = np.empty(offsets[-1], dtype=np.int64)
    actions = np.empty(offsets[-1], dtype=np.int64)
    states[offsets[:-1]] = s
    actions[offsets[:-1]] = a
    cum = np.cumsum(np.asarray(behaviour.table, dtype=float), axis=1)
    cum[:, -1] = 1.0
    # Longest rollouts first, so the live set at step t is a prefix.
    order = np.argsort(-h, kind="stable")
    s, a, start = s[order], a[order], offsets[:-1][order]
    n_live = np.searchsorted(-h[order], -np.arange(1, int(h.max())), side="left")
    for t, n in enumerate(n_live, start=1):
        s[:n] = sim.step_many(s[:n], a[:n], rng)
        u = rng.random(n)
        a[:n] = (cum[s[:n]] <= u[:, None]).sum(axis=1)
        pos = start[:n] + t
        states[pos] = s[:n]
        actions[pos] = a[:n]
    return EvalDataset(states, actions, offsets, behaviour, oracle, created_at_inner_step,
                       sim.n_transitions - before)


def is_targets(dataset: EvalDataset, evaluate, behaviour, bonus: np.ndarray, reward: np.ndarray,
               gamma: float, exclude_first_bonus: bool = False, clip: bool = False) -> dict:
    """Vectorised ratios, returns and regression targets for every rollout.

    ``exclude_first_bonus`` drops the bonus from one-step returns and the
    subtraction from the target; the expectation is unchanged.  ``clip``
    limits ``|lambda * G|`` to ``2 * G_max``.
    """
    pi = np.asarray(evaluate.table)
    mu = np.asarray(behaviour.table)
    st, ac, off = dataset.states, dataset.actions, dataset.offsets
    p_eval = pi[st, ac]
    p_beh = mu[st, ac]
    not_first = np.ones(st.size, dtype=bool)
    not_first[off[:-1]] = False
    if np.any((p_beh == 0) & not_first):
        raise UnsupportedBehaviourError("unsupported behaviour: zero behaviour probability on a rollout")
    with np.errstate(divide="ignore"):
        step_log = np.where(not_first, np.log(p_eval) - np.log(np.where(not_first, p_beh, 1.0)), 0.0)
    log_lam = np.add.reduceat(step_log, off[:-1]) if st.size else np.zeros(0)
    lam = np.exp(log_lam)
    ls, la = dataset.last
    fs, fa = dataset.first
    last_b = bonus[ls, la]
    if exclude_first_bonus:
        last_b = np.where(dataset.lengths == 1, 0.0, last_b)
    G = (reward[ls, la] + last_b) / (1.0 - gamma)
    value = lam * G
    clipped = np.zeros(value.shape, dtype=bool)
    if clip:
        bound = 2.0 * g_max(gamma)
        clipped = np.abs(value) > bound
        value = np.clip(value, -bound, bound)
    target = value if exclude_first_bonus else value - bonus[fs, fa]
    return {"lam": lam, "G": G, "target": target, "clipped": clipped}


def is_target(rollout: Trajectory, evaluate, behaviour, bonus: np.ndarray, gamma: float,
              reward: Optional[np.ndarray] = None) -> ISEstimate:
    """Single-rollout form; rewards are read from the rollout unless ``reward`` is given."""
    lam = 1.0
    for s, a, _, _ in rollout.steps[1:]:
        pb = behaviour.prob(s)[a]
        if pb == 0:
            raise UnsupportedBehaviourError("unsupported behaviour: zero behaviour probability on a rollout")
        lam *= evaluate.prob(s)[a] / pb
    sL, aL, rL, _ = rollout.steps[-1]
    sF, aF = rollout.steps[0][0], rollout.steps[0][1]
    r = rL if reward is None else reward[sL, aL]
    G = (r + bonus[sL, aL]) / (1.0 - gamma)
    return ISEstimate(lam, G, lam * G - bonus[sF, aF])


@dataclass
class Critic:
    """Fitted ``f`` and the assembled critic ``Q_hat`` (both ``(S, A)`` tables)."""

    f_table: np.ndarray
    q_table: np.ndarray
    bonus: np.ndarray
    known_pairs: np.ndarray

    def __call__(self, s, a):
        return self.q_table[s, a]


def assemble_critic(f_table: np.ndarray, oracle: BonusOracle) -> Critic:
    """``f + b/2`` on known pairs and ``f + b`` elsewhere."""
    b = np.asarray(oracle.bonus)
    q = np.where(oracle.known_pairs, f_table + 0.5 * b, f_table + b)
    return Critic(np.asarray(f_table), q, b, oracle.known_pairs)


def evaluate_policy(dataset: EvalDataset, evaluate, function_class, oracle: BonusOracle,
                    reward: np.ndarray, gamma: float, exclude_first_bonus: bool = False,
                    clip: bool = False) -> Critic:
    if dataset.M == 0:
        raise ValueError("no regression data")
    est = is_targets(dataset, evaluate, dataset.behaviour, np.asarray(oracle.bonus), reward, gamma,
                     exclude_first_bonus, clip)
    fs, fa = dataset.first
    f = fit_least_squares(function_class, np.column_stack([fs, fa]), est["target"])
    return assemble_critic(f.table_, oracle)


def exact_targets(mdp, evaluate, oracle: BonusOracle) -> np.ndarray:
    """``Q_b - b`` for ``evaluate`` on the bonus-added MDP."""
    Qb, _ = policy_evaluation_exact(build_bonus_mdp(mdp, oracle), evaluate)
    return Qb - np.asarray(oracle.bonus)


def evaluate_policy_exact(mdp, evaluate, function_class, oracle: BonusOracle) -> Critic:
    """Critic fitted to the exact targets at every pair (one sample each)."""
    target = exact_targets(mdp, evaluate, oracle)
    S, A = target.shape
    pairs = np.column_stack(np.divmod(np.arange(S * A), A))
    f = fit_least_squares(function_class, pairs, target.ravel())
    return assemble_critic(f.table_, oracle)


def kappa_window(gamma: float, delta1: float, eta: float, B: float, W: float,
                 K: Optional[int] = None) -> int:
    """Number of inner steps a rollout collection may be reused, clamped to ``[1, K]``."""
    if not 0 < delta1 < 1:
        raise ValueError("delta1 must lie in (0, 1)")
    if eta < 0 or B <= 0 or W <= 0:
        raise ValueError("eta must be nonnegative and B, W positive")
    hi = K if K is not None else math.inf
    if eta == 0:
        raw = math.inf
    else:
        raw = (1.0 - gamma) * math.log(2.0) / (2.0 * math.log(1.0 / delta1) * eta * (B + W))
    value = max(1, min(hi, math.floor(raw) if math.isfinite(raw) else hi))
    if not math.isfinite(value):
        raise ValueError("eta = 0 needs K to bound the window")
    return int(value)


def kappa_raw(gamma: float, delta1: float, eta: float, B: float, W: float) -> float:
    return (1.0 - gamma) * math.log(2.0) / (2.0 * math.log(1.0 / delta1) * eta * (B + W))
