"""Finite discounted MDPs, exact dynamic programming and trajectory samplers.

Transition kernels are dense ``(S, A, S)`` arrays and rewards are ``(S, A)``
arrays.  Policies are passed around either as ``(S, A)`` probability tables
or as objects from :mod:`lpo.policy`; mixtures are handled at trajectory
granularity, so every exact quantity of a mixture is the weighted average of
the quantity for each of its leaves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

ROW_TOL = 1e-12
DAGGER_REWARD = 3.0


def default_horizon_cap(gamma: float) -> int:
    """Cap on geometric stopping times leaving tail mass below 1e-6."""
    if gamma <= 0.0:
        return 1
    return int(math.ceil(math.log(1e6) / (1.0 - gamma)))


@dataclass(frozen=True, eq=False)
class MdpSpec:
    """Finite discounted MDP ``(S, A, P, r, gamma)`` started at ``initial_state``."""

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    initial_state: int = 0

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        r = np.array(self.reward, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        if r.shape != P.shape[:2]:
            raise ValueError(f"reward must have shape {P.shape[:2]}, got {r.shape}")
        if np.any(P < 0):
            raise ValueError("transition rows must be nonnegative")
        if np.max(np.abs(P.sum(axis=2) - 1.0)) > ROW_TOL:
            raise ValueError("transition rows must sum to 1")
        if np.any(r < 0) or np.any(r > 1):
            raise ValueError("rewards must lie in [0, 1]")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie strictly inside (0, 1), got {self.gamma}")
        if not 0 <= self.initial_state < P.shape[0]:
            raise ValueError(f"initial_state {self.initial_state} out of range")
        P.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def base(self) -> "MdpSpec":
        return self

    def with_gamma(self, gamma: float) -> "MdpSpec":
        return MdpSpec(self.transition, self.reward, gamma, self.initial_state)

    def tables(self):
        """Return ``(P, r, available)`` as used by the exact solvers."""
        avail = np.ones(self.transition.shape[:2], dtype=bool)
        return self.transition, self.reward, avail


@dataclass(frozen=True, eq=False)
class AugmentedMdp:
    """A base MDP with an additive reward bonus and an optional absorbing action.

    When ``unknown_states`` is given, an extra action (index ``n_actions`` of
    the base MDP) is available only at flagged states; it self-loops with
    probability one and pays reward 3.
    """

    base: MdpSpec
    extra_reward: np.ndarray
    unknown_states: Optional[np.ndarray] = None

    def __post_init__(self):
        b = np.array(self.extra_reward, dtype=float)
        if b.shape != self.base.reward.shape:
            raise ValueError("extra_reward must match the base reward shape")
        if np.any(b < 0):
            raise ValueError("extra_reward must be nonnegative")
        b.setflags(write=False)
        object.__setattr__(self, "extra_reward", b)
        if self.unknown_states is not None:
            u = np.array(self.unknown_states, dtype=bool)
            if u.shape != (self.base.n_states,):
                raise ValueError("unknown_states must have one flag per state")
            u.setflags(write=False)
            object.__setattr__(self, "unknown_states", u)

    @property
    def gamma(self) -> float:
        return self.base.gamma

    @property
    def initial_state(self) -> int:
        return self.base.initial_state

    @property
    def n_states(self) -> int:
        return self.base.n_states

    @property
    def n_actions(self) -> int:
        """Actions including the absorbing one when present."""
        return self.base.n_actions + (self.unknown_states is not None)

    @property
    def dagger(self) -> Optional[int]:
        return self.base.n_actions if self.unknown_states is not None else None

    def tables(self):
        P0, r0 = self.base.transition, self.base.reward
        S, A = r0.shape
        r = r0 + self.extra_reward
        if self.unknown_states is None:
            return P0, r, np.ones((S, A), dtype=bool)
        P = np.zeros((S, A + 1, S))
        P[:, :A] = P0
        P[np.arange(S), A, np.arange(S)] = 1.0
        R = np.zeros((S, A + 1))
        R[:, :A] = r
        R[:, A] = DAGGER_REWARD
        avail = np.ones((S, A + 1), dtype=bool)
        avail[:, A] = self.unknown_states
        return P, R, avail


@dataclass
class Trajectory:
    """Sequence of ``(state, action, reward, bonus)`` steps."""

    steps: list = field(default_factory=list)
    terminated_by: str = "geometric-stop"

    def __len__(self):
        return len(self.steps)

    @property
    def states(self):
        return [st[0] for st in self.steps]

    @property
    def actions(self):
        return [st[1] for st in self.steps]


# ---------------------------------------------------------------------------
# policy plumbing

def _raw_leaves(policy):
    """``(objects, weights)`` without touching the tables."""
    if isinstance(policy, np.ndarray):
        return [policy], np.ones(1)
    if hasattr(policy, "leaves"):
        comps, weights = policy.leaves()
        return list(comps), np.asarray(weights, dtype=float)
    if hasattr(policy, "table"):
        return [policy], np.ones(1)
    raise TypeError(f"cannot interpret {type(policy).__name__} as a policy")


def _padded_table(leaf, n_states: int, n_actions: int) -> np.ndarray:
    t = np.asarray(leaf if isinstance(leaf, np.ndarray) else leaf.table, dtype=float)
    if t.shape[0] != n_states or t.shape[1] > n_actions:
        raise ValueError(f"policy table shape {t.shape} incompatible with ({n_states}, {n_actions})")
    if t.shape[1] < n_actions:
        t = np.pad(t, ((0, 0), (0, n_actions - t.shape[1])))
    return t


def policy_leaves(policy, n_states: int, n_actions: int):
    """Flatten ``policy`` into ``[(weight, table)]`` with ``(S, n_actions)`` tables.

    Tables narrower than ``n_actions`` are zero-padded (the absorbing action of
    an augmented MDP gets no mass).
    """
    comps, weights = _raw_leaves(policy)
    return [(w, _padded_table(c, n_states, n_actions)) for c, w in zip(comps, weights)]


def _check_available(table, avail):
    if np.any((table > 0) & ~avail):
        raise ValueError("action unavailable: policy puts mass on an action that is not offered")


# ---------------------------------------------------------------------------
# exact oracles

def value_iteration(mdp, tol: float = 1e-10, max_iter: int = 1_000_000):
    """Optimal ``(Q, V)`` by fixed-point iteration.

    The returned ``Q`` has sup-norm Bellman optimality residual at most
    ``tol``.  Unavailable actions carry ``-inf`` in ``Q``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    P, r, avail = mdp.tables()
    gamma = mdp.gamma
    Q = np.where(avail, 0.0, -np.inf)
    for _ in range(max_iter):
        V = Q.max(axis=1)
        Qn = np.where(avail, r + gamma * (P @ V), -np.inf)
        resid = np.max(np.abs(np.where(avail, Qn - Q, 0.0)))
        if resid <= tol:
            return Q, V
        Q = Qn
    raise RuntimeError("value iteration did not converge")


def bellman_residual(mdp, Q) -> float:
    P, r, avail = mdp.tables()
    V = np.max(np.where(avail, Q, -np.inf), axis=1)
    TQ = r + mdp.gamma * (P @ V)
    return float(np.max(np.abs(np.where(avail, TQ - Q, 0.0))))


def _evaluate_table(P, r, gamma, table):
    S = P.shape[0]
    P_pi = np.einsum("sa,sat->st", table, P)
    r_pi = np.sum(table * r, axis=1)
    V = np.linalg.solve(np.eye(S) - gamma * P_pi, r_pi)
    Q = r + gamma * (P @ V)
    return Q, V


def policy_evaluation_exact(mdp, policy, tol: float = 1e-10):
    """``(Q^pi, V^pi)`` by solving the linear Bellman system.

    Mixtures are evaluated leaf by leaf and averaged.  ``tol`` bounds the
    Bellman residual that is asserted on the result.
    """
    P, r, avail = mdp.tables()
    Q = np.zeros(r.shape)
    V = np.zeros(r.shape[0])
    for w, t in policy_leaves(policy, r.shape[0], r.shape[1]):
        _check_available(t, avail)
        Qi, Vi = _evaluate_table(P, r, mdp.gamma, t)
        Q += w * Qi
        V += w * Vi
    return Q, V


def default_nu(mdp) -> np.ndarray:
    """Start distribution ``delta(s0) x Uniform(A)`` over base actions."""
    base = mdp.base
    nu = np.zeros((mdp.n_states, mdp.n_actions))
    nu[base.initial_state, : base.n_actions] = 1.0 / base.n_actions
    return nu


def state_start_nu(mdp, policy, state: Optional[int] = None) -> np.ndarray:
    """Start distribution ``delta(state) x policy(.|state)``."""
    s = mdp.initial_state if state is None else state
    nu = np.zeros((mdp.n_states, mdp.n_actions))
    for w, t in policy_leaves(policy, mdp.n_states, mdp.n_actions):
        nu[s] += w * t[s]
    return nu


def occupancy_exact(mdp, policy, nu=None) -> np.ndarray:
    """Discounted state-action occupancy ``(1-gamma) sum_t gamma^t Pr(s_t, a_t)``."""
    P, r, avail = mdp.tables()
    S, A = r.shape
    nu = default_nu(mdp) if nu is None else np.asarray(nu, dtype=float)
    if nu.shape != (S, A):
        if nu.shape == (S, A - 1):
            nu = np.pad(nu, ((0, 0), (0, 1)))
        else:
            raise ValueError(f"nu must have shape {(S, A)}")
    if abs(nu.sum() - 1.0) > 1e-10 or np.any(nu < 0):
        raise ValueError("nu must be a probability distribution")
    gamma = mdp.gamma
    out = np.zeros((S, A))
    for w, t in policy_leaves(policy, S, A):
        _check_available(t, avail)
        # t = 0 term is nu itself; later steps follow pi from the first successor distribution
        P_pi = np.einsum("sa,sat->st", t, P)
        first_next = np.einsum("sa,sat->t", nu, P)
        mu = np.linalg.solve((np.eye(S) - gamma * P_pi).T, first_next)
        d = (1 - gamma) * (nu + gamma * mu[:, None] * t)
        out += w * d
    return out


# ---------------------------------------------------------------------------
# sampling

class Simulator:
    """Sampling access to an MDP that counts every transition it produces."""

    def __init__(self, mdp):
        self.mdp = mdp
        P, r, avail = mdp.tables()
        self._cum = np.cumsum(P, axis=2)
        self._cum[..., -1] = 1.0
        self.reward_table = r
        self.n_transitions = 0

    def step(self, s: int, a: int, rng) -> int:
        self.n_transitions += 1
        return int(np.searchsorted(self._cum[s, a], rng.random(), side="right"))

    def step_many(self, s, a, rng) -> np.ndarray:
        s = np.asarray(s)
        if s.size == 0:
            return s.copy()
        self.n_transitions += s.size
        u = rng.random(s.size)
        return (self._cum[s, a] <= u[:, None]).sum(axis=1)


def sample_from_rows(probs: np.ndarray, rng) -> np.ndarray:
    """One categorical draw per row of ``probs``."""
    cum = np.cumsum(probs, axis=1)
    cum[:, -1] = 1.0
    u = rng.random(probs.shape[0])
    return (cum <= u[:, None]).sum(axis=1)


def sample_pairs(nu: np.ndarray, size: int, rng) -> tuple:
    flat = nu.ravel()
    idx = rng.choice(flat.size, size=size, p=flat / flat.sum())
    return np.divmod(idx, nu.shape[1])


def _draw_leaves(policy, n_states, n_actions, rng, size):
    """Draw one leaf per sample; return compact leaf indices and the tables actually used."""
    comps, weights = _raw_leaves(policy)
    leaf = rng.choice(len(weights), size=size, p=weights / weights.sum())
    used, inverse = np.unique(leaf, return_inverse=True)
    tables = np.stack([_padded_table(comps[i], n_states, n_actions) for i in used])
    return inverse.reshape(-1), tables


def d_sampler_batch(sim: Simulator, policy, nu, rng, size: int, horizon_cap: int,
                    gamma: Optional[float] = None):
    """Vectorised geometric-stop occupancy sampler.

    Returns ``(states, actions, stop_times)``; ``stop_times`` are the capped
    geometric times ``tau`` (``tau - 1`` transitions were taken).
    """
    mdp = sim.mdp
    gamma = mdp.gamma if gamma is None else gamma
    leaf, tables = _draw_leaves(policy, mdp.n_states, sim.reward_table.shape[1], rng, size)
    s, a = sample_pairs(np.asarray(nu, dtype=float), size, rng)
    if gamma <= 0.0:
        tau = np.ones(size, dtype=int)
    else:
        tau = np.minimum(rng.geometric(1.0 - gamma, size=size), horizon_cap)
    # Longest trajectories first, so the live set at step t is a prefix.
    order = np.argsort(-tau, kind="stable")
    s, a, leaf_o, tau_o = s[order], a[order], leaf[order], tau[order]
    cum = np.cumsum(tables, axis=2)
    cum[..., -1] = 1.0
    n_live = np.searchsorted(-tau_o, -np.arange(1, int(tau_o.max(initial=1))), side="left")
    for n in n_live:
        s[:n] = sim.step_many(s[:n], a[:n], rng)
        u = rng.random(n)
        a[:n] = (cum[leaf_o[:n], s[:n]] <= u[:, None]).sum(axis=1)
    out_s, out_a = np.empty_like(s), np.empty_like(a)
    out_s[order], out_a[order] = s, a
    return out_s, out_a, tau


def d_sampler(sim: Simulator, policy, nu=None, rng=None, horizon_cap: Optional[int] = None,
              gamma: Optional[float] = None) -> tuple:
    """One draw ``(s, a)`` from the discounted occupancy of ``policy`` started at ``nu``."""
    rng = np.random.default_rng() if rng is None else rng
    nu = default_nu(sim.mdp) if nu is None else nu
    g = sim.mdp.gamma if gamma is None else gamma
    cap = default_horizon_cap(g) if horizon_cap is None else horizon_cap
    if cap < 1:
        raise ValueError("horizon_cap must be at least 1")
    s, a, _ = d_sampler_batch(sim, policy, nu, rng, 1, cap, gamma=g)
    return int(s[0]), int(a[0])


def rollout_geometric(sim: Simulator, start, policy, rng, horizon_cap: Optional[int] = None,
                      bonus: Optional[np.ndarray] = None) -> Trajectory:
    """Roll ``policy`` forward from the pair ``start`` for a geometric number of steps."""
    mdp = sim.mdp
    cap = default_horizon_cap(mdp.gamma) if horizon_cap is None else horizon_cap
    _, tables = _draw_leaves(policy, mdp.n_states, sim.reward_table.shape[1], rng, 1)
    table = tables[0]
    h = int(rng.geometric(1.0 - mdp.gamma))
    length = min(h, cap)
    s, a = int(start[0]), int(start[1])
    b = np.zeros_like(sim.reward_table) if bonus is None else bonus
    steps = [(s, a, float(sim.reward_table[s, a]), float(b[s, a]))]
    for _ in range(length - 1):
        s = sim.step(s, a, rng)
        a = int(sample_from_rows(table[s][None, :], rng)[0])
        steps.append((s, a, float(sim.reward_table[s, a]), float(b[s, a])))
    return Trajectory(steps, "geometric-stop" if h <= cap else "horizon-cap")


# ---------------------------------------------------------------------------
# generators

def chain(length: int, slip_prob: float = 0.0, sparse_goal_reward: bool = True,
          gamma: float = 0.9) -> MdpSpec:
    """Two-action chain; action 0 moves left, action 1 moves right.

    With probability ``slip_prob`` the move goes the other way.  Sparse
    reward pays 1 at the right end only; the dense variant pays ``s/(L-1)``.
    """
    if length < 2:
        raise ValueError("chain length must be at least 2")
    P = np.zeros((length, 2, length))
    for s in range(length):
        left, right = max(s - 1, 0), min(s + 1, length - 1)
        P[s, 0, left] += 1 - slip_prob
        P[s, 0, right] += slip_prob
        P[s, 1, right] += 1 - slip_prob
        P[s, 1, left] += slip_prob
    r = np.zeros((length, 2))
    if sparse_goal_reward:
        r[length - 1] = 1.0
    else:
        r[:] = (np.arange(length) / (length - 1))[:, None]
    return MdpSpec(P, r, gamma, 0)


def grid(width: int, height: int, slip_prob: float = 0.0, gamma: float = 0.9) -> MdpSpec:
    """Four-action gridworld started in the top-left corner, reward 1 in the opposite corner.

    Slips move to a uniformly random neighbour direction.
    """
    S = width * height
    moves = [(0, -1), (1, 0), (0, 1), (-1, 0)]
    P = np.zeros((S, 4, S))

    def dest(x, y, m):
        dx, dy = moves[m]
        return min(max(x + dx, 0), width - 1) + width * min(max(y + dy, 0), height - 1)

    for y in range(height):
        for x in range(width):
            s = x + width * y
            for a in range(4):
                P[s, a, dest(x, y, a)] += 1 - slip_prob
                for m in range(4):
                    P[s, a, dest(x, y, m)] += slip_prob / 4
    r = np.zeros((S, 4))
    r[S - 1] = 1.0
    return MdpSpec(P, r, gamma, 0)


def random_mdp(seed: int, n_states: int = 5, n_actions: int = 2, branching: int = 2,
               gamma: float = 0.9) -> MdpSpec:
    """Random MDP: each pair moves to ``branching`` random successors with Dirichlet weights."""
    rng = np.random.default_rng(seed)
    branching = min(branching, n_states)
    P = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            succ = rng.choice(n_states, size=branching, replace=False)
            P[s, a, succ] = rng.dirichlet(np.ones(branching))
    r = rng.uniform(size=(n_states, n_actions))
    return MdpSpec(P, r, gamma, 0)


GENERATORS = {"chain": chain, "grid": grid, "random_mdp": random_mdp}
