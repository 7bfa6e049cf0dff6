"""Exponential-weights policies and uniform policy mixtures."""

from __future__ import annotations

import json
import logging
from functools import cached_property
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)


def base_rule(known_pairs: np.ndarray) -> np.ndarray:
    """Starting distribution: uniform at known states, uniform over unknown actions elsewhere.

    A state with every action known is a known state, so the fallback to
    uniform over all actions only fires for malformed inputs.
    """
    known_pairs = np.asarray(known_pairs, dtype=bool)
    known_states = known_pairs.all(axis=1)
    table = np.where(known_states[:, None], 1.0, (~known_pairs).astype(float))
    empty = table.sum(axis=1) == 0
    if empty.any():
        log.warning("no unknown action at %d unknown states; using uniform", int(empty.sum()))
        table[empty] = 1.0
    return table / table.sum(axis=1, keepdims=True)


class SoftmaxPolicy:
    """``pi(a|s) ∝ exp(critic_sum[s, a])`` at known states, the base rule elsewhere.

    ``critic_sum`` accumulates ``eta * Q_hat`` over updates.  The known set is
    frozen at construction; instances are immutable.
    """

    def __init__(self, known_pairs, critic_sum=None):
        kp = np.array(known_pairs, dtype=bool)
        cs = np.zeros(kp.shape) if critic_sum is None else np.array(critic_sum, dtype=float)
        if cs.shape != kp.shape:
            raise ValueError("critic_sum and known_pairs must have the same shape")
        kp.setflags(write=False)
        cs.setflags(write=False)
        self.known_pairs = kp
        self.critic_sum = cs

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "SoftmaxPolicy":
        return cls(np.ones((n_states, n_actions), dtype=bool))

    @property
    def known_states(self) -> np.ndarray:
        return self.known_pairs.all(axis=1)

    @property
    def shape(self):
        return self.critic_sum.shape

    @cached_property
    def table(self) -> np.ndarray:
        c = self.critic_sum
        z = np.exp(c - c.max(axis=1, keepdims=True))
        soft = z / z.sum(axis=1, keepdims=True)
        t = np.where(self.known_states[:, None], soft, base_rule(self.known_pairs))
        t.setflags(write=False)
        return t

    def prob(self, s: int) -> np.ndarray:
        return self.table[s]

    def sample_action(self, s: int, rng) -> int:
        return int(rng.choice(self.shape[1], p=self.table[s]))

    def leaves(self):
        return [self], np.ones(1)

    def npg_step(self, q_hat, eta: float) -> "SoftmaxPolicy":
        """Multiply by ``exp(eta * q_hat)`` at known states; other states are untouched."""
        if eta < 0:
            raise ValueError("eta must be nonnegative")
        q = np.asarray(getattr(q_hat, "q_table", q_hat), dtype=float)
        step = np.where(self.known_states[:, None], eta * q, 0.0)
        return SoftmaxPolicy(self.known_pairs, self.critic_sum + step)

    def to_dict(self) -> dict:
        return {"kind": "softmax", "known_pairs": self.known_pairs.astype(int).tolist(),
                "critic_sum": self.critic_sum.tolist()}


class MixturePolicy:
    """Uniform mixture of policies, sampled per trajectory.

    Nested mixtures are allowed; a draw walks down uniformly until it reaches a
    :class:`SoftmaxPolicy`.
    """

    def __init__(self, components: Sequence):
        components = list(components)
        if not components:
            raise ValueError("a mixture needs at least one component")
        self.components = []
        self._acc: dict = {}
        for c in components:
            self.append(c)

    def __len__(self):
        return len(self.components)

    def append(self, policy) -> None:
        """Extend in place (used for the growing policy cover)."""
        self.components.append(policy)
        comps, weights = policy.leaves()
        for c, w in zip(comps, weights):
            entry = self._acc.setdefault(id(c), [c, 0.0])
            entry[1] += w

    @property
    def shape(self):
        return self.components[0].shape

    def leaves(self):
        """Distinct leaf policies with their total mixture weights."""
        entries = list(self._acc.values())
        n = len(self.components)
        return [e[0] for e in entries], np.array([e[1] / n for e in entries])

    @property
    def table(self) -> np.ndarray:
        comps, weights = self.leaves()
        return np.tensordot(weights, np.stack([c.table for c in comps]), axes=1)

    def prob(self, s: int) -> np.ndarray:
        return self.table[s]

    def sample_component(self, rng) -> SoftmaxPolicy:
        comp = self.components[int(rng.integers(len(self.components)))]
        return comp.sample_component(rng) if isinstance(comp, MixturePolicy) else comp

    def sample_action(self, s: int, rng) -> int:
        return self.sample_component(rng).sample_action(s, rng)

    def to_dict(self) -> dict:
        return {"kind": "mixture", "components": [c.to_dict() for c in self.components]}


def prob(policy, s: int) -> np.ndarray:
    return policy.prob(s)


def npg_step(policy: SoftmaxPolicy, q_hat, eta: float) -> SoftmaxPolicy:
    return policy.npg_step(q_hat, eta)


def sample_action(policy, s: int, rng) -> int:
    return policy.sample_action(s, rng)


def mixture_sample_component(mixture: MixturePolicy, rng) -> SoftmaxPolicy:
    return mixture.sample_component(rng)


def policy_from_dict(d: dict):
    if d["kind"] == "softmax":
        return SoftmaxPolicy(np.array(d["known_pairs"], dtype=bool), np.array(d["critic_sum"]))
    if d["kind"] == "mixture":
        return MixturePolicy([policy_from_dict(c) for c in d["components"]])
    raise ValueError(f"unknown policy kind {d['kind']!r}")


def dumps(policy) -> str:
    return json.dumps(policy.to_dict())


def loads(text: str):
    return policy_from_dict(json.loads(text))
