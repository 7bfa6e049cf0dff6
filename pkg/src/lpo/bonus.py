"""Known set and exploration bonus derived from the width table."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .mdp import AugmentedMdp

VARIANTS = ("lpo", "indicator-only", "no-bonus")


def unknown_bonus(gamma: float) -> float:
    return 3.0 / (1.0 - gamma)


@dataclass(frozen=True, eq=False)
class BonusOracle:
    """Immutable width/known/bonus tables for one dataset version.

    A pair is known when its width is strictly below ``beta``.  Unknown pairs
    get the flat bonus ``3 / (1 - gamma)``; known pairs get ``(2 / beta) * width``.
    """

    width: np.ndarray
    beta: float
    epsilon_width: float
    gamma: float
    variant: str = "lpo"
    dataset_version: int = 0
    known_pairs: np.ndarray = field(init=False)
    bonus: np.ndarray = field(init=False)

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown bonus variant {self.variant!r}")
        width = np.asarray(self.width, dtype=float)
        if self.variant == "no-bonus":
            known = np.ones(width.shape, dtype=bool)
            bonus = np.zeros(width.shape)
        else:
            known = width < self.beta
            small = (2.0 / self.beta) * width if self.variant == "lpo" else np.zeros(width.shape)
            bonus = np.where(known, small, unknown_bonus(self.gamma))
        for name, arr in (("width", width), ("known_pairs", known), ("bonus", bonus)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def known_states(self) -> np.ndarray:
        return self.known_pairs.all(axis=1)

    @property
    def unknown_states(self) -> np.ndarray:
        return ~self.known_states

    @property
    def b_width(self) -> np.ndarray:
        """The width part of the bonus on known pairs (half of the known-pair bonus)."""
        return np.where(self.known_pairs, self.bonus / 2.0, 0.0)

    def known_state(self, s: int) -> bool:
        return bool(self.known_states[s])

    def known_pair_fraction(self) -> float:
        return float(self.known_pairs.mean())

    def rows(self, n: int):
        S, A = self.width.shape
        for s in range(S):
            for a in range(A):
                yield (n, s, a, float(self.width[s, a]), float(self.bonus[s, a]),
                       int(self.known_pairs[s, a]))


def rebuild(dataset, function_class, beta: float, epsilon_width: float, gamma: float,
            variant: str = "lpo") -> BonusOracle:
    width = function_class.width_table(dataset, epsilon_width)
    return BonusOracle(width, beta, epsilon_width, gamma, variant,
                       getattr(dataset, "version", 0))


def known_state(oracle: BonusOracle, s: int) -> bool:
    return oracle.known_state(s)


def build_bonus_mdp(mdp, oracle: BonusOracle) -> AugmentedMdp:
    return AugmentedMdp(mdp.base, oracle.bonus)


def build_auxiliary_mdp(mdp, oracle: BonusOracle) -> AugmentedMdp:
    """Bonus MDP plus a rewarding self-loop action at every unknown state."""
    unknown = oracle.unknown_states
    return AugmentedMdp(mdp.base, oracle.bonus, unknown if unknown.any() else None)


def dump_csv(path, snapshots):
    """Write ``(n, oracle)`` snapshots as rows ``n s a width bonus known``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "s", "a", "width", "bonus", "known"])
        for n, oracle in snapshots:
            w.writerows(oracle.rows(n))
