"""Online sensitivity-sampled dataset.

Points arrive one at a time.  Each is scored against the current dataset and
either dropped or added with an integer copy count.  Copies are stored as
weights, so memory is proportional to the number of distinct pairs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class AdmissionDecision:
    sensitivity_raw: float
    factor: float
    copies_if_admitted: int
    admitted: bool
    coin: float


def log_factor(function_class, N: int, delta: float) -> float:
    """``ln(N * cover(F, sqrt(delta / 64 N^3)) / delta)`` with the cover size in log form."""
    radius = math.sqrt(delta / (64.0 * N ** 3))
    return math.log(N) + function_class.log_cover_size(radius) + math.log(1.0 / delta)


class SensitivityDataset:
    """Weighted multiset of state-action pairs.

    ``version`` moves only when the contents change.  Because pairs are never
    removed, comparing versions is equivalent to comparing multisets.
    """

    def __init__(self, function_class, N: int, delta: float = 0.1, C_mult: float = 1.0):
        if N < 1:
            raise ValueError("N must be at least 1")
        if not 0 < delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if C_mult <= 0:
            raise ValueError("C_mult must be positive")
        self.function_class = function_class
        self.N = int(N)
        self.delta = float(delta)
        self.C_mult = float(C_mult)
        self.counts = np.zeros((function_class.n_states, function_class.n_actions), dtype=np.int64)
        self.version = 0
        self.total_admissions = 0
        self.log_factor = log_factor(function_class, self.N, self.delta)

    @property
    def entries(self) -> dict:
        return {(int(s), int(a)): int(self.counts[s, a]) for s, a in zip(*np.nonzero(self.counts))}

    @property
    def n_distinct(self) -> int:
        return int(np.count_nonzero(self.counts))

    @property
    def total_weight(self) -> int:
        return int(self.counts.sum())

    def score(self, z) -> tuple:
        raw = float(self.function_class.sensitivity(self.counts, z, self.N))
        return raw, self.C_mult * raw * self.log_factor

    def admit(self, z, rng) -> AdmissionDecision:
        """Score ``z`` and add it with the sampled number of copies.

        Exactly one uniform draw is consumed per call, so a fixed seed gives a
        fixed admission history.
        """
        raw, factor = self.score(z)
        coin = float(rng.random())
        if factor >= 1.0:
            copies, admitted = 1, True
        else:
            copies = int(math.floor(1.0 / factor)) if factor > 0 else np.iinfo(np.int64).max
            admitted = coin < 1.0 / copies
        if admitted:
            self.counts[z[0], z[1]] += copies
            self.version += 1
            self.total_admissions += 1
        return AdmissionDecision(raw, factor, copies, admitted, coin)

    def z_norm_sq(self, delta_f) -> float:
        """Weighted squared norm of a table ``delta_f`` of shape ``(S, A)``."""
        delta_f = np.asarray(getattr(delta_f, "table_", delta_f), dtype=float)
        return float(np.sum(self.counts * delta_f ** 2))

    def switch_occurred(self, last_seen_version: int) -> bool:
        return self.version > last_seen_version

    # snapshots ----------------------------------------------------------

    def to_jsonl(self) -> str:
        return "".join(json.dumps({"s": s, "a": a, "count": c}) + "\n"
                       for (s, a), c in self.entries.items())

    def save(self, path):
        Path(path).write_text(self.to_jsonl())

    def load_counts(self, text: str):
        """Replace the contents with a JSON-lines snapshot and bump the version."""
        counts = np.zeros_like(self.counts)
        for line in text.splitlines():
            if line.strip():
                row = json.loads(line)
                counts[row["s"], row["a"]] = row["count"]
        if np.any(counts < 0):
            raise ValueError("negative count in snapshot")
        self.counts = counts
        self.version += 1
        return self


def admit(dataset: SensitivityDataset, z, rng) -> AdmissionDecision:
    return dataset.admit(z, rng)


def z_norm_sq(dataset: SensitivityDataset, delta_f) -> float:
    return dataset.z_norm_sq(delta_f)


def switch_occurred(dataset: SensitivityDataset, last_seen_version: int) -> bool:
    return dataset.switch_occurred(last_seen_version)


def switch_budget(d_eluder: float, N: int, log_term: float, C_budget: float = 1.0) -> float:
    """Upper bound on the number of dataset changes: ``C * log_term * d * ln(N)^2``.

    ``log_term`` is the whole logarithm ``ln(N * cover / delta)``, as returned
    by :func:`log_factor`.
    """
    if d_eluder <= 0 or N < 1 or log_term <= 0 or C_budget <= 0:
        raise ValueError("switch_budget arguments must be positive")
    return C_budget * log_term * d_eluder * math.log(N) ** 2
