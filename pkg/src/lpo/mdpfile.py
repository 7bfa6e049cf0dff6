"""Plain-text MDP definition files.

Format::

    [meta]
    n_states = 3
    n_actions = 2
    gamma = 0.9
    initial_state = 0

    [reward]
    # s a r
    2 0 1.0

    [transition]
    # s a s' p
    0 1 1 1.0

    [features]
    # optional linear features: s a v1 ... vd  (a leading "feature" token is accepted)
    0 0 1.0 0.0

Pairs missing from ``[reward]`` get reward 0.  Blank lines and ``#`` comments
are ignored.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .mdp import MdpSpec


class MdpFileError(ValueError):
    pass


def _sections(text):
    current = None
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            out.setdefault(current, [])
            continue
        if current is None:
            raise MdpFileError(f"line {lineno}: content before the first section")
        out[current].append((lineno, line))
    return out


def parse_mdp(text: str):
    """Parse MDP text; returns ``(mdp, features)`` with ``features`` ``None`` when absent."""
    secs = _sections(text)
    if "meta" not in secs:
        raise MdpFileError("missing [meta] section")
    meta = {}
    for lineno, line in secs["meta"]:
        if "=" not in line:
            raise MdpFileError(f"line {lineno}: expected key = value")
        k, v = (x.strip() for x in line.split("=", 1))
        meta[k] = v
    try:
        S, A = int(meta["n_states"]), int(meta["n_actions"])
        gamma = float(meta["gamma"])
        s0 = int(meta.get("initial_state", 0))
    except KeyError as exc:
        raise MdpFileError(f"[meta] missing key {exc.args[0]}") from None

    R = np.zeros((S, A))
    for lineno, line in secs.get("reward", []):
        parts = line.split()
        if len(parts) != 3:
            raise MdpFileError(f"line {lineno}: reward lines are 's a r'")
        R[int(parts[0]), int(parts[1])] = float(parts[2])
    P = np.zeros((S, A, S))
    for lineno, line in secs.get("transition", []):
        parts = line.split()
        if len(parts) != 4:
            raise MdpFileError(f"line {lineno}: transition lines are 's a s2 p'")
        P[int(parts[0]), int(parts[1]), int(parts[2])] += float(parts[3])

    features = None
    feat_lines = secs.get("features", []) + secs.get("feature", [])
    if feat_lines:
        rows = {}
        for lineno, line in feat_lines:
            parts = line.split()
            if parts[0] == "feature":
                parts = parts[1:]
            rows[int(parts[0]), int(parts[1])] = [float(v) for v in parts[2:]]
        dims = {len(v) for v in rows.values()}
        if len(dims) != 1:
            raise MdpFileError("feature vectors must share one dimension")
        features = np.zeros((S, A, dims.pop()))
        for (s, a), v in rows.items():
            features[s, a] = v
    try:
        mdp = MdpSpec(P, R, gamma, s0)
    except ValueError as exc:
        raise MdpFileError(str(exc)) from None
    return mdp, features


def load_mdp(path):
    return parse_mdp(Path(path).read_text())


def format_mdp(mdp: MdpSpec, features=None) -> str:
    lines = ["[meta]", f"n_states = {mdp.n_states}", f"n_actions = {mdp.n_actions}",
             f"gamma = {float(mdp.gamma)!r}", f"initial_state = {mdp.initial_state}", "", "[reward]"]
    for s, a in zip(*np.nonzero(mdp.reward)):
        lines.append(f"{s} {a} {float(mdp.reward[s, a])!r}")
    lines += ["", "[transition]"]
    for s, a, t in zip(*np.nonzero(mdp.transition)):
        lines.append(f"{s} {a} {t} {float(mdp.transition[s, a, t])!r}")
    if features is not None:
        lines += ["", "[features]"]
        for s in range(mdp.n_states):
            for a in range(mdp.n_actions):
                vals = " ".join(repr(float(v)) for v in features[s, a])
                lines.append(f"feature {s} {a} {vals}")
    return "\n".join(lines) + "\n"


def save_mdp(path, mdp, features=None):
    Path(path).write_text(format_mdp(mdp, features))
