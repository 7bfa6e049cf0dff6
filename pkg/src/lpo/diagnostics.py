"""Brute-force complexity measures, exact checks of the analysis inequalities, and baselines.

Every checker reads a :class:`RunArtifacts` record (what a run persisted) and
the MDP; none of them re-runs the algorithm.  Each returns a
:class:`LemmaReport`.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .bonus import BonusOracle, build_auxiliary_mdp, build_bonus_mdp
from .driver import LPO, Switch, npg_regret_bound
from .evaluation import Critic
from .function_class import OracleScaleError, width_exact
from .mdp import (MdpSpec, default_nu, occupancy_exact, policy_evaluation_exact, state_start_nu,
                  value_iteration)
from .policy import MixturePolicy, SoftmaxPolicy

LEMMA_IDS = ("one-sided-error", "npg-regret", "bonus-concentration", "distribution-dominance",
             "partial-optimism", "negative-advantage")

MAX_ELUDER_POINTS = 12


@dataclass
class LemmaReport:
    lemma_id: str
    instances_checked: int
    max_violation: float
    passed: bool
    tolerance: float
    details: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), default=float)


def _report(lemma_id, violations, tol, **details):
    worst = float(max(violations)) if violations else 0.0
    return LemmaReport(lemma_id, len(violations), worst, worst <= tol, tol, details)


# ---------------------------------------------------------------------------
# eluder dimension

def eluder_dimension_bruteforce(function_class, candidate_points, epsilon: float) -> int:
    """Longest sequence of candidates each independent of its predecessors.

    A point ``z`` is independent of a set ``Z`` at scale ``e`` when some
    difference with ``||df||_Z <= e`` has ``|df(z)| > e``, i.e. when the exact
    width at ``z`` under budget ``e^2`` exceeds ``e``.  Scales ``e`` run over
    ``epsilon * 2^j`` below ``2W``.  Independence depends only on the set of
    predecessors, so the search runs over subsets.
    """
    points = [tuple(int(v) for v in p) for p in candidate_points]
    if len(points) > MAX_ELUDER_POINTS:
        raise OracleScaleError("oracle scale exceeded")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    points = list(dict.fromkeys(points))
    shape = (function_class.n_states, function_class.n_actions)
    scales = []
    e = epsilon
    while e < 2 * function_class.W:
        scales.append(e)
        e *= 2.0
    best = 1 if points and scales else 0
    for scale in scales:
        frontier = {frozenset()}
        depth = 0
        while frontier:
            nxt = set()
            for subset in frontier:
                counts = np.zeros(shape)
                for j in subset:
                    counts[points[j]] += 1
                for i, p in enumerate(points):
                    if i in subset:
                        continue
                    if width_exact(function_class, counts, scale ** 2, *p) > scale + 1e-12:
                        nxt.add(subset | {i})
            frontier = {frozenset(s) for s in nxt}
            if frontier:
                depth += 1
        best = max(best, depth)
        if best == len(points):
            break
    return best


# ---------------------------------------------------------------------------
# artifacts

@dataclass
class RunArtifacts:
    """What a run keeps for after-the-fact checking."""

    mdp: MdpSpec
    switches: list
    iteration_switch: list
    gamma: float
    W: float
    eta: float
    K: int
    N: int
    mode: str
    epsilon_width: float
    n_pairs: int

    @classmethod
    def from_estimator(cls, est: LPO) -> "RunArtifacts":
        if not est.artifacts_:
            raise ValueError("run was fitted without record_artifacts=True")
        res, cfg = est.resolved_, est.config_
        return cls(est.mdp_, est.artifacts_, list(est.state_.iteration_switch), res.gamma, res.W,
                   res.eta, cfg.K, cfg.N, cfg.mode, res.epsilon_width,
                   est.function_class_.n_pairs)

    def save(self, path):
        arrays = {"P": self.mdp.transition, "r": self.mdp.reward,
                  "iteration_switch": np.asarray(self.iteration_switch)}
        meta = {k: getattr(self, k) for k in ("gamma", "W", "eta", "K", "N", "mode",
                                               "epsilon_width", "n_pairs")}
        meta["initial_state"] = self.mdp.initial_state
        meta["switches"] = []
        for i, sw in enumerate(self.switches):
            o = sw.oracle
            meta["switches"].append({"n": sw.n, "beta": o.beta, "epsilon_width": o.epsilon_width,
                                     "gamma": o.gamma, "variant": o.variant,
                                     "collections": sw.collections,
                                     "has_final": sw.final_critic is not None})
            arrays[f"s{i}_width"] = o.width
            arrays[f"s{i}_critic_sum"] = np.stack([p.critic_sum for p in sw.policies])
            if sw.critics:
                arrays[f"s{i}_f"] = np.stack([c.f_table for c in sw.critics])
            if sw.final_critic is not None:
                arrays[f"s{i}_final_f"] = sw.final_critic.f_table
        arrays["meta"] = np.array(json.dumps(meta))
        np.savez_compressed(path, **arrays)

    @classmethod
    def load(cls, path) -> "RunArtifacts":
        from .evaluation import assemble_critic
        z = np.load(path, allow_pickle=False)
        meta = json.loads(str(z["meta"]))
        mdp = MdpSpec(z["P"], z["r"], meta["gamma"], meta["initial_state"])
        switches = []
        for i, sm in enumerate(meta["switches"]):
            oracle = BonusOracle(z[f"s{i}_width"], sm["beta"], sm["epsilon_width"], sm["gamma"],
                                 sm["variant"])
            policies = [SoftmaxPolicy(oracle.known_pairs, cs) for cs in z[f"s{i}_critic_sum"]]
            critics = ([assemble_critic(f, oracle) for f in z[f"s{i}_f"]]
                       if f"s{i}_f" in z.files else [])
            final = assemble_critic(z[f"s{i}_final_f"], oracle) if sm["has_final"] else None
            switches.append(Switch(sm["n"], oracle, policies, critics, sm["collections"], final))
        return cls(mdp, switches, [int(v) for v in z["iteration_switch"]], meta["gamma"], meta["W"],
                   meta["eta"], meta["K"], meta["N"], meta["mode"], meta["epsilon_width"],
                   meta["n_pairs"])


def _as_artifacts(run) -> RunArtifacts:
    if isinstance(run, RunArtifacts):
        return run
    if isinstance(run, LPO):
        return RunArtifacts.from_estimator(run)
    if isinstance(run, (str, Path)):
        return RunArtifacts.load(run)
    raise TypeError("expected RunArtifacts, a fitted LPO or an artifact path")


def greedy_comparator(mdp) -> np.ndarray:
    """Deterministic greedy policy of the optimal action values."""
    Q, _ = value_iteration(mdp)
    table = np.zeros(Q.shape)
    table[np.arange(Q.shape[0]), np.argmax(Q, axis=1)] = 1.0
    return table


def comparator_on_auxiliary(comparator: np.ndarray, oracle: BonusOracle) -> np.ndarray:
    """Follow the comparator at known states and take the absorbing action elsewhere."""
    S, A = comparator.shape
    unknown = oracle.unknown_states
    if not unknown.any():
        return comparator.copy()
    table = np.zeros((S, A + 1))
    table[:, :A] = np.where(unknown[:, None], 0.0, comparator)
    table[unknown, A] = 1.0
    return table


# ---------------------------------------------------------------------------
# checkers

def check_optimism(run, tol: float = 1e-8, corrupt: float = 0.0) -> LemmaReport:
    """``0 <= Q_b - Q_hat <= 2 b_w`` on known pairs for every critic of every rebuild.

    ``corrupt`` adds ``corrupt * b_w`` to each critic before checking
    (used for negative controls).
    """
    art = _as_artifacts(run)
    if art.mode != "exact":
        raise ValueError("the one-sided error check needs exact-evaluation artifacts")
    violations = []
    for sw in art.switches:
        o = sw.oracle
        bmdp = build_bonus_mdp(art.mdp, o)
        bw = o.b_width
        kp = o.known_pairs
        critics = list(sw.critics) + ([sw.final_critic] if sw.final_critic is not None else [])
        for pi, critic in zip(sw.policies, critics):
            Qb, _ = policy_evaluation_exact(bmdp, pi)
            gap = Qb - (critic.q_table + corrupt * bw)
            v = np.maximum(-gap, gap - 2 * bw)
            violations.append(float(np.max(v[kp])) if kp.any() else 0.0)
    return _report("one-sided-error", violations, tol)


def _advantage_sum(art: RunArtifacts, sw: Switch, comparator) -> tuple:
    o = sw.oracle
    aux = build_auxiliary_mdp(art.mdp, o)
    pt = comparator_on_auxiliary(comparator, o)
    d = occupancy_exact(aux, pt, state_start_nu(aux, pt))
    A = art.mdp.n_actions
    known_s = o.known_states
    critics = list(sw.critics) + ([sw.final_critic] if sw.final_critic is not None else [])
    total = 0.0
    for pi, critic in zip(sw.policies, critics):
        q = critic.q_table
        adv = q - np.sum(pi.table * q, axis=1, keepdims=True)
        total += float(np.sum(d[known_s, :A] * adv[known_s]))
    return total, len(critics)


def check_npg_regret(run, comparator: Optional[np.ndarray] = None, tol: float = 1e-8) -> LemmaReport:
    """Summed comparator advantage of the critics at known states against ``8W sqrt(ln|A| K)``.

    Terms are taken for every policy that has a stored critic; the bound uses
    that number of terms.
    """
    art = _as_artifacts(run)
    comp = greedy_comparator(art.mdp) if comparator is None else comparator
    violations, sums = [], []
    for sw in art.switches:
        total, terms = _advantage_sum(art, sw, comp)
        bound = npg_regret_bound(max(terms, 1), art.mdp.n_actions, art.W)
        sums.append(total)
        violations.append(total - bound)
    return _report("npg-regret", violations, tol, sums=sums)


def check_distribution_dominance(mdp, oracles, comparator=None, tol: float = 1e-8) -> LemmaReport:
    """Occupancy of the absorbing comparator on the auxiliary MDP is below the comparator's own
    occupancy at every known state."""
    comp = greedy_comparator(mdp) if comparator is None else comparator
    d_true = occupancy_exact(mdp, comp, state_start_nu(mdp, comp))
    A = mdp.n_actions
    violations = []
    for o in oracles:
        aux = build_auxiliary_mdp(mdp, o)
        pt = comparator_on_auxiliary(comp, o)
        d_aux = occupancy_exact(aux, pt, state_start_nu(aux, pt))
        ks = o.known_states
        violations.append(float(np.max(d_aux[ks, :A] - d_true[ks])) if ks.any() else 0.0)
    return _report("distribution-dominance", violations, tol)


def check_partial_optimism(mdp, oracles, comparator=None, tol: float = 1e-8) -> LemmaReport:
    """``V_aux(absorbing comparator) - V(comparator) >= E_{d^comp}[2 b_w] / (1 - gamma)``."""
    comp = greedy_comparator(mdp) if comparator is None else comparator
    s0 = mdp.initial_state
    _, V = policy_evaluation_exact(mdp, comp)
    d_true = occupancy_exact(mdp, comp, state_start_nu(mdp, comp))
    violations = []
    for o in oracles:
        aux = build_auxiliary_mdp(mdp, o)
        _, Va = policy_evaluation_exact(aux, comparator_on_auxiliary(comp, o))
        rhs = float(np.sum(d_true * 2 * o.b_width)) / (1 - mdp.gamma)
        violations.append(rhs - (Va[s0] - V[s0]))
    return _report("partial-optimism", violations, tol)


def check_negative_advantage(mdp, oracles, policies, tol: float = 1e-8) -> LemmaReport:
    """At unknown states the absorbing action has nonpositive advantage under the run's policies."""
    violations = []
    for o, pi in zip(oracles, policies):
        unknown = o.unknown_states
        if not unknown.any():
            violations.append(0.0)
            continue
        aux = build_auxiliary_mdp(mdp, o)
        Q, V = policy_evaluation_exact(aux, pi)
        adv = Q[:, aux.dagger] - V
        violations.append(float(np.max(adv[unknown])))
    return _report("negative-advantage", violations, tol)


def check_lemma_structure(run, comparator=None, tol: float = 1e-8) -> list:
    """The three structural checks over every rebuild of a run."""
    art = _as_artifacts(run)
    oracles = [sw.oracle for sw in art.switches]
    policies = [MixturePolicy(sw.policies) for sw in art.switches]
    return [check_distribution_dominance(art.mdp, oracles, comparator, tol),
            check_partial_optimism(art.mdp, oracles, comparator, tol),
            check_negative_advantage(art.mdp, oracles, policies, tol)]


def bonus_sums(run) -> dict:
    """Summed expected width and flat-bonus mass under each iteration's sampling distribution."""
    art = _as_artifacts(run)
    nu = default_nu(art.mdp)
    per_switch_w, per_switch_b1 = [], []
    for sw in art.switches:
        d = occupancy_exact(art.mdp, MixturePolicy(sw.policies), nu)
        o = sw.oracle
        per_switch_w.append(float(np.sum(d * o.width)))
        b1 = np.where(o.known_pairs, 0.0, o.bonus)
        per_switch_b1.append(float(np.sum(d * b1)))
    idx = np.asarray(art.iteration_switch)
    return {"width_sum": float(np.sum(np.asarray(per_switch_w)[idx])),
            "indicator_sum": float(np.sum(np.asarray(per_switch_b1)[idx]))}


def check_bonus_concentration(run, d_eluder: Optional[float] = None, slack: float = 10.0,
                              beta: Optional[float] = None) -> LemmaReport:
    """Compare the summed width with ``slack * sqrt(N d^2 eps)`` and the summed flat bonus with
    that value over ``(1 - gamma) beta``.  ``max_violation`` is the larger ratio minus 1."""
    art = _as_artifacts(run)
    d = float(art.n_pairs if d_eluder is None else d_eluder)
    beta = art.switches[0].oracle.beta if beta is None else beta
    sums = bonus_sums(art)
    scale = math.sqrt(art.N * d ** 2 * art.epsilon_width)
    r_w = sums["width_sum"] / (slack * scale)
    r_b = sums["indicator_sum"] / (slack * scale / ((1 - art.gamma) * beta))
    return _report("bonus-concentration", [r_w - 1.0, r_b - 1.0], 0.0, **sums, scale=scale,
                   ratio_width=r_w, ratio_indicator=r_b)


# ---------------------------------------------------------------------------
# baselines

def run_baseline(variant: str, config: dict, mdp, features=None) -> LPO:
    """The same driver with the bonus swapped; returns the fitted estimator."""
    params = dict(config)
    params["variant"] = variant
    return LPO(**params).fit(mdp, features)
