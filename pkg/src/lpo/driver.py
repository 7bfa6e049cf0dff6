"""Low-switching policy optimisation: the outer exploration loop and the inner NPG loop.

The outer loop draws one state-action pair per iteration from the current
policy's occupancy and offers it to the sensitivity dataset.  Only when the
dataset changes are the known set and bonus rebuilt and a new policy
optimised; otherwise the previous policy is reused.  The inner loop runs
natural policy gradient on the bonus-augmented MDP, reusing each rollout
collection for ``kappa`` steps through importance weighting.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from .bonus import VARIANTS, BonusOracle, rebuild, unknown_bonus
from .evaluation import (behaviour_sample, evaluate_policy, evaluate_policy_exact, g_max,
                         kappa_raw, kappa_window)
from .function_class import LinearFunctionClass, TabularFunctionClass
from .mdp import (MdpSpec, Simulator, d_sampler_batch, default_horizon_cap, default_nu,
                  policy_evaluation_exact, value_iteration)
from .policy import MixturePolicy, SoftmaxPolicy
from .sensitivity import SensitivityDataset

log = logging.getLogger(__name__)

MODES = ("mc", "exact")
CLASSES = ("tabular", "linear")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class InvariantViolation(RuntimeError):
    def __init__(self, name: str, message: str):
        super().__init__(f"{name}: {message}")
        self.name = name


# ---------------------------------------------------------------------------
# hyperparameters

def derive_eta(K: int, n_actions: int, W: float) -> float:
    """Step size ``sqrt(ln|A| / (16 W^2 K))``."""
    if K < 1 or n_actions < 2 or W <= 0:
        raise ValueError("need K >= 1, n_actions >= 2 and W > 0")
    return math.sqrt(math.log(n_actions) / (16.0 * W ** 2 * K))


def npg_regret_bound(K: int, n_actions: int, W: float) -> float:
    return 8.0 * W * math.sqrt(math.log(n_actions) * K)


def derive_epsilon_theory(N: int, W: float, function_class, delta: float, C1: float, C2: float,
                          M: int, eps1: float, eps2: float, delta3: float,
                          C_stat: float = 1.0) -> float:
    """Width budget from the width-concentration argument.

    ``eps / 100 = 1.5 C1 N eps_stat + 20 N W eps1 + 0.5 C2 ln(N cover(dF, 2 eps1) / delta)``
    with ``eps_stat = 500 C_stat W^4 ln(cover(F, eps2) / delta3) / M + 13 W^2 eps2``.
    The difference class is covered by pairs of covers, so its log cover is
    twice that of the class.
    """
    for name, v in dict(N=N, W=W, delta=delta, M=M, eps1=eps1, eps2=eps2, delta3=delta3).items():
        if v <= 0:
            raise ValueError(f"{name} must be positive")
    if min(C1, C2, C_stat) < 0:
        raise ValueError("constants must be nonnegative")
    eps_stat = (500.0 * C_stat * W ** 4 * (function_class.log_cover_size(eps2) + math.log(1.0 / delta3)) / M
                + 13.0 * W ** 2 * eps2)
    log_term = math.log(N) + 2.0 * function_class.log_cover_size(eps1) + math.log(1.0 / delta)
    return 100.0 * (1.5 * C1 * N * eps_stat + 20.0 * N * W * eps1 + 0.5 * C2 * log_term)


# ---------------------------------------------------------------------------
# configuration

@dataclass
class LpoConfig:
    """Run configuration.  ``None`` fields are resolved against the MDP at fit time."""

    N: int = 200
    K: int = 10
    M: int = 100
    eta: float = 0.1
    kappa: int = 1
    beta: float = 0.3
    epsilon_width: Optional[float] = None
    c_epsilon: float = 1.0
    gamma: Optional[float] = None
    W: Optional[float] = None
    delta: float = 0.1
    delta1: float = 0.1
    C_mult: float = 1.0
    C_budget: float = 1.0
    mode: str = "mc"
    variant: str = "lpo"
    function_class: str = "tabular"
    theory: bool = False
    horizon_cap: Optional[int] = None
    clip_is: bool = False
    exclude_first_bonus: bool = False
    record_artifacts: bool = False
    seed: int = 0

    def __post_init__(self):
        for key in ("N", "K", "M", "kappa"):
            v = getattr(self, key)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(key, "must be an integer >= 1")
        for key in ("beta", "delta", "delta1"):
            if not 0 < getattr(self, key) < 1:
                raise ConfigError(key, "must lie in (0, 1)")
        if self.eta < 0:
            raise ConfigError("eta", "must be nonnegative")
        for key in ("c_epsilon", "C_mult", "C_budget"):
            if getattr(self, key) <= 0:
                raise ConfigError(key, "must be positive")
        if self.epsilon_width is not None and self.epsilon_width <= 0:
            raise ConfigError("epsilon_width", "must be positive")
        if self.gamma is not None and not 0 < self.gamma < 1:
            raise ConfigError("gamma", "must lie in (0, 1)")
        if self.W is not None and self.W <= 0:
            raise ConfigError("W", "must be positive")
        if self.horizon_cap is not None and self.horizon_cap < 1:
            raise ConfigError("horizon_cap", "must be >= 1")
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}")
        if self.variant not in VARIANTS:
            raise ConfigError("variant", f"must be one of {VARIANTS}")
        if self.function_class not in CLASSES:
            raise ConfigError("function_class", f"must be one of {CLASSES}")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "LpoConfig":
        names = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in mapping.items():
            if key not in names:
                raise ConfigError(key, "unknown configuration key")
            kwargs[key] = _coerce(key, raw, names[key].type)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(key, raw, typ):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if text.lower() in ("none", "") and "Optional" in str(typ):
        return None
    try:
        if "bool" in str(typ):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if "int" in str(typ):
            return int(text)
        if "float" in str(typ):
            return float(text)
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r}") from None
    return text


@dataclass
class Resolved:
    """Numeric settings after defaults and theory-mode derivations are applied."""

    gamma: float
    W: float
    eta: float
    kappa: int
    epsilon_width: float
    horizon_cap: int
    B: float
    G_max: float
    kappa_formula: float


def resolve(cfg: LpoConfig, mdp: MdpSpec, function_class=None) -> Resolved:
    gamma = mdp.gamma if cfg.gamma is None else cfg.gamma
    B = unknown_bonus(gamma)
    G = g_max(gamma)
    W = 2.0 * G if cfg.W is None else float(cfg.W)
    cap = default_horizon_cap(gamma) if cfg.horizon_cap is None else cfg.horizon_cap
    eta, kappa = cfg.eta, cfg.kappa
    eps = cfg.c_epsilon * math.log(cfg.N) if cfg.epsilon_width is None else cfg.epsilon_width
    if eps <= 0:
        # N = 1 gives ln N = 0; any positive budget behaves the same with an empty dataset
        eps = cfg.c_epsilon
    kraw = kappa_raw(gamma, cfg.delta1, eta, B, W) if eta > 0 else math.inf
    if cfg.theory:
        if 2 * G > W:
            raise ConfigError("W", f"theory mode needs W >= 2 G_max = {2 * G:.6g}")
        eta = derive_eta(cfg.K, mdp.n_actions, W)
        kraw = kappa_raw(gamma, cfg.delta1, eta, B, W)
        kappa = kappa_window(gamma, cfg.delta1, eta, B, W, cfg.K)
        if function_class is not None:
            eps = derive_epsilon_theory(cfg.N, W, function_class, cfg.delta, 1.0, 1.0, cfg.M,
                                        1e-3, 1e-3, cfg.delta)
        log.info("theory mode: eta=%.6g kappa=%d (formula %.4g) epsilon=%.6g", eta, kappa, kraw, eps)
    return Resolved(gamma, W, eta, int(min(kappa, cfg.K)), eps, cap, B, G, kraw)


# ---------------------------------------------------------------------------
# run state

@dataclass
class Switch:
    """Everything produced by one rebuild, kept for the diagnostics."""

    n: int
    oracle: BonusOracle
    policies: list
    critics: list
    collections: int
    final_critic: Optional[object] = None


@dataclass
class LpoState:
    dataset: SensitivityDataset
    oracle: Optional[BonusOracle]
    cover: MixturePolicy
    policy: object
    last_seen_version: int = -1
    switches: int = 0
    n: int = 0
    pending: Optional[tuple] = None
    rows: list = field(default_factory=list)
    transitions: int = 0
    ledger_rollouts: int = 0
    ledger_dsampler: int = 0
    policy_value: float = 0.0
    artifacts: list = field(default_factory=list)
    iteration_switch: list = field(default_factory=list)


class _Context:
    """Fixed per-run objects shared by the loop functions."""

    def __init__(self, cfg: LpoConfig, mdp: MdpSpec, function_class, res: Resolved, rng):
        self.cfg, self.mdp, self.fclass, self.res, self.rng = cfg, mdp, function_class, res, rng
        self.sim = Simulator(mdp)
        self.nu = default_nu(mdp)
        self.reward = mdp.reward
        _, V = value_iteration(mdp)
        self.v_star = float(V[mdp.initial_state])


def inner_policy_update(cover, oracle: BonusOracle, ctx: _Context) -> tuple:
    """Run ``K - 1`` NPG steps from the base rule; return the uniform mixture and a record."""
    cfg, res = ctx.cfg, ctx.res
    pi = SoftmaxPolicy(oracle.known_pairs)
    policies, critics = [pi], []
    data, k_low, collections, used = None, 0, 0, 0
    for k in range(cfg.K - 1):
        if cfg.mode == "exact":
            critic = evaluate_policy_exact(ctx.mdp, pi, ctx.fclass, oracle)
        else:
            if k == 0 or k - k_low > res.kappa:
                k_low = k
                data = behaviour_sample(cover, pi, ctx.sim, oracle, cfg.M, ctx.rng, ctx.nu,
                                        res.horizon_cap, k)
                collections += 1
                used += int(data.transitions)
            critic = evaluate_policy(data, pi, ctx.fclass, oracle, ctx.reward, res.gamma,
                                     cfg.exclude_first_bonus, cfg.clip_is)
        critics.append(critic)
        pi = pi.npg_step(critic, res.eta)
        policies.append(pi)
    record = Switch(0, oracle, policies, critics, collections)
    if cfg.record_artifacts and cfg.mode == "exact":
        record.final_critic = evaluate_policy_exact(ctx.mdp, pi, ctx.fclass, oracle)
    return MixturePolicy(policies), record, used


def init_state(ctx: _Context) -> LpoState:
    cfg, mdp = ctx.cfg, ctx.mdp
    dataset = SensitivityDataset(ctx.fclass, cfg.N, cfg.delta, cfg.C_mult)
    pi0 = SoftmaxPolicy.uniform(mdp.n_states, mdp.n_actions)
    return LpoState(dataset, None, MixturePolicy([pi0]), pi0)


def outer_step(state: LpoState, ctx: _Context) -> LpoState:
    """One outer iteration; mutates and returns ``state``."""
    cfg, res = ctx.cfg, ctx.res
    state.n += 1
    n = state.n
    raw = factor = 0.0
    if state.pending is not None:
        decision = state.dataset.admit(state.pending, ctx.rng)
        raw, factor = decision.sensitivity_raw, decision.factor
    switched = n == 1 or state.dataset.switch_occurred(state.last_seen_version)
    if switched:
        state.oracle = rebuild(state.dataset, ctx.fclass, cfg.beta, res.epsilon_width, res.gamma,
                               cfg.variant)
        state.last_seen_version = state.dataset.version
        policy, record, used = inner_policy_update(state.cover, state.oracle, ctx)
        record.n = n
        state.policy = policy
        state.switches += 1
        state.ledger_rollouts += used
        _, V = policy_evaluation_exact(ctx.mdp, policy)
        state.policy_value = float(V[ctx.mdp.initial_state])
        if cfg.record_artifacts:
            state.artifacts.append(record)
    state.iteration_switch.append(state.switches - 1)
    state.cover.append(state.policy)
    before = ctx.sim.n_transitions
    s, a, _ = d_sampler_batch(ctx.sim, state.policy, ctx.nu, ctx.rng, 1, res.horizon_cap)
    state.ledger_dsampler += ctx.sim.n_transitions - before
    state.pending = (int(s[0]), int(a[0]))
    state.transitions = state.ledger_rollouts + state.ledger_dsampler
    if state.transitions != ctx.sim.n_transitions:
        raise InvariantViolation("transition-ledger", "accounted transitions differ from the simulator count")
    if len(state.cover) != n + 1:
        raise InvariantViolation("cover-length", "cover does not hold one policy per iteration")
    state.rows.append({
        "n": n,
        "switched": int(switched),
        "dataset_distinct": state.dataset.n_distinct,
        "dataset_weight": state.dataset.total_weight,
        "known_pair_fraction": state.oracle.known_pair_fraction(),
        "value_exact_of_mixture": state.policy_value,
        "suboptimality": ctx.v_star - state.policy_value,
        "transitions_used": state.transitions,
        "sensitivity_raw": raw,
        "sensitivity_factor": factor,
    })
    return state


# ---------------------------------------------------------------------------
# estimator

METRIC_COLUMNS = ["n", "switched", "dataset_distinct", "dataset_weight", "known_pair_fraction",
                  "value_exact_of_mixture", "suboptimality", "transitions_used",
                  "sensitivity_raw", "sensitivity_factor"]


class LPO(BaseEstimator):
    """Low-switching policy optimisation on a finite MDP.

    ``fit(mdp)`` runs ``N`` outer iterations.  Afterwards ``policy_`` is the
    uniform mixture of the ``N`` per-iteration policies, ``final_policy_`` is
    the last one, and ``metrics_`` holds one row per iteration.  ``predict``
    returns the most likely action of ``final_policy_`` per state.

    ``function_class`` is ``"tabular"``, ``"linear"`` (features passed to
    ``fit``) or an already constructed class instance.
    """

    def __init__(self, N=200, K=10, M=100, eta=0.1, kappa=1, beta=0.3, epsilon_width=None,
                 c_epsilon=1.0, gamma=None, W=None, delta=0.1, delta1=0.1, C_mult=1.0,
                 C_budget=1.0, mode="mc", variant="lpo", function_class="tabular", theory=False,
                 horizon_cap=None, clip_is=False, exclude_first_bonus=False,
                 record_artifacts=False, seed=0):
        self.N = N
        self.K = K
        self.M = M
        self.eta = eta
        self.kappa = kappa
        self.beta = beta
        self.epsilon_width = epsilon_width
        self.c_epsilon = c_epsilon
        self.gamma = gamma
        self.W = W
        self.delta = delta
        self.delta1 = delta1
        self.C_mult = C_mult
        self.C_budget = C_budget
        self.mode = mode
        self.variant = variant
        self.function_class = function_class
        self.theory = theory
        self.horizon_cap = horizon_cap
        self.clip_is = clip_is
        self.exclude_first_bonus = exclude_first_bonus
        self.record_artifacts = record_artifacts
        self.seed = seed

    def _config(self) -> LpoConfig:
        params = self.get_params()
        fc = params.pop("function_class")
        params["function_class"] = fc if isinstance(fc, str) else fc.kind
        return LpoConfig(**params)

    def _make_class(self, cfg: LpoConfig, mdp: MdpSpec, W: float, features):
        fc = self.function_class
        if not isinstance(fc, str):
            return fc
        if fc == "tabular":
            return TabularFunctionClass(mdp.n_states, mdp.n_actions, W)
        if features is None:
            raise ConfigError("function_class", "linear class needs features")
        return LinearFunctionClass(features, W)

    def fit(self, mdp: MdpSpec, features=None):
        cfg = self._config()
        if cfg.gamma is not None and cfg.gamma != mdp.gamma:
            mdp = mdp.with_gamma(cfg.gamma)
        res = resolve(cfg, mdp)
        fclass = self._make_class(cfg, mdp, res.W, features)
        if cfg.theory:
            res = resolve(cfg, mdp, fclass)
        rng = np.random.default_rng(cfg.seed)
        ctx = _Context(cfg, mdp, fclass, res, rng)
        start = time.perf_counter()
        state = init_state(ctx)
        for _ in range(cfg.N):
            outer_step(state, ctx)
        if state.switches != state.dataset.total_admissions + 1:
            raise InvariantViolation("low-switching", "policy updates differ from dataset changes + 1")
        self.wall_clock_ = time.perf_counter() - start
        self.config_ = cfg
        self.resolved_ = res
        self.mdp_ = mdp
        self.function_class_ = fclass
        self.state_ = state
        self.metrics_ = state.rows
        self.switches_ = state.switches
        self.v_star_ = ctx.v_star
        self.final_policy_ = state.policy
        self.policy_ = MixturePolicy(state.cover.components[1:])
        self.artifacts_ = state.artifacts
        self.total_transitions_ = state.transitions
        return self

    def predict_proba(self, states=None):
        table = np.asarray(self.final_policy_.table)
        return table if states is None else table[np.asarray(states)]

    def predict(self, states=None):
        return np.argmax(self.predict_proba(states), axis=-1)

    def output_value(self) -> float:
        """Exact value of the uniform mixture over all iterations (the returned policy)."""
        vals = [r["value_exact_of_mixture"] for r in self.metrics_]
        return float(np.mean(vals))

    def summary(self) -> dict:
        return {
            "final_value": self.metrics_[-1]["value_exact_of_mixture"],
            "output_value": self.output_value(),
            "V_star": self.v_star_,
            "switches": self.switches_,
            "total_transitions": self.total_transitions_,
            "wall_clock": self.wall_clock_,
            "resolved": dataclasses.asdict(self.resolved_),
            "config": self.config_.to_dict(),
        }
