"""Function classes over state-action pairs.

Two classes are provided, both as scikit-learn regressors whose ``fit`` is
the constrained least-squares step used for critic fitting:

* :class:`TabularFunctionClass` - any table with ``|f(s, a)| <= W``.
* :class:`LinearFunctionClass` - ``f(s, a) = theta . phi(s, a)`` with
  ``||theta||_2 <= W`` and ``||phi(s, a)||_2 <= 1``, so ``||f||_inf <= W``.

Each class also answers the exploration queries that only depend on the class
and on a weighted dataset of pairs: the width of the set of function
differences that are small on the dataset, the online sensitivity score of a
new pair, and an analytic covering-number bound.  A weighted dataset is
anything with a ``counts`` attribute of shape ``(S, A)`` (or that array
itself).
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import minimize_scalar
from sklearn.base import BaseEstimator, RegressorMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted


class OracleScaleError(ValueError):
    pass


def _counts(dataset):
    return np.asarray(getattr(dataset, "counts", dataset), dtype=float)


def _pairs(X, n_states, n_actions):
    X = check_array(X, dtype=np.int64, ensure_2d=True)
    if X.shape[1] != 2:
        raise ValueError("pairs must have shape (n, 2)")
    if np.any(X < 0) or np.any(X[:, 0] >= n_states) or np.any(X[:, 1] >= n_actions):
        raise IndexError("state-action pair outside the class domain")
    return X


class _PairFunctionMixin:
    """Evaluation shared by both classes once ``table_`` is fitted."""

    def predict(self, X):
        check_is_fitted(self, "table_")
        X = _pairs(X, *self.table_.shape)
        return self.table_[X[:, 0], X[:, 1]]

    def evaluate(self, s, a):
        check_is_fitted(self, "table_")
        S, A = self.table_.shape
        if not (0 <= s < S and 0 <= a < A):
            raise IndexError(f"pair ({s}, {a}) outside the class domain")
        return float(self.table_[s, a])

    def width(self, dataset, epsilon, s, a):
        return float(self.width_table(dataset, epsilon)[s, a])


class TabularFunctionClass(_PairFunctionMixin, RegressorMixin, BaseEstimator):
    """All tables bounded by ``W`` in sup norm.

    ``fit`` stores the per-pair mean of the targets, clipped to ``[-W, W]``;
    pairs without data are set to 0.
    """

    kind = "tabular"

    def __init__(self, n_states=1, n_actions=1, W=1.0):
        self.n_states = n_states
        self.n_actions = n_actions
        self.W = W

    @property
    def n_pairs(self):
        return self.n_states * self.n_actions

    def fit(self, X, y):
        X = _pairs(X, self.n_states, self.n_actions)
        y = np.asarray(y, dtype=float).ravel()
        if X.shape[0] == 0:
            raise ValueError("no regression data")
        if y.shape[0] != X.shape[0]:
            raise ValueError("X and y have different lengths")
        idx = X[:, 0] * self.n_actions + X[:, 1]
        sums = np.bincount(idx, weights=y, minlength=self.n_pairs)
        cnt = np.bincount(idx, minlength=self.n_pairs)
        mean = np.divide(sums, cnt, out=np.zeros(self.n_pairs), where=cnt > 0)
        self.table_ = np.clip(mean, -self.W, self.W).reshape(self.n_states, self.n_actions)
        self.observed_ = (cnt > 0).reshape(self.n_states, self.n_actions)
        return self

    def width_table(self, dataset, epsilon):
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        c = _counts(dataset)
        with np.errstate(divide="ignore"):
            w = np.sqrt(epsilon / c)
        return np.minimum(2 * self.W, w)

    def sensitivity(self, dataset, z, N):
        if N < 1:
            raise ValueError("N must be at least 1")
        c = _counts(dataset)[z[0], z[1]]
        w2 = 4 * self.W ** 2
        return w2 / (min(w2 * c, N * w2) + 1.0)

    def log_cover_size(self, radius):
        if radius <= 0:
            raise ValueError("radius must be positive")
        if radius >= 2 * self.W:
            return 0.0
        return self.n_pairs * math.log(2 * self.W / radius + 1.0)


class LinearFunctionClass(_PairFunctionMixin, RegressorMixin, BaseEstimator):
    """Linear functions ``theta . phi(s, a)`` with ``||theta||_2 <= W``.

    ``features`` has shape ``(S, A, d)``.  Feature vectors longer than 1 are
    rejected.  ``fit`` is ridge regression (``ridge`` only conditions the
    solve; ``ridge=0`` is plain least squares) followed by projection onto the
    parameter ball.

    Width and sensitivity use the regularised leverage score, which is an
    upper bound on the exact constrained supremum.
    """

    kind = "linear"

    def __init__(self, features=None, W=1.0, ridge=1e-8):
        self.features = features
        self.W = W
        self.ridge = ridge

    def _phi(self):
        phi = np.asarray(self.features, dtype=float)
        if phi.ndim != 3:
            raise ValueError("features must have shape (S, A, d)")
        if np.max(np.linalg.norm(phi, axis=2)) > 1 + 1e-12:
            raise ValueError("feature vectors must have Euclidean norm at most 1")
        return phi

    @property
    def n_states(self):
        return np.shape(self.features)[0]

    @property
    def n_actions(self):
        return np.shape(self.features)[1]

    @property
    def d_feat(self):
        return np.shape(self.features)[2]

    @property
    def n_pairs(self):
        return self.n_states * self.n_actions

    def fit(self, X, y):
        phi = self._phi()
        X = _pairs(X, phi.shape[0], phi.shape[1])
        y = np.asarray(y, dtype=float).ravel()
        if X.shape[0] == 0:
            raise ValueError("no regression data")
        F = phi[X[:, 0], X[:, 1]]
        if self.ridge > 0:
            theta = np.linalg.solve(F.T @ F + self.ridge * np.eye(F.shape[1]), F.T @ y)
        else:
            theta = np.linalg.lstsq(F, y, rcond=None)[0]
        norm = np.linalg.norm(theta)
        if norm > self.W:
            theta = theta * (self.W / norm)
        self.coef_ = theta
        self.table_ = phi @ theta
        return self

    def gram(self, dataset):
        phi = self._phi()
        c = _counts(dataset)
        return np.einsum("sa,sai,saj->ij", c, phi, phi)

    def _leverage(self, A):
        phi = self._phi()
        sol = np.linalg.solve(A, phi.reshape(-1, phi.shape[2]).T).T
        return np.sum(phi.reshape(-1, phi.shape[2]) * sol, axis=1).reshape(phi.shape[:2])

    def width_table(self, dataset, epsilon):
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        W = self.W
        lam = epsilon / (4 * W ** 2)
        lev = self._leverage(self.gram(dataset) + lam * np.eye(self.d_feat))
        return np.minimum(2 * W, np.sqrt(2 * epsilon * np.maximum(lev, 0.0)))

    def sensitivity_table(self, dataset, N):
        w2 = 4 * self.W ** 2
        lev = self._leverage(self.gram(dataset) + np.eye(self.d_feat) / w2)
        sq = np.sum(self._phi() ** 2, axis=2)
        capped = w2 * sq / (N * w2 + 1.0)
        return np.minimum(w2 * sq, np.maximum(lev, capped))

    def sensitivity(self, dataset, z, N):
        if N < 1:
            raise ValueError("N must be at least 1")
        return float(self.sensitivity_table(dataset, N)[z[0], z[1]])

    def log_cover_size(self, radius):
        if radius <= 0:
            raise ValueError("radius must be positive")
        if radius >= 2 * self.W:
            return 0.0
        return self.d_feat * math.log(1.0 + 4 * self.W / radius)


# ---------------------------------------------------------------------------
# module-level API

def evaluate(f, s, a):
    return f.evaluate(s, a)


def fit_least_squares(function_class, pairs, targets):
    """Fit a fresh copy of ``function_class``; the class itself is left untouched."""
    if len(pairs) == 0:
        raise ValueError("no regression data")
    return clone(function_class).fit(pairs, targets)


def width(function_class, dataset, epsilon, s, a):
    return function_class.width(dataset, epsilon, s, a)


def sensitivity(function_class, dataset, z, N):
    return function_class.sensitivity(dataset, z, N)


def log_cover_size(function_class, radius):
    return function_class.log_cover_size(radius)


# ---------------------------------------------------------------------------
# brute-force oracles

MAX_TABULAR_PAIRS = 8
MAX_LINEAR_DIM = 3


def _tabular_grid(function_class, c, target, fine_step):
    """Fine grid on the target coordinate, coarse grid (step W) on the rest."""
    W = function_class.W
    flat = c.ravel()
    others = [i for i in range(flat.size) if i != target]
    coarse = np.linspace(-2 * W, 2 * W, 5)
    if others:
        combos = np.array(list(itertools.product(coarse, repeat=len(others))))
        other_norm = np.unique(np.round(combos ** 2 @ flat[others], 12))
    else:
        other_norm = np.zeros(1)
    v = np.arange(-2 * W, 2 * W + fine_step / 2, fine_step)
    v = np.clip(v, -2 * W, 2 * W)
    return v, other_norm


def width_bruteforce(function_class, dataset, epsilon, s, a, grid_step=1e-3):
    """Width by exhaustive search over a discretised difference class."""
    c = _counts(dataset)
    if function_class.kind == "tabular":
        if c.size > MAX_TABULAR_PAIRS:
            raise OracleScaleError("oracle scale exceeded")
        target = s * c.shape[1] + a
        v, other_norm = _tabular_grid(function_class, c, target, grid_step)
        feas = (other_norm[None, :] + c.ravel()[target] * v[:, None] ** 2) <= epsilon
        ok = feas.any(axis=1)
        return float(np.max(np.abs(v[ok]))) if ok.any() else 0.0
    phi = function_class._phi()
    d = phi.shape[2]
    if d > MAX_LINEAR_DIM:
        raise OracleScaleError("oracle scale exceeded")
    R = 2 * function_class.W
    axis = np.arange(-R, R + grid_step / 2, grid_step)
    grid = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    grid = grid[np.sum(grid ** 2, axis=1) <= R ** 2 + 1e-12]
    proj = grid @ phi.reshape(-1, d).T
    norm = proj ** 2 @ c.ravel()
    feas = norm <= epsilon
    if not feas.any():
        return 0.0
    return float(np.max(np.abs(grid[feas] @ phi[s, a])))


def sensitivity_bruteforce(function_class, dataset, z, N, grid_step=1e-3, n_samples=10_000,
                           rng=None):
    """Supremum of the sensitivity ratio by search.

    Tabular: exhaustive grid.  Linear: ``n_samples`` random parameter
    differences in the ``2W`` ball (half of them on its boundary).
    """
    c = _counts(dataset)
    W = function_class.W
    cap = 4 * N * W ** 2
    if function_class.kind == "tabular":
        if c.size > MAX_TABULAR_PAIRS:
            raise OracleScaleError("oracle scale exceeded")
        target = z[0] * c.shape[1] + z[1]
        v, other_norm = _tabular_grid(function_class, c, target, grid_step)
        norm = other_norm[None, :] + c.ravel()[target] * v[:, None] ** 2
        ratio = v[:, None] ** 2 / (np.minimum(norm, cap) + 1.0)
        return float(ratio.max())
    rng = np.random.default_rng(0) if rng is None else rng
    phi = function_class._phi()
    d = phi.shape[2]
    R = 2 * W
    x = rng.normal(size=(n_samples, d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    radii = R * rng.uniform(size=n_samples) ** (1.0 / d)
    radii[: n_samples // 2] = R
    x *= radii[:, None]
    proj = x @ phi.reshape(-1, d).T
    norm = proj ** 2 @ c.ravel()
    num = (x @ phi[z[0], z[1]]) ** 2
    return float(np.max(num / (np.minimum(norm, cap) + 1.0)))


def width_exact(function_class, dataset, epsilon, s, a):
    """Exact width (no relaxation).

    Tabular: the closed form is already exact.  Linear: the supremum of
    ``phi . x`` over ``x' S x <= eps, ||x|| <= 2W`` equals
    ``min_{mu >= 0} sqrt((eps + mu R^2) phi' (S + mu I)^-1 phi)`` by convex
    duality; the one-dimensional minimum is found numerically.
    """
    if function_class.kind == "tabular":
        return function_class.width(dataset, epsilon, s, a)
    phi = function_class._phi()
    x = phi[s, a]
    R = 2.0 * function_class.W
    if not np.any(x):
        return 0.0
    sigma = function_class.gram(dataset)
    d = sigma.shape[0]

    def dual(t):
        mu = math.exp(t)
        return math.sqrt((epsilon + mu * R ** 2) * float(x @ np.linalg.solve(sigma + mu * np.eye(d), x)))

    ts = np.linspace(-40.0, 40.0, 401)
    vals = np.array([dual(t) for t in ts])
    j = int(np.argmin(vals))
    lo, hi = ts[max(j - 1, 0)], ts[min(j + 1, len(ts) - 1)]
    best = minimize_scalar(dual, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    return float(min(vals[j], best.fun, R * np.linalg.norm(x)))
