"""Logistic and Bernoulli measures over pairs.

All logarithms and exponentials are base 2.  For a pair with features ``x``
and parameters ``theta`` the logistic score is ``s = <theta, x>`` and the pair
is related with probability ``1 / (1 + 2**-s)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from relkit.core import CostMatrix, FeatureStore, Relation
from relkit.errors import NonConvergenceError, ShapeError
from relkit.lifting import LiftSpec

logger = logging.getLogger(__name__)

LOG2E = 1.0 / math.log(2.0)
BERNOULLI_EPS = 1e-9

__all__ = [
    "LogisticModel",
    "BernoulliModel",
    "OneVsRestModel",
    "SufficientStats",
    "pair_targets",
    "scores",
    "logistic_prob",
    "logistic_data_term",
    "logistic_regularizer",
    "logistic_objective",
    "logistic_gradient",
    "logistic_hessian",
    "learn_logistic",
    "sufficient_stats",
    "bernoulli_from_stats",
    "learn_bernoulli",
    "bernoulli_data_term",
    "bernoulli_regularizer",
    "bernoulli_objective",
    "pair_costs",
    "cost_matrix",
    "one_vs_rest_learn",
    "block_pair_features",
]


@dataclass(frozen=True, eq=False)
class LogisticModel:
    theta: np.ndarray
    sigma: float
    lift: LiftSpec | None = None
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64).ravel()
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "sigma", float(self.sigma))

    kind = "logistic"


@dataclass(frozen=True, eq=False)
class BernoulliModel:
    """Per-feature probabilities, clamped to ``[1e-9, 1 - 1e-9]`` on construction."""

    theta: np.ndarray
    sigma: float
    lift: LiftSpec | None = None
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64).ravel()
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        theta = np.clip(theta, BERNOULLI_EPS, 1.0 - BERNOULLI_EPS)
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "sigma", float(self.sigma))

    kind = "bernoulli"


@dataclass(frozen=True, eq=False)
class OneVsRestModel:
    """One logistic model per label; row ``b`` of ``theta`` scores label ``b``."""

    theta: np.ndarray
    sigma: float
    lift: LiftSpec | None = None
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64)
        if theta.ndim != 2:
            raise ShapeError("one-vs-rest theta must be (labels, features)")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "sigma", float(self.sigma))

    kind = "logistic-ovr"

    @property
    def n_labels(self) -> int:
        return self.theta.shape[0]

    def label_model(self, b: int) -> LogisticModel:
        return LogisticModel(self.theta[b], self.sigma, self.lift)

    def joint_theta(self) -> np.ndarray:
        """Parameters for :func:`block_pair_features`, label blocks concatenated."""
        return self.theta.ravel()


@dataclass(frozen=True)
class SufficientStats:
    m_plus: np.ndarray
    m_minus: np.ndarray


# -- shared helpers -----------------------------------------------------------


def pair_targets(features: FeatureStore, y) -> np.ndarray:
    """Targets aligned with the rows of ``features``.

    ``y`` may be a :class:`Relation`, an array shaped like the pair universe
    ``features.shape``, or a vector with one entry per stored row.
    """
    if isinstance(y, Relation):
        if y.shape != features.shape:
            raise ShapeError(f"relation shape {y.shape} != feature shape {features.shape}")
        y = y.bits
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 2:
        if y.shape != features.shape:
            raise ShapeError(f"target shape {y.shape} != feature shape {features.shape}")
        return y[features.pairs[:, 0], features.pairs[:, 1]]
    if y.shape != (features.num_pairs,):
        raise ShapeError(f"{y.size} targets for {features.num_pairs} feature rows")
    return y


def _mat(features) -> "sp.csr_matrix | np.ndarray":
    return features.matrix if isinstance(features, FeatureStore) else features


def scores(theta: np.ndarray, features) -> np.ndarray:
    return np.asarray(_mat(features) @ np.asarray(theta, dtype=np.float64)).ravel()


def _dot(theta: np.ndarray, x) -> float:
    if sp.issparse(x):
        return float((x @ theta).sum())
    return float(np.dot(theta, np.asarray(x, dtype=np.float64).ravel()))


# -- logistic -----------------------------------------------------------------


def logistic_prob(model: LogisticModel, x_ab, y_ab: int) -> float:
    s = _dot(model.theta, x_ab)
    return 1.0 / (1.0 + 2.0 ** (-(2 * y_ab - 1) * s))


def logistic_data_term(theta, features: FeatureStore, y) -> float:
    s = scores(theta, features)
    t = pair_targets(features, y)
    return float(np.sum(np.logaddexp2(0.0, s) - s * t))


def logistic_regularizer(theta, sigma: float) -> float:
    theta = np.asarray(theta, dtype=np.float64)
    return LOG2E / (2.0 * sigma**2) * float(theta @ theta)


def logistic_objective(model: LogisticModel, features: FeatureStore, y) -> float:
    """Negative base-2 log posterior ``D_x(theta, y) + R_sigma(theta)`` up to constants."""
    return logistic_data_term(model.theta, features, y) + logistic_regularizer(model.theta, model.sigma)


def _sigmoid2(s: np.ndarray) -> np.ndarray:
    return np.exp2(-np.logaddexp2(0.0, -s))


def _value_and_grad(theta, X, t, sigma):
    s = np.asarray(X @ theta).ravel()
    value = float(np.sum(np.logaddexp2(0.0, s) - s * t)) + LOG2E / (2 * sigma**2) * float(theta @ theta)
    resid = _sigmoid2(s) - t
    grad = np.asarray(X.T @ resid).ravel() + (LOG2E / sigma**2) * theta
    return value, grad


def logistic_gradient(model: LogisticModel, features: FeatureStore, y) -> np.ndarray:
    t = pair_targets(features, y)
    return _value_and_grad(model.theta, _mat(features), t, model.sigma)[1]


def logistic_hessian(model: LogisticModel, features: FeatureStore) -> np.ndarray:
    """Dense Hessian of ``D_x + R_sigma`` in ``theta``; independent of ``y``."""
    X = _mat(features)
    s = scores(model.theta, X)
    xi2 = math.log(2.0) * np.exp2(s - 2 * np.logaddexp2(0.0, s))
    Xd = X.toarray() if sp.issparse(X) else np.asarray(X, dtype=np.float64)
    K = Xd.shape[1]
    return (Xd * xi2[:, None]).T @ Xd + (LOG2E / model.sigma**2) * np.eye(K)


def _lipschitz_bound(X, sigma) -> float:
    if sp.issparse(X):
        from scipy.sparse.linalg import svds

        if min(X.shape) > 2:
            top = float(svds(X.astype(np.float64), k=1, return_singular_vectors=False)[0])
        else:
            top = float(np.linalg.norm(X.toarray(), 2))
    else:
        top = float(np.linalg.norm(np.asarray(X, dtype=np.float64), 2))
    return math.log(2.0) / 4.0 * top**2 + LOG2E / sigma**2


def _armijo(fun, x, f, g, d, step):
    slope = float(g @ d)
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    for _ in range(80):
        x_new = x + step * d
        f_new, g_new = fun(x_new)
        if f_new <= f + 1e-4 * step * slope:
            return x_new, f_new, g_new, step
        # roundoff floor near the optimum: accept if the gradient still shrinks
        if f_new <= f + 1e-13 * max(1.0, abs(f)) and np.max(np.abs(g_new)) < gnorm:
            return x_new, f_new, g_new, step
        step *= 0.5
    return None


def _minimize(fun, x0, tol, max_iter, method, lipschitz: Callable[[], float]):
    x = np.array(x0, dtype=np.float64)
    f, g = fun(x)
    history: list[tuple[np.ndarray, np.ndarray]] = []
    fixed_step = 1.0 / lipschitz() if method == "fixed" else None
    it = 0
    while it < max_iter:
        if x.size == 0 or np.max(np.abs(g)) <= tol:
            break
        it += 1
        if method == "fixed":
            x = x - fixed_step * g
            f, g = fun(x)
            continue
        if method == "lbfgs" and history:
            q = g.copy()
            alphas = []
            for s_k, y_k in reversed(history):
                rho = 1.0 / float(y_k @ s_k)
                a = rho * float(s_k @ q)
                alphas.append((rho, a))
                q -= a * y_k
            s_last, y_last = history[-1]
            q *= float(s_last @ y_last) / float(y_last @ y_last)
            for (s_k, y_k), (rho, a) in zip(history, reversed(alphas)):
                q += (a - rho * float(y_k @ q)) * s_k
            d = -q
            step = 1.0
        else:
            d = -g
            step = 1.0 / max(1.0, float(np.max(np.abs(g))))
        if float(g @ d) >= 0:
            d = -g
            history.clear()
        found = _armijo(fun, x, f, g, d, step)
        if found is None:
            logger.debug("line search stalled at iteration %d", it)
            break
        x_new, f_new, g_new, _ = found
        s_k, y_k = x_new - x, g_new - g
        if method == "lbfgs" and float(s_k @ y_k) > 1e-300:
            history.append((s_k, y_k))
            if len(history) > 10:
                history.pop(0)
        x, f, g = x_new, f_new, g_new
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    return x, f, gnorm, it


def learn_logistic(
    features: FeatureStore,
    y_fixed,
    sigma: float,
    tol: float = 1e-6,
    max_iter: int = 5000,
    method: str = "lbfgs",
    theta0=None,
    strict: bool = True,
    lift: LiftSpec | None = None,
) -> LogisticModel:
    """Minimize ``D_x(theta, y_fixed) + R_sigma(theta)`` (L2-regularized logistic regression).

    ``method`` is ``"lbfgs"`` (default), ``"gradient"`` (steepest descent with
    backtracking) or ``"fixed"`` (gradient steps of length ``1/L``).  Stops
    once the gradient sup-norm is at most ``tol``.  Running out of iterations
    raises :class:`NonConvergenceError` unless ``strict=False``.
    """
    if method not in ("lbfgs", "gradient", "fixed"):
        raise ValueError(f"unknown method {method!r}")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    t = pair_targets(features, y_fixed)
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("learning needs binary targets")
    X = _mat(features)
    x0 = np.zeros(X.shape[1]) if theta0 is None else np.asarray(theta0, dtype=np.float64)
    theta, value, gnorm, iters = _minimize(
        lambda th: _value_and_grad(th, X, t, sigma),
        x0,
        tol,
        max_iter,
        method,
        lambda: _lipschitz_bound(X, sigma),
    )
    info = {"objective": value, "grad_norm": gnorm, "iterations": iters, "converged": gnorm <= tol}
    if gnorm > tol:
        msg = f"logistic learning stopped after {iters} iterations with gradient norm {gnorm:.3e} > {tol:g}"
        if strict:
            raise NonConvergenceError(msg, grad_norm=gnorm, iterations=iters)
        logger.warning(msg)
    return LogisticModel(theta, sigma, lift, info)


# -- Bernoulli ----------------------------------------------------------------


def sufficient_stats(features: FeatureStore, y) -> SufficientStats:
    t = pair_targets(features, y)
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("sufficient statistics need binary targets")
    X = _mat(features)
    m_plus = np.rint(np.asarray(X.T @ t).ravel()).astype(np.int64)
    m_minus = np.rint(np.asarray(X.T @ (1.0 - t)).ravel()).astype(np.int64)
    return SufficientStats(m_plus, m_minus)


def bernoulli_from_stats(stats: SufficientStats, sigma: float, lift: LiftSpec | None = None) -> BernoulliModel:
    """Closed-form maximizer ``(m+ + sigma - 1) / (m+ + m- + 2 (sigma - 1))`` per feature.

    A feature never observed under ``sigma = 1`` leaves the objective flat in
    its parameter; it gets ``1/2``.  A non-positive denominator otherwise has
    no interior maximizer and raises.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    m_plus = np.asarray(stats.m_plus, dtype=np.float64)
    m_minus = np.asarray(stats.m_minus, dtype=np.float64)
    num = m_plus + (sigma - 1.0)
    den = m_plus + m_minus + 2.0 * (sigma - 1.0)
    flat = (den == 0) & (num == 0)
    bad = np.flatnonzero((den <= 0) & ~flat)
    if bad.size:
        j = int(bad[0])
        raise ValueError(
            f"no interior maximizer for feature {j}: m+={int(m_plus[j])}, m-={int(m_minus[j])}, sigma={sigma}"
        )
    theta = np.full(m_plus.shape, 0.5)
    ok = ~flat
    theta[ok] = num[ok] / den[ok]
    return BernoulliModel(theta, sigma, lift, {"m_plus": stats.m_plus, "m_minus": stats.m_minus})


def learn_bernoulli(features: FeatureStore, y_fixed, sigma: float, lift: LiftSpec | None = None) -> BernoulliModel:
    return bernoulli_from_stats(sufficient_stats(features, y_fixed), sigma, lift)


def _check_interior(theta: np.ndarray) -> None:
    if np.any(theta <= 0) or np.any(theta >= 1):
        raise ValueError("Bernoulli parameters must lie strictly inside (0, 1)")


def bernoulli_data_term(theta, features: FeatureStore, y) -> float:
    theta = np.asarray(theta, dtype=np.float64)
    _check_interior(theta)
    t = pair_targets(features, y)
    X = _mat(features)
    log_odds = np.asarray(X @ np.log2((1 - theta) / theta)).ravel()
    base = np.asarray(X @ np.log2(1 - theta)).ravel()
    return float(np.sum(log_odds * t - base))


def bernoulli_regularizer(theta, sigma: float) -> float:
    theta = np.asarray(theta, dtype=np.float64)
    _check_interior(theta)
    return (1.0 - sigma) * float(np.sum(np.log2(theta * (1 - theta))))


def bernoulli_objective(model: BernoulliModel, features: FeatureStore, y) -> float:
    return bernoulli_data_term(model.theta, features, y) + bernoulli_regularizer(model.theta, model.sigma)


# -- inference coefficients ---------------------------------------------------


def pair_costs(model, features) -> np.ndarray:
    """Inference coefficient of every stored feature row."""
    if isinstance(model, LogisticModel):
        return -scores(model.theta, features)
    if isinstance(model, BernoulliModel):
        return scores(np.log2((1.0 - model.theta) / model.theta), features)
    raise TypeError(f"no pair costs for {type(model).__name__}")


def cost_matrix(model, features) -> CostMatrix:
    """Coefficients of the 0/1 linear program ``min sum c_ab y_ab``.

    ``features`` is a :class:`FeatureStore` covering all of ``A x B``, or, for a
    :class:`OneVsRestModel`, the element feature matrix (one row per ``a``).
    """
    if isinstance(model, OneVsRestModel):
        return CostMatrix(-np.asarray(_mat(features) @ model.theta.T))
    if not features.covers_grid():
        raise ShapeError("cost matrix needs features for every pair of A x B")
    values = pair_costs(model, features)
    flat = np.empty(features.shape[0] * features.shape[1])
    flat[features.grid_order()] = values
    return CostMatrix(flat.reshape(features.shape))


# -- one-vs-rest --------------------------------------------------------------


def one_vs_rest_learn(
    element_features,
    labels: Sequence[int],
    sigma: float,
    n_labels: int | None = None,
    **learn_kwargs,
) -> OneVsRestModel:
    """Learn one independent logistic model per label with targets ``[label(a) == b]``."""
    X = _mat(element_features)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (X.shape[0],):
        raise ShapeError(f"{labels.size} labels for {X.shape[0]} elements")
    n_labels = int(labels.max()) + 1 if n_labels is None else int(n_labels)
    store = FeatureStore.grid((X.shape[0], 1), X)
    thetas, infos = [], []
    for b in range(n_labels):
        m = learn_logistic(store, (labels == b).astype(np.float64), sigma, **learn_kwargs)
        thetas.append(m.theta)
        infos.append(m.info)
    lift = learn_kwargs.get("lift")
    return OneVsRestModel(np.vstack(thetas), sigma, lift, {"per_label": infos})


def block_pair_features(element_features, n_labels: int) -> FeatureStore:
    """Pair features ``x_ab`` holding ``v_a`` in the feature block of label ``b``.

    Row ``a * n_labels + b`` carries ``v_a`` at columns ``b * K .. b * K + K - 1``,
    so a joint parameter vector splits into one block per label.
    """
    X = sp.csr_matrix(_mat(element_features))
    n, K = X.shape
    blocks = []
    for a in range(n):
        row = X[a]
        blocks.append(sp.block_diag([row] * n_labels, format="csr"))
    matrix = sp.vstack(blocks, format="csr")
    return FeatureStore.grid((n, n_labels), matrix)
