"""Alternating heuristic for jointly estimating a measure and a relation.

Learning and inference are alternated: ``theta`` is re-learned from the current
relation, then the relation is re-inferred from the new costs.  Each half-step
cannot increase the joint objective, but fixed points need not be optimal.
"""

from __future__ import annotations

import logging

import numpy as np

from relkit.core import ConstraintClass, Evidence, FeatureStore, Relation, relation_objective
from relkit.models import (
    BernoulliModel,
    LogisticModel,
    bernoulli_objective,
    cost_matrix,
    learn_bernoulli,
    learn_logistic,
    logistic_objective,
)
from relkit.solvers.report import SolveMethod, SolveReport, Stopwatch

logger = logging.getLogger(__name__)


def joint_objective(model, features: FeatureStore, y) -> float:
    if isinstance(model, LogisticModel):
        return logistic_objective(model, features, y)
    if isinstance(model, BernoulliModel):
        return bernoulli_objective(model, features, y)
    raise TypeError(f"unsupported model {type(model).__name__}")


def _learn(kind, features, y, sigma, learn_kwargs, previous=None):
    if kind == "bernoulli":
        return learn_bernoulli(features, y, sigma)
    kwargs = dict(learn_kwargs)
    if previous is not None:
        kwargs.setdefault("theta0", previous.theta)
    return learn_logistic(features, y, sigma, **kwargs)


def _subset(features: FeatureStore, pairs) -> FeatureStore:
    wanted = {(int(a), int(b)) for a, b in pairs}
    rows = np.array([i for i, (a, b) in enumerate(features.pairs.tolist()) if (a, b) in wanted], dtype=np.int64)
    return FeatureStore(features.shape, features.pairs[rows], features.matrix[rows], features.num_features)


def solve_alternating(
    features: FeatureStore,
    sigma: float,
    model_kind: str,
    constraint_class,
    evidence: Evidence,
    max_rounds: int = 50,
    solver: str = "auto",
    learn_kwargs: dict | None = None,
):
    """Block-coordinate descent on ``D_x(theta, y) + R_sigma(theta)`` over ``theta`` and feasible ``y``.

    The first model is learned from the pinned pairs only.  Afterwards every
    round learns from all pairs under the current relation and re-infers the
    relation, warm-starting heuristic solvers from the current one.  Stops
    when the relation no longer changes or after ``max_rounds``.

    Returns ``(model, report)``; the report is never certified optimal and
    ``report.info`` carries the per-round joint objectives.
    """
    from relkit.solvers import solve

    clock = Stopwatch()
    cls = ConstraintClass.parse(constraint_class)
    kind = model_kind.lower()
    if kind not in ("logistic", "bernoulli"):
        raise ValueError(f"unknown model kind {model_kind!r}")
    if not features.covers_grid():
        raise ValueError("alternating estimation needs features for every pair")
    if not evidence or len(evidence) == 0:
        raise ValueError("alternating estimation needs pinned evidence to start from")
    values = set(evidence.pinned.values())
    if kind == "bernoulli" and values != {0, 1}:
        raise ValueError("Bernoulli alternating estimation needs pinned pairs of both values")
    learn_kwargs = learn_kwargs or {}

    pinned_pairs = sorted(evidence.pinned)
    seed_store = _subset(features, pinned_pairs)
    seed_targets = np.array([evidence.pinned[(int(a), int(b))] for a, b in seed_store.pairs.tolist()], dtype=float)
    model = _learn(kind, seed_store, seed_targets, sigma, learn_kwargs)
    report = solve(cost_matrix(model, features), cls, method=solver, evidence=evidence)
    relation = report.relation
    history = [joint_objective(model, features, relation)]
    fixed_point = False
    rounds = 0
    while rounds < max_rounds:
        rounds += 1
        model = _learn(kind, features, relation, sigma, learn_kwargs, previous=model)
        costs = cost_matrix(model, features)
        report = solve(costs, cls, method=solver, evidence=evidence, init=relation)
        changed = report.relation != relation
        relation = report.relation
        history.append(joint_objective(model, features, relation))
        if not changed:
            fixed_point = True
            break
    if len(evidence) == features.num_pairs:
        fixed_point = True
    costs = cost_matrix(model, features)
    final = SolveReport(
        relation=relation,
        objective=relation_objective(relation, costs),
        method=SolveMethod.ALTERNATING,
        certified_optimal=False,
        wall_time=clock.elapsed,
        iterations=rounds,
        info={
            "fixed_point": fixed_point,
            "rounds": rounds,
            "joint_objective": history,
            "inner_method": report.method.value,
        },
    )
    return model, final
