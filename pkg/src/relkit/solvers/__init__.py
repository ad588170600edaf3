"""Inference engines for the 0/1 linear program ``min sum c_ab y_ab`` over a constraint class."""

from __future__ import annotations

import numpy as np

from relkit.core import ConstraintClass, CostMatrix, Evidence, Relation, labels_from_equivalence, sequence_from_order
from relkit.solvers.alternating import joint_objective, solve_alternating
from relkit.solvers.maps import solve_map, solve_unconstrained
from relkit.solvers.order import MAX_EXACT_ORDER, solve_order_exact, solve_order_local
from relkit.solvers.partition import MAX_EXACT_PARTITION, solve_partition_exact, solve_partition_kl
from relkit.solvers.report import CERTIFIED_METHODS, SolveMethod, SolveReport

__all__ = [
    "SolveMethod",
    "SolveReport",
    "CERTIFIED_METHODS",
    "solve",
    "solve_map",
    "solve_unconstrained",
    "solve_partition_exact",
    "solve_partition_kl",
    "solve_order_exact",
    "solve_order_local",
    "solve_alternating",
    "joint_objective",
    "AUTO_EXACT_PARTITION",
    "AUTO_EXACT_ORDER",
]

# sizes up to which method="auto" picks the certified solver
AUTO_EXACT_PARTITION = 10
AUTO_EXACT_ORDER = 12


def solve(
    costs: CostMatrix,
    constraint_class,
    method: str = "auto",
    evidence: Evidence | None = None,
    seed: int | None = None,
    init: Relation | None = None,
) -> SolveReport:
    """Dispatch to the solver for ``constraint_class``.

    ``method`` is ``"exact"``, ``"heuristic"`` or ``"auto"`` (exact when the
    instance is small).  ``init`` warm-starts the heuristics.
    """
    cls = ConstraintClass.parse(constraint_class)
    if method not in ("auto", "exact", "heuristic"):
        raise ValueError(f"unknown method {method!r}")
    if cls is ConstraintClass.UNCONSTRAINED:
        return solve_unconstrained(costs, evidence)
    if cls is ConstraintClass.MAP:
        return solve_map(costs, evidence)
    n = costs.shape[0]
    if cls is ConstraintClass.EQUIVALENCE:
        exact = method == "exact" or (method == "auto" and n <= AUTO_EXACT_PARTITION)
        if exact:
            return solve_partition_exact(costs, evidence)
        start = labels_from_equivalence(init) if init is not None else None
        return solve_partition_kl(costs, evidence, init=start, seed=seed)
    exact = method == "exact" or (method == "auto" and n <= AUTO_EXACT_ORDER)
    if exact:
        return solve_order_exact(costs, evidence)
    start = sequence_from_order(init) if init is not None else None
    return solve_order_local(costs, evidence, seed=seed, init=start)
