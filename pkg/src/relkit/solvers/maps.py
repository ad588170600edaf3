"""Inference for maps and for unconstrained relations; both separate per row or pair."""

from __future__ import annotations

import numpy as np

from relkit.core import ConstraintClass, CostMatrix, Evidence, Relation
from relkit.errors import InfeasibleEvidenceError
from relkit.solvers.report import SolveMethod, SolveReport, Stopwatch, make_report


def solve_map(costs: CostMatrix, evidence: Evidence | None = None) -> SolveReport:
    """Pick ``argmin_b c_ab`` for every ``a``; ties go to the smallest ``b``.

    Pins to 1 force a label, pins to 0 exclude one.
    """
    clock = Stopwatch()
    c = costs.costs
    n_a, n_b = c.shape
    allowed = np.ones((n_a, n_b), dtype=bool)
    forced = np.full(n_a, -1, dtype=np.int64)
    if evidence:
        evidence.check_bounds(costs.shape)
        for (a, b), v in sorted(evidence.pinned.items()):
            if v == 0:
                allowed[a, b] = False
            elif forced[a] >= 0 and forced[a] != b:
                raise InfeasibleEvidenceError(f"element {a} pinned to labels {forced[a]} and {b}")
            else:
                forced[a] = b
    for a in np.flatnonzero(forced >= 0):
        allowed[a] = False
        allowed[a, forced[a]] = True
    empty = np.flatnonzero(~allowed.any(axis=1))
    if empty.size:
        raise InfeasibleEvidenceError(f"evidence excludes every label of element {int(empty[0])}")
    choice = np.argmin(np.where(allowed, c, np.inf), axis=1)
    bits = np.zeros((n_a, n_b), dtype=np.uint8)
    bits[np.arange(n_a), choice] = 1
    relation = Relation((n_a, n_b), bits, ConstraintClass.MAP)
    return make_report(relation, costs, SolveMethod.MAP_ARGMAX, clock, n_a * n_b)


def solve_unconstrained(costs: CostMatrix, evidence: Evidence | None = None) -> SolveReport:
    """Relate exactly the pairs with negative cost (independent pair classification)."""
    clock = Stopwatch()
    bits = (costs.costs < 0).astype(np.uint8)
    if evidence:
        evidence.check_bounds(costs.shape)
        for (a, b), v in evidence.pinned.items():
            bits[a, b] = v
    relation = Relation(costs.shape, bits, ConstraintClass.UNCONSTRAINED)
    return make_report(relation, costs, SolveMethod.INDEPENDENT, clock, bits.size)
