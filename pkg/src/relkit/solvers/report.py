from __future__ import annotations

import enum
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

from relkit.core import CostMatrix, Relation, relation_objective


class SolveMethod(str, enum.Enum):
    INDEPENDENT = "independent"
    MAP_ARGMAX = "map_argmax"
    PARTITION_EXACT = "partition_exact"
    PARTITION_KL = "partition_kl"
    ORDER_EXACT_DP = "order_exact_dp"
    ORDER_LOCAL_SEARCH = "order_local_search"
    ALTERNATING = "alternating"


CERTIFIED_METHODS = frozenset(
    {SolveMethod.INDEPENDENT, SolveMethod.MAP_ARGMAX, SolveMethod.PARTITION_EXACT, SolveMethod.ORDER_EXACT_DP}
)


@dataclass(frozen=True, eq=False)
class SolveReport:
    relation: Relation
    objective: float
    method: SolveMethod
    certified_optimal: bool
    wall_time: float
    iterations: int
    info: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "method": self.method.value,
            "objective": self.objective,
            "certified_optimal": self.certified_optimal,
            "wall_time": round(self.wall_time, 3),
            "iterations": self.iterations,
        }


class Stopwatch:
    def __init__(self):
        self.start = time.monotonic()

    @property
    def elapsed(self) -> float:
        return time.monotonic() - self.start


def make_report(relation: Relation, costs: CostMatrix, method: SolveMethod, clock: Stopwatch,
                iterations: int, **info) -> SolveReport:
    return SolveReport(
        relation=relation,
        objective=relation_objective(relation, costs),
        method=method,
        certified_optimal=method in CERTIFIED_METHODS,
        wall_time=clock.elapsed,
        iterations=int(iterations),
        info=info,
    )
