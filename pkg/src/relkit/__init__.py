"""Learning and inference of binary relations constrained to be maps,
partitions (equivalence relations) or linear orders."""

from relkit.core import (
    ConstraintClass,
    CostMatrix,
    Evidence,
    FeatureStore,
    Relation,
    Validation,
    Violation,
    relation_objective,
    validate_relation,
)
from relkit.errors import (
    InfeasibleEvidenceError,
    NonConvergenceError,
    ParseError,
    RelkitError,
    ShapeError,
    SizeGuardError,
)
from relkit.lifting import LiftMode, LiftSpec
from relkit.models import BernoulliModel, LogisticModel, OneVsRestModel
from relkit.solvers import SolveMethod, SolveReport, solve

__version__ = "0.1.0"

__all__ = [
    "ConstraintClass",
    "CostMatrix",
    "Evidence",
    "FeatureStore",
    "Relation",
    "Validation",
    "Violation",
    "relation_objective",
    "validate_relation",
    "RelkitError",
    "ShapeError",
    "InfeasibleEvidenceError",
    "ParseError",
    "NonConvergenceError",
    "SizeGuardError",
    "LiftMode",
    "LiftSpec",
    "LogisticModel",
    "BernoulliModel",
    "OneVsRestModel",
    "SolveMethod",
    "SolveReport",
    "solve",
    "__version__",
]
