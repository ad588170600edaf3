"""Exception types shared across relkit.

The CLI maps these onto process exit codes, see ``relkit.cli``.
"""


class RelkitError(Exception):
    """Base class for all relkit errors."""


class ShapeError(RelkitError, ValueError):
    """Array or relation shapes do not agree."""


class InfeasibleEvidenceError(RelkitError):
    """Pinned evidence cannot be satisfied together with the constraint class."""


class ParseError(RelkitError, ValueError):
    """An input file is malformed."""


class NonConvergenceError(RelkitError):
    """An iterative solver stopped at its iteration limit before meeting tolerance."""

    def __init__(self, message, grad_norm=None, iterations=None):
        super().__init__(message)
        self.grad_norm = grad_norm
        self.iterations = iterations


class SizeGuardError(RelkitError, ValueError):
    """An exact method was asked to handle an instance above its size guard."""
