"""Exception types raised across the package."""

import numpy as np


class DimensionError(ValueError):
    """Array shapes disagree with each other or with the declared dimension."""


class DomainError(ValueError):
    """A point or a domain description violates a feasibility requirement."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """A matrix that must be symmetric positive definite is not."""


class BoundViolationError(ArithmeticError):
    """The upper bound ``K`` does not dominate the polynomial at the evaluated point."""


class BracketError(RuntimeError):
    """A bracketing root search could not isolate a root."""


class BacktrackingError(RuntimeError):
    """Step halving exhausted its budget without an acceptable point."""


class OracleBudgetError(RuntimeError):
    """A brute-force reference method would exceed its evaluation budget."""


class UnboundedProblemError(ValueError):
    """A reference problem has no finite optimum."""


class ProblemFileError(ValueError):
    """A problem file failed validation.

    ``pointer`` is a JSON-pointer path to the first offending element.
    """

    def __init__(self, pointer, message):
        self.pointer = pointer
        self.message = message
        super().__init__(f"{pointer or '/'}: {message}")
