# errors.py
"""Exceptions raised for malformed inputs and unrecoverable domain conditions.

Solver outcomes (infeasible, unbounded, iteration limits) are reported through
``solvers.SolveStatus`` rather than raised.
"""


class CtxoptError(Exception):
    """Base class for every error raised by this package."""


# ----- Input validation -----

class DimensionMismatchError(CtxoptError, ValueError):
    pass


class EmptyDatasetError(CtxoptError, ValueError):
    pass


class InvalidConfigError(CtxoptError, ValueError):
    pass


class InvalidInstanceError(CtxoptError, ValueError):
    pass


# ----- Bilevel construction -----

class NonAffineEqualityError(CtxoptError, ValueError):
    pass


class UnboundedDataRangeError(CtxoptError, ValueError):
    pass


# ----- Market curves -----

class WindowNotCoveredError(CtxoptError, ValueError):
    pass


class NonpositiveSlopeError(CtxoptError, ValueError):
    pass


# ----- Fitting -----

class InfeasibleRuleError(CtxoptError, RuntimeError):
    """No linear decision rule stays inside the bounds at every training context."""


class SolverFailedError(CtxoptError, RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
