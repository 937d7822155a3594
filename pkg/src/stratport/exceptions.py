"""Exception hierarchy.

Every error raised by this package derives from :class:`StratportError`.
The ``exit_code`` attribute is what the CLI translates the error into:
2 for bad inputs/configuration, 3 for numerical or convergence failures.
"""


class StratportError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class InputError(StratportError):
    """Invalid input data, arguments, or configuration."""

    exit_code = 2


class DegenerateBinsError(InputError):
    """Too few distinct values to compute quantile bin boundaries."""


class DomainError(InputError):
    """Argument outside the mathematical domain of an operation (e.g. a
    matrix that is not positive definite where a log-determinant is needed)."""


class IdentifiabilityError(InputError):
    """The fitting problem does not pin down a unique parameter (a graph
    component with no data and no local regularization)."""


class SpreadHistoryError(InputError):
    """No prior spread observations available to form trailing costs."""


class UndefinedMetricError(StratportError):
    """A requested metric is undefined for the given data (zero variance
    correlation, zero-risk Sharpe ratio, ...)."""


class SolverError(StratportError):
    """A numerical solver failed or returned a solution that does not meet
    the declared quality thresholds."""


class PolicyInfeasibleError(StratportError):
    """The trading policy's constraint set is infeasible."""


class TuningError(StratportError):
    """Every hyper-parameter evaluation in a grid search failed."""


class RegressionError(StratportError):
    """Factor regression design matrix is rank deficient."""
