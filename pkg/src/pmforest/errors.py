"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`PMForestError`.  The two intermediate classes :class:`DataError`
and :class:`NumericalError` decide the command-line exit code (3 and 4).
"""


class PMForestError(Exception):
    """Base class for all package errors."""


class DataError(PMForestError):
    """Input data or configuration is unusable."""


class NumericalError(PMForestError):
    """A numerical procedure failed on otherwise valid input."""


# model fitting
class SingularDesignError(NumericalError):
    """One treatment arm has no positively weighted rows."""


class NoConvergenceError(NumericalError):
    """Iteration cap reached before the score equation was solved."""


class DegenerateError(NumericalError):
    """Fewer effective observations than parameters."""


class SchemaMismatchError(DataError):
    """Data do not meet the requirements of the model family."""


class BadQuantileError(PMForestError, ValueError):
    """Probability outside the open unit interval."""


# splitting
class AllMissingError(NumericalError):
    """Partitioning column has no complete rows."""


class AllDegenerateError(NumericalError):
    """Every component of a linear statistic has zero variance."""


class NoAdmissibleSplitError(NumericalError):
    """No split point leaves both children large enough."""


class RootFitFailedError(NumericalError):
    """The base model could not be fitted in the root node."""


# forests and downstream
class UnknownSchemaError(DataError):
    """Query columns do not match the columns a forest was trained on."""


class NoOOBError(DataError):
    """Every out-of-bag set of the forest is empty."""


class UnknownVariableError(DataError):
    """Variable name not among the partitioning columns."""


# ingestion
class ParseError(DataError):
    """Malformed CSV cell; carries the 1-based line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(DataError):
    """Schema configuration inconsistent with the data or family."""
