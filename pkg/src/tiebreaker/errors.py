"""Exception hierarchy shared by the solver, verification and CLI layers."""


class TiebreakerError(ValueError):
    """Base class. ``context`` carries machine-readable details for the CLI."""

    code = "error"

    def __init__(self, message, **context):
        super().__init__(message)
        self.message = message
        self.context = context


class ValidationError(TiebreakerError):
    code = "validation"


class DegenerateDistributionError(ValidationError):
    code = "degenerate_distribution"


class DataFormatError(ValidationError):
    code = "data_format"


class InfeasibleConstraintsError(TiebreakerError):
    code = "infeasible"


class ConsistencyError(TiebreakerError):
    code = "consistency"


class BracketError(TiebreakerError):
    code = "bracket"


class SingularDesignError(TiebreakerError):
    code = "singular"
