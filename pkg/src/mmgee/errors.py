"""Exception hierarchy.

Every error carries the CLI exit code it maps to, so the command-line layer
can translate failures without inspecting messages.
"""


class MmgeeError(Exception):
    exit_code = 1


class SpecError(MmgeeError, ValueError):
    """Invalid model, family, or correlation specification."""

    exit_code = 2


class DataError(MmgeeError, ValueError):
    """Input data violates a structural or parsing requirement."""

    exit_code = 3


class SchemaError(DataError):
    pass


class ParseError(DataError):
    pass


class StructuralError(DataError):
    pass


class DomainError(MmgeeError, ValueError):
    """Argument outside the domain of a link or variance function."""

    exit_code = 4


class NumericalError(MmgeeError, ArithmeticError):
    exit_code = 4


class CovarianceInconsistencyError(NumericalError):
    pass
