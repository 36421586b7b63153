"""Exception hierarchy.

Every error carries a short ``code`` used by the command line front end to
emit ``ERROR:<code>:`` prefixed messages, and a ``kind`` that selects the exit
status (validation problems exit 1, numerical failures exit 2).
"""


class NonstatGPError(Exception):
    code = "Error"
    kind = "validation"


class ValidationError(NonstatGPError):
    kind = "validation"


class NumericalError(NonstatGPError):
    kind = "numerical"


class ParseError(ValidationError):
    code = "ParseError"


class EmptyInput(ValidationError):
    code = "EmptyInput"


class MissingCell(ValidationError):
    code = "MissingCell"


class DuplicateRecord(ValidationError):
    code = "DuplicateRecord"


class DuplicateLocations(ValidationError):
    code = "DuplicateLocations"


class GeometryMismatch(ValidationError):
    code = "GeometryMismatch"


class IndexOutOfRange(ValidationError, IndexError):
    code = "IndexOutOfRange"


class DomainError(ValidationError, ValueError):
    code = "DomainError"


class StratumMismatch(ValidationError):
    code = "StratumMismatch"


class TooFewCells(ValidationError):
    code = "TooFewCells"


class NoSamples(ValidationError):
    code = "NoSamples"


class MissingFlag(ValidationError):
    code = "MissingFlag"


class UnknownSubcommand(ValidationError):
    code = "UnknownSubcommand"


class DegenerateField(NumericalError):
    code = "DegenerateField"


class NotPositiveDefinite(NumericalError):
    code = "NotPositiveDefinite"


class NoConvergedWindows(NumericalError):
    code = "NoConvergedWindows"


class ChainDiverged(NumericalError):
    code = "ChainDiverged"

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class StageFailed(NonstatGPError):
    code = "StageFailed"

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.kind = getattr(cause, "kind", "numerical")


class RankDeficientWarning(UserWarning):
    """Raised through :mod:`warnings` when trailing singular values vanish."""
