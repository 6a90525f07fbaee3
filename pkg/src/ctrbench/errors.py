"""Exception hierarchy shared by all ctrbench modules.

Exit-code mapping for the CLI: ConfigError -> 1, DataError -> 2,
NumericError -> 3. Everything else bubbles up as an ordinary traceback.
"""


class CtrbenchError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(CtrbenchError):
    """Invalid configuration: unknown keys, missing knobs, bad values."""


class DimensionError(CtrbenchError):
    """Tensor shapes do not conform to the operation being applied."""


class ContractError(CtrbenchError):
    """An API was called in a way its contract forbids (e.g. backward on
    a non-scalar, optimizer step without a gradient)."""


class StateError(CtrbenchError):
    """An object was reused after being consumed (e.g. a spent tape)."""


class DataError(CtrbenchError):
    """Row-level input problem; carries row number and field name."""

    def __init__(self, message: str, row: int | None = None, field: str | None = None):
        self.row = row
        self.field = field
        if row is not None or field is not None:
            message = f"{message} (row={row}, field={field})"
        super().__init__(message)


class NumericError(CtrbenchError):
    """A non-finite value appeared where a finite one is required."""


class MetricUndefinedError(CtrbenchError):
    """The requested metric is undefined on the given inputs
    (e.g. AUC on a single-class label vector)."""


EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3
