"""Exception types shared across the simulator."""


class InvalidSpecError(ValueError):
    """A configuration or spec value violates its invariants."""


class ParseError(ValueError):
    """A data file could not be parsed; message names the offending offset."""


class NumericFailureError(ArithmeticError):
    """Training produced a non-finite loss.

    Carries the index of the offending batch so the failure can be replayed.
    """

    def __init__(self, message: str, batch_index: int | None = None):
        super().__init__(message)
        self.batch_index = batch_index


class AggregationError(ValueError):
    """Model updates could not be aggregated; message names the client."""


class InvalidActionError(ValueError):
    """A selection mask violates the action contract (e.g. empty selection)."""


class TraceExhaustedError(LookupError):
    """A runtime-variation trace has no entry for the requested round."""
