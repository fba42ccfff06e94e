"""Exception types shared across the package."""


class DynHawkesError(Exception):
    """Base class for all package errors."""


class ValidationError(DynHawkesError, ValueError):
    """An input violates a documented precondition or invariant."""


class ParseError(ValidationError):
    """A line of an edge-list file could not be parsed."""

    def __init__(self, lineno, message):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}")


class RejectedEdgeError(ParseError):
    """A syntactically valid edge violates an edge invariant (self-loop)."""


class SamplingExhaustedError(DynHawkesError, RuntimeError):
    """Rejection sampling failed to find a valid negative vertex."""


class DivergenceError(DynHawkesError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, batch, term, value):
        self.epoch = epoch
        self.batch = batch
        self.term = term
        self.value = value
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch}: {term} = {value}"
        )


class CheckpointError(DynHawkesError, ValueError):
    """A checkpoint file is malformed or incompatible with the request."""
