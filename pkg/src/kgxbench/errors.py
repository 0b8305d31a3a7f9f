"""Exception types shared across the package."""


class BenchmarkError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(BenchmarkError):
    """A file or cell could not be parsed; carries the offending location."""

    def __init__(self, message: str, *, source: str | None = None, line: int | None = None):
        self.source = source
        self.line = line
        where = ""
        if source is not None:
            where = f"{source}:"
        if line is not None:
            where = f"{where}{line}: "
        elif source is not None:
            where = f"{where} "
        super().__init__(f"{where}{message}")


class ValidationError(BenchmarkError):
    """Loaded data violates a structural constraint (e.g. overlapping splits)."""


class UnknownLabelError(BenchmarkError):
    """A record references an entity or relation label missing from the graph."""


class RangeError(BenchmarkError):
    """A numeric field lies outside its admissible interval."""


class ConfigurationError(BenchmarkError):
    """A configuration is internally valid but unusable in this context."""


class ExplanationFailure(BenchmarkError):
    """No explanation could be produced for a prediction."""


class VerifierTransportError(BenchmarkError):
    """The verifier could not be reached or returned an unusable response."""
