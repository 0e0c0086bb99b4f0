"""Exception hierarchy shared across the package."""


class BlehopError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(BlehopError):
    """Invalid scenario, parameter, or option value."""


class TraceParseError(BlehopError):
    """A trace file could not be parsed.

    Carries the 1-based row (or line) number of the offending record so
    callers can point at the exact spot in the input file.
    """

    def __init__(self, row, reason):
        self.row = row
        self.reason = reason
        super().__init__(f"row {row}: {reason}")


class EstimationError(BlehopError):
    """An estimation step failed on the given data."""


class InsufficientDataError(EstimationError):
    """Not enough observations to run the requested estimator."""


class AmbiguousAlignmentError(EstimationError):
    """Counter alignment produced more than one equally good candidate."""

    def __init__(self, candidates, message=None):
        self.candidates = tuple(int(c) for c in candidates)
        super().__init__(
            message
            or f"ambiguous counter alignment: {len(self.candidates)} tied candidates"
        )


class InconsistentEvidenceError(EstimationError):
    """Channel-map evidence cannot be reconciled with any valid map.

    Usually means the counter alignment or the channel identifier feeding
    the map inference is wrong.
    """
